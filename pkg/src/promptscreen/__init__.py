"""Knowledge-injected multi-prompt screening for user-level risk detection."""

__version__ = "0.1.0"
