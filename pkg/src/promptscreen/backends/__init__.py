"""Language-model backends and the name registry the CLI resolves."""

from promptscreen.backends.base import AspectScores, Backend, BackendDescriptor, positive_mass_ratio
from promptscreen.backends.mock import MockBackend, mock_oracle_score
from promptscreen.backends.tiny import TinyBackend
from promptscreen.errors import DataError

REGISTRY = {"mock": MockBackend, "tiny": TinyBackend}


def get_backend(name: str, **options) -> Backend:
    try:
        factory = REGISTRY[name]
    except KeyError:
        raise DataError("E-BACKEND", f"unknown backend {name!r}; choose from {sorted(REGISTRY)}") from None
    return factory(**options)


__all__ = [
    "AspectScores", "Backend", "BackendDescriptor", "MockBackend", "REGISTRY", "TinyBackend",
    "get_backend", "mock_oracle_score", "positive_mass_ratio",
]
