"""Cloze prompt rendering: per-aspect sub-prompts, composition, prefix binding."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

from promptscreen.corpus.records import TokenWindow
from promptscreen.errors import DataError
from promptscreen.ontology import ASPECTS, GENERIC_VERBALIZER, Aspect, Ontology, Verbalizer, rule_verbalizers

MASK = "[MASK]"
GENERIC = "generic"


def disease_phrase(disease: str) -> str:
    return disease.replace("_", " ")


@dataclass(frozen=True)
class SubPrompt:
    text: str
    aspect: str
    disease_id: str

    def __post_init__(self):
        if self.text.count(MASK) != 1:
            raise ValueError(f"sub-prompt must contain exactly one {MASK}: {self.text!r}")


@dataclass(frozen=True)
class ComposedPrompt:
    sub_prompts: tuple[SubPrompt, ...]
    window_ref: tuple[str, int]
    """``(user_id, window ordinal)`` of the source window."""
    window_text: str

    @property
    def r(self) -> int:
        return len(self.sub_prompts)

    @property
    def aspects(self) -> tuple[str, ...]:
        return tuple(sp.aspect for sp in self.sub_prompts)

    @property
    def disease_id(self) -> str:
        return self.sub_prompts[0].disease_id

    @property
    def text(self) -> str:
        """The discrete prompt as one sequence, sub-prompts joined by ``"; "``."""
        parts = [sp.text for sp in self.sub_prompts]
        head = [p[:-1] if p.endswith(".") else p for p in parts[:-1]]
        return "; ".join(head + parts[-1:])

    def verbalizers(self, ontology: Ontology | None = None, negatives=None) -> tuple[Verbalizer, ...]:
        if self.aspects == (GENERIC,):
            return (GENERIC_VERBALIZER,)
        if ontology is None:
            raise ValueError("rule-based prompts need the ontology to build verbalizers")
        return rule_verbalizers(ontology, negatives) if negatives else rule_verbalizers(ontology)


def render_subprompt(window_text: str, disease: str, aspect: Aspect | str, relation: str = "is a") -> SubPrompt:
    if not window_text or not window_text.strip():
        raise DataError("E-EMPTYWINDOW", "window text is empty")
    aspect = Aspect(aspect)
    text = f"{window_text} {relation} {MASK} of {disease_phrase(disease)} {aspect.phrase}."
    return SubPrompt(text, aspect.value, disease)


def compose_prompt(window: TokenWindow, disease: str, ontology: Ontology) -> ComposedPrompt:
    """Rule-based prompt: one sub-prompt per aspect, in symptom / life event / treatment order."""
    if ontology.disease_id != disease:
        raise ValueError(f"ontology is for {ontology.disease_id!r}, not {disease!r}")
    subs = tuple(render_subprompt(window.text, disease, a, ontology.relation(a)) for a in ASPECTS)
    return ComposedPrompt(subs, (window.source_user, window.ordinal), window.text)


def generic_prompt(window: TokenWindow, disease: str) -> ComposedPrompt:
    """Single-mask prompt without ontology knowledge; answered with yes / no."""
    if not window.text.strip():
        raise DataError("E-EMPTYWINDOW", "window text is empty")
    text = f"{window.text}. This text relates to {disease_phrase(disease)}: {MASK}."
    return ComposedPrompt((SubPrompt(text, GENERIC, disease),), (window.source_user, window.ordinal), window.text)


@dataclass(frozen=True)
class EnsembledPrompt:
    """A composed discrete prompt with an optional continuous prefix bound ahead of it."""

    prefix_ref: object | None
    composed: ComposedPrompt

    @property
    def text(self) -> str:
        return self.composed.text

    @property
    def r(self) -> int:
        return self.composed.r


def ensemble_assemble(composed: ComposedPrompt, prefix_ref=None, allow_unseen: bool = True) -> EnsembledPrompt:
    """Bind a prefix to ``composed``.

    ``prefix_ref`` is ``(user_id, store)`` or ``None`` (no prefix). Users the
    store has never seen get the store's unseen-user prefix when
    ``allow_unseen`` is set; otherwise ``E-NOPREFIX``.
    """
    if prefix_ref is None:
        return EnsembledPrompt(None, composed)
    user_id, store = prefix_ref
    return EnsembledPrompt(store.ref(user_id, allow_unseen=allow_unseen), composed)


def dump_prompts(prompts: Iterable[EnsembledPrompt | ComposedPrompt], path: str | Path) -> int:
    """Write one rendered prompt per line, tagged with its window; returns the count."""
    lines = []
    for p in prompts:
        composed = p.composed if isinstance(p, EnsembledPrompt) else p
        owner = getattr(getattr(p, "prefix_ref", None), "owner", "-")
        user, ordinal = composed.window_ref
        lines.append(f"{user}\t{ordinal}\tprefix={owner}\t{composed.text}")
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    return len(lines)
