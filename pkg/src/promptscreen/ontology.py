"""Per-disease concept ontologies and the verbalizers derived from them.

Ontology files are UTF-8, one concept per line::

    # surface <TAB> aspect <TAB> relation
    dejected mood	symptom	is a
    divorce	life_event

The relation column is optional and defaults to ``"is a"``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

from promptscreen.errors import DataError

DEFAULT_RELATION = "is a"


class Aspect(str, enum.Enum):
    SYMPTOM = "symptom"
    LIFE_EVENT = "life_event"
    TREATMENT = "treatment"

    @property
    def phrase(self) -> str:
        """Rendered form used inside prompts ("life event")."""
        return self.value.replace("_", " ")


ASPECTS: tuple[Aspect, ...] = (Aspect.SYMPTOM, Aspect.LIFE_EVENT, Aspect.TREATMENT)

DEFAULT_NEGATIVES: tuple[str, ...] = ("happy", "fine", "healthy", "normal", "unrelated")


def canonical(surface: str) -> str:
    return " ".join(surface.strip().lower().split())


@dataclass(frozen=True)
class Concept:
    surface: str
    aspect: Aspect
    relation: str = DEFAULT_RELATION

    def __post_init__(self):
        surface = canonical(self.surface)
        if not surface:
            raise ValueError("concept surface is empty")
        relation = " ".join(self.relation.split())
        if not relation:
            raise ValueError("concept relation is empty")
        object.__setattr__(self, "surface", surface)
        object.__setattr__(self, "relation", relation)
        object.__setattr__(self, "aspect", Aspect(self.aspect))


@dataclass(frozen=True)
class Ontology:
    disease_id: str
    concepts: tuple[Concept, ...]

    def __post_init__(self):
        object.__setattr__(self, "concepts", tuple(self.concepts))
        owner: dict[str, Aspect] = {}
        for c in self.concepts:
            prev = owner.setdefault(c.surface, c.aspect)
            if prev is not c.aspect:
                raise DataError(
                    "E-ONTO-DUP", f"{c.surface!r} listed under both {prev.value} and {c.aspect.value}"
                )
        for aspect in ASPECTS:
            if aspect not in owner.values():
                raise DataError("E-ONTO-EMPTYCLASS", f"no {aspect.value} concepts for {self.disease_id!r}")

    def relation(self, aspect: Aspect | str) -> str:
        """Relation string used when rendering the ``aspect`` sub-prompt.

        The first concept of the class decides; ontologies normally use one
        relation per class.
        """
        return concepts_of(self, aspect)[0].relation

    def dumps(self) -> str:
        lines = [f"# disease: {self.disease_id}"]
        lines += [f"{c.surface}\t{c.aspect.value}\t{c.relation}" for c in self.concepts]
        return "\n".join(lines) + "\n"


def parse_ontology(text: str, disease_id: str) -> Ontology:
    concepts: list[Concept] = []
    owner: dict[str, tuple[Aspect, int]] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.rstrip("\r\n")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        fields = line.split("\t")
        if len(fields) not in (2, 3):
            raise DataError("E-SCHEMA", "expected 'surface<TAB>aspect[<TAB>relation]'", line=lineno)
        surface, aspect = fields[0], fields[1].strip()
        relation = fields[2] if len(fields) == 3 and fields[2].strip() else DEFAULT_RELATION
        try:
            concept = Concept(surface, Aspect(aspect), relation)
        except ValueError as exc:
            raise DataError("E-SCHEMA", str(exc), line=lineno) from None
        if concept.surface in owner:
            prev, prev_line = owner[concept.surface]
            if prev is not concept.aspect:
                raise DataError(
                    "E-ONTO-DUP",
                    f"{concept.surface!r} under {concept.aspect.value}, already {prev.value} "
                    f"at line {prev_line}",
                    line=lineno,
                )
            continue
        owner[concept.surface] = (concept.aspect, lineno)
        concepts.append(concept)
    return Ontology(disease_id, tuple(concepts))


def load_ontology(path: str | Path, disease_id: str | None = None) -> Ontology:
    """Load an ontology file; the disease id defaults to the file stem.

    A ``# disease: <id>`` comment in the file also sets the id.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise DataError("E-IO", f"cannot read ontology {str(path)!r}: {exc}") from None
    if disease_id is None:
        for line in text.splitlines():
            stripped = line.strip()
            if stripped.startswith("#") and stripped[1:].strip().startswith("disease:"):
                disease_id = stripped[1:].strip()[len("disease:") :].strip()
                break
        else:
            disease_id = path.stem
    return parse_ontology(text, disease_id)


def builtin_ontology_path(disease: str) -> Path:
    return Path(str(resources.files("promptscreen") / "data" / "ontologies" / f"{disease}.onto"))


def builtin_ontology(disease: str) -> Ontology:
    return load_ontology(builtin_ontology_path(disease))


def load_negatives(path: str | Path) -> tuple[str, ...]:
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except (OSError, UnicodeDecodeError) as exc:
        raise DataError("E-IO", f"cannot read negative lexicon {str(path)!r}: {exc}") from None
    words = [canonical(w) for w in lines if w.strip() and not w.lstrip().startswith("#")]
    return tuple(dict.fromkeys(words))


def concepts_of(ontology: Ontology, aspect: Aspect | str) -> list[Concept]:
    aspect = Aspect(aspect)
    return [c for c in ontology.concepts if c.aspect is aspect]


@dataclass(frozen=True)
class Verbalizer:
    """Label words for one mask: positives signal the aspect, negatives do not."""

    aspect: str
    positive_labels: tuple[str, ...]
    negative_labels: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "positive_labels", tuple(self.positive_labels))
        object.__setattr__(self, "negative_labels", tuple(self.negative_labels))
        overlap = set(self.positive_labels) & set(self.negative_labels)
        if overlap:
            raise DataError("E-VERB-OVERLAP", f"labels on both sides: {sorted(overlap)}")


def build_verbalizer(
    ontology: Ontology, aspect: Aspect | str, negatives: Sequence[str] = DEFAULT_NEGATIVES
) -> Verbalizer:
    aspect = Aspect(aspect)
    negatives = tuple(dict.fromkeys(canonical(n) for n in negatives))
    if not negatives:
        raise ValueError("negative label list is empty")
    positives = tuple(c.surface for c in concepts_of(ontology, aspect))
    if not positives:
        raise DataError("E-EMPTYVERB", f"no {aspect.value} concepts in {ontology.disease_id!r}")
    return Verbalizer(aspect.value, positives, negatives)


def rule_verbalizers(
    ontology: Ontology, negatives: Sequence[str] = DEFAULT_NEGATIVES
) -> tuple[Verbalizer, ...]:
    """One verbalizer per aspect, in prompt order."""
    return tuple(build_verbalizer(ontology, a, negatives) for a in ASPECTS)


GENERIC_VERBALIZER = Verbalizer("generic", ("yes",), ("no",))


def all_label_words(verbalizers: Iterable[Verbalizer]) -> list[str]:
    words: dict[str, None] = {}
    for v in verbalizers:
        for label in v.positive_labels + v.negative_labels:
            words[label] = None
    return list(words)
