"""Per-class corpus statistics and comparison against expected tables."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

from promptscreen.config import dumps_flat, read_flat
from promptscreen.corpus.records import Corpus
from promptscreen.errors import DataError

FIELDS = ("subjects", "posts", "words")
CLASSES = {"P": 1, "N": 0}


@dataclass
class ClassStats:
    subjects: int = 0
    posts: int = 0
    words: int = 0


@dataclass
class StatsTable:
    """Expected or observed stats keyed by ``(disease, "P" | "N")``.

    Fields left as ``None`` in an expected table are not checked.
    """

    rows: dict[tuple[str, str], ClassStats | dict[str, int | None]] = field(default_factory=dict)

    def get(self, disease: str, cls: str) -> dict[str, int | None]:
        row = self.rows.get((disease, cls))
        if row is None:
            return {}
        if isinstance(row, ClassStats):
            return {f: getattr(row, f) for f in FIELDS}
        return dict(row)

    def to_flat(self) -> dict[str, int]:
        out = {}
        for (disease, cls) in sorted(self.rows):
            for name, value in self.get(disease, cls).items():
                if value is not None:
                    out[f"{disease}.{cls}.{name}"] = value
        return out

    def dumps(self) -> str:
        return dumps_flat(self.to_flat())

    def write(self, path: str | Path) -> None:
        path = Path(path)
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(self.dumps(), encoding="utf-8")
        except OSError as exc:
            raise DataError("E-IO", f"cannot write {str(path)!r}: {exc}") from None

    @classmethod
    def from_flat(cls, values: Mapping[str, str]) -> "StatsTable":
        rows: dict[tuple[str, str], dict[str, int | None]] = {}
        for key, raw in values.items():
            parts = key.rsplit(".", 2)
            if len(parts) != 3 or parts[1] not in CLASSES or parts[2] not in FIELDS:
                raise DataError("E-SCHEMA", f"bad stats key {key!r}; want <disease>.<P|N>.<field>")
            try:
                value = int(raw.replace(",", "").replace("_", ""))
            except ValueError:
                raise DataError("E-SCHEMA", f"bad integer for {key!r}: {raw!r}") from None
            rows.setdefault((parts[0], parts[1]), {})[parts[2]] = value
        return cls(rows)

    @classmethod
    def read(cls, path: str | Path) -> "StatsTable":
        return cls.from_flat(read_flat(path))


# Summary statistics of the four eRisk collections (subjects, posts, words).
ERISK_TABLE = StatsTable(
    {
        ("depression", "P"): ClassStats(214, 90_222, 2_480_216),
        ("depression", "N"): ClassStats(1_493, 986_360, 22_461_242),
        ("anorexia", "P"): ClassStats(134, 42_493, 1_583_227),
        ("anorexia", "N"): ClassStats(1_153, 781_768, 16_781_263),
        ("gambling", "P"): ClassStats(245, 69_301, 2_119_872),
        ("gambling", "N"): ClassStats(4_182, 2_088_002, 44_077_018),
        ("self_harm", "P"): ClassStats(41, 6_927, 171_789),
        ("self_harm", "N"): ClassStats(299, 163_506, 3_073_912),
    }
)


def corpus_stats(corpus: Corpus) -> StatsTable:
    rows: dict[tuple[str, str], ClassStats] = {}
    for disease in sorted(corpus.disease_ids):
        for cls, label in CLASSES.items():
            rows[(disease, cls)] = ClassStats()
        for user in corpus.users:
            row = rows[(disease, "P" if user.label(disease) else "N")]
            row.subjects += 1
            row.posts += len(user.posts)
            row.words += sum(len(p.text.split()) for p in user.posts)
    return StatsTable(rows)


@dataclass(frozen=True)
class StatsCheck:
    disease: str
    cls: str
    field: str
    expected: int
    observed: int | None

    @property
    def status(self) -> str:
        return "match" if self.observed == self.expected else "mismatch"


@dataclass
class ValidationReport:
    checks: list[StatsCheck]

    @property
    def ok(self) -> bool:
        return bool(self.checks) and all(c.status == "match" for c in self.checks)

    def lines(self) -> list[str]:
        return [
            f"{c.disease}\t{c.cls}\t{c.field}\texpected={c.expected}\tobserved={c.observed}\t{c.status}"
            for c in self.checks
        ]


def validate_stats(corpus: Corpus, expected: StatsTable) -> ValidationReport:
    """Compare observed per-class counts to ``expected``; never mutates ``corpus``.

    Only the fields present in ``expected`` are checked. Diseases missing from
    the corpus have no observed value and therefore mismatch.
    """
    observed = corpus_stats(corpus)
    checks = []
    for (disease, cls) in sorted(expected.rows):
        have = observed.get(disease, cls)
        for name, want in expected.get(disease, cls).items():
            if want is None:
                continue
            checks.append(StatsCheck(disease, cls, name, want, have.get(name)))
    return ValidationReport(checks)
