"""Multi-run evaluation protocol and experiment modes.

Every run derives its own seed from the base seed, splits the corpus 60/20/20
(stratified), applies the mode's transformation, trains the prefix when the
engine has one and the backend is differentiable (otherwise only the
threshold is calibrated), and evaluates on the test part.
"""

from __future__ import annotations

import logging
import math
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from promptscreen.backends import Backend
from promptscreen.corpus.records import Corpus, UserRecord
from promptscreen.corpus.splits import fewshot_subset, split_corpus
from promptscreen.corpus.timeslice import PRE_ONSET, PRE_PREDICTION, time_slice
from promptscreen.engine import DROPS, Engine, TrainConfig, ablation_variant
from promptscreen.errors import DataError, ModelError
from promptscreen.evalharness.metrics import METRIC_NAMES, Metrics, compute_metrics
from promptscreen.ontology import DEFAULT_NEGATIVES, Ontology

log = logging.getLogger(__name__)

KINDS = ("full", "fewshot", "early", "timewindow", "ablation")
SWEEP_KINDS = ("fewshot", "early", "timewindow")
SPAN_WEEKS = 4
_MODE_RE = re.compile(r"^(?P<kind>[a-z]+)(?:[:(](?P<args>[^)]*)\)?)?$")


@dataclass(frozen=True)
class Mode:
    kind: str
    value: int | float | str | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown mode {self.kind!r}; choose from {KINDS}")
        if self.kind == "full" and self.value is not None:
            raise ValueError("full mode takes no parameter")
        if self.kind == "fewshot" and not (isinstance(self.value, int) and self.value >= 2):
            raise ValueError(f"fewshot needs an integer n >= 2, got {self.value!r}")
        if self.kind in ("early", "timewindow") and not (
            isinstance(self.value, (int, float)) and self.value > 0 and math.isfinite(self.value)
        ):
            raise ValueError(f"{self.kind} needs a positive number of weeks, got {self.value!r}")
        if self.kind == "ablation" and self.value not in DROPS:
            raise ValueError(f"ablation drops one of {DROPS}, got {self.value!r}")

    @property
    def label(self) -> str:
        if self.value is None:
            return self.kind
        value = f"{self.value:g}" if isinstance(self.value, float) else self.value
        return f"{self.kind}({value})"

    @classmethod
    def parse_many(cls, text: str) -> list["Mode"]:
        """``full``, ``fewshot:2,10,100``, ``early:24``, ``timewindow(2)``, ``ablation:prefix``."""
        match = _MODE_RE.match(text.strip())
        if not match:
            raise ValueError(f"cannot parse mode {text!r}")
        kind, args = match["kind"], match["args"]
        if not args:
            return [cls(kind)]
        values = [a.strip() for a in args.split(",") if a.strip()]
        if kind == "fewshot":
            return [cls(kind, int(v)) for v in values]
        if kind in ("early", "timewindow"):
            return [cls(kind, _number(v)) for v in values]
        return [cls(kind, v) for v in values]


def _number(text: str) -> int | float:
    value = float(text)
    return int(value) if value.is_integer() else value


@dataclass(frozen=True)
class RunResult:
    run: int
    seed: int
    metrics: Metrics
    tau: float
    n_train: int
    n_test: int
    n_excluded: int = 0
    """Users dropped because their slice had no posts."""


@dataclass
class MetricsReport:
    disease: str
    backend: str
    mode: Mode
    runs: list[RunResult] = field(default_factory=list)
    config_hash: str = ""

    def values(self, name: str) -> list[float]:
        return [r.metrics.value(name) for r in self.runs]

    def mean(self, name: str) -> float:
        return float(np.mean(self.values(name)))

    def std(self, name: str) -> float:
        """Sample standard deviation across runs (0 for a single run)."""
        values = self.values(name)
        return float(np.std(values, ddof=1)) if len(values) > 1 else 0.0

    def summary(self) -> dict[str, float]:
        out = {}
        for name in METRIC_NAMES:
            out[f"{name}_mean"] = self.mean(name)
            out[f"{name}_std"] = self.std(name)
        return out


def derive_seed(base: int, run: int) -> int:
    return int(np.random.SeedSequence([base, run]).generate_state(1)[0])


def _slice(users: Sequence[UserRecord], mode: Mode) -> list[UserRecord]:
    if mode.kind == "early":
        # users without an onset (negatives) are anchored at their last post
        return [
            time_slice(u, PRE_ONSET, mode.value, SPAN_WEEKS, anchor=u.onset or u.posts[-1].timestamp)
            for u in users
        ]
    if mode.kind == "timewindow":
        return [time_slice(u, PRE_PREDICTION, mode.value) for u in users]
    return list(users)


def _has_both(users: Sequence[UserRecord], disease: str) -> bool:
    return len({u.label(disease) for u in users}) == 2


@dataclass
class Protocol:
    """Everything fixed across the runs of one experiment."""

    corpus: Corpus
    disease: str
    ontology: Ontology | None
    backend: Backend
    config: TrainConfig = field(default_factory=TrainConfig)
    negatives: tuple[str, ...] = DEFAULT_NEGATIVES
    ratios: tuple[float, float, float] = (0.6, 0.2, 0.2)
    seed: int = 0
    config_hash: str = ""

    def engine(self, mode: Mode, seed: int) -> Engine:
        engine = Engine(
            self.disease, self.ontology, self.backend, replace(self.config, seed=seed), negatives=self.negatives
        )
        if mode.kind == "ablation":
            engine = ablation_variant(engine, mode.value)
        return engine

    def run_once(self, mode: Mode, run: int) -> RunResult:
        seed = derive_seed(self.seed, run)
        split = split_corpus(self.corpus, self.disease, self.ratios, seed)
        train, val, test = (self.corpus.subset(sorted(part)) for part in split.parts())
        if mode.kind == "fewshot":
            # only the n sampled subjects are labeled: train and calibrate on them
            train = list(fewshot_subset(train, self.disease, mode.value, seed))
            val = train
        sliced = [_slice(part, mode) for part in (train, val, test)]
        kept = [[u for u in part if not u.is_empty_slice] for part in sliced]
        train, val, test = kept
        excluded = sum(len(a) - len(b) for a, b in zip(sliced, kept))
        if not test or not any(u.label(self.disease) for u in test):
            raise DataError("E-DEGENERATE", f"run {run} ({mode.label}): no positive test users left after slicing")
        if not _has_both(train, self.disease) or not _has_both(val, self.disease):
            raise DataError("E-DEGENERATE", f"run {run} ({mode.label}): train or calibration set lost a class")
        test_ids = {u.user_id for u in test}
        if test_ids & {u.user_id for u in train + val}:
            raise ModelError("E-LEAK", f"run {run}: test users overlap train/calibration users")

        engine = self.engine(mode, seed)
        if engine.trainable:
            engine.fit(train, val)
        else:
            engine.calibrate(val)
        scores = engine.score_users(test)
        labels = [u.label(self.disease) for u in test]
        metrics = compute_metrics(
            [(s.decision, y) for s, y in zip(scores, labels)], [(s.score, y) for s, y in zip(scores, labels)]
        )
        return RunResult(run, seed, metrics, engine.tau, len(train), len(test), excluded)

    def run(self, mode: Mode, runs: int = 10, workers: int = 1) -> MetricsReport:
        if runs < 1:
            raise ValueError("runs must be >= 1")
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(lambda r: self.run_once(mode, r), range(runs)))
        else:
            results = [self.run_once(mode, r) for r in range(runs)]
        results.sort(key=lambda r: r.run)
        return MetricsReport(self.disease, self.backend.descriptor.name, mode, results, self.config_hash)


def run_protocol(
    corpus: Corpus,
    disease: str,
    ontology: Ontology | None,
    config: TrainConfig,
    mode: Mode | str,
    runs: int = 10,
    *,
    backend: Backend,
    seed: int = 0,
    workers: int = 1,
    config_hash: str = "",
) -> MetricsReport:
    if isinstance(mode, str):
        (mode,) = Mode.parse_many(mode)
    protocol = Protocol(corpus, disease, ontology, backend, config, seed=seed, config_hash=config_hash)
    return protocol.run(mode, runs, workers)
