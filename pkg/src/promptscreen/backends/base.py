"""The scoring contract every language-model backend satisfies."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from promptscreen.corpus.tokenize import Tokenizer, WhitespaceTokenizer
from promptscreen.errors import ModelError
from promptscreen.ontology import Verbalizer
from promptscreen.prompt import EnsembledPrompt


@dataclass(frozen=True)
class BackendDescriptor:
    name: str
    supports_prefix: bool
    block_shape: tuple[int, ...] | None
    differentiable: bool
    tokenizer: Tokenizer = field(default_factory=WhitespaceTokenizer, compare=False)

    def __post_init__(self):
        if self.supports_prefix and not self.block_shape:
            raise ValueError("a prefix-capable backend must declare its block shape")


@dataclass(frozen=True)
class AspectScores:
    """Per-mask probabilities for one window, keyed by aspect in prompt order."""

    probs: dict[str, float]
    window_ref: tuple[str, int]
    raw: dict[str, tuple[float, float]] | None = None
    """Optional ``aspect -> (S+, S-)`` label-set scores."""

    def __post_init__(self):
        for aspect, p in self.probs.items():
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"probability {aspect}={p} outside [0, 1]")

    @property
    def r(self) -> int:
        return len(self.probs)

    def values(self) -> tuple[float, ...]:
        return tuple(self.probs.values())


def positive_mass_ratio(s_pos: float, s_neg: float) -> float:
    """Binary probability from label-set scores: ``S+ / (S+ + S-)``."""
    total = s_pos + s_neg
    if total <= 0:
        raise ModelError("E-EMPTYVERB", "label scores sum to zero")
    return s_pos / total


class Backend:
    """Base class. Subclasses set ``descriptor`` and implement :meth:`score`."""

    descriptor: BackendDescriptor

    def check(self, prompt: EnsembledPrompt, verbalizers: Sequence[Verbalizer]) -> None:
        if len(verbalizers) != prompt.r:
            raise ModelError("E-MASKCOUNT", f"prompt has {prompt.r} masks but {len(verbalizers)} verbalizers")
        for v in verbalizers:
            if not v.positive_labels or not v.negative_labels:
                raise ModelError("E-EMPTYVERB", f"verbalizer {v.aspect!r} has an empty label set")
        if prompt.prefix_ref is not None and self.descriptor.supports_prefix:
            shape = prompt.prefix_ref.store.block_shape
            if tuple(shape) != tuple(self.descriptor.block_shape):
                raise ModelError("E-SHAPE", f"prefix block {shape} != {self.descriptor.block_shape}")

    def score(self, prompt: EnsembledPrompt, verbalizers: Sequence[Verbalizer]) -> AspectScores:
        raise NotImplementedError

    def score_many(
        self, prompts: Sequence[EnsembledPrompt], verbalizers: Sequence[Verbalizer]
    ) -> list[AspectScores]:
        return [self.score(p, verbalizers) for p in prompts]

    def grad_prefix(
        self, prompt: EnsembledPrompt, verbalizers: Sequence[Verbalizer], upstream: float
    ) -> np.ndarray:
        raise ModelError("E-NODIFF", f"backend {self.descriptor.name!r} is not differentiable")

    def grad_prefix_many(
        self, prompts: Sequence[EnsembledPrompt], verbalizers: Sequence[Verbalizer], upstreams: Sequence[float]
    ) -> np.ndarray:
        """Stacked :meth:`grad_prefix` results, one block per prompt."""
        return np.stack([self.grad_prefix(p, verbalizers, u) for p, u in zip(prompts, upstreams)])

    def score_and_grad_many(
        self, prompts: Sequence[EnsembledPrompt], verbalizers: Sequence[Verbalizer]
    ) -> tuple[list[AspectScores], np.ndarray]:
        """Scores plus per-prompt gradients of ``sum_f p_f`` (unit upstream)."""
        return self.score_many(prompts, verbalizers), self.grad_prefix_many(prompts, verbalizers, [1.0] * len(prompts))

    def fingerprint(self) -> str:
        """Hash of the backend's parameters (constant for parameter-free backends)."""
        return self.descriptor.name
