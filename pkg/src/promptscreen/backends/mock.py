"""Deterministic keyword oracle standing in for a language model.

The fill rule: count the distinct cue phrases that occur in the window text
(case-insensitive, at word boundaries). No cue gives 0.02; ``h`` cues give
``min(0.95, 0.60 + 0.15 * h)``. For rule-based prompts the cues are the
positive labels of the mask's verbalizer, i.e. the ontology concepts of that
aspect. The generic prompt carries no ontology, so its only cue is the disease
name itself.
"""

from __future__ import annotations

import re
from functools import lru_cache
from typing import Iterable, Sequence

from promptscreen.backends.base import AspectScores, Backend, BackendDescriptor
from promptscreen.ontology import GENERIC_VERBALIZER, Ontology, Verbalizer, concepts_of
from promptscreen.prompt import GENERIC, EnsembledPrompt, disease_phrase

FLOOR = 0.02
BASE = 0.60
STEP = 0.15
CAP = 0.95


@lru_cache(maxsize=4096)
def _cue_pattern(cue: str) -> re.Pattern:
    body = r"\s+".join(re.escape(part) for part in cue.split())
    return re.compile(rf"(?<!\w){body}(?!\w)", re.IGNORECASE)


def count_cues(text: str, cues: Iterable[str]) -> int:
    return sum(1 for cue in dict.fromkeys(cues) if _cue_pattern(cue).search(text))


def mock_probability(h: int) -> float:
    return FLOOR if h == 0 else min(CAP, BASE + STEP * h)


def mock_oracle_score(window_text: str, ontology: Ontology, aspect) -> float:
    return mock_probability(count_cues(window_text, (c.surface for c in concepts_of(ontology, aspect))))


class MockBackend(Backend):
    """Keyword oracle. Takes no prefix and has nothing to differentiate."""

    def __init__(self):
        self.descriptor = BackendDescriptor("mock", supports_prefix=False, block_shape=None, differentiable=False)

    def score(self, prompt: EnsembledPrompt, verbalizers: Sequence[Verbalizer]) -> AspectScores:
        self.check(prompt, verbalizers)
        composed = prompt.composed
        probs, raw = {}, {}
        for sub, verb in zip(composed.sub_prompts, verbalizers):
            if sub.aspect == GENERIC or verb == GENERIC_VERBALIZER:
                cues: Iterable[str] = (disease_phrase(sub.disease_id),)
            else:
                cues = verb.positive_labels
            p = mock_probability(count_cues(composed.window_text, cues))
            probs[sub.aspect] = p
            raw[sub.aspect] = (p, 1.0 - p)
        return AspectScores(probs, composed.window_ref, raw)
