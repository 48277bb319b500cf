"""Stratified train/val/test splits and few-shot subsampling."""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from promptscreen.corpus.records import Corpus, SplitSpec, UserRecord
from promptscreen.errors import DataError

DEFAULT_RATIOS = (0.6, 0.2, 0.2)


def round_half_up(x: float) -> int:
    return math.floor(x + 0.5)


def allocate(n: int, ratios: Sequence[float]) -> list[int]:
    """Split ``n`` items by ``ratios`` using largest remainders.

    Every part ends within one item of its exact share. When ``n`` is at least
    the number of parts, no part is left empty.
    """
    exact = [n * r for r in ratios]
    counts = [math.floor(e) for e in exact]
    order = sorted(range(len(ratios)), key=lambda i: (-(exact[i] - counts[i]), i))
    for i in order[: n - sum(counts)]:
        counts[i] += 1
    if n >= len(ratios):
        for i in range(len(counts)):
            if counts[i] == 0:
                donor = max(range(len(counts)), key=lambda j: (counts[j], -j))
                counts[donor] -= 1
                counts[i] += 1
    return counts


def split_corpus(
    corpus: Corpus,
    disease: str,
    ratios: Sequence[float] = DEFAULT_RATIOS,
    seed: int = 0,
) -> SplitSpec:
    """Label-stratified, seed-deterministic train/val/test split of user ids."""
    if len(ratios) != 3 or abs(sum(ratios) - 1.0) > 1e-9 or min(ratios) < 0:
        raise ValueError(f"ratios must be three non-negative numbers summing to 1, got {ratios}")
    if len(corpus) < 5:
        raise DataError("E-DEGENERATE", f"need at least 5 users to split, got {len(corpus)}")
    strata = {0: [], 1: []}
    for user in corpus.users:
        strata[user.label(disease)].append(user.user_id)
    for label, ids in strata.items():
        if not ids:
            kind = "positive" if label == 1 else "negative"
            raise DataError("E-DEGENERATE", f"no {kind} users for {disease!r}")

    rng = np.random.default_rng(seed)
    parts: list[set[str]] = [set(), set(), set()]
    for label in (1, 0):
        ids = sorted(strata[label])
        perm = rng.permutation(len(ids))
        counts = allocate(len(ids), ratios)
        start = 0
        for part, count in zip(parts, counts):
            part.update(ids[j] for j in perm[start : start + count])
            start += count
    return SplitSpec(frozenset(parts[0]), frozenset(parts[1]), frozenset(parts[2]), seed)


def fewshot_subset(
    train: Sequence[UserRecord],
    disease: str,
    n_subjects: int,
    seed: int = 0,
) -> list[UserRecord]:
    """Draw ``n_subjects`` training users containing both classes.

    Up to 10 subjects the draw is class-balanced (the odd one out is a
    negative); above 10 it follows the label proportion of ``train``, rounded
    half up and clamped so each class keeps at least one member. If a class
    cannot supply its share, the other class fills the gap.
    """
    if n_subjects < 2:
        raise DataError("E-FEWSHOT", f"n_subjects must be >= 2, got {n_subjects}")
    if n_subjects > len(train):
        raise DataError("E-FEWSHOT", f"asked for {n_subjects} subjects from {len(train)}")
    pos = sorted((u for u in train if u.label(disease) == 1), key=lambda u: u.user_id)
    neg = sorted((u for u in train if u.label(disease) == 0), key=lambda u: u.user_id)
    if not pos or not neg:
        raise DataError("E-FEWSHOT", "training users must contain both classes")

    if n_subjects <= 10:
        want_pos = n_subjects // 2
    else:
        want_pos = round_half_up(n_subjects * len(pos) / len(train))
    want_pos = min(max(want_pos, 1), n_subjects - 1)
    n_pos = min(want_pos, len(pos))
    n_neg = n_subjects - n_pos
    if n_neg > len(neg):
        n_neg = len(neg)
        n_pos = n_subjects - n_neg

    rng = np.random.default_rng(seed)
    chosen = [pos[i] for i in sorted(rng.choice(len(pos), n_pos, replace=False))]
    chosen += [neg[i] for i in sorted(rng.choice(len(neg), n_neg, replace=False))]
    order = {u.user_id: i for i, u in enumerate(train)}
    return sorted(chosen, key=lambda u: order[u.user_id])
