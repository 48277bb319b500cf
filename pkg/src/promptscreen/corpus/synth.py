"""Synthetic user-level corpora with planted ontology concept mentions.

Real screening corpora are license-restricted, so experiments and tests run
on generated users: neutral filler text, ontology concepts injected into posts
at class-dependent per-post rates, optional per-user writing style noise, and
an onset date for positives.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from datetime import timedelta
from pathlib import Path
from typing import Mapping

import numpy as np

from promptscreen.config import as_list, dumps_flat, read_flat
from promptscreen.corpus.records import Corpus, Post, UserRecord, parse_timestamp
from promptscreen.corpus.stats import ClassStats, StatsTable
from promptscreen.errors import DataError
from promptscreen.ontology import ASPECTS, DEFAULT_NEGATIVES, Ontology, builtin_ontology, concepts_of, load_ontology

FILLER_WORDS = (
    "the", "a", "and", "to", "it", "was", "we", "they", "this", "that", "went", "today",
    "yesterday", "weekend", "morning", "evening", "coffee", "lunch", "dinner", "game", "movie",
    "music", "album", "song", "street", "city", "train", "bus", "car", "bike", "weather", "rain",
    "sun", "cloud", "garden", "kitchen", "recipe", "pasta", "pizza", "bread", "store", "market",
    "phone", "laptop", "update", "app", "website", "post", "thread", "reddit", "comment", "video",
    "stream", "book", "chapter", "library", "class", "homework", "office", "meeting", "email",
    "project", "deadline", "team", "friend", "neighbor", "cousin", "dog", "cat", "walk", "park",
    "beach", "trip", "flight", "hotel", "ticket", "concert", "show", "episode", "season", "match",
    "score", "player", "coach", "league", "build", "code", "bug", "release", "version", "price",
    "sale", "deal", "shirt", "shoes", "jacket", "paint", "wall", "window", "door", "table",
    "chair", "lamp", "plant", "tree", "river", "bridge", "mountain", "trail", "camera", "photo",
    "picture", "drawing", "guitar", "piano", "band", "radio", "podcast", "news", "article",
    "paper", "report", "plan", "idea", "question", "answer", "thing", "stuff", "time", "day",
    "week", "month", "year", "about", "with", "for", "on", "in", "at", "from", "just", "really",
    "maybe", "also", "then", "still", "again", "very", "some", "more", "new", "old", "big",
    "small", "good", "nice", "cool", "long", "short", "early", "late", "got", "made", "saw",
    "tried", "found", "played", "watched", "read", "cooked", "bought", "fixed", "started",
)

STYLE_WORDS = (
    "lol", "honestly", "ugh", "literally", "tbh", "omg", "haha", "anyway", "whatever",
    "basically", "seriously", "like", "totally", "kinda", "sorta", "idk", "imo", "btw", "yeah",
    "nah", "meh", "wow", "dude", "bro", "legit", "lowkey", "highkey", "ngl", "fr", "smh",
)



@dataclass
class SynthSpec:
    """Generator parameters.

    ``inject_pos`` / ``inject_neg`` give, per aspect, the probability that a
    post of a positive / negative user gets one concept of that aspect.
    ``negative_word_rate`` is a per-user range for the token rate of
    negative-lexicon words, independent of the label.
    """

    n_users: int = 200
    positive_ratio: float = 1 / 7
    disease: str = "depression"
    ontology: str | None = None
    posts_min: int = 20
    posts_max: int = 40
    words_min: int = 12
    words_max: int = 30
    inject_pos: dict[str, float] = field(
        default_factory=lambda: {"symptom": 0.15, "life_event": 0.10, "treatment": 0.10}
    )
    inject_neg: dict[str, float] = field(
        default_factory=lambda: {"symptom": 0.001, "life_event": 0.001, "treatment": 0.0}
    )
    disease_word_pos: float = 0.0
    disease_word_neg: float = 0.0
    style_words: int = 0
    style_rate: float = 0.0
    negative_word_rate: tuple[float, float] = (0.0, 0.0)
    span_days_min: int = 300
    span_days_max: int = 700
    onset_fraction_min: float = 0.85
    onset_fraction_max: float = 1.0
    start: str = "2018-01-01T00:00:00Z"

    def validate(self) -> None:
        problems = []
        if self.n_users < 2:
            problems.append("n_users must be >= 2")
        if not 0 < self.positive_ratio < 1:
            problems.append("positive_ratio must be in (0, 1)")
        if not 1 <= self.posts_min <= self.posts_max:
            problems.append("need 1 <= posts_min <= posts_max")
        if not 1 <= self.words_min <= self.words_max:
            problems.append("need 1 <= words_min <= words_max")
        for name in ("inject_pos", "inject_neg"):
            probs = getattr(self, name)
            if set(probs) - {a.value for a in ASPECTS}:
                problems.append(f"{name} has unknown aspects {sorted(set(probs))}")
            if any(not 0 <= p <= 1 for p in probs.values()):
                problems.append(f"{name} probabilities must be in [0, 1]")
        for name in ("disease_word_pos", "disease_word_neg", "style_rate"):
            if not 0 <= getattr(self, name) <= 1:
                problems.append(f"{name} must be in [0, 1]")
        lo, hi = self.negative_word_rate
        if not 0 <= lo <= hi <= 1:
            problems.append("negative_word_rate must satisfy 0 <= lo <= hi <= 1")
        if self.style_words < 0 or self.style_words > len(STYLE_WORDS):
            problems.append(f"style_words must be in [0, {len(STYLE_WORDS)}]")
        if self.style_rate > 0 and self.style_words == 0:
            problems.append("style_rate > 0 needs style_words > 0")
        if not 1 <= self.span_days_min <= self.span_days_max:
            problems.append("need 1 <= span_days_min <= span_days_max")
        if not 0 <= self.onset_fraction_min <= self.onset_fraction_max <= 1:
            problems.append("onset fractions must satisfy 0 <= min <= max <= 1")
        try:
            parse_timestamp(self.start)
        except ValueError:
            problems.append(f"bad start timestamp {self.start!r}")
        if problems:
            raise DataError("E-SPEC", "; ".join(problems))

    @property
    def n_positive(self) -> int:
        return min(max(math.floor(self.n_users * self.positive_ratio + 0.5), 1), self.n_users - 1)

    def load_ontology(self) -> Ontology:
        if self.ontology:
            return load_ontology(self.ontology, self.disease)
        return builtin_ontology(self.disease)

    def to_flat(self) -> dict[str, object]:
        out: dict[str, object] = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, dict):
                for aspect, p in value.items():
                    out[f"{f.name}.{aspect}"] = p
            else:
                out[f.name] = value
        return out

    @classmethod
    def from_flat(cls, values: Mapping[str, str]) -> "SynthSpec":
        spec = cls()
        known = {f.name: f for f in fields(cls)}
        for key, raw in values.items():
            name, _, sub = key.partition(".")
            if name not in known:
                raise DataError("E-SPEC", f"unknown synthesis key {key!r}")
            try:
                if sub:
                    if name not in ("inject_pos", "inject_neg"):
                        raise ValueError(f"{name} takes no sub-keys")
                    getattr(spec, name)[sub] = float(raw)
                elif name in ("inject_pos", "inject_neg"):
                    raise ValueError(f"use {name}.<aspect> keys")
                elif name == "negative_word_rate":
                    lo, hi = as_list(raw, float)
                    spec.negative_word_rate = (lo, hi)
                elif name == "ontology":
                    spec.ontology = raw or None
                elif name in ("disease", "start"):
                    setattr(spec, name, raw)
                elif isinstance(getattr(spec, name), int):
                    setattr(spec, name, int(raw))
                else:
                    setattr(spec, name, float(raw))
            except ValueError as exc:
                raise DataError("E-SPEC", f"bad value for {key!r}: {exc}") from None
        return spec

    @classmethod
    def read(cls, path: str | Path) -> "SynthSpec":
        return cls.from_flat(read_flat(path))

    def dumps(self) -> str:
        return dumps_flat(self.to_flat())


@dataclass
class SynthResult:
    corpus: Corpus
    expected: StatsTable
    mentions: dict[str, int]
    """Planted concept mentions per user id."""

    def mean_mentions(self, label: int) -> float:
        ids = [u.user_id for u in self.corpus.users if u.label(self.corpus_disease) == label]
        return sum(self.mentions[i] for i in ids) / max(len(ids), 1)

    @property
    def corpus_disease(self) -> str:
        (disease,) = self.corpus.disease_ids
        return disease


def generate_synthetic(spec: SynthSpec, seed: int = 0) -> SynthResult:
    """Generate a corpus from ``spec``; identical ``(spec, seed)`` gives identical output."""
    spec.validate()
    ontology = spec.load_ontology()
    surfaces = {a: [c.surface for c in concepts_of(ontology, a)] for a in ASPECTS}
    disease_word = spec.disease.replace("_", " ")
    start = parse_timestamp(spec.start)

    root = np.random.default_rng(seed)
    positive_idx = set(root.permutation(spec.n_users)[: spec.n_positive].tolist())

    users = []
    mentions: dict[str, int] = {}
    tallies = {1: ClassStats(), 0: ClassStats()}
    for i in range(spec.n_users):
        rng = np.random.default_rng([seed, i])
        label = 1 if i in positive_idx else 0
        inject = spec.inject_pos if label else spec.inject_neg
        disease_rate = spec.disease_word_pos if label else spec.disease_word_neg
        style = list(rng.choice(STYLE_WORDS, spec.style_words, replace=False)) if spec.style_words else []
        neg_rate = rng.uniform(*spec.negative_word_rate)

        n_posts = int(rng.integers(spec.posts_min, spec.posts_max + 1))
        span = float(rng.uniform(spec.span_days_min, spec.span_days_max))
        first = start + timedelta(seconds=round(float(rng.uniform(0, 365)) * 86400))
        offsets = np.sort(rng.uniform(0, span, n_posts))
        offsets[0] = 0.0
        stamps = [first + timedelta(seconds=round(o * 86400)) for o in offsets]

        planted = 0
        words_total = 0
        posts = []
        for ts in stamps:
            words = list(rng.choice(FILLER_WORDS, int(rng.integers(spec.words_min, spec.words_max + 1))))
            for j in range(len(words)):
                draw = rng.random()
                if draw < spec.style_rate:
                    words[j] = style[int(rng.integers(len(style)))]
                elif draw < spec.style_rate + neg_rate:
                    words[j] = DEFAULT_NEGATIVES[int(rng.integers(len(DEFAULT_NEGATIVES)))]
            inserts = []
            for aspect in ASPECTS:
                p = inject.get(aspect.value, 0.0)
                if p > 0 and rng.random() < p:
                    inserts.append(surfaces[aspect][int(rng.integers(len(surfaces[aspect])))])
            planted += len(inserts)
            if disease_rate > 0 and rng.random() < disease_rate:
                inserts.append(disease_word)
            for phrase in inserts:
                words.insert(int(rng.integers(len(words) + 1)), phrase)
            text = " ".join(words)
            words_total += sum(len(w.split()) for w in words)
            posts.append(Post(ts, text))

        onset = None
        if label:
            frac = rng.uniform(spec.onset_fraction_min, spec.onset_fraction_max)
            onset = first + timedelta(seconds=round(frac * span * 86400))
        user_id = f"user{i:04d}"
        users.append(UserRecord(user_id, tuple(posts), {spec.disease: label}, onset))
        mentions[user_id] = planted
        tally = tallies[label]
        tally.subjects += 1
        tally.posts += n_posts
        tally.words += words_total

    expected = StatsTable({(spec.disease, "P"): tallies[1], (spec.disease, "N"): tallies[0]})
    return SynthResult(Corpus(tuple(users), frozenset({spec.disease})), expected, mentions)
