"""User-level scoring, aggregation, thresholding, and prefix training.

A user's score is the mean mask probability over all windows and masks,
scaled by ``r / lambda``:

    score = (1 / (lambda * m)) * sum_i sum_f p_f(window_i)

With the default ``lambda = r`` the score lies in ``[0, 1]``.
"""

from __future__ import annotations

import copy
import hashlib
import logging
import math
import warnings
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np
import torch

from promptscreen.backends import AspectScores, Backend, get_backend
from promptscreen.config import as_bool, dumps_flat, read_flat
from promptscreen.corpus.records import UserRecord
from promptscreen.corpus.tokenize import concat_tokens
from promptscreen.corpus.windows import make_windows
from promptscreen.errors import DataError, ModelError
from promptscreen.ontology import DEFAULT_NEGATIVES, GENERIC_VERBALIZER, Ontology, parse_ontology, rule_verbalizers
from promptscreen.prefix import UNSEEN, PrefixRef, PrefixStore, init_store
from promptscreen.prompt import EnsembledPrompt, compose_prompt, ensemble_assemble, generic_prompt

log = logging.getLogger(__name__)

CALIBRATE = "calibrate"
CLAMP = 1e-6
DROPS = ("prefix", "rule")


class DegenerateWarning(UserWarning):
    """A computation fell back to a default because one class was missing."""


@dataclass
class TrainConfig:
    lam: float | None = None
    """``None`` means ``lambda = r``."""
    threshold: float | str = CALIBRATE
    epochs: int = 50
    lr: float = 1e-2
    batch_size: int = 4
    clip_norm: float = 1.0
    patience: int | None = 10
    """``None`` disables early stopping."""
    stop_at_perfect: bool = True
    unseen_rate: float = 0.5
    """Chance a training user is scored with the unseen-user prefix instead of its own."""
    seed: int = 0
    w: int = 64
    k: int = 8
    k_e: int = 16

    def validate(self) -> None:
        problems = []
        if self.lam is not None and not self.lam > 0:
            problems.append("lambda must be positive")
        if self.threshold != CALIBRATE and not (isinstance(self.threshold, float) and 0 <= self.threshold <= 1):
            problems.append(f"threshold must be in [0, 1] or {CALIBRATE!r}")
        for name in ("batch_size", "w", "k", "k_e"):
            if getattr(self, name) < 1:
                problems.append(f"{name} must be >= 1")
        if self.epochs < 0:
            problems.append("epochs must be >= 0")
        if not 0 <= self.unseen_rate <= 1:
            problems.append("unseen_rate must be in [0, 1]")
        if not self.lr > 0 or not self.clip_norm > 0:
            problems.append("lr and clip_norm must be positive")
        if self.patience is not None and self.patience < 1:
            problems.append("patience must be >= 1")
        if problems:
            raise DataError("E-CONFIG", "; ".join(problems))

    def lam_for(self, r: int) -> float:
        return float(r) if self.lam is None else float(self.lam)

    def to_flat(self) -> dict[str, object]:
        out = {f.name: getattr(self, f.name) for f in fields(self)}
        out["lambda"] = out.pop("lam")
        return {k: ("none" if v is None else v) for k, v in out.items()}

    @classmethod
    def from_flat(cls, values: Mapping[str, str]) -> "TrainConfig":
        cfg = cls()
        for key, raw in values.items():
            name = "lam" if key == "lambda" else key
            if name not in {f.name for f in fields(cls)}:
                raise DataError("E-CONFIG", f"unknown training key {key!r}")
            raw = raw.strip()
            try:
                if name in ("lam", "patience") and raw.lower() in ("", "none"):
                    value: object = None
                elif name == "threshold":
                    value = CALIBRATE if raw == CALIBRATE else float(raw)
                elif name == "stop_at_perfect":
                    value = as_bool(raw)
                elif name in ("lam", "lr", "clip_norm", "unseen_rate"):
                    value = float(raw)
                else:
                    value = int(raw)
            except ValueError as exc:
                raise DataError("E-CONFIG", f"bad value for {key!r}: {exc}") from None
            setattr(cfg, name, value)
        cfg.validate()
        return cfg


@dataclass
class UserScore:
    user_id: str
    score: float
    decision: int
    m: int
    per_window: list[AspectScores] = field(repr=False)


# scoring arithmetic -----------------------------------------------------


def aggregate(per_window: Sequence[AspectScores | Sequence[float]], lam: float) -> float:
    """Mean-over-windows ensemble score ``sum_i sum_f p / (lambda m)``.

    Summation runs in (window, aspect) order so the result is bitwise
    reproducible. Dividing by ``m`` before ``lambda`` keeps the all-ones case
    exactly equal to ``r / lambda``.
    """
    if not per_window:
        raise ModelError("E-EMPTYINPUT", "no windows to aggregate")
    if not lam > 0:
        raise ValueError(f"lambda must be positive, got {lam}")
    r = None
    total = 0.0
    for window in per_window:
        values = window.values() if isinstance(window, AspectScores) else tuple(window)
        if r is None:
            r = len(values)
        elif len(values) != r:
            raise ModelError("E-RAGGED", f"windows carry {r} and {len(values)} masks")
        for p in values:
            total += p
    return total / len(per_window) / lam


def decide(score: float, tau: float) -> int:
    """1 iff ``score >= tau``; a tie counts as positive."""
    if not math.isfinite(score):
        raise ValueError(f"score must be finite, got {score}")
    return int(score >= tau)


def calibrate_threshold(pairs: Sequence[tuple[float, int]]) -> float:
    """Threshold maximizing F1 on ``(score, label)`` pairs.

    Candidates are the smallest score and the midpoints between consecutive
    distinct scores; among equally good candidates the smallest wins. With one
    class missing there is nothing to calibrate and 0.5 is returned.
    """
    if not pairs:
        raise ModelError("E-DEGENERATE", "no scores to calibrate on")
    scores = np.array([s for s, _ in pairs], dtype=float)
    labels = np.array([y for _, y in pairs], dtype=int)
    if labels.min() == labels.max():
        warnings.warn("E-DEGENERATE: calibration set has one class; using threshold 0.5", DegenerateWarning, stacklevel=2)
        return 0.5
    distinct = np.unique(scores)
    candidates = np.concatenate([distinct[:1], (distinct[:-1] + distinct[1:]) / 2])
    predicted = scores[None, :] >= candidates[:, None]
    tp = (predicted & (labels == 1)).sum(axis=1)
    fp = (predicted & (labels == 0)).sum(axis=1)
    fn = ((~predicted) & (labels == 1)).sum(axis=1)
    f1 = np.where(tp > 0, 2 * tp / np.maximum(2 * tp + fp + fn, 1), 0.0)
    return float(candidates[int(np.argmax(f1))])


def best_f1(pairs: Sequence[tuple[float, int]]) -> float | None:
    """F1 at the calibrated threshold, or ``None`` if one class is missing."""
    labels = {y for _, y in pairs}
    if len(labels) < 2:
        return None
    tau = calibrate_threshold(pairs)
    tp = sum(1 for s, y in pairs if s >= tau and y == 1)
    fp = sum(1 for s, y in pairs if s >= tau and y == 0)
    fn = sum(1 for s, y in pairs if s < tau and y == 1)
    return 2 * tp / (2 * tp + fp + fn) if tp else 0.0


# engine ------------------------------------------------------------------


@dataclass
class Engine:
    """Everything needed to turn a user's posts into a screening decision."""

    disease: str
    ontology: Ontology | None
    backend: Backend
    config: TrainConfig = field(default_factory=TrainConfig)
    use_prefix: bool = True
    use_rule: bool = True
    negatives: tuple[str, ...] = DEFAULT_NEGATIVES
    store: PrefixStore | None = None
    tau: float = 0.5

    def __post_init__(self):
        if self.use_rule and self.ontology is None:
            raise ValueError("rule-based prompts need an ontology")
        if self.config.threshold != CALIBRATE:
            self.tau = float(self.config.threshold)

    @property
    def r(self) -> int:
        return 3 if self.use_rule else 1

    @property
    def lam(self) -> float:
        return self.config.lam_for(self.r)

    @property
    def binds_prefix(self) -> bool:
        return self.use_prefix and self.backend.descriptor.supports_prefix

    @property
    def trainable(self) -> bool:
        return self.binds_prefix and self.backend.descriptor.differentiable

    def verbalizers(self):
        return rule_verbalizers(self.ontology, self.negatives) if self.use_rule else (GENERIC_VERBALIZER,)

    def prompts(self, user: UserRecord, allow_unseen: bool = True) -> list[EnsembledPrompt]:
        if user.is_empty_slice or not user.posts:
            raise ModelError("E-EMPTYINPUT", f"user {user.user_id!r} has no posts to score")
        try:
            seq = concat_tokens(user, self.backend.descriptor.tokenizer)
        except DataError:
            raise ModelError("E-EMPTYINPUT", f"user {user.user_id!r} has no tokens to score") from None
        out = []
        for window in make_windows(seq, self.config.w):
            if self.use_rule:
                composed = compose_prompt(window, self.disease, self.ontology)
            else:
                composed = generic_prompt(window, self.disease)
            bind = (user.user_id, self.store) if self.binds_prefix and self.store is not None else None
            out.append(ensemble_assemble(composed, bind, allow_unseen=allow_unseen))
        return out

    def score_user(self, user: UserRecord) -> UserScore:
        per_window = self.backend.score_many(self.prompts(user), self.verbalizers())
        score = aggregate(per_window, self.lam)
        return UserScore(user.user_id, score, decide(score, self.tau), len(per_window), per_window)

    def score_users(self, users: Sequence[UserRecord]) -> list[UserScore]:
        return [self.score_user(u) for u in users]

    def calibrate(self, users: Sequence[UserRecord]) -> float:
        """Set ``tau`` from ``users`` (if the config asks for calibration)."""
        if self.config.threshold == CALIBRATE:
            pairs = [(s.score, u.label(self.disease)) for s, u in zip(self.score_users(users), users)]
            self.tau = calibrate_threshold(pairs)
        return self.tau

    def fit(self, train_users, val_users, **kwargs) -> "TrainLog":
        return train(self, train_users, val_users, **kwargs)

    # persistence ---------------------------------------------------------

    def manifest(self) -> dict[str, object]:
        out: dict[str, object] = {
            "disease": self.disease,
            "backend": self.backend.descriptor.name,
            "use_prefix": self.use_prefix,
            "use_rule": self.use_rule,
            "tau": self.tau,
            "negatives": list(self.negatives),
            "backend_fingerprint": self.backend.fingerprint(),
        }
        out.update({f"train.{k}": v for k, v in self.config.to_flat().items()})
        if self.ontology is not None:
            out["ontology_sha256"] = hashlib.sha256(self.ontology.dumps().encode()).hexdigest()
        return out

    def save(self, directory: str | Path, extra: Mapping[str, object] | None = None) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        manifest = self.manifest()
        manifest.update(extra or {})
        (directory / "model.cfg").write_text(dumps_flat(manifest), encoding="utf-8")
        if self.ontology is not None:
            (directory / "ontology.onto").write_text(self.ontology.dumps(), encoding="utf-8")
        if self.store is not None:
            self.store.save(directory / "store.npz")
        if hasattr(self.backend, "save"):
            self.backend.save(directory / "backend.npz")
        return directory

    @classmethod
    def load(cls, directory: str | Path) -> "Engine":
        directory = Path(directory)
        meta = read_flat(directory / "model.cfg")
        try:
            name = meta["backend"]
            backend = get_backend(name)
            if (directory / "backend.npz").exists():
                backend = type(backend).load(directory / "backend.npz")
            ontology = None
            if (directory / "ontology.onto").exists():
                text = (directory / "ontology.onto").read_text(encoding="utf-8")
                ontology = parse_ontology(text, meta["disease"])
            config = TrainConfig.from_flat({k[6:]: v for k, v in meta.items() if k.startswith("train.")})
            engine = cls(
                meta["disease"], ontology, backend, config,
                use_prefix=as_bool(meta["use_prefix"]), use_rule=as_bool(meta["use_rule"]),
                negatives=tuple(n for n in meta["negatives"].split(",") if n),
            )
            engine.tau = float(meta["tau"])
        except KeyError as exc:
            raise DataError("E-SCHEMA", f"model directory {str(directory)!r} lacks {exc}") from None
        if (directory / "store.npz").exists():
            engine.store = PrefixStore.load(directory / "store.npz")
        if backend.fingerprint() != meta.get("backend_fingerprint", backend.fingerprint()):
            raise ModelError("E-FINGERPRINT", "backend parameters do not match the saved model")
        return engine


def score_user(user, disease, ontology, store, backend, config: TrainConfig, tau: float = 0.5, use_rule: bool = True):
    """Functional form of :meth:`Engine.score_user`."""
    engine = Engine(disease, ontology, backend, config, use_prefix=store is not None, use_rule=use_rule, store=store)
    engine.tau = tau
    return engine.score_user(user)


def ablation_variant(engine: Engine, drop: str | Sequence[str]) -> Engine:
    """Copy of ``engine`` without the prefix and/or the rule-based prompts."""
    drops = (drop,) if isinstance(drop, str) else tuple(drop)
    unknown = set(drops) - set(DROPS)
    if unknown:
        raise ValueError(f"unknown ablation {sorted(unknown)}; choose from {DROPS}")
    variant = replace(engine)
    if "prefix" in drops:
        variant.use_prefix = False
        variant.store = None
    if "rule" in drops:
        variant.use_rule = False
    return variant


# training ----------------------------------------------------------------


@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    val_f1: float | None


@dataclass
class TrainLog:
    epochs: list[EpochLog] = field(default_factory=list)
    best_epoch: int = 0
    stopped_early: bool = False
    fingerprint_before: str = ""
    fingerprint_after: str = ""

    @property
    def initial_loss(self) -> float:
        return self.epochs[0].train_loss

    @property
    def final_loss(self) -> float:
        return self.epochs[-1].train_loss

    def dumps(self) -> str:
        rows = ["epoch,train_loss,val_f1"]
        for e in self.epochs:
            rows.append(f"{e.epoch},{e.train_loss:.8f},{'' if e.val_f1 is None else f'{e.val_f1:.6f}'}")
        return "\n".join(rows) + "\n"


def bce(score: float, label: int) -> float:
    s = min(max(score, CLAMP), 1 - CLAMP)
    return -math.log(s) if label else -math.log(1 - s)


def bce_grad(score: float, label: int) -> float:
    """d bce / d score; zero where the clamp is active."""
    if not CLAMP < score < 1 - CLAMP:
        return 0.0
    return -1 / score if label else 1 / (1 - score)


def _clip(store: PrefixStore, max_norm: float) -> float:
    weight = store.embedding.weight
    if weight.grad is not None:
        weight.grad = weight.grad.coalesce()
    squares = [p.grad.pow(2).sum() for p in store.dense_parameters() if p.grad is not None]
    if weight.grad is not None:
        squares.append(weight.grad.values().pow(2).sum())
    norm = float(torch.sqrt(torch.stack(squares).sum())) if squares else 0.0
    if norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for p in store.dense_parameters():
            if p.grad is not None:
                p.grad.mul_(scale)
        if weight.grad is not None:
            weight.grad = weight.grad * scale
    return norm


def train(
    engine: Engine,
    train_users: Sequence[UserRecord],
    val_users: Sequence[UserRecord] = (),
    on_epoch: Callable[[EpochLog], None] | None = None,
) -> TrainLog:
    """Fit the prefix store by clamped binary cross-entropy on user scores.

    Only the store's parameters move; the backend stays frozen. Validation F1
    is measured each epoch at the threshold calibrated on the validation set,
    and drives early stopping. With early stopping on, the best epoch's store
    is restored at the end. Finally ``tau`` is calibrated on ``val_users``.
    """
    cfg = engine.config
    backend = engine.backend
    if not backend.descriptor.differentiable:
        raise ModelError("E-NODIFF", f"backend {backend.descriptor.name!r} cannot be trained")
    if not engine.binds_prefix:
        raise ModelError("E-NOTRAIN", "engine has no prefix to train")
    labels = [u.label(engine.disease) for u in train_users]
    if not train_users or len(set(labels)) < 2:
        raise ModelError("E-NOTRAIN", "training needs at least one positive and one negative user")

    if engine.store is None:
        engine.store = init_store([u.user_id for u in train_users], cfg.k, cfg.k_e, seed=cfg.seed, backend=backend)
    store = engine.store
    verbalizers = engine.verbalizers()
    lam = engine.lam
    train_prompts = [engine.prompts(u, allow_unseen=False) for u in train_users]
    shared_prompts = [[replace(p, prefix_ref=PrefixRef(UNSEEN, store)) for p in ps] for ps in train_prompts]
    val_prompts = [engine.prompts(u) for u in val_users]
    val_labels = [u.label(engine.disease) for u in val_users]

    def user_scores(prompt_lists) -> list[float]:
        flat = backend.score_many([p for ps in prompt_lists for p in ps], verbalizers)
        out, start = [], 0
        for ps in prompt_lists:
            out.append(aggregate(flat[start : start + len(ps)], lam))
            start += len(ps)
        return out

    def evaluate(epoch: int) -> EpochLog:
        with torch.no_grad():
            losses = [bce(s, y) for s, y in zip(user_scores(train_prompts), labels)]
            val_f1 = best_f1(list(zip(user_scores(val_prompts), val_labels))) if val_users else None
        return EpochLog(epoch, sum(losses) / len(losses), val_f1)

    dense_opt = torch.optim.Adam(store.dense_parameters(), lr=cfg.lr)
    sparse_opt = torch.optim.SparseAdam([store.embedding.weight], lr=cfg.lr)
    out = TrainLog(fingerprint_before=backend.fingerprint())
    first = evaluate(0)
    out.epochs.append(first)
    if on_epoch:
        on_epoch(first)
    best_f1_seen = first.val_f1
    best_state = copy.deepcopy(store.state_dict())
    stale = 0
    early = cfg.patience is not None and first.val_f1 is not None

    for epoch in range(1, cfg.epochs + 1):
        if early and cfg.stop_at_perfect and best_f1_seen == 1.0:
            out.stopped_early = True
            break
        rng = np.random.default_rng([cfg.seed, epoch])
        order = rng.permutation(len(train_users))
        shared = rng.random(len(train_users)) < cfg.unseen_rate
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start : start + cfg.batch_size].tolist()
            dense_opt.zero_grad(set_to_none=True)
            sparse_opt.zero_grad(set_to_none=True)
            flat = [p for idx in batch for p in (shared_prompts if shared[idx] else train_prompts)[idx]]
            window_scores, window_grads = backend.score_and_grad_many(flat, verbalizers)
            start = 0
            for idx in batch:
                m = len(train_prompts[idx])
                score = aggregate(window_scores[start : start + m], lam)
                upstream = bce_grad(score, labels[idx]) / len(batch) / (lam * m)
                grad = window_grads[start : start + m].sum(axis=0) * upstream
                start += m
                if upstream == 0.0:
                    continue
                block = store.shared_block() if shared[idx] else store.block(train_users[idx].user_id)
                block.backward(torch.from_numpy(grad))
            if all(p.grad is None for p in store.dense_parameters()):
                continue
            _clip(store, cfg.clip_norm)
            dense_opt.step()
            sparse_opt.step()
        entry = evaluate(epoch)
        out.epochs.append(entry)
        if on_epoch:
            on_epoch(entry)
        if early:
            if entry.val_f1 > best_f1_seen:
                best_f1_seen, stale = entry.val_f1, 0
                out.best_epoch = epoch
                best_state = copy.deepcopy(store.state_dict())
            else:
                stale += 1
                if stale >= cfg.patience:
                    out.stopped_early = True
                    break
    if early:
        store.load_state_dict(best_state)
    else:
        out.best_epoch = out.epochs[-1].epoch
    out.fingerprint_after = backend.fingerprint()
    if out.fingerprint_before != out.fingerprint_after:
        raise ModelError("E-FROZEN", "backend parameters changed during prefix training")
    if val_users:
        engine.calibrate(val_users)
    return out
