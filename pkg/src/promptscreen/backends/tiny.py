"""A tiny frozen attention model that fills masks over a closed label vocabulary.

It is the smallest thing that exercises what the screening method needs from a
language model: prefix states injected as extra key/value slots at every
attention layer, per-mask readout over verbalizer label words, and exact
gradients with respect to the prefix.

Shape conventions: ``B`` prompts, ``T`` tokens, ``d`` hidden width, ``L``
layers, ``k`` prefix positions. A prefix block is ``(k, 2 * L * d)``; for
layer ``l`` columns ``[2ld, (2l+1)d)`` are keys and ``[(2l+1)d, (2l+2)d)``
are values.

Token ids are hashed into a fixed number of buckets, so any text encodes
without a fitted vocabulary. Value and output projections start as the
identity, which gives the frozen model a copy prior: a label word that occurs
in the window pulls the mask state toward its own embedding.
"""

from __future__ import annotations

import hashlib
import json
import math
import re
import zlib
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from promptscreen.backends.base import AspectScores, Backend, BackendDescriptor
from promptscreen.errors import DataError, ModelError
from promptscreen.ontology import Verbalizer
from promptscreen.prompt import EnsembledPrompt

DTYPE = torch.float64
PAD_ID = 0
MASK_ID = 1
_TOKEN_RE = re.compile(r"\[mask\]|[a-z0-9]+(?:['\-][a-z0-9]+)*|[^\sa-z0-9]")


class HashTokenizer:
    name = "hash"

    def __init__(self, buckets: int):
        self.buckets = buckets

    def tokenize(self, text: str) -> list[str]:
        return _TOKEN_RE.findall(text.lower())

    def detokenize(self, tokens: Sequence[str]) -> str:
        return " ".join(tokens)

    def token_id(self, token: str) -> int:
        return _encode_cached(token, self.buckets)[0]

    def encode(self, text: str) -> tuple[int, ...]:
        return _encode_cached(text, self.buckets)


@lru_cache(maxsize=200_000)
def _encode_cached(text: str, buckets: int) -> tuple[int, ...]:
    ids = []
    for token in _TOKEN_RE.findall(text.lower()):
        ids.append(MASK_ID if token == "[mask]" else 2 + zlib.crc32(token.encode("utf-8")) % (buckets - 2))
    return tuple(ids)


@dataclass
class EncodedBatch:
    ids: torch.Tensor  # (B, T)
    pad: torch.Tensor  # (B, T) True at padding
    mask_pos: torch.Tensor  # (B, r)

    def __len__(self) -> int:
        return self.ids.shape[0]

    def select(self, index) -> "EncodedBatch":
        return EncodedBatch(self.ids[index], self.pad[index], self.mask_pos[index])


@dataclass
class ReadoutPlan:
    """Per-mask closed vocabularies and label-to-token averaging matrices."""

    vocab: list[torch.Tensor]  # per mask: (V_f,) token ids
    average: list[torch.Tensor]  # per mask: (n_labels, V_f)
    positive: list[torch.Tensor]  # per mask: (n_labels,) bool


def _sinusoid(n: int, d: int) -> torch.Tensor:
    pos = torch.arange(n, dtype=DTYPE)[:, None]
    i = torch.arange(d // 2, dtype=DTYPE)[None, :]
    angle = pos / torch.pow(10000.0, 2 * i / d)
    out = torch.zeros(n, d, dtype=DTYPE)
    out[:, 0::2] = torch.sin(angle)
    out[:, 1::2] = torch.cos(angle)
    return out


class TinyBackend(Backend):
    """Frozen ``L``-layer single-head attention scorer with hashed embeddings."""

    def __init__(
        self,
        d: int = 32,
        layers: int = 2,
        k: int = 8,
        buckets: int = 4096,
        readout_scale: float = 16.0,
        position_scale: float = 0.1,
        copy_weight: float = 2.0,
        copy_floor: float = 1e-3,
        seed: int = 0,
    ):
        if d % 2:
            raise ValueError("hidden width must be even")
        self.d, self.layers, self.k, self.buckets = d, layers, k, buckets
        self.readout_scale, self.position_scale, self.seed = readout_scale, position_scale, seed
        self.copy_weight, self.copy_floor = copy_weight, copy_floor
        self.tokenizer = HashTokenizer(buckets)
        self.descriptor = BackendDescriptor(
            "tiny", supports_prefix=True, block_shape=(k, 2 * layers * d), differentiable=True,
            tokenizer=self.tokenizer,
        )
        gen = torch.Generator().manual_seed(seed)
        scale = 1 / math.sqrt(d)
        eye = torch.eye(d, dtype=DTYPE)
        self.params: dict[str, torch.Tensor] = {
            "embed": torch.randn((buckets, d), generator=gen, dtype=DTYPE) * scale,
            "wq": torch.randn((layers, d, d), generator=gen, dtype=DTYPE) * scale,
            "wk": torch.randn((layers, d, d), generator=gen, dtype=DTYPE) * scale,
            "wv": eye.repeat(layers, 1, 1) + torch.randn((layers, d, d), generator=gen, dtype=DTYPE) * 0.1 * scale,
            "wo": eye.repeat(layers, 1, 1) + torch.randn((layers, d, d), generator=gen, dtype=DTYPE) * 0.1 * scale,
        }
        self.params["embed"][PAD_ID] = 0.0
        self._plans: dict[tuple, ReadoutPlan] = {}

    # encoding ------------------------------------------------------------

    def encode(self, texts: Sequence[str]) -> EncodedBatch:
        seqs = [self.tokenizer.encode(t) for t in texts]
        masks = [[i for i, t in enumerate(s) if t == MASK_ID] for s in seqs]
        r = {len(m) for m in masks}
        if len(r) != 1:
            raise ModelError("E-MASKCOUNT", f"prompts in one batch have mask counts {sorted(r)}")
        width = max(len(s) for s in seqs)
        ids = torch.full((len(seqs), width), PAD_ID, dtype=torch.long)
        for row, s in enumerate(seqs):
            ids[row, : len(s)] = torch.tensor(s, dtype=torch.long)
        return EncodedBatch(ids, ids == PAD_ID, torch.tensor(masks, dtype=torch.long))

    def plan(self, verbalizers: Sequence[Verbalizer]) -> ReadoutPlan:
        key = tuple((v.positive_labels, v.negative_labels) for v in verbalizers)
        if key not in self._plans:
            vocab, average, positive = [], [], []
            for v in verbalizers:
                labels = list(v.positive_labels) + list(v.negative_labels)
                token_lists = [self.tokenizer.encode(label) for label in labels]
                if any(not toks for toks in token_lists):
                    raise ModelError("E-EMPTYVERB", f"a label of {v.aspect!r} has no tokens")
                ids = sorted({t for toks in token_lists for t in toks})
                col = {t: j for j, t in enumerate(ids)}
                avg = torch.zeros((len(labels), len(ids)), dtype=DTYPE)
                for row, toks in enumerate(token_lists):
                    for t in toks:
                        avg[row, col[t]] += 1.0 / len(toks)
                vocab.append(torch.tensor(ids, dtype=torch.long))
                average.append(avg)
                positive.append(torch.arange(len(labels)) < len(v.positive_labels))
            self._plans[key] = ReadoutPlan(vocab, average, positive)
        return self._plans[key]

    # forward -------------------------------------------------------------

    def mask_states(self, batch: EncodedBatch, prefix: torch.Tensor | None) -> tuple[torch.Tensor, torch.Tensor]:
        """Final hidden states ``(B, r, d)`` at the masks and the masks'
        last-layer attention over prompt tokens ``(B, r, T)``.

        The last layer only computes query rows for the masks; nothing else
        of it is read.
        """
        p, d = self.params, self.d
        B, T = batch.ids.shape
        x = p["embed"][batch.ids] + self.position_scale * _sinusoid(T, d)
        key_pad = batch.pad
        if prefix is not None:
            if tuple(prefix.shape[1:]) != self.descriptor.block_shape or prefix.shape[0] != B:
                raise ModelError("E-SHAPE", f"prefix {tuple(prefix.shape)} vs block {self.descriptor.block_shape}")
            key_pad = torch.cat([torch.zeros((B, self.k), dtype=torch.bool), batch.pad], dim=1)
        bias = torch.zeros(key_pad.shape, dtype=DTYPE).masked_fill(key_pad, float("-inf"))[:, None, :]
        for layer in range(self.layers):
            if layer == self.layers - 1:
                x_q = torch.gather(x, 1, batch.mask_pos[:, :, None].expand(-1, -1, d))
            else:
                x_q = x
            keys = x @ p["wk"][layer]
            values = x @ p["wv"][layer]
            if prefix is not None:
                keys = torch.cat([prefix[:, :, 2 * layer * d : (2 * layer + 1) * d], keys], dim=1)
                values = torch.cat([prefix[:, :, (2 * layer + 1) * d : (2 * layer + 2) * d], values], dim=1)
            att = torch.softmax((x_q @ p["wq"][layer]) @ keys.transpose(1, 2) / math.sqrt(d) + bias, dim=-1)
            x = x_q + att @ values @ p["wo"][layer]
        return x, att[:, :, att.shape[2] - T :]

    def label_logscores(self, batch: EncodedBatch, plan: ReadoutPlan, prefix: torch.Tensor | None):
        """Per mask: ``(B, n_labels)`` length-normalized label log-scores."""
        at_mask, att = self.mask_states(batch, prefix)
        out = []
        for f, (vocab, avg) in enumerate(zip(plan.vocab, plan.average)):
            logits = self.readout_scale * at_mask[:, f, :] @ self.params["embed"][vocab].T
            if self.copy_weight:
                match = (batch.ids[:, :, None] == vocab[None, None, :]).to(DTYPE)
                copied = torch.einsum("bt,btv->bv", att[:, f, :], match)
                logits = logits + self.copy_weight * torch.log(self.copy_floor + copied)
            out.append(torch.log_softmax(logits, dim=-1) @ avg.T)
        return out

    @staticmethod
    def label_set_logmass(logs, plan: ReadoutPlan) -> tuple[torch.Tensor, torch.Tensor]:
        """``(B, r)`` tensors ``log S+`` and ``log S-``."""
        pos = [torch.logsumexp(l[:, p], dim=-1) for l, p in zip(logs, plan.positive)]
        neg = [torch.logsumexp(l[:, ~p], dim=-1) for l, p in zip(logs, plan.positive)]
        return torch.stack(pos, dim=1), torch.stack(neg, dim=1)

    def probs(self, batch: EncodedBatch, plan: ReadoutPlan, prefix: torch.Tensor | None) -> torch.Tensor:
        """``(B, r)`` probabilities ``S+ / (S+ + S-)``, differentiable in ``prefix``."""
        log_pos, log_neg = self.label_set_logmass(self.label_logscores(batch, plan, prefix), plan)
        return torch.sigmoid(log_pos - log_neg)

    # contract ------------------------------------------------------------

    def _prefix_tensor(self, prompts: Sequence[EnsembledPrompt]) -> torch.Tensor | None:
        refs = [p.prefix_ref for p in prompts]
        if all(r is None for r in refs):
            return None
        if any(r is None for r in refs):
            raise ModelError("E-SHAPE", "cannot mix prompts with and without a prefix in one batch")
        cache: dict = {}
        rows = []
        for ref in refs:
            if ref not in cache:
                cache[ref] = ref.tensor()
            rows.append(cache[ref])
        return torch.stack(rows)

    @staticmethod
    def _scores(prompts, log_pos: torch.Tensor, log_neg: torch.Tensor) -> list[AspectScores]:
        p = torch.sigmoid(log_pos - log_neg).tolist()
        s_pos, s_neg = log_pos.exp().tolist(), log_neg.exp().tolist()
        out = []
        for row, prompt in enumerate(prompts):
            aspects = prompt.composed.aspects
            probs = dict(zip(aspects, p[row]))
            raw = {a: (s_pos[row][f], s_neg[row][f]) for f, a in enumerate(aspects)}
            out.append(AspectScores(probs, prompt.composed.window_ref, raw))
        return out

    def score_many(
        self, prompts: Sequence[EnsembledPrompt], verbalizers: Sequence[Verbalizer], chunk: int = 64
    ) -> list[AspectScores]:
        for prompt in prompts:
            self.check(prompt, verbalizers)
        plan = self.plan(verbalizers)
        out = []
        with torch.no_grad():
            for start in range(0, len(prompts), chunk):
                part = prompts[start : start + chunk]
                logs = self.label_logscores(self.encode([p.text for p in part]), plan, self._prefix_tensor(part))
                out.extend(self._scores(part, *self.label_set_logmass(logs, plan)))
        return out

    def score_and_grad_many(
        self, prompts: Sequence[EnsembledPrompt], verbalizers: Sequence[Verbalizer]
    ) -> tuple[list[AspectScores], np.ndarray]:
        if any(p.prefix_ref is None for p in prompts):
            raise ModelError("E-NOPREFIX", "prompt has no prefix to differentiate")
        for prompt in prompts:
            self.check(prompt, verbalizers)
        plan = self.plan(verbalizers)
        blocks = self._prefix_tensor(prompts).detach().clone().requires_grad_(True)
        logs = self.label_logscores(self.encode([p.text for p in prompts]), plan, blocks)
        log_pos, log_neg = self.label_set_logmass(logs, plan)
        (grad,) = torch.autograd.grad(torch.sigmoid(log_pos - log_neg).sum(), blocks)
        return self._scores(prompts, log_pos.detach(), log_neg.detach()), grad.numpy()

    def score(self, prompt: EnsembledPrompt, verbalizers: Sequence[Verbalizer]) -> AspectScores:
        return self.score_many([prompt], verbalizers)[0]

    def prompt_value(self, prompt: EnsembledPrompt, verbalizers: Sequence[Verbalizer], block) -> torch.Tensor:
        """Sum of the prompt's mask probabilities with ``block`` as its prefix."""
        self.check(prompt, verbalizers)
        block = torch.as_tensor(block, dtype=DTYPE)
        return self.probs(self.encode([prompt.text]), self.plan(verbalizers), block[None]).sum()

    def grad_prefix(self, prompt: EnsembledPrompt, verbalizers: Sequence[Verbalizer], upstream: float) -> np.ndarray:
        """Gradient of ``upstream * sum_f p_f`` with respect to the prompt's prefix block."""
        if prompt.prefix_ref is None:
            raise ModelError("E-NOPREFIX", "prompt has no prefix to differentiate")
        block = prompt.prefix_ref.tensor().detach().clone().requires_grad_(True)
        value = upstream * self.prompt_value(prompt, verbalizers, block)
        (grad,) = torch.autograd.grad(value, block)
        return grad.numpy()

    def grad_prefix_many(
        self, prompts: Sequence[EnsembledPrompt], verbalizers: Sequence[Verbalizer], upstreams: Sequence[float]
    ) -> np.ndarray:
        if any(p.prefix_ref is None for p in prompts):
            raise ModelError("E-NOPREFIX", "prompt has no prefix to differentiate")
        for prompt in prompts:
            self.check(prompt, verbalizers)
        blocks = self._prefix_tensor(prompts).detach().clone().requires_grad_(True)
        weights = torch.as_tensor(np.asarray(upstreams, dtype=float), dtype=DTYPE)
        probs = self.probs(self.encode([p.text for p in prompts]), self.plan(verbalizers), blocks)
        (grad,) = torch.autograd.grad((probs.sum(dim=1) * weights).sum(), blocks)
        return grad.numpy()

    # persistence ---------------------------------------------------------

    def config(self) -> dict:
        return {
            "d": self.d, "layers": self.layers, "k": self.k, "buckets": self.buckets,
            "readout_scale": self.readout_scale, "position_scale": self.position_scale,
            "copy_weight": self.copy_weight, "copy_floor": self.copy_floor, "seed": self.seed,
        }

    def fingerprint(self) -> str:
        digest = hashlib.sha256(json.dumps(self.config(), sort_keys=True).encode())
        for name in sorted(self.params):
            digest.update(name.encode())
            digest.update(self.params[name].numpy().tobytes())
        return digest.hexdigest()

    def save(self, path: str | Path) -> None:
        meta = np.frombuffer(json.dumps(self.config()).encode(), dtype=np.uint8)
        with open(path, "wb") as fh:
            np.savez(fh, __meta__=meta, **{k: v.numpy() for k, v in self.params.items()})

    @classmethod
    def load(cls, path: str | Path) -> "TinyBackend":
        try:
            with np.load(path) as data:
                config = json.loads(bytes(data["__meta__"]).decode())
                params = {k: torch.from_numpy(data[k].copy()) for k in data.files if k != "__meta__"}
        except (OSError, ValueError, KeyError) as exc:
            raise DataError("E-IO", f"cannot read backend parameters {str(path)!r}: {exc}") from None
        backend = cls(**config)
        backend.params = params
        return backend
