"""Per-user trainable prefixes with a feedforward reparametrization.

Each user owns a row of a small embedding matrix. A shared MLP maps that row
to the prefix block the backend consumes, so the raw row never reaches the
backend directly. Users outside the store get the MLP applied to the mean row.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from torch import nn

from promptscreen.errors import DataError, ModelError

UNSEEN = "unseen"
FORMAT_VERSION = 1
DTYPE = torch.float64


@dataclass(frozen=True, eq=False)
class PrefixBlock:
    states: np.ndarray
    owner: str

    def __eq__(self, other):
        if not isinstance(other, PrefixBlock):
            return NotImplemented
        return self.owner == other.owner and np.array_equal(self.states, other.states)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.states.shape)


@dataclass(frozen=True)
class PrefixRef:
    """Handle to one user's prefix inside a store (``owner == "unseen"`` for the fallback)."""

    owner: str
    store: "PrefixStore"

    def resolve(self) -> PrefixBlock:
        if self.owner == UNSEEN:
            return self.store.unseen_user_prefix()
        return self.store.user_prefix(self.owner)

    def tensor(self) -> torch.Tensor:
        return self.store.block(None if self.owner == UNSEEN else self.owner)


def _uniform(gen: torch.Generator, shape, bound: float) -> torch.Tensor:
    return (torch.rand(shape, generator=gen, dtype=DTYPE) * 2 - 1) * bound


class PrefixStore(nn.Module):
    """Embedding rows ``(l, k_e)`` plus ``MLP: k_e -> prod(block_shape)``."""

    def __init__(
        self,
        user_ids: Sequence[str],
        k: int = 8,
        k_e: int = 16,
        block_shape: tuple[int, ...] = (8, 32),
        seed: int = 0,
        hidden: int | None = None,
        init_std: float = 0.02,
    ):
        super().__init__()
        if k < 1 or k_e < 1:
            raise ValueError(f"k and k_e must be >= 1, got k={k}, k_e={k_e}")
        if len(set(user_ids)) != len(user_ids):
            raise ValueError("duplicate user ids")
        block_shape = tuple(int(s) for s in block_shape)
        if not block_shape or block_shape[0] != k or min(block_shape) < 1:
            raise ModelError("E-SHAPE", f"block shape {block_shape} must start with k={k}")
        self.k = k
        self.k_e = k_e
        self.block_shape = block_shape
        self.hidden = hidden or 4 * k_e
        self.user_index = {uid: i for i, uid in enumerate(user_ids)}

        gen = torch.Generator().manual_seed(seed)
        out = math.prod(block_shape)
        self.embedding = nn.Embedding(max(len(user_ids), 1), k_e, sparse=True, dtype=DTYPE)
        self.mlp = nn.Sequential(nn.Linear(k_e, self.hidden, dtype=DTYPE), nn.Tanh(), nn.Linear(self.hidden, out, dtype=DTYPE))
        with torch.no_grad():
            self.embedding.weight.copy_(torch.randn((max(len(user_ids), 1), k_e), generator=gen, dtype=DTYPE) * init_std)
            first, last = self.mlp[0], self.mlp[2]
            first.weight.copy_(_uniform(gen, first.weight.shape, 1 / math.sqrt(k_e)))
            first.bias.copy_(_uniform(gen, first.bias.shape, 1 / math.sqrt(k_e)))
            last.weight.copy_(_uniform(gen, last.weight.shape, 1 / math.sqrt(self.hidden)))
            last.bias.zero_()

    @property
    def n_users(self) -> int:
        return len(self.user_index)

    def __contains__(self, user_id: str) -> bool:
        return user_id in self.user_index

    def rows(self) -> torch.Tensor:
        """The user embedding matrix (only the rows that belong to users)."""
        return self.embedding.weight[: self.n_users]

    def block(self, user_id: str | None) -> torch.Tensor:
        """Differentiable prefix block; ``None`` selects the unseen-user prefix."""
        if user_id is None:
            if self.n_users == 0:
                raise ModelError("E-EMPTYSTORE", "store has no users to average")
            row = self.rows().mean(dim=0)
        else:
            if user_id not in self.user_index:
                raise ModelError("E-UNKNOWNUSER", f"user {user_id!r} not in prefix store")
            row = self.embedding(torch.tensor(self.user_index[user_id]))
        return self.mlp(row).reshape(self.block_shape)

    def shared_block(self) -> torch.Tensor:
        """Unseen-user block with the mean row detached: gradients reach only the MLP."""
        if self.n_users == 0:
            raise ModelError("E-EMPTYSTORE", "store has no users to average")
        return self.mlp(self.rows().detach().mean(dim=0)).reshape(self.block_shape)

    def blocks(self, user_ids: Sequence[str | None]) -> torch.Tensor:
        return torch.stack([self.block(u) for u in user_ids])

    def user_prefix(self, user_id: str, allow_unseen: bool = False) -> PrefixBlock:
        if user_id not in self.user_index:
            if allow_unseen:
                return self.unseen_user_prefix()
            raise ModelError("E-UNKNOWNUSER", f"user {user_id!r} not in prefix store")
        with torch.no_grad():
            return PrefixBlock(self.block(user_id).numpy().copy(), user_id)

    def unseen_user_prefix(self) -> PrefixBlock:
        with torch.no_grad():
            return PrefixBlock(self.block(None).numpy().copy(), UNSEEN)

    def ref(self, user_id: str, allow_unseen: bool = True) -> PrefixRef:
        if user_id in self.user_index:
            return PrefixRef(user_id, self)
        if allow_unseen and self.n_users:
            return PrefixRef(UNSEEN, self)
        raise ModelError("E-NOPREFIX", f"no prefix for user {user_id!r} and unseen fallback disabled")

    def dense_parameters(self) -> list[nn.Parameter]:
        return list(self.mlp.parameters())

    def save(self, path: str | Path) -> None:
        meta = {
            "format_version": FORMAT_VERSION,
            "k": self.k,
            "k_e": self.k_e,
            "hidden": self.hidden,
            "block_shape": list(self.block_shape),
            "user_ids": list(self.user_index),
        }
        arrays = {name: t.detach().numpy() for name, t in self.state_dict().items()}
        with open(path, "wb") as fh:
            np.savez(fh, __meta__=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8), **arrays)

    @classmethod
    def load(cls, path: str | Path) -> "PrefixStore":
        try:
            with np.load(path) as data:
                meta = json.loads(bytes(data["__meta__"]).decode())
                arrays = {k: data[k] for k in data.files if k != "__meta__"}
        except (OSError, ValueError, KeyError) as exc:
            raise DataError("E-IO", f"cannot read prefix store {str(path)!r}: {exc}") from None
        if meta.get("format_version") != FORMAT_VERSION:
            raise DataError("E-SCHEMA", f"unsupported prefix store version {meta.get('format_version')}")
        store = cls(meta["user_ids"], meta["k"], meta["k_e"], tuple(meta["block_shape"]), hidden=meta["hidden"])
        store.load_state_dict({k: torch.from_numpy(v.copy()) for k, v in arrays.items()})
        return store

    def fingerprint(self) -> str:
        digest = hashlib.sha256()
        for name, t in sorted(self.state_dict().items()):
            digest.update(name.encode())
            digest.update(t.detach().numpy().tobytes())
        return digest.hexdigest()


def init_store(
    user_ids: Sequence[str],
    k: int = 8,
    k_e: int = 16,
    block_shape: tuple[int, ...] | None = None,
    seed: int = 0,
    backend=None,
) -> PrefixStore:
    """Create a store; ``block_shape`` defaults to what ``backend`` declares."""
    declared = None
    if backend is not None:
        desc = backend.descriptor
        if not desc.supports_prefix:
            raise ModelError("E-SHAPE", f"backend {desc.name!r} does not take prefixes")
        declared = desc.block_shape
    if block_shape is None:
        if declared is None:
            raise ValueError("block_shape is required without a backend")
        block_shape = declared
    if declared is not None and tuple(block_shape) != tuple(declared):
        raise ModelError("E-SHAPE", f"block shape {tuple(block_shape)} != backend's {tuple(declared)}")
    return PrefixStore(list(user_ids), k, k_e, tuple(block_shape), seed)
