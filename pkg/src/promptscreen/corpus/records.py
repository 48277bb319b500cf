"""Core corpus data types."""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Sequence

from promptscreen.errors import DataError

EMPTY_SLICE = "empty-slice"


def parse_timestamp(value: str) -> datetime:
    """Parse an RFC 3339 timestamp into an aware UTC datetime.

    Naive timestamps are taken to be UTC already.
    """
    if not isinstance(value, str):
        raise ValueError(f"timestamp must be a string, got {type(value).__name__}")
    text = value.strip()
    if text.endswith(("Z", "z")):
        text = text[:-1] + "+00:00"
    parsed = datetime.fromisoformat(text)
    if parsed.tzinfo is None:
        return parsed.replace(tzinfo=timezone.utc)
    return parsed.astimezone(timezone.utc)


def format_timestamp(value: datetime) -> str:
    return value.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


@dataclass(frozen=True)
class Post:
    timestamp: datetime
    text: str

    def __post_init__(self):
        if not self.text or not self.text.strip():
            raise ValueError("post text is empty")
        if self.timestamp.tzinfo is None:
            object.__setattr__(self, "timestamp", self.timestamp.replace(tzinfo=timezone.utc))


@dataclass(frozen=True)
class UserRecord:
    """One user's time-ordered posts and per-disease binary labels.

    A record with no posts is only legal when it carries the ``empty-slice``
    flag, which :func:`~promptscreen.corpus.timeslice.time_slice` sets.
    """

    user_id: str
    posts: tuple[Post, ...]
    labels: dict[str, int]
    onset: datetime | None = None
    flags: frozenset[str] = field(default_factory=frozenset)

    def __post_init__(self):
        object.__setattr__(self, "posts", tuple(self.posts))
        if not self.posts and EMPTY_SLICE not in self.flags:
            raise ValueError(f"user {self.user_id!r} has no posts")
        for a, b in zip(self.posts, self.posts[1:]):
            if b.timestamp < a.timestamp:
                raise ValueError(f"posts of user {self.user_id!r} are not time-ordered")
        for disease, value in self.labels.items():
            if value not in (0, 1) or isinstance(value, bool):
                raise ValueError(f"label {disease}={value!r} is not 0/1")

    @property
    def is_empty_slice(self) -> bool:
        return EMPTY_SLICE in self.flags

    def label(self, disease: str) -> int:
        return self.labels[disease]


@dataclass(frozen=True)
class Corpus:
    users: tuple[UserRecord, ...]
    disease_ids: frozenset[str]

    def __post_init__(self):
        object.__setattr__(self, "users", tuple(self.users))
        object.__setattr__(self, "disease_ids", frozenset(self.disease_ids))
        seen: set[str] = set()
        for user in self.users:
            if user.user_id in seen:
                raise DataError("E-SCHEMA", f"duplicate user_id {user.user_id!r}")
            seen.add(user.user_id)
            missing = self.disease_ids - set(user.labels)
            if missing:
                raise DataError(
                    "E-SCHEMA", f"user {user.user_id!r} lacks labels for {sorted(missing)}"
                )

    def __len__(self) -> int:
        return len(self.users)

    def by_id(self) -> dict[str, UserRecord]:
        return {u.user_id: u for u in self.users}

    def subset(self, user_ids) -> list[UserRecord]:
        """Users whose id is in ``user_ids``, in corpus order."""
        wanted = set(user_ids)
        return [u for u in self.users if u.user_id in wanted]


@dataclass(frozen=True)
class TokenSeq:
    tokens: tuple[str, ...]
    source_user: str

    def __len__(self) -> int:
        return len(self.tokens)


@dataclass(frozen=True)
class TokenWindow:
    tokens: tuple[str, ...]
    ordinal: int
    source_user: str

    @property
    def length(self) -> int:
        return len(self.tokens)

    @property
    def text(self) -> str:
        return " ".join(self.tokens)


@dataclass(frozen=True)
class SplitSpec:
    train: frozenset[str]
    val: frozenset[str]
    test: frozenset[str]
    seed: int

    def parts(self) -> Sequence[frozenset[str]]:
        return (self.train, self.val, self.test)
