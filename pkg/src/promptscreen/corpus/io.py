"""JSONL corpus reading and writing.

One user per line::

    {"user_id": "u1", "labels": {"depression": 1}, "onset": "2020-03-01T00:00:00Z",
     "posts": [{"t": "2020-01-01T10:00:00Z", "text": "..."}]}
"""

from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Iterable

from promptscreen.corpus.records import Corpus, Post, UserRecord, format_timestamp, parse_timestamp
from promptscreen.errors import DataError

logger = logging.getLogger(__name__)


def _user_from_obj(obj, lineno: int, require_labels: bool = True) -> UserRecord | None:
    if not isinstance(obj, dict):
        raise DataError("E-SCHEMA", "expected a JSON object", line=lineno)
    if not require_labels:
        obj.setdefault("labels", {})
    for key in ("user_id", "labels", "posts"):
        if key not in obj:
            raise DataError("E-SCHEMA", f"missing field {key!r}", line=lineno)
    user_id = obj["user_id"]
    if not isinstance(user_id, str) or not user_id:
        raise DataError("E-SCHEMA", "user_id must be a non-empty string", line=lineno)

    labels = obj["labels"]
    if not isinstance(labels, dict) or (require_labels and not labels):
        raise DataError("E-SCHEMA", "labels must be a non-empty object", line=lineno)
    for disease, value in labels.items():
        if isinstance(value, bool) or value not in (0, 1):
            raise DataError("E-SCHEMA", f"label {disease}={value!r} not in {{0,1}}", line=lineno)

    onset = obj.get("onset")
    if onset is not None:
        try:
            onset = parse_timestamp(onset)
        except ValueError as exc:
            raise DataError("E-SCHEMA", f"bad onset timestamp: {exc}", line=lineno) from None

    raw_posts = obj["posts"]
    if not isinstance(raw_posts, list):
        raise DataError("E-SCHEMA", "posts must be a list", line=lineno)
    posts = []
    for i, raw in enumerate(raw_posts):
        if not isinstance(raw, dict) or "t" not in raw or "text" not in raw:
            raise DataError("E-SCHEMA", f"post {i} needs fields 't' and 'text'", line=lineno)
        try:
            ts = parse_timestamp(raw["t"])
        except ValueError as exc:
            raise DataError("E-SCHEMA", f"post {i}: bad timestamp: {exc}", line=lineno) from None
        text = raw["text"]
        if not isinstance(text, str):
            raise DataError("E-SCHEMA", f"post {i}: text must be a string", line=lineno)
        if not text.strip():
            continue
        posts.append(Post(ts, text))

    if not posts:
        logger.warning("line %d: user %r has no non-empty posts; dropped", lineno, user_id)
        return None
    ordered = sorted(posts, key=lambda p: p.timestamp)
    if ordered != posts:
        logger.warning("line %d: posts of user %r were out of order; re-sorted", lineno, user_id)
    return UserRecord(user_id, tuple(ordered), dict(labels), onset)


def load_corpus(path: str | Path, require_labels: bool = True) -> Corpus:
    """Read and validate a JSONL corpus file.

    With ``require_labels=False`` (prediction input) the ``labels`` field may
    be missing or empty.

    Raises:
        DataError: ``E-IO`` if the file cannot be read, ``E-SCHEMA`` (with the
            offending line number) for malformed records.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise DataError("E-IO", f"cannot read corpus {str(path)!r}: {exc}") from None

    users: list[UserRecord] = []
    diseases: set[str] | None = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataError("E-SCHEMA", f"invalid JSON: {exc.msg}", line=lineno) from None
        user = _user_from_obj(obj, lineno, require_labels)
        if user is None:
            continue
        keys = set(user.labels)
        if not require_labels:
            users.append(user)
            continue
        if diseases is None:
            diseases = keys
        elif keys != diseases:
            raise DataError(
                "E-SCHEMA", f"label set {sorted(keys)} differs from {sorted(diseases)}", line=lineno
            )
        users.append(user)
    return Corpus(tuple(users), frozenset(diseases or ()))


def user_to_obj(user: UserRecord) -> dict:
    return {
        "user_id": user.user_id,
        "labels": dict(user.labels),
        "onset": format_timestamp(user.onset) if user.onset else None,
        "posts": [{"t": format_timestamp(p.timestamp), "text": p.text} for p in user.posts],
    }


def dumps_users(users: Iterable[UserRecord]) -> str:
    lines = [json.dumps(user_to_obj(u), ensure_ascii=False) for u in users]
    return "".join(line + "\n" for line in lines)


def write_corpus(corpus: Corpus | Iterable[UserRecord], path: str | Path) -> None:
    users = corpus.users if isinstance(corpus, Corpus) else corpus
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(dumps_users(users), encoding="utf-8")
    except OSError as exc:
        raise DataError("E-IO", f"cannot write {str(path)!r}: {exc}") from None
