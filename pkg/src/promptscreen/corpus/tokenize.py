"""Tokenizers and per-user token stream construction."""

from __future__ import annotations

from typing import Protocol, Sequence

from promptscreen.corpus.records import TokenSeq, UserRecord
from promptscreen.errors import DataError

DEFAULT_SEPARATOR = "<sep>"


class Tokenizer(Protocol):
    def tokenize(self, text: str) -> list[str]: ...

    def detokenize(self, tokens: Sequence[str]) -> str: ...


class WhitespaceTokenizer:
    """Split on runs of whitespace; join with single spaces.

    Round-trips any text whose whitespace is already normalized.
    """

    name = "whitespace"

    def tokenize(self, text: str) -> list[str]:
        return text.split()

    def detokenize(self, tokens: Sequence[str]) -> str:
        return " ".join(tokens)


def concat_tokens(
    user: UserRecord,
    tokenizer: Tokenizer | None = None,
    separator: str | None = DEFAULT_SEPARATOR,
) -> TokenSeq:
    """Tokenize every post and concatenate them in post order.

    ``separator`` is placed between consecutive non-empty posts so words of
    adjacent posts never fuse into one phrase; pass ``None`` to disable it.
    """
    tokenizer = tokenizer or WhitespaceTokenizer()
    tokens: list[str] = []
    for post in user.posts:
        piece = tokenizer.tokenize(post.text)
        if not piece:
            continue
        if tokens and separator is not None:
            tokens.append(separator)
        tokens.extend(piece)
    if not tokens:
        raise DataError("E-EMPTY", f"user {user.user_id!r} has no tokens")
    return TokenSeq(tuple(tokens), user.user_id)
