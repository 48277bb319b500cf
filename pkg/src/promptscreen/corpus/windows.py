"""Sliding-window decomposition of a user's token stream."""

from __future__ import annotations

from promptscreen.corpus.records import TokenSeq, TokenWindow
from promptscreen.errors import DataError


def make_windows(seq: TokenSeq, w: int, stride: int | None = None) -> list[TokenWindow]:
    """Cut ``seq`` into windows of at most ``w`` tokens.

    With the default ``stride == w`` the windows start at 0, w, 2w, ... and
    partition the sequence: there are ``ceil(len(seq) / w)`` of them and the
    last one may be short. A smaller stride produces overlapping windows
    (the partition property then no longer holds).
    """
    if w < 1:
        raise ValueError(f"window size must be >= 1, got {w}")
    stride = w if stride is None else stride
    if not 1 <= stride <= w:
        raise ValueError(f"stride must be in [1, {w}], got {stride}")
    n = len(seq.tokens)
    if n == 0:
        raise DataError("E-EMPTY", f"empty token sequence for user {seq.source_user!r}")

    windows = []
    start = 0
    while True:
        chunk = seq.tokens[start : start + w]
        windows.append(TokenWindow(chunk, len(windows), seq.source_user))
        if start + w >= n:
            break
        start += stride
    return windows
