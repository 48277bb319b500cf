"""Time-based slicing of a user's history for early-prediction experiments."""

from __future__ import annotations

from dataclasses import replace
from datetime import datetime, timedelta

from promptscreen.corpus.records import EMPTY_SLICE, UserRecord
from promptscreen.errors import DataError

PRE_ONSET = "pre_onset"
PRE_PREDICTION = "pre_prediction"


def time_slice(
    user: UserRecord,
    mode: str,
    x_weeks: float,
    span_weeks: float = 4,
    anchor: datetime | None = None,
) -> UserRecord:
    """Keep only the posts inside a time interval relative to an anchor.

    ``pre_onset``
        posts in ``[anchor - (x + span) weeks, anchor - x weeks)``; the anchor
        defaults to ``user.onset``.
    ``pre_prediction``
        posts in ``[anchor - x weeks, anchor]``; the anchor defaults to the
        last post. ``span_weeks`` is ignored.

    A slice with no posts comes back flagged ``empty-slice`` instead of
    raising, so the caller can decide whether to exclude the user.
    """
    if x_weeks <= 0:
        raise ValueError(f"x_weeks must be positive, got {x_weeks}")
    if mode == PRE_ONSET:
        if span_weeks <= 0:
            raise ValueError(f"span_weeks must be positive, got {span_weeks}")
        anchor = anchor or user.onset
        if anchor is None:
            raise DataError("E-NOANCHOR", f"user {user.user_id!r} has no onset and no anchor given")
        lo = anchor - timedelta(weeks=x_weeks + span_weeks)
        hi = anchor - timedelta(weeks=x_weeks)
        kept = tuple(p for p in user.posts if lo <= p.timestamp < hi)
    elif mode == PRE_PREDICTION:
        if anchor is None:
            if not user.posts:
                raise DataError("E-NOANCHOR", f"user {user.user_id!r} has no posts to anchor on")
            anchor = user.posts[-1].timestamp
        lo = anchor - timedelta(weeks=x_weeks)
        kept = tuple(p for p in user.posts if lo <= p.timestamp <= anchor)
    else:
        raise ValueError(f"unknown slice mode {mode!r}")

    flags = (user.flags | {EMPTY_SLICE}) if not kept else (user.flags - {EMPTY_SLICE})
    return replace(user, posts=kept, flags=frozenset(flags))
