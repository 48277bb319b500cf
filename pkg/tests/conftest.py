from __future__ import annotations

from datetime import datetime, timedelta, timezone

import pytest
import torch

from promptscreen.corpus import Corpus, Post, UserRecord
from promptscreen.ontology import builtin_ontology

torch.set_num_threads(1)

T0 = datetime(2020, 1, 1, tzinfo=timezone.utc)


def day(n: float) -> datetime:
    return T0 + timedelta(days=n)


def make_user(uid: str, texts, label: int = 0, days=None, onset=None, disease: str = "depression") -> UserRecord:
    days = list(range(len(texts))) if days is None else list(days)
    posts = tuple(Post(day(d), t) for d, t in zip(days, texts))
    return UserRecord(uid, posts, {disease: label}, onset)


def make_corpus(users, disease: str = "depression") -> Corpus:
    return Corpus(tuple(users), frozenset({disease}))


@pytest.fixture(scope="session")
def depression():
    return builtin_ontology("depression")


# acceptance results, printed once at the end of the session
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def record(criterion: int, ok: bool, detail: str) -> bool:
    ACCEPTANCE[criterion] = (ok, detail)
    print(f"criterion {criterion}: {'PASS' if ok else 'FAIL'}: {detail}")
    return ok


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for criterion in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[criterion]
        terminalreporter.write_line(f"criterion {criterion:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
