import json
import logging
import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import day, make_corpus, make_user
from promptscreen.config import parse_flat
from promptscreen.corpus import (
    ERISK_TABLE,
    PRE_ONSET,
    PRE_PREDICTION,
    StatsTable,
    SynthSpec,
    TokenSeq,
    WhitespaceTokenizer,
    concat_tokens,
    fewshot_subset,
    generate_synthetic,
    load_corpus,
    make_windows,
    split_corpus,
    time_slice,
    validate_stats,
    write_corpus,
)
from promptscreen.corpus.io import dumps_users
from promptscreen.corpus.records import Corpus
from promptscreen.corpus.splits import allocate
from promptscreen.errors import DataError


def _line(uid, label=0, posts=None, onset=None):
    posts = posts or [{"t": "2020-01-01T00:00:00Z", "text": "hello there"}]
    return json.dumps({"user_id": uid, "labels": {"depression": label}, "onset": onset, "posts": posts})


# loading ------------------------------------------------------------------


def test_load_three_valid_lines(tmp_path):
    path = tmp_path / "c.jsonl"
    path.write_text("\n".join(_line(f"u{i}", i % 2) for i in range(3)) + "\n")
    corpus = load_corpus(path)
    assert len(corpus) == 3
    assert corpus.disease_ids == {"depression"}


def test_label_two_is_schema_error_with_line(tmp_path):
    path = tmp_path / "c.jsonl"
    path.write_text(_line("a") + "\n" + _line("b", label=2) + "\n")
    with pytest.raises(DataError) as err:
        load_corpus(path)
    assert err.value.code == "E-SCHEMA"
    assert err.value.line == 2


@pytest.mark.parametrize(
    "obj",
    [
        {"labels": {"d": 1}, "posts": []},
        {"user_id": "u", "labels": {"d": 1}, "posts": [{"t": "not a time", "text": "x"}]},
        {"user_id": "u", "labels": {"d": True}, "posts": [{"t": "2020-01-01T00:00:00Z", "text": "x"}]},
    ],
)
def test_schema_errors(tmp_path, obj):
    path = tmp_path / "c.jsonl"
    path.write_text(json.dumps(obj) + "\n")
    with pytest.raises(DataError) as err:
        load_corpus(path)
    assert err.value.code == "E-SCHEMA"


def test_out_of_order_posts_are_resorted(tmp_path, caplog):
    posts = [{"t": "2020-01-03T00:00:00Z", "text": "late"}, {"t": "2020-01-01T00:00:00Z", "text": "early"}]
    path = tmp_path / "c.jsonl"
    path.write_text(_line("u", posts=posts) + "\n")
    with caplog.at_level(logging.WARNING):
        corpus = load_corpus(path)
    assert [p.text for p in corpus.users[0].posts] == ["early", "late"]
    assert "re-sorted" in caplog.text


def test_user_without_nonempty_posts_is_dropped(tmp_path, caplog):
    path = tmp_path / "c.jsonl"
    blank = [{"t": "2020-01-01T00:00:00Z", "text": "   "}]
    path.write_text(_line("a") + "\n" + _line("b", posts=blank) + "\n")
    with caplog.at_level(logging.WARNING):
        corpus = load_corpus(path)
    assert [u.user_id for u in corpus.users] == ["a"]
    assert "dropped" in caplog.text


def test_missing_file_is_io_error(tmp_path):
    with pytest.raises(DataError) as err:
        load_corpus(tmp_path / "nope.jsonl")
    assert err.value.code == "E-IO"


def test_write_load_round_trip(tmp_path):
    corpus = generate_synthetic(SynthSpec(n_users=12, posts_min=2, posts_max=4), seed=3).corpus
    path = tmp_path / "sub" / "c.jsonl"
    write_corpus(corpus, path)
    again = load_corpus(path)
    assert again == corpus
    assert dumps_users(again.users) == path.read_text()


def test_duplicate_user_ids_rejected():
    with pytest.raises(DataError):
        make_corpus([make_user("a", ["x"]), make_user("a", ["y"])])


# tokens and windows ---------------------------------------------------------


def test_concat_tokens_with_separator():
    seq = concat_tokens(make_user("u", ["a b", "c"]), WhitespaceTokenizer(), "<sep>")
    assert seq.tokens == ("a", "b", "<sep>", "c")


def test_concat_single_post_has_no_separator():
    seq = concat_tokens(make_user("u", ["just one post"]))
    assert seq.tokens == ("just", "one", "post")


def test_concat_long_history_token_count():
    # 421 posts alternating 27 and 28 words
    texts = [" ".join(["w"] * (27 + i % 2)) for i in range(421)]
    user = make_user("u", texts)
    oracle = sum(len(t.split(" ")) for t in texts)
    seq = concat_tokens(user, separator=None)
    assert len(seq) == oracle == 11_577
    assert abs(len(seq) - 11_600) / 11_600 < 0.01
    assert len(concat_tokens(user)) == oracle + 420


def test_detokenize_round_trips_post_text():
    user = make_user("u", ["hello  world", "second post"])
    tok = WhitespaceTokenizer()
    seq = concat_tokens(user, tok, separator=None)
    assert tok.detokenize(seq.tokens) == "hello world second post"


@pytest.mark.parametrize("n,w,lengths", [(10, 3, [3, 3, 3, 1]), (6, 6, [6])])
def test_window_examples(n, w, lengths):
    seq = TokenSeq(tuple(str(i) for i in range(n)), "u")
    windows = make_windows(seq, w)
    assert [win.length for win in windows] == lengths
    assert [win.ordinal for win in windows] == list(range(len(lengths)))


def test_window_1000_by_128():
    seq = TokenSeq(tuple(str(i) for i in range(1000)), "u")
    windows = make_windows(seq, 128)
    assert len(windows) == 8 and windows[-1].length == 104
    assert sum((w.tokens for w in windows), ()) == seq.tokens


def test_window_errors():
    with pytest.raises(DataError):
        make_windows(TokenSeq((), "u"), 3)
    with pytest.raises(ValueError):
        make_windows(TokenSeq(("a",), "u"), 0)


@settings(max_examples=200, deadline=None)
@given(n=st.integers(1, 3000), w=st.integers(1, 512))
def test_window_partition_property(n, w):
    seq = TokenSeq(tuple(range(n)), "u")
    windows = make_windows(seq, w)
    assert len(windows) == math.ceil(n / w)
    assert sum((win.tokens for win in windows), ()) == seq.tokens
    assert all(win.length == w for win in windows[:-1])


def test_overlapping_windows_cover_sequence():
    seq = TokenSeq(tuple(range(10)), "u")
    windows = make_windows(seq, 4, stride=2)
    assert [w.tokens[0] for w in windows] == [0, 2, 4, 6]
    assert windows[-1].tokens[-1] == 9


# time slicing ---------------------------------------------------------------


def _timed_user(days, onset=None):
    return make_user("u", [f"post {d}" for d in days], 1, days=days, onset=onset)


def test_pre_onset_interval():
    user = _timed_user([0, 30, 60, 100], onset=day(100))
    out = time_slice(user, PRE_ONSET, 4, 4)
    assert [p.text for p in out.posts] == ["post 60"]
    assert not out.is_empty_slice


def test_pre_onset_bounds_are_half_open():
    # [onset - 8w, onset - 4w) with onset at day 100: [44, 72)
    user = _timed_user([43.99, 44, 71.99, 72], onset=day(100))
    out = time_slice(user, PRE_ONSET, 4, 4)
    assert [p.text for p in out.posts] == ["post 44", "post 71.99"]


def test_pre_prediction_interval():
    user = _timed_user([0, 85, 86, 90, 100])
    out = time_slice(user, PRE_PREDICTION, 2)
    assert [p.text for p in out.posts] == ["post 86", "post 90", "post 100"]


def test_onset_before_history_gives_empty_slice():
    user = _timed_user([10, 20], onset=day(5))
    out = time_slice(user, PRE_ONSET, 24, 4)
    assert out.is_empty_slice and out.posts == ()
    assert out.labels == user.labels


def test_pre_onset_needs_anchor():
    with pytest.raises(DataError) as err:
        time_slice(_timed_user([1, 2]), PRE_ONSET, 4)
    assert err.value.code == "E-NOANCHOR"


# splits ---------------------------------------------------------------------


def _labeled(n, n_pos):
    return make_corpus([make_user(f"u{i:04d}", ["x"], int(i < n_pos)) for i in range(n)])


def test_split_table_shaped_counts():
    corpus = _labeled(1707, 214)
    split = split_corpus(corpus, "depression", seed=1)
    labels = {u.user_id: u.label("depression") for u in corpus.users}
    assert len(split.train) == 1024
    assert sum(labels[u] for u in split.train) == 128


def test_split_is_deterministic():
    corpus = _labeled(10, 2)
    assert split_corpus(corpus, "depression", seed=5) == split_corpus(corpus, "depression", seed=5)


def test_split_degenerate():
    with pytest.raises(DataError) as err:
        split_corpus(_labeled(10, 10), "depression")
    assert err.value.code == "E-DEGENERATE"
    with pytest.raises(DataError):
        split_corpus(_labeled(4, 2), "depression")


@settings(max_examples=60, deadline=None)
@given(n=st.integers(5, 120), frac=st.floats(0.05, 0.95), seed=st.integers(0, 2**32 - 1))
def test_split_partition_and_stratification(n, frac, seed):
    n_pos = min(max(int(n * frac), 1), n - 1)
    corpus = _labeled(n, n_pos)
    split = split_corpus(corpus, "depression", seed=seed)
    ids = {u.user_id for u in corpus.users}
    assert split.train | split.val | split.test == ids
    assert not (split.train & split.val or split.train & split.test or split.val & split.test)
    for label, count in ((1, n_pos), (0, n - n_pos)):
        for part, ratio in zip(split.parts(), (0.6, 0.2, 0.2)):
            have = sum(1 for u in part if int(u[1:]) < n_pos) if label else sum(1 for u in part if int(u[1:]) >= n_pos)
            assert abs(have - ratio * count) <= 1


@given(n=st.integers(0, 500))
def test_allocate_sums(n):
    counts = allocate(n, (0.6, 0.2, 0.2))
    assert sum(counts) == n
    assert all(abs(c - n * r) <= 1 for c, r in zip(counts, (0.6, 0.2, 0.2)))


# few-shot -------------------------------------------------------------------


def test_fewshot_balanced_small():
    train = list(_labeled(60, 10).users)
    two = fewshot_subset(train, "depression", 2, seed=0)
    assert sorted(u.label("depression") for u in two) == [0, 1]
    ten = fewshot_subset(train, "depression", 10, seed=0)
    assert sum(u.label("depression") for u in ten) == 5


def test_fewshot_100_from_table_shaped_train():
    corpus = _labeled(1707, 214)
    split = split_corpus(corpus, "depression", seed=1)
    train = corpus.subset(split.train)
    subset = fewshot_subset(train, "depression", 100, seed=0)
    assert len(subset) == 100
    assert sum(u.label("depression") for u in subset) == round(100 * 214 / 1707) == 13


def test_fewshot_deterministic_and_errors():
    train = list(_labeled(20, 5).users)
    assert fewshot_subset(train, "depression", 4, 9) == fewshot_subset(train, "depression", 4, 9)
    with pytest.raises(DataError):
        fewshot_subset(train, "depression", 21)
    with pytest.raises(DataError):
        fewshot_subset([u for u in train if u.label("depression")], "depression", 2)


# synthesis and stats --------------------------------------------------------


def test_synth_positive_count_and_determinism():
    spec = SynthSpec(n_users=200, positive_ratio=1 / 7, posts_min=3, posts_max=5)
    a = generate_synthetic(spec, seed=7)
    b = generate_synthetic(spec, seed=7)
    assert sum(u.label("depression") for u in a.corpus.users) == 29
    assert dumps_users(a.corpus.users) == dumps_users(b.corpus.users)
    assert all(u.onset is not None for u in a.corpus.users if u.label("depression"))


def test_synth_without_injection_has_no_mentions():
    spec = SynthSpec(n_users=30, posts_min=2, posts_max=3, inject_pos={}, inject_neg={})
    result = generate_synthetic(spec, seed=1)
    assert sum(result.mentions.values()) == 0


@pytest.mark.parametrize("ratio", [0.0, 1.0, -0.1])
def test_synth_rejects_bad_ratio(ratio):
    with pytest.raises(DataError) as err:
        generate_synthetic(SynthSpec(positive_ratio=ratio))
    assert err.value.code == "E-SPEC"


def test_synth_spec_flat_round_trip():
    spec = SynthSpec(n_users=50, style_words=3, style_rate=0.1, negative_word_rate=(0.0, 0.2))
    assert SynthSpec.from_flat(parse_flat(spec.dumps())) == spec


def test_synthetic_matches_its_own_expectation():
    result = generate_synthetic(SynthSpec(n_users=40, posts_min=2, posts_max=6), seed=2)
    report = validate_stats(result.corpus, result.expected)
    assert report.ok


def test_empty_corpus_mismatches_everything():
    report = validate_stats(Corpus((), frozenset()), ERISK_TABLE)
    assert report.checks and all(c.status == "mismatch" for c in report.checks)


def test_erisk_depression_positive_row():
    row = ERISK_TABLE.get("depression", "P")
    assert row["subjects"] == 214 and row["posts"] == 90_222


def test_stats_table_round_trip(tmp_path):
    path = tmp_path / "s.cfg"
    ERISK_TABLE.write(path)
    assert StatsTable.read(path).to_flat() == ERISK_TABLE.to_flat()
