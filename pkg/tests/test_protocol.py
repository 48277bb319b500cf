from datetime import timedelta

import pytest

from conftest import day, make_corpus, make_user
from promptscreen.backends import MockBackend
from promptscreen.corpus import SynthSpec, generate_synthetic, split_corpus
from promptscreen.engine import TrainConfig
from promptscreen.errors import DataError
from promptscreen.evalharness import Mode, Protocol, derive_seed, emit_report, run_protocol
from promptscreen.evalharness.protocol import _slice
from promptscreen.evalharness.report import CURVE_COLUMNS, RUN_COLUMNS, SUMMARY_COLUMNS, runs_csv, summary_csv
from promptscreen.ontology import builtin_ontology

ONTO = builtin_ontology("depression")


@pytest.fixture(scope="module")
def noisy():
    # negatives mention concepts now and then, so runs differ
    spec = SynthSpec(
        n_users=200, posts_min=6, posts_max=10,
        inject_pos={"symptom": 0.08, "life_event": 0.05, "treatment": 0.05},
        inject_neg={"symptom": 0.03, "life_event": 0.02, "treatment": 0.01},
    )
    return generate_synthetic(spec, seed=4).corpus


def _protocol(corpus, seed=0):
    return Protocol(corpus, "depression", ONTO, MockBackend(), TrainConfig(), seed=seed)


# modes ---------------------------------------------------------------------


@pytest.mark.parametrize(
    "text,labels",
    [
        ("full", ["full"]),
        ("fewshot:2,10,100", ["fewshot(2)", "fewshot(10)", "fewshot(100)"]),
        ("early(24)", ["early(24)"]),
        ("timewindow:0.5", ["timewindow(0.5)"]),
        ("ablation:prefix", ["ablation(prefix)"]),
    ],
)
def test_mode_parsing(text, labels):
    assert [m.label for m in Mode.parse_many(text)] == labels


@pytest.mark.parametrize("text", ["fewshot:1", "early:-2", "ablation:everything", "full:3", "nonsense"])
def test_mode_rejects(text):
    with pytest.raises(ValueError):
        Mode.parse_many(text)


def test_derive_seed_is_stable_and_distinct():
    assert derive_seed(7, 0) == derive_seed(7, 0)
    assert len({derive_seed(7, r) for r in range(10)}) == 10


# protocol ------------------------------------------------------------------


def test_full_mode_report(noisy):
    report = run_protocol(noisy, "depression", ONTO, TrainConfig(), "full", 10, backend=MockBackend(), seed=3)
    assert len(report.runs) == 10
    assert [r.run for r in report.runs] == list(range(10))
    assert report.std("f1") > 0
    assert all(r.n_test == 40 and r.n_train == 120 for r in report.runs)
    for r in report.runs:
        assert r.metrics.n == r.n_test


def test_protocol_is_deterministic_across_workers(noisy):
    one = _protocol(noisy, seed=5).run(Mode("full"), 6, workers=1)
    four = _protocol(noisy, seed=5).run(Mode("full"), 6, workers=4)
    assert runs_csv([one]) == runs_csv([four])
    assert summary_csv([one]) == summary_csv([four])


def test_fewshot_two_uses_one_of_each(noisy):
    report = _protocol(noisy).run(Mode("fewshot", 2), 5)
    assert all(r.n_train == 2 for r in report.runs)


def test_early_slices_the_month_before_the_gap():
    onset = day(400)
    weeks = [30, 28, 27, 25, 24, 20, 0]
    user = make_user("p", [f"w{w}" for w in weeks], 1, days=[400 - 7 * w for w in weeks], onset=onset)
    (sliced,) = _slice([user], Mode("early", 24))
    # [onset - 28w, onset - 24w): lower bound in, upper bound out
    assert [p.text for p in sliced.posts] == ["w28", "w27", "w25"]
    assert all(timedelta(weeks=24) < onset - p.timestamp <= timedelta(weeks=28) for p in sliced.posts)


def test_early_negatives_anchor_on_last_post():
    # anchor = day 400, kept interval [day 204, day 232)
    neg = make_user("n", ["a", "b", "c", "d"], 0, days=[0, 203, 220, 400])
    (sliced,) = _slice([neg], Mode("early", 24))
    assert [p.text for p in sliced.posts] == ["c"]


def test_timewindow_keeps_recent_posts():
    user = make_user("u", ["a", "b", "c"], 1, days=[0, 90, 100])
    (sliced,) = _slice([user], Mode("timewindow", 2))
    assert [p.text for p in sliced.posts] == ["b", "c"]


def test_empty_test_slices_are_degenerate(noisy):
    with pytest.raises(DataError) as err:
        _protocol(noisy).run(Mode("early", 5000), 1)
    assert err.value.code == "E-DEGENERATE"
    assert "run 0" in str(err.value)


def test_excluded_users_are_counted():
    users = [make_user(f"p{i}", ["divorce"], 1, days=[300], onset=day(300 + 7 * 25)) for i in range(10)]
    users += [make_user(f"q{i}", ["divorce"], 1, days=[0], onset=day(300)) for i in range(4)]
    users += [make_user(f"n{i}", ["fine", "x"], 0, days=[120, 300]) for i in range(10)]
    report = _protocol(make_corpus(users)).run(Mode("early", 24), 2)
    assert all(r.n_excluded > 0 for r in report.runs)


def test_no_test_leakage_in_fewshot(noisy, monkeypatch):
    seen = {}
    proto = _protocol(noisy)
    original = proto.engine

    def spy(mode, seed):
        engine = original(mode, seed)
        calibrate = engine.calibrate

        def record(users):
            seen.setdefault(seed, set()).update(u.user_id for u in users)
            return calibrate(users)

        engine.calibrate = record
        return engine

    monkeypatch.setattr(proto, "engine", spy)
    for r in proto.run(Mode("fewshot", 10), 3).runs:
        split = split_corpus(noisy, "depression", seed=r.seed)
        assert seen[r.seed] <= split.train
        assert not seen[r.seed] & split.test


# reports -------------------------------------------------------------------


def test_report_files(tmp_path, noisy):
    proto = _protocol(noisy)
    reports = [proto.run(Mode("fewshot", n), 3) for n in (2, 10, 100)]
    written = emit_report(reports, tmp_path / "out")
    assert [p.name for p in written] == ["runs.csv", "summary.csv", "curves.csv"]
    runs = (tmp_path / "out" / "runs.csv").read_text().splitlines()
    assert runs[0] == ",".join(RUN_COLUMNS) and len(runs) == 10
    curves = (tmp_path / "out" / "curves.csv").read_text().splitlines()
    assert curves[0] == ",".join(CURVE_COLUMNS)
    assert [line.split(",")[3] for line in curves[1:]] == ["2", "10", "100"]

    first = {p.name: p.read_bytes() for p in written}
    emit_report(reports, tmp_path / "out")
    assert {p.name: p.read_bytes() for p in written} == first


def test_summary_schema(tmp_path, noisy):
    report = _protocol(noisy).run(Mode("full"), 2)
    emit_report(report, tmp_path)
    header, row = (tmp_path / "summary.csv").read_text().splitlines()
    assert header == (
        "disease,backend,mode,auc_mean,auc_std,f1_mean,f1_std,precision_mean,precision_std,recall_mean,recall_std"
    )
    assert header == ",".join(SUMMARY_COLUMNS)
    assert row.startswith("depression,mock,full,")
    assert not (tmp_path / "curves.csv").exists()


def test_emit_report_io_error(tmp_path, noisy):
    blocker = tmp_path / "file"
    blocker.write_text("")
    with pytest.raises(DataError) as err:
        emit_report(_protocol(noisy).run(Mode("full"), 1), blocker / "sub")
    assert err.value.code == "E-IO"
