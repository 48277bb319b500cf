import csv
import shutil
import subprocess
import sys

import pytest

from promptscreen.cli import main
from promptscreen.config import read_flat


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "synth.cfg").write_text("n_users = 60\nposts_min = 3\nposts_max = 6\n")
    assert main(["synth", "--spec", str(root / "synth.cfg"), "--seed", "7", "--out", str(root / "c.jsonl")]) == 0
    (root / "run.cfg").write_text(
        "corpus = c.jsonl\nbackend = mock\nmode = full\nruns = 3\nseed = 1\nout = out\n\n[train]\nw = 64\n"
    )
    return root


def test_synth_is_deterministic(workspace, tmp_path):
    assert main(["synth", "--spec", str(workspace / "synth.cfg"), "--seed", "7", "--out", str(tmp_path / "d.jsonl")]) == 0
    assert (tmp_path / "d.jsonl").read_bytes() == (workspace / "c.jsonl").read_bytes()
    assert (tmp_path / "d.stats.cfg").read_bytes() == (workspace / "c.stats.cfg").read_bytes()


def test_ingest_validates_against_generator_stats(workspace, capsys):
    assert main(["ingest", "--corpus", str(workspace / "c.jsonl"), "--expected", str(workspace / "c.stats.cfg")]) == 0
    assert "mismatch" not in capsys.readouterr().out


def test_ingest_mismatch_is_data_error(workspace, tmp_path):
    (tmp_path / "e.cfg").write_text("depression.P.subjects = 214\n")
    assert main(["ingest", "--corpus", str(workspace / "c.jsonl"), "--expected", str(tmp_path / "e.cfg")]) == 2


def test_evaluate_writes_reports(workspace, tmp_path):
    out = tmp_path / "full"
    assert main(["evaluate", "--config", str(workspace / "run.cfg"), "--mode", "full", "--out", str(out)]) == 0
    rows = list(csv.DictReader(open(out / "runs.csv")))
    assert len(rows) == 3 and {r["mode"] for r in rows} == {"full"}
    effective = read_flat(out / "effective.cfg")
    assert effective["mode"] == "full" and len(effective["config_hash"]) == 64


def test_evaluate_sweep_and_dump(workspace, tmp_path):
    out = tmp_path / "few"
    args = ["evaluate", "--config", str(workspace / "run.cfg"), "--mode", "fewshot:2,10", "--out", str(out)]
    assert main(args + ["--dump-prompts", str(tmp_path / "prompts.txt")]) == 0
    assert len((out / "curves.csv").read_text().splitlines()) == 3
    assert "[MASK]" in (tmp_path / "prompts.txt").read_text()


def test_ablate_tags_modes(workspace, tmp_path):
    out = tmp_path / "abl"
    assert main(["ablate", "--config", str(workspace / "run.cfg"), "--drop", "prefix", "--out", str(out)]) == 0
    modes = [r["mode"] for r in csv.DictReader(open(out / "summary.csv"))]
    assert modes == ["full", "ablation(prefix)"]


def test_report_rebuilds_summary(workspace, tmp_path):
    out = tmp_path / "rep"
    assert main(["evaluate", "--config", str(workspace / "run.cfg"), "--out", str(out)]) == 0
    before = (out / "summary.csv").read_bytes()
    (out / "summary.csv").unlink()
    assert main(["report", "--out", str(out)]) == 0
    assert (out / "summary.csv").read_bytes() == before


def test_train_and_predict(workspace, tmp_path):
    model = tmp_path / "model"
    # appended under the [train] section
    (workspace / "tiny.cfg").write_text((workspace / "run.cfg").read_text() + "epochs = 2\n")
    assert main(["train", "--config", str(workspace / "tiny.cfg"), "--backend", "tiny", "--out", str(model)]) == 0
    assert (model / "train_log.csv").exists() and (model / "store.npz").exists()
    pred = tmp_path / "pred.csv"
    assert main(["predict", "--model", str(model), "--user-file", str(workspace / "c.jsonl"), "--out", str(pred)]) == 0
    rows = list(csv.DictReader(open(pred)))
    assert len(rows) == 60 and set(rows[0]) == {"user_id", "score", "decision"}
    assert all(r["decision"] in ("0", "1") for r in rows)


def test_missing_corpus_names_path(workspace, tmp_path, capsys):
    missing = tmp_path / "nowhere.jsonl"
    assert main(["train", "--config", str(workspace / "run.cfg"), "--corpus", str(missing)]) == 2
    assert str(missing) in capsys.readouterr().err


def test_duplicate_concept_reports_line(tmp_path, capsys):
    bad = tmp_path / "bad.onto"
    bad.write_text("fatigue\tsymptom\ndivorce\tlife_event\nabilify\ttreatment\nfatigue\ttreatment\n")
    assert main(["validate-ontology", "--ontology", str(bad)]) == 2
    err = capsys.readouterr().err
    assert "E-ONTO-DUP" in err and "line 4" in err


@pytest.mark.parametrize(
    "argv",
    [[], ["frobnicate"], ["evaluate", "--mode", "fewshot:1", "--corpus", "{c}"], ["evaluate", "--workers", "0"]],
)
def test_usage_errors(workspace, argv):
    argv = [a.format(c=workspace / "c.jsonl") for a in argv]
    assert main(argv) == 1


def test_bad_config_value_is_data_error(workspace, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("corpus = %s\n[train]\nlr = -1\n" % (workspace / "c.jsonl"))
    assert main(["evaluate", "--config", str(cfg)]) == 2


def test_console_script_runs():
    exe = shutil.which("screen")
    cmd = [exe] if exe else [sys.executable, "-m", "promptscreen.cli"]
    done = subprocess.run(cmd + ["--version"], capture_output=True, text=True)
    assert done.returncode == 0 and done.stdout.startswith("screen ")
