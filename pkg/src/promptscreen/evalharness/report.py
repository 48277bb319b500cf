"""CSV report files for protocol results."""

from __future__ import annotations

import csv
import io
from pathlib import Path
from typing import Sequence

from promptscreen.errors import DataError
from promptscreen.evalharness.metrics import METRIC_NAMES
from promptscreen.evalharness.protocol import SWEEP_KINDS, MetricsReport

RUN_COLUMNS = ("disease", "backend", "mode", "run", "seed", *METRIC_NAMES, "tp", "fp", "fn", "tn", "tau", "n_train", "n_test", "n_excluded", "auc_degenerate")
SUMMARY_COLUMNS = ("disease", "backend", "mode", *(f"{m}_{s}" for m in METRIC_NAMES for s in ("mean", "std")))
CURVE_COLUMNS = ("disease", "backend", "sweep", "x", *(f"{m}_{s}" for m in METRIC_NAMES for s in ("mean", "std")))


def _fmt(value) -> str:
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, float):
        return f"{value:.6f}"
    return str(value)


def _csv(columns: Sequence[str], rows: Sequence[Sequence]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    writer.writerows([[_fmt(v) for v in row] for row in rows])
    return buf.getvalue()


def runs_csv(reports: Sequence[MetricsReport]) -> str:
    rows = []
    for rep in reports:
        for r in rep.runs:
            m = r.metrics
            rows.append((
                rep.disease, rep.backend, rep.mode.label, r.run, r.seed,
                *(m.value(name) for name in METRIC_NAMES),
                m.tp, m.fp, m.fn, m.tn, r.tau, r.n_train, r.n_test, r.n_excluded, m.auc_degenerate,
            ))
    return _csv(RUN_COLUMNS, rows)


def summary_csv(reports: Sequence[MetricsReport]) -> str:
    rows = []
    for rep in reports:
        summary = rep.summary()
        rows.append((rep.disease, rep.backend, rep.mode.label, *(summary[c] for c in SUMMARY_COLUMNS[3:])))
    return _csv(SUMMARY_COLUMNS, rows)


def curves_csv(reports: Sequence[MetricsReport]) -> str | None:
    """Plot-ready sweep table (``x`` = weeks or subjects), or ``None`` without sweeps."""
    rows = []
    for rep in reports:
        if rep.mode.kind in SWEEP_KINDS:
            summary = rep.summary()
            rows.append((rep.disease, rep.backend, rep.mode.kind, rep.mode.value, *(summary[c] for c in CURVE_COLUMNS[4:])))
    return _csv(CURVE_COLUMNS, rows) if rows else None


def emit_report(reports: MetricsReport | Sequence[MetricsReport], out_dir: str | Path) -> list[Path]:
    """Write ``runs.csv``, ``summary.csv`` and, for sweeps, ``curves.csv``."""
    if isinstance(reports, MetricsReport):
        reports = [reports]
    out_dir = Path(out_dir)
    files = {"runs.csv": runs_csv(reports), "summary.csv": summary_csv(reports), "curves.csv": curves_csv(reports)}
    written = []
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        for name, text in files.items():
            if text is None:
                continue
            path = out_dir / name
            with open(path, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
            written.append(path)
    except OSError as exc:
        raise DataError("E-IO", f"cannot write report to {str(out_dir)!r}: {exc}") from None
    return written
