"""Metrics, the multi-run protocol, and report files."""

from promptscreen.evalharness.metrics import METRIC_NAMES, Metrics, compute_metrics, confusion, rank_auc
from promptscreen.evalharness.protocol import MetricsReport, Mode, Protocol, RunResult, derive_seed, run_protocol
from promptscreen.evalharness.report import emit_report

__all__ = [
    "METRIC_NAMES", "Metrics", "MetricsReport", "Mode", "Protocol", "RunResult", "compute_metrics",
    "confusion", "derive_seed", "emit_report", "rank_auc", "run_protocol",
]
