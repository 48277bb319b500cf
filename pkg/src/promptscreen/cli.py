"""``screen`` command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data or validation error, 3 runtime
error. Every source of randomness is derived from ``--seed``.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from promptscreen import __version__
from promptscreen.backends import get_backend
from promptscreen.config import as_list, dumps_flat, read_flat
from promptscreen.corpus import corpus_stats, load_corpus, split_corpus, validate_stats, write_corpus
from promptscreen.corpus.stats import StatsTable
from promptscreen.corpus.synth import SynthSpec, generate_synthetic
from promptscreen.engine import Engine, TrainConfig
from promptscreen.errors import DataError, ScreenError
from promptscreen.evalharness import Metrics, MetricsReport, Mode, Protocol, RunResult, emit_report
from promptscreen.evalharness.metrics import METRIC_NAMES
from promptscreen.ontology import DEFAULT_NEGATIVES, builtin_ontology_path, load_negatives, load_ontology
from promptscreen.prompt import dump_prompts

log = logging.getLogger("promptscreen")

TOP_KEYS = ("corpus", "ontology", "negatives", "disease", "backend", "mode", "seed", "runs", "out")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


@dataclass
class RunConfig:
    """Effective run settings: config file values overridden by CLI flags."""

    corpus: Path | None = None
    ontology: Path | None = None
    negatives: Path | None = None
    disease: str = "depression"
    backend: str = "mock"
    mode: str = "full"
    seed: int = 0
    runs: int = 10
    out: Path = Path("out")
    train: TrainConfig = field(default_factory=TrainConfig)
    backend_options: dict[str, float] = field(default_factory=dict)

    @classmethod
    def build(cls, args: argparse.Namespace) -> "RunConfig":
        values: dict[str, str] = {}
        base = Path(".")
        if getattr(args, "config", None):
            values = read_flat(args.config)
            base = Path(args.config).parent
        cfg = cls()
        unknown = [k for k in values if "." not in k and k not in TOP_KEYS]
        unknown += [k for k in values if "." in k and k.split(".", 1)[0] not in ("train", "backend")]
        if unknown:
            raise DataError("E-CONFIG", f"unknown config keys {sorted(unknown)}")
        for key in ("corpus", "ontology", "negatives", "out"):
            if values.get(key):
                setattr(cfg, key, base / values[key])
        for key in ("disease", "backend", "mode"):
            if values.get(key):
                setattr(cfg, key, values[key])
        try:
            for key in ("seed", "runs"):
                if values.get(key):
                    setattr(cfg, key, int(values[key]))
            cfg.backend_options = {k[8:]: _scalar(v) for k, v in values.items() if k.startswith("backend.")}
        except ValueError as exc:
            raise DataError("E-CONFIG", str(exc)) from None
        cfg.train = TrainConfig.from_flat({k[6:]: v for k, v in values.items() if k.startswith("train.")})

        for key in ("corpus", "ontology", "out"):
            if getattr(args, key, None):
                setattr(cfg, key, Path(getattr(args, key)))
        for key in ("backend", "mode", "seed", "runs"):
            if getattr(args, key, None) is not None:
                setattr(cfg, key, getattr(args, key))
        if cfg.runs < 1:
            raise DataError("E-CONFIG", "runs must be >= 1")
        for key in ("corpus", "ontology", "negatives"):
            path = getattr(cfg, key)
            if path is not None and not path.is_file():
                raise DataError("E-IO", f"{key} file not found: {str(path)!r}")
        return cfg

    def ontology_path(self) -> Path:
        return self.ontology or builtin_ontology_path(self.disease)

    def to_flat(self) -> dict[str, object]:
        out: dict[str, object] = {
            "corpus": self.corpus, "ontology": self.ontology_path(), "negatives": self.negatives,
            "disease": self.disease, "backend": self.backend, "mode": self.mode, "seed": self.seed,
            "runs": self.runs, "out": self.out,
        }
        out.update({f"train.{k}": v for k, v in self.train.to_flat().items()})
        out.update({f"backend.{k}": v for k, v in self.backend_options.items()})
        return out

    def content_hash(self) -> str:
        # the output location does not change results, so it stays out of the hash
        settings = {k: v for k, v in self.to_flat().items() if k != "out"}
        digest = hashlib.sha256(dumps_flat(settings).encode())
        for path in (self.ontology_path(), self.corpus):
            if path is not None:
                digest.update(Path(path).read_bytes())
        return digest.hexdigest()


def _scalar(text: str) -> int | float:
    value = float(text)
    return int(value) if value.is_integer() and "." not in text else value


# plumbing ----------------------------------------------------------------


def _need_corpus(cfg: RunConfig):
    if cfg.corpus is None:
        raise DataError("E-IO", "no corpus given (use --corpus or a config file)")
    corpus = load_corpus(cfg.corpus)
    if cfg.disease not in corpus.disease_ids:
        raise DataError("E-SCHEMA", f"corpus has no labels for {cfg.disease!r}")
    return corpus


def _engine(cfg: RunConfig, use_prefix: bool = True, use_rule: bool = True) -> Engine:
    ontology = load_ontology(cfg.ontology_path(), cfg.disease)
    negatives = load_negatives(cfg.negatives) if cfg.negatives else DEFAULT_NEGATIVES
    backend = get_backend(cfg.backend, **cfg.backend_options)
    return Engine(cfg.disease, ontology, backend, cfg.train, use_prefix, use_rule, negatives)


def _write_text(path: Path, text: str) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise DataError("E-IO", f"cannot write {str(path)!r}: {exc}") from None


def _evaluate(cfg: RunConfig, modes: Sequence[Mode], workers: int, dump: str | None) -> list[MetricsReport]:
    corpus = _need_corpus(cfg)
    engine = _engine(cfg)
    protocol = Protocol(
        corpus, cfg.disease, engine.ontology, engine.backend, cfg.train,
        negatives=engine.negatives, seed=cfg.seed, config_hash=cfg.content_hash(),
    )
    if dump:
        prompts = [p for u in corpus.users for p in protocol.engine(modes[0], cfg.seed).prompts(u)]
        dump_prompts(prompts, dump)
    reports = [protocol.run(mode, cfg.runs, workers) for mode in modes]
    emit_report(reports, cfg.out)
    _write_text(cfg.out / "effective.cfg", dumps_flat({**cfg.to_flat(), "config_hash": cfg.content_hash()}))
    for rep in reports:
        means = " ".join(f"{m}={rep.mean(m):.4f}±{rep.std(m):.4f}" for m in METRIC_NAMES)
        print(f"{rep.disease} {rep.backend} {rep.mode.label}: {means}")
    return reports


# subcommands --------------------------------------------------------------


def cmd_ingest(args) -> int:
    corpus = load_corpus(args.corpus)
    table = corpus_stats(corpus)
    print(table.dumps(), end="")
    if args.expected:
        report = validate_stats(corpus, StatsTable.read(args.expected))
        print("\n".join(report.lines()))
        if not report.ok:
            raise DataError("E-STATS", "corpus statistics do not match the expected table")
    if args.out:
        out = Path(args.out)
        write_corpus(corpus, out / "corpus.jsonl")
        table.write(out / "stats.cfg")
    return 0


def cmd_validate_ontology(args) -> int:
    ontology = load_ontology(args.ontology, args.disease)
    counts = {}
    for concept in ontology.concepts:
        counts[concept.aspect.value] = counts.get(concept.aspect.value, 0) + 1
    summary = ", ".join(f"{a}={n}" for a, n in counts.items())
    print(f"ok: {ontology.disease_id}: {len(ontology.concepts)} concepts ({summary})")
    return 0


def cmd_synth(args) -> int:
    spec = SynthSpec.read(args.spec) if args.spec else SynthSpec()
    result = generate_synthetic(spec, args.seed or 0)
    if not args.out:
        raise UsageError("synth needs --out")
    out = Path(args.out)
    write_corpus(result.corpus, out)
    result.expected.write(out.with_suffix(".stats.cfg"))
    print(f"wrote {len(result.corpus)} users to {out}")
    return 0


def cmd_train(args) -> int:
    cfg = RunConfig.build(args)
    corpus = _need_corpus(cfg)
    engine = _engine(cfg)
    split = split_corpus(corpus, cfg.disease, seed=cfg.seed)
    train, val, _ = (corpus.subset(sorted(part)) for part in split.parts())
    engine.config.seed = cfg.seed
    if engine.trainable:
        train_log = engine.fit(train, val)
        _write_text(cfg.out / "train_log.csv", train_log.dumps())
    else:
        engine.calibrate(val)
    extra = {"corpus_sha256": hashlib.sha256(Path(cfg.corpus).read_bytes()).hexdigest(), "seed": cfg.seed}
    engine.save(cfg.out, extra)
    _write_text(cfg.out / "split.csv", "".join(
        f"{name},{uid}\n" for name, part in zip(("train", "val", "test"), split.parts()) for uid in sorted(part)
    ))
    print(f"saved model to {cfg.out} (tau={engine.tau:.6g})")
    return 0


def cmd_predict(args) -> int:
    if not args.model or not args.user_file:
        raise UsageError("predict needs --model and --user-file")
    engine = Engine.load(args.model)
    users = load_corpus(args.user_file, require_labels=False).users
    rows = ["user_id,score,decision"]
    for score in engine.score_users(users):
        rows.append(f"{score.user_id},{score.score:.10g},{score.decision}")
    text = "\n".join(rows) + "\n"
    if args.out:
        out = Path(args.out)
        _write_text(out / "predictions.csv" if out.is_dir() else out, text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_evaluate(args) -> int:
    cfg = RunConfig.build(args)
    try:
        modes = Mode.parse_many(cfg.mode)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    _evaluate(cfg, modes, args.workers, args.dump_prompts)
    return 0


def cmd_ablate(args) -> int:
    cfg = RunConfig.build(args)
    drops = as_list(args.drop or "")
    if not drops:
        raise UsageError("ablate needs --drop prefix|rule")
    try:
        modes = [Mode("full")] + [Mode("ablation", d) for d in drops]
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    _evaluate(cfg, modes, args.workers, args.dump_prompts)
    return 0


def cmd_report(args) -> int:
    """Rebuild summary.csv / curves.csv from an existing runs.csv."""
    out = Path(args.out) if args.out else RunConfig.build(args).out
    path = out / "runs.csv"
    try:
        with open(path, encoding="utf-8", newline="") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as exc:
        raise DataError("E-IO", f"cannot read {str(path)!r}: {exc}") from None
    reports: dict[tuple, MetricsReport] = {}
    try:
        for row in rows:
            key = (row["disease"], row["backend"], row["mode"])
            if key not in reports:
                (mode,) = Mode.parse_many(row["mode"])
                reports[key] = MetricsReport(row["disease"], row["backend"], mode)
            metrics = Metrics(
                *(float(row[m]) for m in METRIC_NAMES), *(int(row[c]) for c in ("tp", "fp", "fn", "tn")),
                auc_degenerate=row["auc_degenerate"] == "1",
            )
            reports[key].runs.append(RunResult(
                int(row["run"]), int(row["seed"]), metrics, float(row["tau"]),
                int(row["n_train"]), int(row["n_test"]), int(row["n_excluded"]),
            ))
    except (KeyError, ValueError) as exc:
        raise DataError("E-SCHEMA", f"{str(path)!r} is not a runs table: {exc}") from None
    emit_report(list(reports.values()), out)
    print((out / "summary.csv").read_text(encoding="utf-8"), end="")
    return 0


COMMANDS = {
    "ingest": cmd_ingest,
    "validate-ontology": cmd_validate_ontology,
    "synth": cmd_synth,
    "train": cmd_train,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
    "ablate": cmd_ablate,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="screen", description="Prompt-based user-level mental-health risk screening.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def run_flags(p):
        p.add_argument("--config")
        p.add_argument("--corpus")
        p.add_argument("--ontology")
        p.add_argument("--out")
        p.add_argument("--backend")
        p.add_argument("--mode")
        p.add_argument("--seed", type=int)
        p.add_argument("--runs", type=int)
        p.add_argument("--workers", type=int, default=1)
        p.add_argument("--dump-prompts", metavar="FILE")

    p = sub.add_parser("ingest", help="load a corpus, print statistics, optionally normalize it")
    p.add_argument("--corpus", required=True)
    p.add_argument("--expected", help="expected statistics table to validate against")
    p.add_argument("--out")
    p = sub.add_parser("validate-ontology", help="check an ontology file")
    p.add_argument("--ontology", required=True)
    p.add_argument("--disease")
    p = sub.add_parser("synth", help="generate a synthetic corpus")
    p.add_argument("--spec")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p = sub.add_parser("train", help="train (or calibrate) one model and save it")
    run_flags(p)
    p = sub.add_parser("predict", help="score users with a saved model")
    p.add_argument("--model")
    p.add_argument("--user-file")
    p.add_argument("--out")
    p = sub.add_parser("evaluate", help="run the multi-run protocol for a mode")
    run_flags(p)
    p = sub.add_parser("ablate", help="compare the full method with ablated variants")
    run_flags(p)
    p.add_argument("--drop", help="prefix, rule, or both comma-separated")
    p = sub.add_parser("report", help="rebuild summary files from runs.csv")
    p.add_argument("--config")
    p.add_argument("--out")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    if getattr(args, "workers", 1) < 1:
        print("screen: --workers must be >= 1", file=sys.stderr)
        return 1
    import torch

    torch.set_num_threads(1)
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"screen: {exc}", file=sys.stderr)
        return 1
    except ScreenError as exc:
        print(f"screen: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (ValueError, OSError) as exc:
        print(f"screen: error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
