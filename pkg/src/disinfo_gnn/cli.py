"""Command-line entry point: ingest, synth, train, grid, stats, report, evaluate-test."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .augment import ALPHAS
from .data import DatasetError, dataset_stats, load_dataset
from .harness import (ExperimentConfig, GridAborted, evaluate_on_test, full_grid, load_dataset_dir,
                      make_splits, run_config, run_grid)
from .report import folds_csv, read_folds_csv, read_pvalues_csv, report, results_csv
from .stats import pairwise_tables, pvalues_csv
from .synth import SynthSpec, write_synthetic
from .text import ENCODERS

log = logging.getLogger("disinfo_gnn")
AXES = ("alpha", "encoder", "profiles", "retweets")


def _read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SystemExit(f"{path}: invalid JSON ({exc})") from exc


def _dump(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _write_rows(out: Path, rows, meta: dict) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "results.csv").write_text(results_csv(rows), encoding="utf-8")
    (out / "folds.csv").write_text(folds_csv(rows), encoding="utf-8")
    _dump(out / "run.json", meta)


def cmd_ingest(args) -> int:
    try:
        ds = load_dataset(args.graphs)
    except (DatasetError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(json.dumps(dataset_stats(ds).as_dict(), indent=2, sort_keys=True))
    return 0


def cmd_synth(args) -> int:
    fields = _read_json(args.spec) if args.spec else {}
    if args.seed is not None:
        fields["seed"] = args.seed
    spec = SynthSpec.from_dict(fields)
    out = write_synthetic(spec, args.out)
    log.info("wrote synthetic dataset to %s", out)
    return 0


def cmd_train(args) -> int:
    raw = _read_json(args.config)
    try:
        dataset, out = raw.pop("dataset"), raw.pop("out")
    except KeyError as exc:
        raise SystemExit(f"{args.config}: missing field {exc}") from exc
    cfg = ExperimentConfig.from_dict(raw)
    ds, sources = load_dataset_dir(dataset)
    splits = make_splits(ds, cfg.seed, cfg.k, cfg.test_fraction)
    out = Path(out)
    row = run_config(ds, sources, splits, cfg, save_dir=out)
    _write_rows(out, [row], {"config": cfg.to_dict(), "seed": cfg.seed, "dataset": str(dataset),
                             "fold_hash": splits.fold_hash, "wall_clock": row.wall_clock})
    print(results_csv([row]), end="")
    return 0


def cmd_grid(args) -> int:
    base = ExperimentConfig.from_dict(_read_json(args.config)) if args.config else ExperimentConfig()
    over = {k: v for k, v in (("seed", args.seed), ("epochs", args.epochs), ("k", args.k)) if v is not None}
    base = replace(base, **over)
    alphas = tuple(args.alphas) if args.alphas else ALPHAS
    encoders = tuple(args.encoders) if args.encoders else ENCODERS
    grid = full_grid(base, alphas, encoders)
    ds, sources = load_dataset_dir(args.dataset)
    splits = make_splits(ds, base.seed, base.k, base.test_fraction)
    meta = {"base_config": base.to_dict(), "seed": base.seed, "alphas": list(alphas),
            "encoders": list(encoders), "dataset": str(args.dataset), "fold_hash": splits.fold_hash}
    out = Path(args.out)

    def progress(done, total):
        log.info("task %d/%d", done, total)

    try:
        rows = run_grid(ds, sources, grid, args.parallel, splits, progress)
    except GridAborted as exc:
        _write_rows(out, exc.rows, {**meta, "aborted": str(exc)})
        print(f"error: {exc}; {len(exc.rows)} finished rows kept in {out}", file=sys.stderr)
        return 1
    _write_rows(out, rows, meta)
    log.info("wrote %d rows to %s", len(rows), out)
    return 0


def cmd_stats(args) -> int:
    res = Path(args.results)
    rows = read_folds_csv(res / "folds.csv")
    tables = pairwise_tables(rows, args.axis)
    text = pvalues_csv(tables)
    (res / f"pvalues_{args.axis}.csv").write_text(text, encoding="utf-8")
    print(text, end="")
    return 0


def cmd_report(args) -> int:
    res = Path(args.results)
    rows = read_folds_csv(res / "folds.csv")
    tables = {ax: read_pvalues_csv(res / f"pvalues_{ax}.csv")
              for ax in AXES if (res / f"pvalues_{ax}.csv").exists()}
    for p in report(rows, tables, args.out):
        print(p)
    return 0


def cmd_evaluate_test(args) -> int:
    ds = sources = None
    if args.dataset:
        ds, sources = load_dataset_dir(args.dataset)
    print(json.dumps(evaluate_on_test(args.checkpoint, ds, sources), indent=2, sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="disinfo-gnn", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("ingest", help="validate a graphs.jsonl file and print its statistics")
    s.add_argument("graphs")
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("synth", help="write a synthetic dataset directory")
    s.add_argument("--spec", help="JSON file with SynthSpec fields")
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("train", help="cross-validate one configuration")
    s.add_argument("--config", required=True, help="JSON with dataset, out and config fields")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("grid", help="run the configuration grid")
    s.add_argument("--dataset", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--parallel", type=int, default=1)
    s.add_argument("--seed", type=int)
    s.add_argument("--config", help="JSON with base configuration fields")
    s.add_argument("--epochs", type=int)
    s.add_argument("--k", type=int)
    s.add_argument("--alphas", type=float, nargs="+")
    s.add_argument("--encoders", nargs="+", choices=ENCODERS)
    s.set_defaults(func=cmd_grid)

    s = sub.add_parser("stats", help="pairwise Wilcoxon-Holm tables over one axis")
    s.add_argument("--results", required=True)
    s.add_argument("--axis", required=True, choices=AXES)
    s.set_defaults(func=cmd_stats)

    s = sub.add_parser("report", help="write results, p-value, figure and summary files")
    s.add_argument("--results", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_report)

    s = sub.add_parser("evaluate-test", help="score a fold checkpoint on the held-out test split")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--dataset")
    s.set_defaults(func=cmd_evaluate_test)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
