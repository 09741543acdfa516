"""CSV and text outputs for grid results and p-value tables."""

from __future__ import annotations

import csv
import io
import logging
from pathlib import Path

import numpy as np

from .harness import ExperimentConfig, FoldOutcome, ResultRow
from .metrics import METRIC_TITLES, METRICS, EvalResult
from .stats import PValueTable, fmt_p, pvalues_csv

log = logging.getLogger(__name__)

RESULT_COLUMNS = ["Encoder", "Profiles", "Retweets", "NEFTune Alpha",
                  "F1 Macro", "ROC AUC", "AUC PR", "seed", "fold_hash"]
FOLD_COLUMNS = ["encoder", "profiles", "retweets", "alpha", "seed", "fold",
                "f1_macro", "roc_auc", "auc_pr", "n_pos", "n_neg", "best_epoch",
                "best_val_loss", "fold_hash"]


def _present(flag: bool) -> str:
    return "Present" if flag else "Absent"


def _writer(buf):
    return csv.writer(buf, lineterminator="\n")


def results_csv(rows) -> str:
    buf = io.StringIO()
    w = _writer(buf)
    w.writerow(RESULT_COLUMNS)
    for r in rows:
        c, agg = r.config, r.aggregate
        w.writerow([c.encoder, _present(c.use_profiles), _present(c.use_retweets), f"{c.alpha:g}",
                    agg.fmt("f1_macro"), agg.fmt("roc_auc"), agg.fmt("auc_pr"), c.seed, r.fold_hash])
    return buf.getvalue()


def folds_csv(rows) -> str:
    buf = io.StringIO()
    w = _writer(buf)
    w.writerow(FOLD_COLUMNS)
    for r in rows:
        c = r.config
        for f in r.folds:
            res = f.result
            w.writerow([c.encoder, int(c.use_profiles), int(c.use_retweets), f"{c.alpha:g}", c.seed,
                        f.fold, repr(res.f1_macro), repr(res.roc_auc), repr(res.auc_pr),
                        res.n_pos, res.n_neg, f.best_epoch, repr(float(f.best_val_loss)), r.fold_hash])
    return buf.getvalue()


def read_folds_csv(path, base: ExperimentConfig = ExperimentConfig()) -> list[ResultRow]:
    """Rebuild result rows (metrics only) from a per-fold CSV."""
    groups: dict[tuple, list] = {}
    with Path(path).open(newline="", encoding="utf-8") as fh:
        for rec in csv.DictReader(fh):
            key = (rec["encoder"], bool(int(rec["profiles"])), bool(int(rec["retweets"])),
                   float(rec["alpha"]), int(rec["seed"]), rec["fold_hash"])
            res = EvalResult(float(rec["f1_macro"]), float(rec["roc_auc"]), float(rec["auc_pr"]),
                             int(rec["n_pos"]), int(rec["n_neg"]))
            groups.setdefault(key, []).append(
                FoldOutcome(int(rec["fold"]), res, int(rec["best_epoch"]), float(rec["best_val_loss"])))
    rows = []
    for (enc, prof, ret, alpha, seed, fh), folds in groups.items():
        cfg = ExperimentConfig(**{**base.to_dict(), "encoder": enc, "use_profiles": prof,
                                  "use_retweets": ret, "alpha": alpha, "seed": seed,
                                  "k": len(folds)})
        rows.append(ResultRow(cfg, sorted(folds, key=lambda f: f.fold), fh))
    return sorted(rows, key=lambda r: r.config.sort_key())


def figure_csv(rows) -> str:
    """Long format, one line per (configuration, metric), for external plotting."""
    buf = io.StringIO()
    w = _writer(buf)
    w.writerow(["encoder", "profiles", "retweets", "alpha", "metric", "mean", "std"])
    for r in rows:
        c, agg = r.config, r.aggregate
        for m in METRICS:
            w.writerow([c.encoder, _present(c.use_profiles), _present(c.use_retweets), f"{c.alpha:g}",
                        m, f"{agg.mean[m]:.4f}", f"{agg.std[m]:.4f}"])
    return buf.getvalue()


def relative_gain(new: float, old: float) -> float:
    """Percentage improvement of ``new`` over ``old``."""
    return (new / old - 1.0) * 100.0


def _describe(c: ExperimentConfig) -> str:
    return (f"encoder={c.encoder}, profiles={_present(c.use_profiles)}, "
            f"retweets={_present(c.use_retweets)}, alpha={c.alpha:g}")


def summary_text(rows, stats_tables: dict | None = None) -> str:
    rows = list(rows)
    lines = []
    best = max(rows, key=lambda r: (r.aggregate.mean["f1_macro"], -r.config.alpha))
    agg = best.aggregate
    lines.append(f"Best configuration: {_describe(best.config)}")
    lines.append("  " + ", ".join(f"{METRIC_TITLES[m]} {agg.fmt(m)}" for m in METRICS))

    no_text = [r for r in rows if not r.config.text.has_text]
    if no_text:
        base = no_text[0].aggregate
        lines.append(f"No-text baseline: F1 Macro {base.fmt('f1_macro')}")
        gain = relative_gain(agg.mean["f1_macro"], base.mean["f1_macro"])
        lines.append(f"Relative F1 Macro gain, best vs no text: {gain:.1f}%")

    if best.config.text.has_text:
        other = "static" if best.config.encoder == "contextual" else "contextual"
        twin = [r for r in rows if r.config.encoder == other
                and r.config.axes() == {**best.config.axes(), "encoder": other}]
        if twin:
            gain = relative_gain(agg.mean["f1_macro"], twin[0].aggregate.mean["f1_macro"])
            lines.append(f"Relative F1 Macro gain, best vs {other} encoder with the same sources: {gain:.1f}%")

    for title, pick in (("profiles only", (True, False)), ("retweets only", (False, True)),
                        ("profiles and retweets", (True, True))):
        for enc in ("static", "contextual"):
            match = [r for r in rows if r.config.encoder == enc and r.config.alpha == 0
                     and (r.config.use_profiles, r.config.use_retweets) == pick]
            if match:
                lines.append(f"{enc}, {title}, alpha=0: F1 Macro {match[0].aggregate.fmt('f1_macro')}")

    alphas = sorted({r.config.alpha for r in rows})
    if len(alphas) > 1:
        text_rows = [r for r in rows if r.config.text.has_text]
        parts = []
        for a in alphas:
            vals = [r.aggregate.mean["f1_macro"] for r in text_rows if r.config.alpha == a]
            sds = [r.aggregate.std["f1_macro"] for r in text_rows if r.config.alpha == a]
            if vals:
                parts.append(f"{a:g}: {np.mean(vals):.1f} (std {np.mean(sds):.1f})")
        if parts:
            lines.append("Mean F1 Macro of text configurations by alpha: " + "; ".join(parts))

    for axis, tables in (stats_tables or {}).items():
        first = next(iter(tables.values()))
        lines.append(f"Pairwise Wilcoxon-Holm over {axis} (raw p / Holm p):")
        for i, comp in enumerate(first.comparisons):
            cells = [f"{METRIC_TITLES[m]} {fmt_p(t.raw[i])}/{fmt_p(t.adjusted[i])}" for m, t in tables.items()]
            lines.append(f"  {comp}: " + ", ".join(cells))
    return "\n".join(lines) + "\n"


def read_pvalues_csv(path) -> dict[str, PValueTable]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        recs = list(reader)
    axis = header[0]
    titles = {v: k for k, v in METRIC_TITLES.items()}
    metrics = [titles[h] for h in header[1:] if h in titles]
    out = {}
    for j, m in enumerate(metrics):
        raw = [float(r[1 + j]) for r in recs]
        adj = [float(r[1 + len(metrics) + j]) for r in recs]
        out[m] = PValueTable(axis, m, [r[0] for r in recs], raw, adj,
                             [int(r[-1]) for r in recs], [False] * len(recs))
    return out


def report(rows, stats_tables: dict | None, out_dir) -> list[Path]:
    """Write results, p-value, figure and summary files; return the paths written.

    ``stats_tables`` maps axis name to {metric: PValueTable}.
    """
    rows = list(rows)
    if not rows:
        raise ValueError("report needs at least one result row")
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        written = []

        def put(name, text):
            p = out / name
            p.write_text(text, encoding="utf-8")
            written.append(p)

        put("results.csv", results_csv(rows))
        if stats_tables:
            for axis, tables in stats_tables.items():
                put(f"pvalues_{axis}.csv", pvalues_csv(tables))
        else:
            log.warning("no p-value tables supplied; p-value file omitted")
        put("figure_long.csv", figure_csv(rows))
        put("summary.txt", summary_text(rows, stats_tables))
    except OSError as exc:
        raise OSError(f"failed writing report to {out}: {exc}") from exc
    return written
