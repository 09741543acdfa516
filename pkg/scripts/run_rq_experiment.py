"""Run the five-configuration synthetic experiment and print the research-question checks."""

import argparse
import time
from dataclasses import replace

from disinfo_gnn.report import results_csv
from disinfo_gnn.rq import RQ_SPEC, run_rq


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--parallel", type=int, default=1)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    t0 = time.perf_counter()
    out = run_rq(replace(RQ_SPEC, seed=args.seed), parallelism=args.parallel,
                 progress=lambda d, n: print(f"\rtask {d}/{n}", end="", flush=True))
    print(f"\nfinished in {time.perf_counter() - t0:.0f} s\n")
    print(results_csv(out.rows.values()))
    for name in out.rows:
        print(f"{name:9s} F1 per fold: " + " ".join(f"{v:5.1f}" for v in out.f1(name)))
    diff, pooled = out.noise_excess()
    print(f"\ntext gain (both - no text): {out.text_gain():.1f} points, Wilcoxon p = {out.text_pvalue():.4g}")
    print(f"retweets-only minus profiles-only: {out.retweets_over_profiles():.1f} points")
    print(f"alpha 25 minus alpha 0: {diff:.1f} points (pooled std {pooled:.1f})")
    print(f"fold std at alpha 0: {out.fold_std('both'):.2f}, at alpha 25: {out.fold_std('both_a25'):.2f}")


if __name__ == "__main__":
    main()
