"""The synthetic research-question experiment: text sources and noise on a 600-graph set."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .harness import ExperimentConfig, make_splits, run_grid
from .stats import wilcoxon_signed_rank
from .synth import SynthSpec, synth_generate
from .text import TextSources

RQ_SPEC = SynthSpec(n_fake=60, n_true=540, text_signal=0.8, profile_factor=0.5)

RQ_CONFIGS = {
    "no_text": dict(use_profiles=False, use_retweets=False, alpha=0.0),
    "profiles": dict(use_profiles=True, use_retweets=False, alpha=0.0),
    "retweets": dict(use_profiles=False, use_retweets=True, alpha=0.0),
    "both": dict(use_profiles=True, use_retweets=True, alpha=0.0),
    "both_a25": dict(use_profiles=True, use_retweets=True, alpha=25.0),
}


@dataclass
class RQOutcome:
    rows: dict  # name -> ResultRow

    def f1(self, name) -> np.ndarray:
        return np.array(self.rows[name].metric_values("f1_macro")) * 100

    def text_gain(self) -> float:
        return float(self.f1("both").mean() - self.f1("no_text").mean())

    def retweets_over_profiles(self) -> float:
        return float(self.f1("retweets").mean() - self.f1("profiles").mean())

    def text_pvalue(self) -> float:
        return wilcoxon_signed_rank(self.f1("both"), self.f1("no_text")).p

    def noise_excess(self) -> tuple[float, float]:
        """(mean F1 at alpha 25 minus mean at alpha 0, pooled fold std of the two)."""
        a, b = self.f1("both_a25"), self.f1("both")
        pooled = float(np.sqrt((a.var(ddof=1) + b.var(ddof=1)) / 2))
        return float(a.mean() - b.mean()), pooled

    def fold_std(self, name) -> float:
        return float(self.f1(name).std(ddof=1))


def run_rq(spec: SynthSpec = RQ_SPEC, base: ExperimentConfig | None = None,
           parallelism: int = 1, progress=None) -> RQOutcome:
    base = base or ExperimentConfig(encoder="contextual", seed=spec.seed)
    ds, store, table = synth_generate(spec)
    sources = TextSources(table, store)
    splits = make_splits(ds, base.seed, base.k, base.test_fraction)
    cfgs = {name: replace(base, **kw) for name, kw in RQ_CONFIGS.items()}
    rows = run_grid(ds, sources, list(cfgs.values()), parallelism, splits, progress)
    by_cfg = {r.config: r for r in rows}
    return RQOutcome({name: by_cfg[c] for name, c in cfgs.items()})
