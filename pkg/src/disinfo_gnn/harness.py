"""Experiment protocol: splits, folds, per-configuration cross-validation, the 48-cell grid."""

from __future__ import annotations

import hashlib
import itertools
import json
import logging
import multiprocessing as mp
import time
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .augment import ALPHAS, NoiseConfig, apply_noise_to_matrix, oversample
from .data import Dataset, load_dataset
from .features import FeatureMatrix, Normalizer, apply_normalizer, assemble_features, feature_dim, fit_normalizer
from .gnn import (GATConfig, TrainConfig, init_params, load_checkpoint, predict_proba, save_checkpoint,
                  train)
from .metrics import EvalResult, FoldAggregate, aggregate_folds, evaluate
from .text import ENCODERS, TextConfig, TextSources, load_contextual_store, load_static_table

log = logging.getLogger(__name__)


class SplitError(ValueError):
    pass


class GridAborted(RuntimeError):
    """A grid task failed; ``rows`` holds every configuration that finished all folds."""

    def __init__(self, message: str, rows: list):
        super().__init__(message)
        self.rows = rows


# --- random streams ---------------------------------------------------------------

def _key_int(part) -> int:
    if isinstance(part, (bool, np.bool_)):
        return int(part)
    if isinstance(part, (int, np.integer)):
        return int(part)
    if isinstance(part, float) and part.is_integer():
        return int(part)
    return zlib.crc32(repr(part).encode())


def stream(master: int, *key) -> np.random.Generator:
    """Independent generator for ``key`` under ``master``; keys never collide with each other."""
    ss = np.random.SeedSequence(int(master), spawn_key=tuple(_key_int(k) for k in key))
    return np.random.Generator(np.random.PCG64(ss))


# --- splitting --------------------------------------------------------------------

def _by_class(ids, labels):
    labels = np.asarray(labels)
    return {c: [i for i, y in zip(ids, labels) if y == c] for c in sorted(set(labels.tolist()), reverse=True)}


def stratified_split(ids, labels, test_fraction: float = 0.10, seed: int = 0):
    """Return (dev_ids, test_ids).

    Each class contributes floor(fraction * n_c) test items; the remaining
    ``floor(fraction * N) - sum(floors)`` slots go to the classes with the largest
    fractional remainders.
    """
    ids = list(ids)
    groups = _by_class(ids, labels)
    if len(groups) < 2:
        raise SplitError("stratified split needs both classes")
    target = int(np.floor(test_fraction * len(ids)))
    exact = {c: test_fraction * len(g) for c, g in groups.items()}
    n_test = {c: int(np.floor(v)) for c, v in exact.items()}
    spare = target - sum(n_test.values())
    for c in sorted(groups, key=lambda c: (-(exact[c] - n_test[c]), -c))[:max(spare, 0)]:
        n_test[c] += 1
    rng = stream(seed, "split")
    dev, test = [], []
    for c, members in groups.items():
        if n_test[c] < 1 or n_test[c] >= len(members):
            raise SplitError(f"class {c} with {len(members)} items is too small to stratify "
                             f"at test fraction {test_fraction}")
        perm = rng.permutation(len(members))
        test.extend(members[i] for i in perm[:n_test[c]])
        dev.extend(members[i] for i in perm[n_test[c]:])
    return dev, test


def stratified_kfold(ids, labels, k: int = 10, seed: int = 0):
    """Return k (train_ids, val_ids) pairs partitioning ``ids``.

    Items are shuffled within class, classes are laid end to end, and the
    sequence is dealt round-robin, so every fold's class counts are within one
    of proportional and fold sizes differ by at most one.
    """
    ids = list(ids)
    groups = _by_class(ids, labels)
    for c, members in groups.items():
        if len(members) < k:
            raise SplitError(f"class {c} has {len(members)} items, fewer than k={k}")
    rng = stream(seed, "kfold")
    seq = []
    for c, members in groups.items():
        seq.extend(members[i] for i in rng.permutation(len(members)))
    val = [seq[f::k] for f in range(k)]
    out = []
    for f in range(k):
        held = set(val[f])
        out.append(([i for i in seq if i not in held], val[f]))
    return out


@dataclass(frozen=True)
class Splits:
    dev: tuple
    test: tuple
    folds: tuple  # of (train_ids, val_ids)

    @property
    def fold_hash(self) -> str:
        blob = json.dumps([[list(t), list(v)] for t, v in self.folds]).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def make_splits(ds: Dataset, seed: int, k: int = 10, test_fraction: float = 0.10) -> Splits:
    ids = [g.graph_id for g in ds.graphs]
    labels = ds.labels
    dev, test = stratified_split(ids, labels, test_fraction, seed)
    lab = dict(zip(ids, labels.tolist()))
    folds = stratified_kfold(dev, [lab[i] for i in dev], k, seed)
    return Splits(tuple(dev), tuple(test), tuple((tuple(t), tuple(v)) for t, v in folds))


# --- configuration ----------------------------------------------------------------

ENCODER_ORDER = {"static": 0, "contextual": 1}


@dataclass(frozen=True)
class ExperimentConfig:
    encoder: str = "contextual"
    use_profiles: bool = False
    use_retweets: bool = False
    alpha: float = 0.0
    seed: int = 0
    epochs: int = 60
    lr: float = 5e-3
    batch_size: int | None = None
    k: int = 10
    test_fraction: float = 0.10
    flow: str = "root_to_leaves"

    def __post_init__(self):
        if self.encoder not in ENCODERS:
            raise ValueError(f"unknown encoder {self.encoder!r}")
        if self.alpha < 0:
            raise ValueError("alpha must be non-negative")

    @property
    def text(self) -> TextConfig:
        return TextConfig(self.encoder, self.use_profiles, self.use_retweets)

    @property
    def noise(self) -> NoiseConfig:
        return NoiseConfig(self.alpha)

    def axes(self) -> dict:
        return {"encoder": self.encoder, "profiles": self.use_profiles,
                "retweets": self.use_retweets, "alpha": self.alpha}

    def sort_key(self):
        return (ENCODER_ORDER[self.encoder], self.use_retweets, self.use_profiles, self.alpha)

    def effective_key(self) -> tuple:
        """Identity of the computation: encoder and alpha are irrelevant without text."""
        if not self.text.has_text:
            return ("-", False, False, 0.0)
        return (self.encoder, self.use_profiles, self.use_retweets, float(self.alpha))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> ExperimentConfig:
        names = cls.__dataclass_fields__
        return cls(**{k: v for k, v in d.items() if k in names})


def full_grid(base: ExperimentConfig = ExperimentConfig(), alphas=ALPHAS, encoders=ENCODERS) -> list:
    cfgs = [replace(base, encoder=e, use_profiles=p, use_retweets=r, alpha=float(a))
            for e, p, r, a in itertools.product(encoders, (False, True), (False, True), alphas)]
    return sorted(cfgs, key=ExperimentConfig.sort_key)


# --- results ------------------------------------------------------------------------

@dataclass
class FoldOutcome:
    fold: int
    result: EvalResult
    best_epoch: int
    best_val_loss: float
    val_ids: tuple = ()
    val_probs: np.ndarray | None = None
    history: list = field(default_factory=list)
    params: object = None
    normalizer: object = None


@dataclass
class ResultRow:
    config: ExperimentConfig
    folds: list[FoldOutcome]
    fold_hash: str
    wall_clock: float = 0.0

    @property
    def seed(self) -> int:
        return self.config.seed

    @property
    def results(self) -> list[EvalResult]:
        return [f.result for f in self.folds]

    @property
    def aggregate(self) -> FoldAggregate:
        return aggregate_folds(self.results)

    def axes(self) -> dict:
        return self.config.axes()

    def metric_values(self, metric: str) -> list[float]:
        return [getattr(r, metric) for r in self.results]


def load_dataset_dir(path) -> tuple[Dataset, TextSources]:
    """Load ``graphs.jsonl`` plus the optional ``static.txt`` and ``contextual.jsonl`` beside it."""
    d = Path(path)
    graphs = d / "graphs.jsonl"
    if not graphs.exists():
        raise FileNotFoundError(f"no graphs.jsonl in {d}")
    ds = load_dataset(graphs)
    ds = Dataset(ds.graphs, {**ds.provenance, "dataset_dir": str(d.resolve())})
    table = load_static_table(d / "static.txt") if (d / "static.txt").exists() else None
    store = load_contextual_store(d / "contextual.jsonl") if (d / "contextual.jsonl").exists() else None
    return ds, TextSources(table, store)


# --- running -------------------------------------------------------------------------

class FeatureCache:
    """Assembled feature matrices for the most recently used text configuration."""

    def __init__(self, ds: Dataset, sources: TextSources):
        self.ds = ds
        self.sources = sources
        self.graphs = ds.by_id()
        self._key = None
        self._mats: dict[str, FeatureMatrix] = {}

    def get(self, cfg: TextConfig, gid: str) -> FeatureMatrix:
        key = cfg if cfg.has_text else None
        if key != self._key:
            self._key, self._mats = key, {}
        m = self._mats.get(gid)
        if m is None:
            m = assemble_features(self.graphs[gid], cfg, self.sources)
            self._mats[gid] = m
        return m


def run_fold(cfg: ExperimentConfig, splits: Splits, fold: int, cache: FeatureCache,
             keep_params: bool = False) -> FoldOutcome:
    graphs = cache.graphs
    train_ids, val_ids = splits.folds[fold]
    labels = [graphs[i].y for i in train_ids]
    os_ids = oversample(train_ids, labels, stream(cfg.seed, "oversample", fold))
    tcfg = cfg.text
    raw = {i: cache.get(tcfg, i) for i in set(train_ids) | set(val_ids)}
    nrm = fit_normalizer([raw[i] for i in train_ids])
    mats = {i: apply_normalizer(nrm, m) for i, m in raw.items()}
    train_items = [(mats[i].X, graphs[i], graphs[i].y) for i in os_ids]
    val_items = [(mats[i].X, graphs[i], graphs[i].y) for i in val_ids]

    key = cfg.effective_key()
    in_dim = mats[val_ids[0]].X.shape[1]
    params = init_params(in_dim, stream(cfg.seed, "init", fold, *key[:3]), GATConfig(flow=cfg.flow))
    noise = cfg.noise
    perturb = None
    if noise.alpha and tcfg.has_text:
        def perturb(X, rng):
            return apply_noise_to_matrix(X, tcfg, noise, rng)
    st = train(params, train_items, val_items, perturb,
               TrainConfig(cfg.epochs, cfg.lr, cfg.batch_size),
               epoch_rng=lambda e: stream(cfg.seed, "epoch", fold, *key, e))
    probs = predict_proba(st.best_params, [(x, g) for x, g, _ in val_items])
    result = evaluate([y for _, _, y in val_items], probs)
    return FoldOutcome(fold, result, st.best_epoch, st.best_val_loss, tuple(val_ids), probs,
                       st.history, st.best_params if keep_params else None,
                       nrm if keep_params else None)


def _task(cfg, splits, fold, cache, keep_params=False):
    with threadpool_limits(limits=1):
        return run_fold(cfg, splits, fold, cache, keep_params)


def run_config(ds: Dataset, sources: TextSources, splits: Splits, cfg: ExperimentConfig,
               save_dir=None) -> ResultRow:
    """Cross-validate one configuration over the shared folds."""
    t0 = time.perf_counter()
    cache = FeatureCache(ds, sources)
    folds = [_task(cfg, splits, f, cache, keep_params=save_dir is not None)
             for f in range(len(splits.folds))]
    row = ResultRow(cfg, folds, splits.fold_hash, time.perf_counter() - t0)
    if save_dir is not None:
        save_row_artifacts(row, ds, save_dir)
    return row


def save_row_artifacts(row: ResultRow, ds: Dataset, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for f in row.folds:
        (out / f"history_fold{f.fold}.csv").write_text(
            "epoch,train_loss,val_loss\n"
            + "".join(f"{e},{tr:.10g},{va:.10g}\n" for e, tr, va in f.history))
        if f.params is not None:
            meta = {"config": row.config.to_dict(), "fold": f.fold, "fold_hash": row.fold_hash,
                    "dataset": ds.provenance.get("dataset_dir", ds.provenance.get("source", "")),
                    "normalizer": {"mean": f.normalizer.mean.tolist(), "std": f.normalizer.std.tolist()},
                    "best_epoch": f.best_epoch, "best_val_loss": f.best_val_loss}
            save_checkpoint(out / f"fold{f.fold}.npz", f.params, meta)


# grid workers inherit the shared context through fork
_CTX: dict = {}


def _grid_worker(args):
    cfg, fold = args
    cache = _CTX.get("cache")
    if cache is None:
        cache = _CTX["cache"] = FeatureCache(_CTX["ds"], _CTX["sources"])
    return _task(cfg, _CTX["splits"], fold, cache)


def run_grid(ds: Dataset, sources: TextSources, grid, parallelism: int = 1,
             splits: Splits | None = None, progress=None) -> list[ResultRow]:
    """Run every configuration on one shared fold partition.

    Configurations without text are computed once and reported under each of
    their (encoder, alpha) labels.
    """
    grid = sorted(grid, key=ExperimentConfig.sort_key)
    if not grid:
        return []
    base = grid[0]
    if splits is None:
        splits = make_splits(ds, base.seed, base.k, base.test_fraction)
    for c in grid:
        if (c.seed, c.k, c.test_fraction) != (base.seed, base.k, base.test_fraction):
            raise ValueError("all grid configurations must share seed, k and test fraction")
    unique = {}
    for c in grid:
        unique.setdefault(c.effective_key(), c)
    tasks = [(c, f) for c in unique.values() for f in range(len(splits.folds))]

    t0 = time.perf_counter()
    outcomes = {}
    try:
        if parallelism <= 1:
            cache = FeatureCache(ds, sources)
            for n, (c, f) in enumerate(tasks):
                outcomes[(c.effective_key(), f)] = _task(c, splits, f, cache)
                if progress:
                    progress(n + 1, len(tasks))
        else:
            _CTX.clear()
            _CTX.update(ds=ds, sources=sources, splits=splits)
            try:
                with ProcessPoolExecutor(parallelism, mp_context=mp.get_context("fork")) as pool:
                    for n, ((c, f), res) in enumerate(zip(tasks, pool.map(_grid_worker, tasks))):
                        outcomes[(c.effective_key(), f)] = res
                        if progress:
                            progress(n + 1, len(tasks))
            finally:
                _CTX.clear()
    except Exception as exc:
        done = _collect(grid, splits, outcomes, time.perf_counter() - t0, len(unique))
        raise GridAborted(f"grid aborted after {len(outcomes)}/{len(tasks)} tasks: {exc!r}", done) from exc
    return _collect(grid, splits, outcomes, time.perf_counter() - t0, len(unique))


def _collect(grid, splits, outcomes, elapsed, n_unique):
    k = len(splits.folds)
    rows = []
    for c in grid:
        keys = [(c.effective_key(), f) for f in range(k)]
        if all(key in outcomes for key in keys):
            rows.append(ResultRow(c, [outcomes[key] for key in keys], splits.fold_hash,
                                  elapsed / max(n_unique, 1)))
    return rows


def evaluate_on_test(checkpoint, ds: Dataset | None = None, sources: TextSources | None = None) -> dict:
    """Score a fold checkpoint on the held-out test split recorded by its configuration.

    The dataset is taken from the checkpoint's recorded directory unless supplied.
    """
    params, meta = load_checkpoint(checkpoint)
    cfg = ExperimentConfig.from_dict(meta["config"])
    if ds is None:
        ds, sources = load_dataset_dir(meta["dataset"])
    sources = sources or TextSources()
    splits = make_splits(ds, cfg.seed, cfg.k, cfg.test_fraction)
    nrm = Normalizer(np.asarray(meta["normalizer"]["mean"]), np.asarray(meta["normalizer"]["std"]))
    graphs = ds.by_id()
    items = [(apply_normalizer(nrm, assemble_features(graphs[i], cfg.text, sources)).X, graphs[i])
             for i in splits.test]
    probs = predict_proba(params, items)
    result = evaluate([graphs[i].y for i in splits.test], probs)
    return {"config": cfg.to_dict(), "seed": cfg.seed, "fold": meta.get("fold"),
            "n_test": len(splits.test), **result.as_dict()}
