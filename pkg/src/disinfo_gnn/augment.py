"""Minority oversampling and norm-scaled uniform noise on text segments."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .features import FeatureMatrix, segment_slices
from .text import TextConfig

ALPHAS = (0, 5, 10, 15, 20, 25)


@dataclass(frozen=True)
class NoiseConfig:
    alpha: float = 0.0
    resample_policy: str = "per-epoch"

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be non-negative")
        if self.resample_policy != "per-epoch":
            raise ValueError("only per-epoch noise resampling is supported")


def oversample(ids, labels, rng: np.random.Generator) -> list:
    """Duplicate minority ids (uniformly, with replacement) until classes balance.

    Originals come first in input order, followed by the resampled minority ids.
    """
    ids = list(ids)
    labels = np.asarray(labels)
    if len(ids) != len(labels):
        raise ValueError("ids and labels differ in length")
    classes, counts = np.unique(labels, return_counts=True)
    if len(classes) != 2:
        raise ValueError(f"oversampling needs both classes, got {classes.tolist()}")
    minority = classes[np.argmin(counts)]
    need = int(counts.max() - counts.min())
    pool = [i for i, y in zip(ids, labels) if y == minority]
    picks = rng.integers(0, len(pool), size=need)
    return ids + [pool[k] for k in picks]


def neftune_noise(x, alpha: float, rng: np.random.Generator | None = None, eps=None) -> np.ndarray:
    """x + alpha / sqrt(||x||_2) * eps with eps ~ U(-1, 1) componentwise.

    Zero amplitude or a zero vector returns ``x`` unchanged. ``eps`` may be
    passed explicitly to pin the draw.
    """
    x = np.asarray(x, dtype=np.float64)
    norm = np.linalg.norm(x)
    if alpha == 0 or norm == 0:
        return x.copy()
    if eps is None:
        eps = rng.uniform(-1.0, 1.0, size=x.shape)
    return x + (alpha / np.sqrt(norm)) * np.asarray(eps)


def noise_rows(seg: np.ndarray, alpha: float, rng: np.random.Generator) -> np.ndarray:
    """Row-wise neftune_noise over a block of segment vectors."""
    dtype = seg.dtype if seg.dtype in (np.float32, np.float64) else np.float64
    norms = np.sqrt(np.einsum("ij,ij->i", seg, seg))
    live = norms > 0
    eps = rng.random(size=seg.shape, dtype=dtype)
    eps *= 2
    eps -= 1
    out = seg.astype(dtype, copy=True)
    scale = (alpha / np.sqrt(norms[live])).astype(dtype)
    out[live] += scale[:, None] * eps[live]
    return out


def apply_noise_to_matrix(X, cfg: TextConfig, noise: NoiseConfig, rng: np.random.Generator):
    """Perturb each node's profile and post segments independently; x1 columns are untouched.

    Accepts a FeatureMatrix or a bare array and returns the same kind.
    """
    arr = X.X if isinstance(X, FeatureMatrix) else np.asarray(X)
    out = arr.copy()
    if noise.alpha != 0 and cfg.has_text:
        for sl in segment_slices(cfg, width=arr.shape[1]):
            out[:, sl] = noise_rows(arr[:, sl], noise.alpha, rng)
    return FeatureMatrix(X.graph_id, out) if isinstance(X, FeatureMatrix) else out
