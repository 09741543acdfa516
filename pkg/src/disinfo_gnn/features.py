"""Node feature matrices: propagation statistics followed by optional text segments."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import NODE_KINDS, PropagationGraph, RawNode
from .text import TextConfig, TextSources, text_dim, text_segments

PROP_FEATURES = (
    "log1p_followers",
    "log1p_followees",
    "log1p_statuses",
    "verified",
    "log1p_delay_seconds",
    "depth",
    "kind_news",
    "kind_tweet",
    "kind_retweet",
    "kind_reply",
)
N_PROP = len(PROP_FEATURES)


@dataclass(frozen=True)
class FeatureMatrix:
    graph_id: str
    X: np.ndarray

    @property
    def shape(self):
        return self.X.shape


def propagation_features(node: RawNode, parent: RawNode | None, depth: int) -> np.ndarray:
    if depth < 0:
        raise ValueError("depth must be non-negative")
    delay = 0
    if parent is not None and node.timestamp is not None and parent.timestamp is not None:
        delay = max(0, node.timestamp - parent.timestamp)
    x = np.zeros(N_PROP)
    x[0] = np.log1p(node.follower_count)
    x[1] = np.log1p(node.followee_count)
    x[2] = np.log1p(node.status_count)
    x[3] = float(node.verified)
    x[4] = np.log1p(delay)
    x[5] = depth
    x[6 + NODE_KINDS.index(node.kind)] = 1.0
    return x


def feature_dim(cfg: TextConfig, sources: TextSources | None = None) -> int:
    return N_PROP + cfg.n_segments * text_dim(cfg, sources)


def segment_slices(cfg: TextConfig, sources: TextSources | None = None,
                   width: int | None = None) -> list[slice]:
    """Column slices of the text segments, in (profiles, retweets) order.

    With ``width`` (the matrix column count) the text dimension is inferred from it.
    """
    if width is not None and cfg.n_segments:
        d = (width - N_PROP) // cfg.n_segments
    else:
        d = text_dim(cfg, sources)
    out, start = [], N_PROP
    for on in (cfg.use_profiles, cfg.use_retweets):
        if on:
            out.append(slice(start, start + d))
            start += d
    return out


def assemble_features(g: PropagationGraph, cfg: TextConfig,
                      sources: TextSources | None = None) -> FeatureMatrix:
    sources = sources or TextSources()
    parents = g.parents()
    depths = g.depths()
    X = np.zeros((g.n_nodes, feature_dim(cfg, sources)))
    for i, node in enumerate(g.nodes):
        p = parents[i]
        X[i, :N_PROP] = propagation_features(node, None if p is None else g.nodes[p], depths[i])
        segs = [s for s in text_segments(cfg, node, sources.table, sources.store) if s is not None]
        if segs:
            X[i, N_PROP:] = np.concatenate(segs)
    if not np.all(np.isfinite(X)):
        raise ValueError(f"graph {g.graph_id!r}: non-finite feature values")
    return FeatureMatrix(g.graph_id, X)


@dataclass(frozen=True)
class Normalizer:
    mean: np.ndarray
    std: np.ndarray


def fit_normalizer(train_matrices) -> Normalizer:
    """Population mean/std of the propagation block over all training nodes."""
    block = np.concatenate([np.asarray(getattr(m, "X", m))[:, :N_PROP] for m in train_matrices])
    mean = block.mean(axis=0)
    std = block.std(axis=0)
    const = block.max(axis=0) == block.min(axis=0)
    mean[const] = block[0, const]
    std[const] = 1.0
    return Normalizer(mean, std)


def apply_normalizer(nrm: Normalizer, matrix: FeatureMatrix) -> FeatureMatrix:
    X = matrix.X.copy()
    X[:, :N_PROP] = (X[:, :N_PROP] - nrm.mean) / nrm.std
    return FeatureMatrix(matrix.graph_id, X)
