"""Two-layer graph attention classifier with hand-written reverse-mode gradients.

Graphs in a batch are stacked as one disjoint union. Each node attends over its
aggregation list (in-neighbours plus itself); edges are kept sorted by target
node so segment reductions can use ``np.ufunc.reduceat``.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.special import expit

from .data import PropagationGraph

log = logging.getLogger(__name__)

PROB_CLAMP = 1e-7
CHECKPOINT_VERSION = 1


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class GATConfig:
    heads1: int = 4
    hidden1: int = 32  # per head; heads are concatenated
    heads2: int = 1
    hidden2: int = 32
    mlp_hidden: int = 16
    leaky_slope: float = 0.2
    flow: str = "root_to_leaves"

    def __post_init__(self):
        if self.flow not in ("root_to_leaves", "leaves_to_root"):
            raise ValueError(f"unknown flow {self.flow!r}")


# --- graph structure -----------------------------------------------------------

def aggregation_lists(g: PropagationGraph, flow: str = "root_to_leaves") -> list[list[int]]:
    """Per node, the nodes it aggregates from: itself followed by its in-neighbours."""
    lists = [[i] for i in range(g.n_nodes)]
    for p, c in g.edges:
        if flow == "root_to_leaves":
            lists[c].append(p)
        else:
            lists[p].append(c)
    return lists


class Structure:
    """Edge index of a disjoint union of graphs, sorted by target node."""

    def __init__(self, lists: list[list[int]], graph_sizes: list[int] | None = None,
                 dtype=np.float64):
        n = len(lists)
        if any(i not in lst for i, lst in enumerate(lists)):
            raise ValueError("aggregation lists must include self-loops")
        dst = np.repeat(np.arange(n), [len(l) for l in lists])
        src = np.fromiter((j for l in lists for j in l), dtype=np.int64, count=len(dst))
        self.n = n
        self.src = src
        self.dst = dst
        counts = np.array([len(l) for l in lists])
        self.starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
        E = len(dst)
        self.scatter_src = sp.csr_matrix((np.ones(E, dtype=dtype), (src, np.arange(E))), shape=(n, E))
        self.scatter_dst = sp.csr_matrix((np.ones(E, dtype=dtype), (dst, np.arange(E))), shape=(n, E))
        sizes = [n] if graph_sizes is None else list(graph_sizes)
        if sum(sizes) != n:
            raise ValueError("graph sizes do not add up to the node count")
        gid = np.repeat(np.arange(len(sizes)), sizes)
        self.n_graphs = len(sizes)
        self.pool = sp.csr_matrix(((1.0 / np.repeat(sizes, sizes)).astype(dtype), (gid, np.arange(n))),
                                  shape=(len(sizes), n))

    @classmethod
    def from_graphs(cls, graphs, flow: str = "root_to_leaves", dtype=np.float64) -> Structure:
        lists, sizes, off = [], [], 0
        for g in graphs:
            lists.extend([[j + off for j in l] for l in aggregation_lists(g, flow)])
            sizes.append(g.n_nodes)
            off += g.n_nodes
        return cls(lists, sizes, dtype)

    def seg_sum(self, x):
        shape = x.shape
        return np.asarray(self.scatter_dst @ x.reshape(shape[0], -1)).reshape((self.n,) + shape[1:])

    def seg_max(self, x):
        return np.maximum.reduceat(x, self.starts, axis=0)

    def to_src(self, x):
        shape = x.shape
        return np.asarray(self.scatter_src @ x.reshape(shape[0], -1)).reshape((self.n,) + shape[1:])


# --- parameters ----------------------------------------------------------------

PARAM_NAMES = ("gat1.W", "gat1.a", "gat2.W", "gat2.a", "mlp.W1", "mlp.b1", "mlp.W2", "mlp.b2")


@dataclass
class ModelParams:
    in_dim: int
    arch: GATConfig
    tensors: dict[str, np.ndarray]

    def __getitem__(self, name):
        return self.tensors[name]

    def copy(self) -> ModelParams:
        return ModelParams(self.in_dim, self.arch, {k: v.copy() for k, v in self.tensors.items()})

    def astype(self, dtype) -> ModelParams:
        return ModelParams(self.in_dim, self.arch,
                           {k: v.astype(dtype) for k, v in self.tensors.items()})

    def map(self, fn) -> ModelParams:
        return ModelParams(self.in_dim, self.arch, {k: fn(k, v) for k, v in self.tensors.items()})

    def flat(self) -> np.ndarray:
        return np.concatenate([self.tensors[k].ravel() for k in PARAM_NAMES])

    def n_params(self) -> int:
        return sum(v.size for v in self.tensors.values())


def _glorot(rng, shape, fan_in, fan_out):
    lim = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, size=shape)


def init_params(in_dim: int, rng: np.random.Generator, arch: GATConfig = GATConfig()) -> ModelParams:
    h1, f1, h2, f2, m = arch.heads1, arch.hidden1, arch.heads2, arch.hidden2, arch.mlp_hidden
    t = {
        "gat1.W": _glorot(rng, (h1, in_dim, f1), in_dim, h1 * f1),
        "gat1.a": np.zeros((h1, 2 * f1)),
        "gat2.W": _glorot(rng, (h2, h1 * f1, f2), h1 * f1, h2 * f2),
        "gat2.a": np.zeros((h2, 2 * f2)),
        "mlp.W1": _glorot(rng, (h2 * f2, m), h2 * f2, m),
        "mlp.b1": np.zeros(m),
        "mlp.W2": _glorot(rng, (m, 1), m, 1),
        "mlp.b2": np.zeros(1),
    }
    return ModelParams(in_dim, arch, t)


def zero_params(in_dim: int, arch: GATConfig = GATConfig()) -> ModelParams:
    p = init_params(in_dim, np.random.default_rng(0), arch)
    return p.map(lambda k, v: np.zeros_like(v))


# --- layers ----------------------------------------------------------------------

def _elu(x):
    return np.where(x > 0, x, np.expm1(np.minimum(x, 0)))


def gat_layer_forward(W, a, H, st: Structure, slope: float = 0.2, rows=None):
    """Multi-head attention aggregation.

    ``W`` is (heads, d_in, d_out), ``a`` is (heads, 2 d_out) with the target half
    first. Returns the pre-activation output (n, heads, d_out) and a cache whose
    ``att`` entry holds the (edges, heads) attention coefficients. When ``rows``
    is given, node i takes its input from ``H[rows[i]]``, so repeated rows are
    projected once.
    """
    heads, d_in, d_out = W.shape
    if H.shape[1] != d_in:
        raise ValueError(f"input width {H.shape[1]} does not match layer input {d_in}")
    Wcat = W.transpose(1, 0, 2).reshape(d_in, heads * d_out)
    Z = H @ Wcat
    if rows is not None:
        Z = Z[rows]
    Z = Z.reshape(-1, heads, d_out)
    a_dst, a_src = a[:, :d_out], a[:, d_out:]
    s_dst = np.einsum("nhf,hf->nh", Z, a_dst)
    s_src = np.einsum("nhf,hf->nh", Z, a_src)
    u = s_dst[st.dst] + s_src[st.src]
    e = np.where(u > 0, u, slope * u)
    ex = np.exp(e - st.seg_max(e)[st.dst])
    att = ex / st.seg_sum(ex)[st.dst]
    Zs = Z[st.src]
    out = st.seg_sum(att[:, :, None] * Zs)
    cache = dict(H=H, rows=rows, Wcat=Wcat, Z=Z, Zs=Zs, u=u, att=att, slope=slope)
    return out, cache


def gat_layer_backward(W, a, dout, cache, st: Structure, need_input_grad: bool = True):
    heads, d_in, d_out = W.shape
    Z, Zs, att, u = cache["Z"], cache["Zs"], cache["att"], cache["u"]
    dmsg = dout[st.dst]
    datt = np.einsum("ehf,ehf->eh", dmsg, Zs)
    dZ = st.to_src(att[:, :, None] * dmsg)
    de = att * (datt - st.seg_sum(att * datt)[st.dst])
    du = de * np.where(u > 0, u.dtype.type(1), u.dtype.type(cache["slope"]))
    ds_dst = st.seg_sum(du)
    ds_src = st.to_src(du)
    a_dst, a_src = a[:, :d_out], a[:, d_out:]
    da = np.concatenate([np.einsum("nh,nhf->hf", ds_dst, Z),
                         np.einsum("nh,nhf->hf", ds_src, Z)], axis=1)
    dZ += ds_dst[:, :, None] * a_dst[None] + ds_src[:, :, None] * a_src[None]
    dZf = dZ.reshape(-1, heads * d_out)
    H, rows = cache["H"], cache["rows"]
    if rows is not None:
        gather = sp.csr_matrix((np.ones(len(rows), dtype=dZf.dtype), (rows, np.arange(len(rows)))),
                               shape=(H.shape[0], len(rows)))
        dZf = np.asarray(gather @ dZf)
        if need_input_grad:
            raise ValueError("input gradients are not available with a row map")
    dW = (H.T @ dZf).reshape(d_in, heads, d_out).transpose(1, 0, 2)
    dH = dZf @ cache["Wcat"].T if need_input_grad else None
    return dW, da, dH


def mean_pool(H, st: Structure | None = None):
    H = np.asarray(H)
    if H.shape[0] < 1:
        raise ValueError("cannot pool an empty graph")
    if st is None:
        return H.mean(axis=0)
    return np.asarray(st.pool @ H)


# --- full model --------------------------------------------------------------------

def forward_batch(params: ModelParams, X, st: Structure, rows=None):
    """Probabilities for every graph in the stacked batch, plus the backward cache.

    ``rows`` optionally maps batch nodes to rows of ``X`` (see gat_layer_forward).
    Computation runs in the dtype of the parameters.
    """
    arch = params.arch
    X = np.asarray(X, dtype=params["gat1.W"].dtype)
    if X.shape[1] != params.in_dim:
        raise ValueError(f"feature width {X.shape[1]} does not match model input {params.in_dim}")
    n = st.n
    o1, c1 = gat_layer_forward(params["gat1.W"], params["gat1.a"], X, st, arch.leaky_slope, rows)
    pre1 = o1.reshape(n, -1)
    h1 = _elu(pre1)
    o2, c2 = gat_layer_forward(params["gat2.W"], params["gat2.a"], h1, st, arch.leaky_slope)
    h2 = o2.reshape(n, -1)
    g = mean_pool(h2, st)
    pre_m = g @ params["mlp.W1"] + params["mlp.b1"]
    hm = _elu(pre_m)
    logit = (hm @ params["mlp.W2"] + params["mlp.b2"])[:, 0]
    prob = expit(logit)
    cache = dict(c1=c1, c2=c2, pre1=pre1, h1=h1, g=g, pre_m=pre_m, hm=hm, prob=prob, st=st)
    return prob, cache


def bce(prob, label):
    """Binary cross-entropy with the probability clamped to [1e-7, 1 - 1e-7]."""
    p = np.clip(prob, PROB_CLAMP, 1 - PROB_CLAMP)
    y = np.asarray(label, dtype=np.float64)
    return -(y * np.log(p) + (1 - y) * np.log1p(-p))


def loss(prob, label) -> float:
    return float(bce(prob, label))


def backward_batch(params: ModelParams, cache, labels) -> dict[str, np.ndarray]:
    """Gradients of the mean batch loss with respect to every parameter tensor."""
    st = cache["st"]
    y = np.asarray(labels, dtype=np.float64)
    p = cache["prob"]
    G = len(p)
    inside = (p > PROB_CLAMP) & (p < 1 - PROB_CLAMP)
    # d(bce)/d(logit) = p - y where unclamped; flat where the clamp is active
    dlogit = (np.where(inside, p - y, 0.0) / G).astype(p.dtype)
    grads = {}
    grads["mlp.W2"] = cache["hm"].T @ dlogit[:, None]
    grads["mlp.b2"] = np.array([dlogit.sum()], dtype=p.dtype)
    dhm = dlogit[:, None] * params["mlp.W2"][:, 0][None, :]
    dpre_m = dhm * np.where(cache["pre_m"] > 0, 1.0, cache["hm"] + 1.0)
    grads["mlp.W1"] = cache["g"].T @ dpre_m
    grads["mlp.b1"] = dpre_m.sum(axis=0)
    dg = dpre_m @ params["mlp.W1"].T
    dh2 = np.asarray(st.pool.T @ dg)
    heads2 = params["gat2.W"].shape[0]
    dW2, da2, dh1 = gat_layer_backward(params["gat2.W"], params["gat2.a"],
                                       dh2.reshape(st.n, heads2, -1), cache["c2"], st)
    grads["gat2.W"], grads["gat2.a"] = dW2, da2
    dpre1 = dh1 * np.where(cache["pre1"] > 0, 1.0, cache["h1"] + 1.0)
    heads1 = params["gat1.W"].shape[0]
    dW1, da1, _ = gat_layer_backward(params["gat1.W"], params["gat1.a"],
                                     dpre1.reshape(st.n, heads1, -1), cache["c1"], st,
                                     need_input_grad=False)
    grads["gat1.W"], grads["gat1.a"] = dW1, da1
    for k, v in grads.items():
        if not np.all(np.isfinite(v)):
            raise TrainingError(f"non-finite gradient in {k}")
    return grads


def stack(items):
    """Stack (X, graph) pairs into one feature array and a Structure."""
    Xs = [np.asarray(getattr(X, "X", X)) for X, _ in items]
    return np.concatenate(Xs, axis=0), [g for _, g in items]


def forward(params: ModelParams, X, graph: PropagationGraph) -> float:
    st = Structure.from_graphs([graph], params.arch.flow)
    prob, _ = forward_batch(params, np.asarray(getattr(X, "X", X)), st)
    return float(prob[0])


def predict_proba(params: ModelParams, items) -> np.ndarray:
    X, graphs = stack(items)
    dtype = params["gat1.W"].dtype
    prob, _ = forward_batch(params, X, Structure.from_graphs(graphs, params.arch.flow, dtype))
    return prob.astype(np.float64)


def loss_and_grad(params: ModelParams, batch):
    """``batch`` is a sequence of (X, graph, label). Returns (mean loss, grads)."""
    X, graphs = stack([(x, g) for x, g, _ in batch])
    labels = np.array([y for _, _, y in batch], dtype=np.float64)
    st = Structure.from_graphs(graphs, params.arch.flow)
    prob, cache = forward_batch(params, X, st)
    return float(bce(prob, labels).mean()), backward_batch(params, cache, labels)


def backward(params: ModelParams, batch) -> dict[str, np.ndarray]:
    return loss_and_grad(params, batch)[1]


# --- optimiser ----------------------------------------------------------------------

@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, params: ModelParams) -> AdamState:
        return cls({k: np.zeros_like(v) for k, v in params.tensors.items()},
                   {k: np.zeros_like(v) for k, v in params.tensors.items()})


def adam_step(params: ModelParams, grads, opt: AdamState, lr: float = 5e-3,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """One bias-corrected Adam update. Returns new (params, optimiser state)."""
    t = opt.t + 1
    new_t, m, v = {}, {}, {}
    for k, w in params.tensors.items():
        g = grads[k]
        if g.shape != w.shape:
            raise ValueError(f"gradient shape {g.shape} does not match {k} {w.shape}")
        m[k] = beta1 * opt.m[k] + (1 - beta1) * g
        v[k] = beta2 * opt.v[k] + (1 - beta2) * g * g
        mhat = m[k] / (1 - beta1 ** t)
        vhat = v[k] / (1 - beta2 ** t)
        new_t[k] = w - lr * mhat / (np.sqrt(vhat) + eps)
    return ModelParams(params.in_dim, params.arch, new_t), AdamState(m, v, t)


# --- training loop ------------------------------------------------------------------

@dataclass
class TrainState:
    params: ModelParams
    opt: AdamState
    epoch: int
    best_val_loss: float
    best_params: ModelParams
    best_epoch: int
    history: list[tuple[int, float, float]] = field(default_factory=list)

    def history_csv(self) -> str:
        lines = ["epoch,train_loss,val_loss"]
        lines += [f"{e},{tr:.10g},{va:.10g}" for e, tr, va in self.history]
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 60
    lr: float = 5e-3
    batch_size: int | None = None  # None means one full-batch step per epoch
    dtype: str = "float32"


def mean_loss(params: ModelParams, X, st: Structure, labels, rows=None) -> float:
    prob, _ = forward_batch(params, X, st, rows)
    return float(bce(prob.astype(np.float64), labels).mean())


def _unique_rows(items):
    """Stack each distinct feature array once; return (base, per-node row index, graphs)."""
    slots, blocks, rows, off = {}, [], [], 0
    for x, g, _ in items:
        x = np.asarray(getattr(x, "X", x))
        start = slots.get(id(x))
        if start is None:
            start = slots[id(x)] = off
            blocks.append(x)
            off += x.shape[0]
        rows.append(np.arange(start, start + x.shape[0]))
    return np.concatenate(blocks), np.concatenate(rows), [g for _, g, _ in items]


def train(params: ModelParams, train_items, val_items, perturb=None, tcfg: TrainConfig = TrainConfig(),
          epoch_rng=None) -> TrainState:
    """Train on ``train_items`` and keep the snapshot with the lowest validation loss.

    ``train_items``/``val_items`` are sequences of (X, graph, label); the training
    sequence is expected to be oversampled already, with duplicates sharing their
    feature array. ``perturb(X, rng)`` is applied to the stacked training
    features once per epoch, so every copy of a duplicated graph gets its own
    draw. ``epoch_rng(epoch)`` returns the generator for that epoch's noise and
    shuffling.
    """
    dtype = np.dtype(tcfg.dtype)
    flow = params.arch.flow
    params = params.astype(dtype)
    base, node_rows, gtr = _unique_rows(train_items)
    base = base.astype(dtype)
    ytr = np.array([y for _, _, y in train_items], dtype=np.float64)
    Xva, gva = stack([(x, g) for x, g, _ in val_items])
    Xva = Xva.astype(dtype)
    yva = np.array([y for _, _, y in val_items], dtype=np.float64)
    st_va = Structure.from_graphs(gva, flow, dtype)
    sizes = np.array([g.n_nodes for g in gtr])
    offsets = np.concatenate([[0], np.cumsum(sizes)])

    opt = AdamState.zeros_like(params)
    if tcfg.epochs == 0:
        v0 = mean_loss(params, Xva, st_va, yva)
        return TrainState(params, opt, 0, v0, params.copy(), 0, [])

    st_full = Structure.from_graphs(gtr, flow, dtype) if tcfg.batch_size is None else None
    best, best_params, best_epoch = np.inf, None, 0
    history = []
    for epoch in range(1, tcfg.epochs + 1):
        rng = epoch_rng(epoch) if epoch_rng is not None else np.random.default_rng(epoch)
        if perturb is not None:
            Xe, rows_e = perturb(base[node_rows], rng).astype(dtype, copy=False), np.arange(len(node_rows))
        else:
            Xe, rows_e = base, node_rows
        if st_full is not None:
            prob, cache = forward_batch(params, Xe, st_full, rows_e)
            tr_loss = float(bce(prob.astype(np.float64), ytr).mean())
            params, opt = adam_step(params, backward_batch(params, cache, ytr), opt, lr=tcfg.lr)
        else:
            order = rng.permutation(len(gtr))
            total = 0.0
            for b in range(0, len(order), tcfg.batch_size):
                idx = order[b:b + tcfg.batch_size]
                nodes = np.concatenate([np.arange(offsets[i], offsets[i + 1]) for i in idx])
                st = Structure.from_graphs([gtr[i] for i in idx], flow, dtype)
                prob, cache = forward_batch(params, Xe, st, rows_e[nodes])
                total += float(bce(prob.astype(np.float64), ytr[idx]).sum())
                params, opt = adam_step(params, backward_batch(params, cache, ytr[idx]), opt,
                                        lr=tcfg.lr)
            tr_loss = total / len(order)
        va_loss = mean_loss(params, Xva, st_va, yva)
        if not (np.isfinite(tr_loss) and np.isfinite(va_loss)):
            raise TrainingError(f"non-finite loss at epoch {epoch}: train={tr_loss} val={va_loss}")
        history.append((epoch, tr_loss, va_loss))
        if va_loss < best:
            best, best_params, best_epoch = va_loss, params.copy(), epoch
    return TrainState(params, opt, tcfg.epochs, best, best_params, best_epoch, history)


# --- checkpoints ---------------------------------------------------------------------

def save_checkpoint(path, params: ModelParams, meta: dict | None = None) -> None:
    header = {"version": CHECKPOINT_VERSION, "in_dim": params.in_dim,
              "arch": asdict(params.arch), "meta": meta or {}}
    arrays = {k.replace(".", "__"): v for k, v in params.tensors.items()}
    with Path(path).open("wb") as fh:
        np.savez(fh, __header__=np.array(json.dumps(header, sort_keys=True)), **arrays)


def load_checkpoint(path):
    """Return (params, meta)."""
    with np.load(path, allow_pickle=False) as z:
        header = json.loads(str(z["__header__"]))
        if header.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {header.get('version')}")
        tensors = {k.replace("__", "."): z[k.replace(".", "__")] for k in PARAM_NAMES}
    params = ModelParams(header["in_dim"], GATConfig(**header["arch"]), tensors)
    return params, header["meta"]
