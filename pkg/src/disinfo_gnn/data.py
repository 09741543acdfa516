"""Propagation graphs: construction from diffusion trees, validation, JSONL I/O."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

NODE_KINDS = ("news", "tweet", "retweet", "reply")
LABELS = ("fake", "true")


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class RawNode:
    node_id: str
    kind: str
    profile_text: str = ""
    post_text: str = ""
    follower_count: int = 0
    followee_count: int = 0
    status_count: int = 0
    verified: bool = False
    timestamp: int | None = None

    def __post_init__(self):
        if self.kind not in NODE_KINDS:
            raise DatasetError(f"node {self.node_id!r}: unknown kind {self.kind!r}")
        for name in ("follower_count", "followee_count", "status_count"):
            if getattr(self, name) < 0:
                raise DatasetError(f"node {self.node_id!r}: negative {name}")


def news_node(news_id: str) -> RawNode:
    return RawNode(news_id, "news")


@dataclass(frozen=True)
class DiffusionTree:
    root: RawNode
    children: tuple[DiffusionTree, ...] = ()

    def size(self) -> int:
        return 1 + sum(c.size() for c in self.children)


@dataclass(frozen=True)
class PropagationGraph:
    graph_id: str
    label: str
    nodes: tuple[RawNode, ...]
    edges: tuple[tuple[int, int], ...]

    @property
    def y(self) -> int:
        """1 for fake (the positive class), 0 for true."""
        return int(self.label == "fake")

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    def parents(self) -> list[int | None]:
        par: list[int | None] = [None] * len(self.nodes)
        for p, c in self.edges:
            par[c] = p
        return par

    def depths(self) -> list[int]:
        par = self.parents()
        depth = [0] * len(self.nodes)
        # parent index precedes child index, so one forward sweep suffices
        for i in range(1, len(self.nodes)):
            p = par[i]
            depth[i] = depth[p] + 1 if p is not None else 0
        return depth


@dataclass(frozen=True)
class Dataset:
    graphs: tuple[PropagationGraph, ...]
    provenance: dict = field(default_factory=dict, compare=False)

    def __len__(self):
        return len(self.graphs)

    def by_id(self) -> dict[str, PropagationGraph]:
        return {g.graph_id: g for g in self.graphs}

    @property
    def labels(self) -> np.ndarray:
        return np.array([g.y for g in self.graphs], dtype=np.int64)


def merge_diffusion_trees(news_id: str, label: str, trees) -> PropagationGraph:
    """Attach every diffusion tree under a fresh news node, in pre-order.

    Users that appear in several trees stay distinct nodes; ids must therefore
    be globally unique across the forest.
    """
    if label not in LABELS:
        raise DatasetError(f"unknown label {label!r}")
    nodes = [news_node(news_id)]
    edges = []
    seen = {news_id}
    for tree in trees:
        stack = [(tree, 0)]
        while stack:
            t, parent = stack.pop()
            nid = t.root.node_id
            if nid in seen:
                raise DatasetError(f"duplicate node_id {nid!r}")
            if t.root.kind == "news":
                raise DatasetError(f"tree node {nid!r} has kind 'news'")
            seen.add(nid)
            idx = len(nodes)
            nodes.append(t.root)
            edges.append((parent, idx))
            ptime = t.root.timestamp
            for child in t.children:
                ct = child.root.timestamp
                if ptime is not None and ct is not None and ct < ptime:
                    log.warning("node %s precedes its parent %s by %ds; delay clamped to 0",
                                child.root.node_id, nid, ptime - ct)
            stack.extend((c, idx) for c in reversed(t.children))
    return PropagationGraph(news_id, label, tuple(nodes), tuple(edges))


def validate_graph(g: PropagationGraph) -> list[str]:
    """Return one message per violated invariant; an empty list means valid."""
    out = []
    n = len(g.nodes)
    if n == 0:
        return ["empty: graph has no nodes"]
    if g.label not in LABELS:
        out.append(f"label: unknown label {g.label!r}")
    if g.nodes[0].kind != "news":
        out.append(f"root: node 0 has kind {g.nodes[0].kind!r}, expected 'news'")
    news = [i for i, v in enumerate(g.nodes) if v.kind == "news"]
    if len(news) != 1:
        out.append(f"news count: expected exactly one news node, found {news}")
    ids: dict[str, int] = {}
    for i, v in enumerate(g.nodes):
        if v.node_id in ids:
            out.append(f"duplicate id: {v.node_id!r} at nodes {ids[v.node_id]} and {i}")
        else:
            ids[v.node_id] = i

    parents: list[list[int]] = [[] for _ in range(n)]
    children: list[list[int]] = [[] for _ in range(n)]
    for p, c in g.edges:
        if not (0 <= p < n and 0 <= c < n):
            out.append(f"edge out of range: ({p}, {c})")
            continue
        if p == c:
            out.append(f"self loop: ({p}, {c})")
            continue
        if p > c:
            out.append(f"order: edge ({p}, {c}) points from a later node to an earlier one")
        parents[c].append(p)
        children[p].append(c)

    if parents[0]:
        out.append(f"root parent: node 0 has parents {parents[0]}")
    for i in range(1, n):
        if len(parents[i]) > 1:
            out.append(f"multiple parents: node {i} has parents {parents[i]}")
        elif not parents[i]:
            out.append(f"orphan: node {i} has no parent")

    for cyc in _find_cycles(children):
        out.append(f"cycle: {' -> '.join(map(str, cyc))}")

    reach = {0}
    stack = [0]
    while stack:
        for c in children[stack.pop()]:
            if c not in reach:
                reach.add(c)
                stack.append(c)
    unreached = [i for i in range(n) if i not in reach]
    if unreached:
        out.append(f"disconnected: nodes {unreached} unreachable from node 0")
    return out


def _find_cycles(children: list[list[int]]) -> list[list[int]]:
    # iterative three-colour DFS; each back edge yields one reported cycle
    n = len(children)
    color = [0] * n
    cycles = []
    for s in range(n):
        if color[s]:
            continue
        path = [s]
        it_stack = [iter(children[s])]
        color[s] = 1
        while it_stack:
            nxt = next(it_stack[-1], None)
            if nxt is None:
                color[path.pop()] = 2
                it_stack.pop()
            elif color[nxt] == 1:
                cycles.append(path[path.index(nxt):] + [nxt])
            elif color[nxt] == 0:
                color[nxt] = 1
                path.append(nxt)
                it_stack.append(iter(children[nxt]))
    return cycles


# --- JSONL serialization -----------------------------------------------------

def node_to_json(v: RawNode) -> dict:
    return {
        "id": v.node_id,
        "kind": v.kind,
        "profile_text": v.profile_text,
        "post_text": v.post_text,
        "followers": v.follower_count,
        "followees": v.followee_count,
        "statuses": v.status_count,
        "verified": v.verified,
        "timestamp": v.timestamp,
    }


def node_from_json(d: dict) -> RawNode:
    ts = d.get("timestamp")
    return RawNode(
        node_id=str(d["id"]),
        kind=d["kind"],
        profile_text=d.get("profile_text") or "",
        post_text=d.get("post_text") or "",
        follower_count=int(d.get("followers", 0)),
        followee_count=int(d.get("followees", 0)),
        status_count=int(d.get("statuses", 0)),
        verified=bool(d.get("verified", False)),
        timestamp=None if ts is None else int(ts),
    )


def graph_to_json(g: PropagationGraph) -> dict:
    return {
        "graph_id": g.graph_id,
        "label": g.label,
        "nodes": [node_to_json(v) for v in g.nodes],
        "edges": [list(e) for e in g.edges],
    }


def graph_from_json(d: dict) -> PropagationGraph:
    return PropagationGraph(
        graph_id=str(d["graph_id"]),
        label=d["label"],
        nodes=tuple(node_from_json(v) for v in d["nodes"]),
        edges=tuple((int(p), int(c)) for p, c in d["edges"]),
    )


def dumps_dataset(ds: Dataset) -> str:
    return "".join(json.dumps(graph_to_json(g), ensure_ascii=False) + "\n" for g in ds.graphs)


def save_dataset(ds: Dataset, path) -> None:
    Path(path).write_text(dumps_dataset(ds), encoding="utf-8")


def load_dataset(path) -> Dataset:
    path = Path(path)
    graphs = []
    seen: set[str] = set()
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                g = graph_from_json(json.loads(line))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise DatasetError(f"{path}: line {lineno}: {exc}") from exc
            problems = validate_graph(g)
            if problems:
                raise DatasetError(f"{path}: line {lineno}: graph {g.graph_id!r}: " + "; ".join(problems))
            if g.graph_id in seen:
                raise DatasetError(f"{path}: line {lineno}: duplicate graph_id {g.graph_id!r}")
            seen.add(g.graph_id)
            graphs.append(g)
    return Dataset(tuple(graphs), {"source": str(path)})


# --- summary statistics ------------------------------------------------------

@dataclass
class DatasetStats:
    n_fake: int
    n_true: int
    imbalance_ratio: float
    nodes: dict
    edges: dict
    warnings: list[str]

    def as_dict(self) -> dict:
        return {
            "n_fake": self.n_fake,
            "n_true": self.n_true,
            "imbalance_ratio": self.imbalance_ratio,
            "nodes": self.nodes,
            "edges": self.edges,
            "warnings": self.warnings,
        }


def _describe(values) -> dict:
    if len(values) == 0:
        return {"min": 0, "max": 0, "mean": 0.0, "median": 0.0}
    a = np.asarray(values)
    return {"min": int(a.min()), "max": int(a.max()),
            "mean": round(float(a.mean()), 3), "median": float(np.median(a))}


def dataset_stats(ds: Dataset) -> DatasetStats:
    n_fake = sum(g.label == "fake" for g in ds.graphs)
    n_true = len(ds.graphs) - n_fake
    warnings = []
    if n_fake == 0 or n_true == 0:
        warnings.append(f"degenerate class balance: {n_fake} fake, {n_true} true")
        for w in warnings:
            log.warning(w)
    ratio = round(n_fake / n_true, 3) if n_true else float("nan")
    return DatasetStats(
        n_fake=n_fake,
        n_true=n_true,
        imbalance_ratio=ratio,
        nodes=_describe([g.n_nodes for g in ds.graphs]),
        edges=_describe([len(g.edges) for g in ds.graphs]),
        warnings=warnings,
    )
