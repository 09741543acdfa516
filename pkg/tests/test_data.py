import json
import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from disinfo_gnn.data import (Dataset, DatasetError, DiffusionTree, PropagationGraph, RawNode,
                              dataset_stats, dumps_dataset, graph_to_json, load_dataset,
                              merge_diffusion_trees, news_node, save_dataset, validate_graph)

from conftest import random_graph, random_tree


def leaf(nid, ts=100):
    return DiffusionTree(RawNode(nid, "tweet", timestamp=ts))


def test_empty_merge():
    g = merge_diffusion_trees("n1", "fake", [])
    assert g.n_nodes == 1 and g.edges == ()
    assert g.nodes[0].kind == "news" and g.y == 1


def test_single_tree_structure():
    tree = DiffusionTree(RawNode("r1", "tweet", timestamp=1),
                         (leaf("c1", 2), leaf("c2", 3)))
    g = merge_diffusion_trees("n1", "true", [tree])
    assert g.n_nodes == 4
    assert set(g.edges) == {(0, 1), (1, 2), (1, 3)}
    assert g.y == 0


def _in_degrees(g):
    deg = [0] * g.n_nodes
    for _, c in g.edges:
        deg[c] += 1
    return deg


def test_two_trees_exhaustive_degrees():
    a = DiffusionTree(RawNode("a0", "tweet", timestamp=1),
                      (DiffusionTree(RawNode("a1", "retweet", timestamp=2), (leaf("a2", 3),)),))
    b = DiffusionTree(RawNode("b0", "tweet", timestamp=1), (leaf("b1", 5),))
    g = merge_diffusion_trees("n1", "fake", [a, b])
    assert g.n_nodes == 6 and len(g.edges) == 5
    deg = _in_degrees(g)
    assert deg[0] == 0 and all(d == 1 for d in deg[1:])
    root_children = {c for p, c in g.edges if p == 0}
    ids = {g.nodes[c].node_id for c in root_children}
    assert ids == {"a0", "b0"}


def test_duplicate_ids_rejected():
    with pytest.raises(DatasetError, match="duplicate"):
        merge_diffusion_trees("n1", "fake", [leaf("x"), leaf("x")])
    with pytest.raises(DatasetError, match="duplicate"):
        merge_diffusion_trees("x", "fake", [leaf("x")])


def test_news_kind_inside_tree_rejected():
    with pytest.raises(DatasetError, match="news"):
        merge_diffusion_trees("n1", "fake", [DiffusionTree(RawNode("z", "news"))])


def test_bad_label_and_negative_counts():
    with pytest.raises(DatasetError):
        merge_diffusion_trees("n1", "satire", [])
    with pytest.raises(DatasetError):
        RawNode("u", "tweet", follower_count=-1)
    with pytest.raises(DatasetError):
        RawNode("u", "quote")


def test_out_of_order_timestamp_logged(caplog):
    tree = DiffusionTree(RawNode("r", "tweet", timestamp=100), (leaf("c", 50),))
    with caplog.at_level(logging.WARNING):
        g = merge_diffusion_trees("n", "true", [tree])
    assert g.n_nodes == 3
    assert "clamped" in caplog.text


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 25))
def test_merge_always_valid_tree(seed, n):
    rng = np.random.default_rng(seed)
    g = random_graph(rng, n)
    assert validate_graph(g) == []
    assert len(g.edges) == g.n_nodes - 1
    deg = _in_degrees(g)
    assert deg[0] == 0 and all(d == 1 for d in deg[1:])
    # pre-order: parents precede children
    assert all(p < c for p, c in g.edges)


def _graph(edges, n=4):
    nodes = (news_node("n"),) + tuple(RawNode(f"u{i}", "retweet") for i in range(1, n))
    return PropagationGraph("n", "fake", nodes, tuple(edges))


def test_validate_valid():
    assert validate_graph(_graph([(0, 1), (1, 2), (1, 3)])) == []


def test_validate_multiple_parents():
    probs = validate_graph(_graph([(0, 1), (1, 2), (1, 3), (2, 1)]))
    assert sum(p.startswith("multiple parents") for p in probs) == 1


def _brute_force_has_cycle(n, edges):
    # a cycle exists iff some node reaches itself by a path of length 1..n
    adj = {i: [c for p, c in edges if p == i] for i in range(n)}
    for s in range(n):
        frontier = set(adj[s])
        for _ in range(n):
            if s in frontier:
                return True
            frontier = {c for f in frontier for c in adj[f]}
    return False


def test_validate_cycle():
    edges = [(0, 1), (1, 2), (2, 1)]
    assert _brute_force_has_cycle(3, edges)
    probs = validate_graph(_graph(edges, n=3))
    assert any(p.startswith("cycle") for p in probs)


@settings(max_examples=80, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 4), st.integers(0, 4)), max_size=8))
def test_cycle_detection_matches_brute_force(edges):
    edges = [(p, c) for p, c in edges if p != c]
    probs = validate_graph(_graph(edges, n=5))
    assert any(p.startswith("cycle") for p in probs) == _brute_force_has_cycle(5, edges)


def test_validate_other_violations():
    assert any(p.startswith("self loop") for p in validate_graph(_graph([(0, 1), (1, 1), (1, 2), (1, 3)])))
    assert any(p.startswith("edge out of range") for p in validate_graph(_graph([(0, 1), (1, 9)])))
    assert any(p.startswith("disconnected") or p.startswith("orphan")
               for p in validate_graph(_graph([(0, 1), (1, 2)])))
    bad_root = PropagationGraph("n", "fake", (RawNode("u", "tweet"),), ())
    assert any(p.startswith("root") for p in validate_graph(bad_root))


def _write_lines(path, lines):
    path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def test_load_two_graphs(tmp_path, rng):
    ds = Dataset((random_graph(rng, 4, "a"), random_graph(rng, 3, "b")))
    p = tmp_path / "g.jsonl"
    save_dataset(ds, p)
    loaded = load_dataset(p)
    assert len(loaded) == 2
    assert loaded.graphs == ds.graphs


def test_malformed_line_named(tmp_path, rng):
    good = [json.dumps(graph_to_json(random_graph(rng, 3, gid))) for gid in ("a", "b")]
    p = tmp_path / "g.jsonl"
    _write_lines(p, good + ["{not json"])
    with pytest.raises(DatasetError, match="line 3"):
        load_dataset(p)


def test_invalid_graph_and_duplicate_id_rejected(tmp_path, rng):
    g = graph_to_json(random_graph(rng, 3, "a"))
    bad = dict(g, edges=[[0, 1], [1, 1]])
    p = tmp_path / "g.jsonl"
    _write_lines(p, [json.dumps(bad)])
    with pytest.raises(DatasetError, match="'a'"):
        load_dataset(p)
    _write_lines(p, [json.dumps(g), json.dumps(g)])
    with pytest.raises(DatasetError, match="duplicate graph_id"):
        load_dataset(p)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_round_trip(tmp_path_factory, seed):
    rng = np.random.default_rng(seed)
    ds = Dataset(tuple(random_graph(rng, int(rng.integers(1, 12)), f"g{i}") for i in range(4)))
    p = tmp_path_factory.mktemp("rt") / "g.jsonl"
    save_dataset(ds, p)
    again = load_dataset(p)
    assert again.graphs == ds.graphs
    assert dumps_dataset(again) == dumps_dataset(ds)


def _counts_dataset(n_fake, n_true):
    gs = [merge_diffusion_trees(f"f{i}", "fake", []) for i in range(n_fake)]
    gs += [merge_diffusion_trees(f"t{i}", "true", []) for i in range(n_true)]
    return Dataset(tuple(gs))


def test_stats_full_scale_counts(tmp_path):
    ds = _counts_dataset(1242, 10793)
    p = tmp_path / "big.jsonl"
    save_dataset(ds, p)
    s = dataset_stats(load_dataset(p))
    assert (s.n_fake, s.n_true) == (1242, 10793)
    assert s.imbalance_ratio == 0.115


def test_stats_balanced_and_degenerate(caplog):
    assert dataset_stats(_counts_dataset(5, 5)).imbalance_ratio == 1.0
    with caplog.at_level(logging.WARNING):
        s = dataset_stats(_counts_dataset(0, 10))
    assert s.imbalance_ratio == 0.0
    assert s.warnings and "degenerate" in caplog.text


def test_depths_and_parents(rng):
    tree = random_tree(rng, "t", 5)
    g = merge_diffusion_trees("n", "fake", [tree])
    par = g.parents()
    d = g.depths()
    assert par[0] is None and d[0] == 0
    for i in range(1, g.n_nodes):
        assert d[i] == d[par[i]] + 1
