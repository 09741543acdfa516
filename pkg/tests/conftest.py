import itertools

import numpy as np
import pytest

from disinfo_gnn.data import DiffusionTree, RawNode, merge_diffusion_trees
from disinfo_gnn.synth import SynthSpec, synth_generate
from disinfo_gnn.text import ContextualStore, StaticTable, TextConfig, TextSources

TEXT_CONFIGS = [TextConfig(e, p, r) for e, p, r in
                itertools.product(("static", "contextual"), (False, True), (False, True))]

WORDS = ["alpha", "beta", "gamma", "delta", "news", "fake", "true", "httpurl", "@user", "rt"]


def make_node(rng, nid, kind="retweet", ts=None):
    return RawNode(
        node_id=nid, kind=kind,
        profile_text=" ".join(rng.choice(WORDS, rng.integers(0, 4))),
        post_text=" ".join(rng.choice(WORDS, rng.integers(1, 6))),
        follower_count=int(rng.integers(0, 5000)), followee_count=int(rng.integers(0, 500)),
        status_count=int(rng.integers(0, 20000)), verified=bool(rng.random() < 0.2),
        timestamp=int(ts if ts is not None else 1_000_000 + rng.integers(0, 10_000)),
    )


def random_tree(rng, prefix, size):
    parent = [None] + [int(rng.integers(0, i)) for i in range(1, size)]
    ts = [1_000_000]
    for i in range(1, size):
        ts.append(ts[parent[i]] + int(rng.integers(0, 5000)))
    nodes = [make_node(rng, f"{prefix}:{i}", "tweet" if i == 0 else "retweet", ts[i]) for i in range(size)]
    children = [[] for _ in range(size)]
    for i in range(1, size):
        children[parent[i]].append(i)

    def build(i):
        return DiffusionTree(nodes[i], tuple(build(c) for c in children[i]))
    return build(0)


def random_graph(rng, n_nodes, gid="g", label=None):
    """Random propagation graph with exactly ``n_nodes`` nodes (news node included)."""
    label = label or ("fake" if rng.random() < 0.5 else "true")
    left = n_nodes - 1
    trees, t = [], 0
    while left > 0:
        size = int(rng.integers(1, left + 1))
        trees.append(random_tree(rng, f"{gid}t{t}", size))
        left -= size
        t += 1
    return merge_diffusion_trees(gid, label, trees)


def toy_sources(graphs, rng, static_dim=5, context_dim=6):
    table = StaticTable(WORDS, rng.normal(size=(len(WORDS), static_dim)))
    store = ContextualStore(context_dim)
    for g in graphs:
        for v in g.nodes[1:]:
            store.add(v.node_id, "post", rng.normal(size=context_dim))
            if rng.random() < 0.7:
                store.add(v.node_id, "profile", rng.normal(size=context_dim))
    return TextSources(table, store)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_synth():
    spec = SynthSpec(n_fake=12, n_true=36, context_dim=12, static_dim=8, vocab_size=60,
                     signal_words=6, max_nodes=12, seed=3)
    ds, store, table = synth_generate(spec)
    return ds, TextSources(table, store)


# --- acceptance reporting -------------------------------------------------------------

CRITERIA: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for n in sorted(CRITERIA):
            terminalreporter.write_line(CRITERIA[n])
