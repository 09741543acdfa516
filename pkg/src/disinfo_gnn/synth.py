"""Desk-scale synthetic propagation graphs with planted structural and textual class signal."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .data import Dataset, DiffusionTree, RawNode, merge_diffusion_trees, save_dataset
from .text import ContextualStore, StaticTable

T0 = 1_500_000_000


@dataclass(frozen=True)
class SynthSpec:
    n_fake: int = 60
    n_true: int = 540
    # tree shape
    mean_trees: float = 2.0
    branching: float = 1.2
    max_depth: int = 4
    max_nodes: int = 40
    mean_delay: float = 3600.0
    # signal
    text_signal: float = 0.8
    structure_signal: float = 0.3
    profile_factor: float = 0.5
    separation: float = 3.0  # distance between class means per unit text signal
    text_noise: float = 1.0  # per-component std of node text vectors
    profile_missing: float = 0.3
    # embedding sources
    context_dim: int = 768
    static_dim: int = 100
    vocab_size: int = 400
    signal_words: int = 20
    static_strength: float = 0.5  # static signal relative to the contextual one
    words_per_post: int = 10
    words_per_bio: int = 6
    seed: int = 0

    def __post_init__(self):
        for name in ("text_signal", "structure_signal"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if self.n_fake < 0 or self.n_true < 0:
            raise ValueError("class counts must be non-negative")

    @classmethod
    def from_dict(cls, d: dict) -> SynthSpec:
        names = cls.__dataclass_fields__
        unknown = set(d) - set(names)
        if unknown:
            raise ValueError(f"unknown synth spec fields: {sorted(unknown)}")
        return cls(**d)


def bayes_accuracy(spec: SynthSpec, n_text_nodes: int, source: str = "post") -> float:
    """Balanced-class accuracy of the optimal linear rule on the mean contextual vector.

    Holds when every graph has ``n_text_nodes`` nodes carrying that source and no
    other signal is present; class means are ``±shift`` along one direction.
    """
    from scipy.stats import norm

    shift = spec.text_signal * spec.separation / 2
    if source == "profile":
        shift *= spec.profile_factor
    return float(norm.cdf(shift * np.sqrt(n_text_nodes) / spec.text_noise))


def _unit(rng, d):
    v = rng.normal(size=d)
    return v / np.linalg.norm(v)


def _make_static_table(spec: SynthSpec, rng):
    d = spec.static_dim
    generic = [f"w{i}" for i in range(spec.vocab_size)]
    fake_w = [f"f{i}" for i in range(spec.signal_words)]
    true_w = [f"t{i}" for i in range(spec.signal_words)]
    u = _unit(rng, d)
    shift = spec.static_strength * spec.separation / 2
    vecs = [rng.normal(scale=spec.text_noise, size=d) for _ in generic]
    vecs += [rng.normal(scale=spec.text_noise, size=d) + shift * u for _ in fake_w]
    vecs += [rng.normal(scale=spec.text_noise, size=d) - shift * u for _ in true_w]
    words = generic + fake_w + true_w + ["httpurl", "@user", "rt"]
    vecs += [rng.normal(scale=spec.text_noise, size=d) for _ in range(3)]
    return StaticTable(words, np.array(vecs)), generic, fake_w, true_w


def _text(rng, n_words, p_signal, signal_words, generic):
    out = []
    for _ in range(n_words):
        if rng.random() < p_signal:
            out.append(signal_words[rng.integers(len(signal_words))])
        else:
            out.append(generic[rng.integers(len(generic))])
    if rng.random() < 0.2:
        out.append("https://t.co/" + "".join(rng.choice(list("abcdef"), 6)))
    if rng.random() < 0.2:
        out.insert(0, "@someone")
    return " ".join(out)


def synth_generate(spec: SynthSpec):
    """Return (Dataset, ContextualStore, StaticTable), deterministic in ``spec.seed``."""
    rng = np.random.default_rng(spec.seed)
    table, generic, fake_w, true_w = _make_static_table(spec, rng)
    u_post = _unit(rng, spec.context_dim)
    u_prof = _unit(rng, spec.context_dim)
    store = ContextualStore(spec.context_dim)

    labels = ["fake"] * spec.n_fake + ["true"] * spec.n_true
    labels = [labels[i] for i in rng.permutation(len(labels))]
    graphs = []
    for gi, label in enumerate(labels):
        sign = 1.0 if label == "fake" else -1.0
        s = spec.structure_signal
        branching = spec.branching * (1 + 0.5 * s * sign)
        mean_delay = spec.mean_delay * (1 - 0.5 * s * sign)
        follower_mu = 6.0 - 1.5 * s * sign
        post_shift = sign * spec.text_signal * spec.separation / 2
        prof_shift = post_shift * spec.profile_factor
        # probability that a word is drawn from the class-leaning vocabulary
        p_post = spec.text_signal * 0.5
        p_prof = p_post * spec.profile_factor
        class_words = fake_w if label == "fake" else true_w
        gid = f"g{gi:05d}"
        counter = [0]

        def make_node(kind, ts):
            nid = f"{gid}:{counter[0]}"
            counter[0] += 1
            has_bio = rng.random() >= spec.profile_missing
            bio = _text(rng, spec.words_per_bio, p_prof, class_words, generic) if has_bio else ""
            post = _text(rng, spec.words_per_post, p_post, class_words, generic)
            node = RawNode(
                node_id=nid, kind=kind, profile_text=bio, post_text=post,
                follower_count=int(rng.lognormal(follower_mu, 1.5)),
                followee_count=int(rng.lognormal(5.5, 1.2)),
                status_count=int(rng.lognormal(8.0, 1.5)),
                verified=bool(rng.random() < 0.05 * (1 - 0.5 * s * sign)),
                timestamp=int(ts),
            )
            store.add(nid, "post", rng.normal(scale=spec.text_noise, size=spec.context_dim) + post_shift * u_post)
            if has_bio:
                store.add(nid, "profile",
                          rng.normal(scale=spec.text_noise, size=spec.context_dim) + prof_shift * u_prof)
            return node

        budget = [spec.max_nodes - 1]

        def grow(kind, ts, depth):
            budget[0] -= 1
            node = make_node(kind, ts)
            children = []
            if depth < spec.max_depth:
                for _ in range(rng.poisson(branching / depth)):
                    if budget[0] <= 0:
                        break
                    ckind = "reply" if rng.random() < 0.2 else "retweet"
                    children.append(grow(ckind, ts + rng.exponential(mean_delay), depth + 1))
            return DiffusionTree(node, tuple(children))

        trees = []
        for _ in range(1 + rng.poisson(spec.mean_trees - 1 if spec.mean_trees > 1 else 0)):
            if budget[0] <= 0:
                break
            trees.append(grow("tweet", T0 + rng.exponential(spec.mean_delay * 24), 1))
        graphs.append(merge_diffusion_trees(gid, label, trees))
    ds = Dataset(tuple(graphs), {"synthetic": asdict(spec)})
    return ds, store, table


def write_synthetic(spec: SynthSpec, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ds, store, table = synth_generate(spec)
    save_dataset(ds, out / "graphs.jsonl")
    store.dump(out / "contextual.jsonl")
    table.dump(out / "static.txt")
    (out / "synth_spec.json").write_text(json.dumps(asdict(spec), indent=2, sort_keys=True) + "\n")
    return out
