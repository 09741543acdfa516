import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from disinfo_gnn.data import RawNode
from disinfo_gnn.text import (ContextualStore, EmbeddingFileError, StaticTable, TextConfig,
                              TextConfigError, embed_text_static, load_contextual_store,
                              load_static_table, text_segments, tokenize)


def test_static_table_loading(tmp_path):
    p = tmp_path / "t.txt"
    p.write_text("cat 1 2 3\ndog 4 5 6\n")
    t = load_static_table(p)
    assert len(t) == 2 and t.dimension == 3
    np.testing.assert_array_equal(t["dog"], [4, 5, 6])


def test_static_table_arity_error(tmp_path):
    p = tmp_path / "t.txt"
    p.write_text("cat 1 2 3\ndog 4 5 6 7\n")
    with pytest.raises(EmbeddingFileError, match="line 2"):
        load_static_table(p)


def test_static_table_100d_and_dump(tmp_path, rng):
    words = [f"w{i}" for i in range(5)]
    t = StaticTable(words, rng.normal(size=(5, 100)))
    assert t.dimension == 100
    t.dump(tmp_path / "t.txt")
    again = load_static_table(tmp_path / "t.txt")
    np.testing.assert_array_equal(again.vectors, t.vectors)


def test_empty_static_file(tmp_path):
    (tmp_path / "e.txt").write_text("")
    with pytest.raises(EmbeddingFileError, match="empty"):
        load_static_table(tmp_path / "e.txt")


@pytest.mark.parametrize("text, tokens", [
    ("Hello, World!", ["hello", "world"]),
    ("", []),
    ("RT @foo: see https://x.co", ["rt", "@user", "see", "httpurl"]),
    ("www.example.com ... !!", ["httpurl"]),
    ("don't STOP", ["don't", "stop"]),
])
def test_tokenize(text, tokens):
    assert tokenize(text) == tokens


def _table():
    return StaticTable(["a", "b", "c", "d"], np.array([[1.0, 0.0], [0.0, 1.0], [2.0, 4.0], [-1.0, 3.0]]))


def test_embed_one_word_exact():
    t = _table()
    np.testing.assert_array_equal(embed_text_static(t, "c"), t["c"])


def test_embed_midpoint():
    np.testing.assert_array_equal(embed_text_static(_table(), "a b"), [0.5, 0.5])


def test_embed_skips_unknown_against_summation_oracle():
    t = _table()
    text = "a zzz c d qq"
    known = [w for w in text.split() if w in t]
    total = np.zeros(2)
    for w in known:
        total = total + t[w]
    np.testing.assert_allclose(embed_text_static(t, text), total / len(known), rtol=0, atol=1e-15)


def test_embed_no_known_tokens_is_zero():
    np.testing.assert_array_equal(embed_text_static(_table(), "zzz yyy"), [0.0, 0.0])
    np.testing.assert_array_equal(embed_text_static(_table(), ""), [0.0, 0.0])


@settings(max_examples=80, deadline=None)
@given(st.lists(st.sampled_from(["a", "b", "c", "d", "x"]), min_size=1, max_size=12), st.randoms())
def test_embed_permutation_invariant_and_in_hull(words, rnd):
    t = _table()
    shuffled = list(words)
    rnd.shuffle(shuffled)
    v1 = embed_text_static(t, " ".join(words))
    v2 = embed_text_static(t, " ".join(shuffled))
    np.testing.assert_allclose(v1, v2, atol=1e-12)
    used = [t[w] for w in words if w in t]
    if used:
        used = np.array(used)
        assert np.all(v1 >= used.min(axis=0) - 1e-12) and np.all(v1 <= used.max(axis=0) + 1e-12)


def test_contextual_store_loading(tmp_path, rng):
    p = tmp_path / "c.jsonl"
    recs = [{"node_id": "u1", "source": "post", "vec": rng.normal(size=768).tolist()},
            {"node_id": "u1", "source": "profile", "vec": rng.normal(size=768).tolist()}]
    p.write_text("".join(json.dumps(r) + "\n" for r in recs))
    s = load_contextual_store(p)
    assert len(s) == 2 and s.dimension == 768


def test_contextual_duplicate_key(tmp_path):
    p = tmp_path / "c.jsonl"
    rec = json.dumps({"node_id": "u7", "source": "post", "vec": [1, 2]})
    p.write_text(rec + "\n" + rec + "\n")
    with pytest.raises(EmbeddingFileError, match="u7"):
        load_contextual_store(p)


def test_contextual_empty_with_header(tmp_path):
    p = tmp_path / "c.jsonl"
    p.write_text(json.dumps({"dimension": 768}) + "\n")
    s = load_contextual_store(p)
    assert len(s) == 0 and s.dimension == 768
    (tmp_path / "bare.jsonl").write_text("")
    with pytest.raises(EmbeddingFileError):
        load_contextual_store(tmp_path / "bare.jsonl")


def test_contextual_dump_round_trip(tmp_path, rng):
    s = ContextualStore(4)
    s.add("a", "post", rng.normal(size=4))
    s.add("b", "profile", rng.normal(size=4))
    s.dump(tmp_path / "c.jsonl")
    again = load_contextual_store(tmp_path / "c.jsonl")
    for key, vec in s.entries.items():
        np.testing.assert_array_equal(again.entries[key], vec)


def test_contextual_shape_mismatch():
    s = ContextualStore(3)
    with pytest.raises(EmbeddingFileError):
        s.add("a", "post", [1.0, 2.0])


NODE = RawNode("u1", "retweet", profile_text="a", post_text="b c")


def test_segments_no_text():
    assert text_segments(TextConfig("static", False, False), NODE, _table()) == (None, None)


def test_segments_static_profile_only():
    t = _table()
    x2, x3 = text_segments(TextConfig("static", True, False), NODE, t)
    np.testing.assert_array_equal(x2, t["a"])
    assert x3 is None


def test_segments_contextual_miss_rule(rng):
    s = ContextualStore(768)
    post = rng.normal(size=768)
    s.add("u1", "post", post)
    x2, x3 = text_segments(TextConfig("contextual", True, True), NODE, store=s)
    np.testing.assert_array_equal(x2, np.zeros(768))
    np.testing.assert_array_equal(x3, post)


def test_segments_missing_source():
    with pytest.raises(TextConfigError):
        text_segments(TextConfig("static", True, False), NODE)
    with pytest.raises(TextConfigError):
        text_segments(TextConfig("contextual", False, True), NODE)


def test_no_text_independent_of_encoder():
    a = text_segments(TextConfig("static", False, False), NODE, _table())
    b = text_segments(TextConfig("contextual", False, False), NODE, store=ContextualStore(5))
    assert a == b == (None, None)
