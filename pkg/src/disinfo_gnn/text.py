"""Text feature segments from a static word table or a precomputed contextual store."""

from __future__ import annotations

import json
import re
import string
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import RawNode

ENCODERS = ("static", "contextual")
DEFAULT_DIMS = {"static": 100, "contextual": 768}
SOURCES = ("profile", "post")

_URL = re.compile(r"^(https?://|www\.)")
_PUNCT_NO_AT = string.punctuation.replace("@", "")


class TextConfigError(ValueError):
    pass


class EmbeddingFileError(ValueError):
    pass


@dataclass(frozen=True)
class TextConfig:
    encoder: str = "contextual"
    use_profiles: bool = False
    use_retweets: bool = False

    def __post_init__(self):
        if self.encoder not in ENCODERS:
            raise TextConfigError(f"unknown encoder {self.encoder!r}")

    @property
    def has_text(self) -> bool:
        return self.use_profiles or self.use_retweets

    @property
    def n_segments(self) -> int:
        return int(self.use_profiles) + int(self.use_retweets)


class StaticTable:
    """Word -> vector lookup. Vectors live in one matrix; ``index`` maps word to row."""

    def __init__(self, words, vectors):
        vectors = np.asarray(vectors, dtype=np.float64)
        if vectors.ndim != 2 or vectors.shape[1] < 1:
            raise EmbeddingFileError("static table vectors must form a 2-d array with positive width")
        self.vectors = vectors
        self.index = {}
        for i, w in enumerate(words):
            self.index.setdefault(w, i)
        self.vectors.setflags(write=False)

    @property
    def dimension(self) -> int:
        return self.vectors.shape[1]

    def __len__(self):
        return len(self.index)

    def __contains__(self, word):
        return word in self.index

    def __getitem__(self, word) -> np.ndarray:
        return self.vectors[self.index[word]]

    def dump(self, path) -> None:
        with Path(path).open("w", encoding="utf-8") as fh:
            for w, i in self.index.items():
                fh.write(w + " " + " ".join(repr(float(x)) for x in self.vectors[i]) + "\n")


def load_static_table(path) -> StaticTable:
    words, rows = [], []
    dim = None
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.rstrip("\n").split()
            if not parts:
                continue
            if len(parts) < 2:
                raise EmbeddingFileError(f"{path}: line {lineno}: no vector components")
            if dim is None:
                dim = len(parts) - 1
            elif len(parts) - 1 != dim:
                raise EmbeddingFileError(
                    f"{path}: line {lineno}: vector arity {len(parts) - 1}, expected {dim}")
            try:
                rows.append([float(x) for x in parts[1:]])
            except ValueError as exc:
                raise EmbeddingFileError(f"{path}: line {lineno}: {exc}") from exc
            words.append(parts[0])
    if not rows:
        raise EmbeddingFileError(f"{path}: empty static table")
    return StaticTable(words, rows)


def tokenize(text: str) -> list[str]:
    """Lowercase whitespace tokens with URL and mention normalisation."""
    out = []
    for tok in text.lower().split():
        tok = tok.strip(_PUNCT_NO_AT)
        if _URL.match(tok):
            out.append("httpurl")
            continue
        if tok.startswith("@") and len(tok.strip(string.punctuation)) > 0:
            out.append("@user")
            continue
        tok = tok.strip(string.punctuation)
        if tok:
            out.append(tok)
    return out


def embed_text_static(table: StaticTable, text: str) -> np.ndarray:
    rows = [table.index[t] for t in tokenize(text) if t in table.index]
    if not rows:
        return np.zeros(table.dimension)
    return table.vectors[rows].mean(axis=0)


class ContextualStore:
    def __init__(self, dimension: int, entries=None):
        if dimension < 1:
            raise EmbeddingFileError("contextual store dimension must be positive")
        self.dimension = int(dimension)
        self.entries: dict[tuple[str, str], np.ndarray] = {}
        for key, vec in (entries or {}).items():
            self.add(key[0], key[1], vec)

    def add(self, node_id: str, source: str, vec) -> None:
        if source not in SOURCES:
            raise EmbeddingFileError(f"unknown source {source!r}")
        key = (node_id, source)
        if key in self.entries:
            raise EmbeddingFileError(f"duplicate contextual key {key!r}")
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (self.dimension,):
            raise EmbeddingFileError(
                f"vector for {key!r} has shape {vec.shape}, expected ({self.dimension},)")
        vec.setflags(write=False)
        self.entries[key] = vec

    def __len__(self):
        return len(self.entries)

    def get(self, node_id: str, source: str) -> np.ndarray:
        vec = self.entries.get((node_id, source))
        return np.zeros(self.dimension) if vec is None else vec

    def dump(self, path) -> None:
        with Path(path).open("w", encoding="utf-8") as fh:
            fh.write(json.dumps({"dimension": self.dimension}) + "\n")
            for (nid, src), vec in self.entries.items():
                fh.write(json.dumps({"node_id": nid, "source": src, "vec": vec.tolist()}) + "\n")


def load_contextual_store(path) -> ContextualStore:
    store = None
    pending = []
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise EmbeddingFileError(f"{path}: line {lineno}: {exc}") from exc
            if "dimension" in rec and "vec" not in rec:
                if store is not None or pending:
                    raise EmbeddingFileError(f"{path}: line {lineno}: header must be the first record")
                store = ContextualStore(int(rec["dimension"]))
                continue
            try:
                item = (str(rec["node_id"]), rec["source"], rec["vec"])
            except KeyError as exc:
                raise EmbeddingFileError(f"{path}: line {lineno}: missing field {exc}") from exc
            if store is None:
                store = ContextualStore(len(item[2]))
            try:
                store.add(*item)
            except EmbeddingFileError as exc:
                raise EmbeddingFileError(f"{path}: line {lineno}: {exc}") from exc
    if store is None:
        raise EmbeddingFileError(f"{path}: empty store without a dimension header")
    return store


@dataclass(frozen=True)
class TextSources:
    table: StaticTable | None = None
    store: ContextualStore | None = None

    def dimension(self, encoder: str) -> int:
        src = self.table if encoder == "static" else self.store
        return DEFAULT_DIMS[encoder] if src is None else src.dimension


def text_dim(cfg: TextConfig, sources: TextSources | None = None) -> int:
    if sources is None:
        return DEFAULT_DIMS[cfg.encoder]
    return sources.dimension(cfg.encoder)


def text_segments(cfg: TextConfig, node: RawNode, table: StaticTable | None = None,
                  store: ContextualStore | None = None):
    """Return ``(profile_vec, post_vec)``; a segment is None when its flag is off."""
    if not cfg.has_text:
        return None, None
    if cfg.encoder == "static":
        if table is None:
            raise TextConfigError("static encoder requested but no static table supplied")
        x2 = embed_text_static(table, node.profile_text) if cfg.use_profiles else None
        x3 = embed_text_static(table, node.post_text) if cfg.use_retweets else None
    else:
        if store is None:
            raise TextConfigError("contextual encoder requested but no contextual store supplied")
        x2 = store.get(node.node_id, "profile") if cfg.use_profiles else None
        x3 = store.get(node.node_id, "post") if cfg.use_retweets else None
    return x2, x3
