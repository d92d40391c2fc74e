"""Pre-trained word vectors and mean-pooled component embeddings."""
from __future__ import annotations

from functools import lru_cache
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .text_features import words
from .validation import check_records


class GloveFormatError(ValueError):
    pass


class GloveTable:
    """Immutable word -> vector map. Lookup lowercases; unknown words map to zeros."""

    def __init__(self, vectors: dict, dim: int, source=None):
        self._vectors = vectors
        self.dim = dim
        self.source = source
        self.oov = np.zeros(dim)

    def __len__(self):
        return len(self._vectors)

    def __contains__(self, word):
        return word.lower() in self._vectors

    def lookup(self, word):
        """Return ``(vector, found)``."""
        v = self._vectors.get(word.lower())
        return (self.oov, False) if v is None else (v, True)

    @classmethod
    def from_dict(cls, vectors, source=None):
        vectors = {k.lower(): np.asarray(v, dtype=np.float64) for k, v in vectors.items()}
        if not vectors:
            raise GloveFormatError("empty embedding table")
        dims = {v.shape for v in vectors.values()}
        if len(dims) != 1:
            raise GloveFormatError(f"inconsistent vector shapes: {sorted(dims)}")
        return cls(vectors, next(iter(dims))[0], source)


def load_glove(path):
    """Parse the whitespace-separated ``word v1 ... vd`` format."""
    vectors, dim = {}, None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.rstrip("\n").split(" ")
            parts = [p for p in parts if p]
            if not parts:
                continue
            word, values = parts[0], parts[1:]
            if dim is None:
                if not values:
                    raise GloveFormatError(f"{path}:{lineno}: no vector values")
                dim = len(values)
            if len(values) != dim:
                raise GloveFormatError(
                    f"{path}:{lineno}: expected {dim} values for {word!r}, found {len(values)}"
                )
            try:
                vec = np.array(values, dtype=np.float64)
            except ValueError as exc:
                raise GloveFormatError(f"{path}:{lineno}: {exc}") from exc
            vectors.setdefault(word.lower(), vec)
    if dim is None:
        raise GloveFormatError(f"{path}: empty embedding file")
    return GloveTable(vectors, dim, source=str(Path(path)))


@lru_cache(maxsize=4)
def _cached_table(path):
    return load_glove(path)


def embed_component(text, table: GloveTable):
    found = [v for v, ok in (table.lookup(w) for w in words(text)) if ok]
    if not found:
        return np.zeros(table.dim)
    return np.mean(found, axis=0)


def embed_question(mcq, table: GloveTable, width=None):
    """``7 x d`` matrix of component embeddings, optionally zero-padded to ``width`` columns."""
    rows = np.array([embed_component(c, table) for c in mcq.components()])
    if width is not None and width > table.dim:
        rows = np.pad(rows, [(0, 0), (0, width - table.dim)])
    return rows


def padded_width(dim, multiple=4):
    return -(-dim // multiple) * multiple


class GloveEmbedder(TransformerMixin, BaseEstimator):
    """Map questions to ``(n, 7, d)`` component embeddings.

    ``glove`` is a ``GloveTable`` or a path to a vectors file. With
    ``pad_multiple`` set, the width is padded with zeros up to the next
    multiple (the multi-head encoders need a width divisible by the head
    count).
    """

    def __init__(self, glove=None, pad_multiple=4):
        self.glove = glove
        self.pad_multiple = pad_multiple

    def _table(self):
        if self.glove is None:
            raise ValueError("no word vectors configured (pass glove=path or GloveTable)")
        if isinstance(self.glove, GloveTable):
            return self.glove
        return _cached_table(str(Path(self.glove).resolve()))

    @property
    def width(self):
        dim = self._table().dim
        return padded_width(dim, self.pad_multiple) if self.pad_multiple else dim

    def fit(self, X=None, y=None):
        self.dim_ = self._table().dim
        self.width_ = self.width
        return self

    def transform(self, X):
        table = self._table()
        width = self.width
        return np.stack([embed_question(r, table, width) for r in check_records(X)])
