"""Quality-driven question embedding (QDQE).

Questions at the two extremes of the rating scale form contrastive
triples. A one-layer transformer encoder is trained with a two-term
InfoNCE loss so that questions of matching quality end up close in
cosine similarity. Its pre-pooling ``7 x d`` output then serves as the
component embeddings of the DeepQR model.
"""
from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .layers import Module, TransformerLayer
from .tensor import Adam, StepSchedule, as_tensor, cosine_similarity, mean_rows, no_grad, softplus
from .validation import check_embeddings, check_fitted, check_targets

logger = logging.getLogger(__name__)


class TripleError(ValueError):
    pass


@dataclass
class TripleSet:
    """Index triples into the array they were built from.

    ``source`` is "L" for pairs drawn from the low-rated extreme set and
    "H" for the high-rated one.
    """

    anchor: np.ndarray
    pos: np.ndarray
    neg: np.ndarray
    source: np.ndarray
    c: int
    low: np.ndarray
    high: np.ndarray

    def __len__(self):
        return len(self.anchor)

    def as_ids(self, ids):
        ids = list(ids)
        return [(ids[a], ids[p], ids[n]) for a, p, n in zip(self.anchor, self.pos, self.neg)]


def extreme_sets(ratings, c, ids=None):
    """Indices of the ``c`` lowest and ``c`` highest rated questions.

    Sorting is by rating, ties broken by ascending id (or index).
    """
    ratings = np.asarray(ratings, dtype=np.float64)
    n = len(ratings)
    if n < 4:
        raise TripleError(f"need at least 4 questions to build triples, got {n}")
    if c < 2 or 2 * c >= n:
        raise TripleError(
            f"c={c} is invalid for {n} questions: need 2 <= c < n/2 (try c <= {max((n - 1) // 2, 2)})"
        )
    keys = np.arange(n) if ids is None else np.asarray([str(i) for i in ids])
    order = np.lexsort((keys, ratings))
    return order[:c], order[n - c:]


def build_triples(ratings, c, rng, ids=None):
    """All ordered pairs within each extreme set, one random negative each.

    Low-set pairs come first, then high-set pairs; within a set pairs are
    enumerated anchor-major. One ``rng.integers(c)`` draw per pair picks
    the negative from the opposite set. Yields ``2 c (c - 1)`` triples.
    """
    low, high = extreme_sets(ratings, c, ids)
    anchor, pos, neg, source = [], [], [], []
    for name, own, other in (("L", low, high), ("H", high, low)):
        for i in range(c):
            for j in range(c):
                if i == j:
                    continue
                anchor.append(own[i])
                pos.append(own[j])
                neg.append(other[rng.integers(c)])
                source.append(name)
    return TripleSet(np.array(anchor), np.array(pos), np.array(neg), np.array(source), c, low, high)


def info_nce(a, pos, neg, tau=0.07):
    """``-log(e^{s+/tau} / (e^{s+/tau} + e^{s-/tau}))`` with cosine similarities.

    Works on batches along leading axes; returns per-triple losses.
    """
    if tau <= 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    s_pos = cosine_similarity(a, pos)
    s_neg = cosine_similarity(a, neg)
    return softplus((s_neg - s_pos) * (1.0 / tau))


class QdqeNetwork(Module):
    def __init__(self, width, rng, heads=4, d_ff=None, dropout=0.1):
        self.width = width
        self.layer = TransformerLayer(width, heads, d_ff or 4 * width, rng, out_proj=True, dropout=dropout)

    def encode_matrix(self, re, training=False, rng=None):
        return self.layer(as_tensor(re), training, rng)

    def __call__(self, re, training=False, rng=None):
        """Question vector: column means of the encoded ``7 x d`` matrix."""
        return mean_rows(self.encode_matrix(re, training, rng))


class QdqeEncoder(TransformerMixin, BaseEstimator):
    """Contrastively trained component-embedding encoder.

    ``fit(E, y)`` takes component embeddings ``E`` of shape ``(n, 7, d)``
    and ratings ``y``; ``transform`` returns the encoded ``(n, 7, d)``
    matrices and ``encode`` the pooled ``(n, d)`` question vectors.
    Training uses batch size 1 over triples; with validation data the
    epoch with the lowest mean validation loss is kept.
    """

    def __init__(self, c=80, c_val=20, tau=0.07, epochs=10, lr=1e-3, step_size=3, gamma=0.7,
                 dropout=0.1, heads=4, d_ff=None, seed=2021, verbose=False):
        self.c = c
        self.c_val = c_val
        self.tau = tau
        self.epochs = epochs
        self.lr = lr
        self.step_size = step_size
        self.gamma = gamma
        self.dropout = dropout
        self.heads = heads
        self.d_ff = d_ff
        self.seed = seed
        self.verbose = verbose

    def _build(self, width, rng):
        return QdqeNetwork(width, rng, self.heads, self.d_ff, self.dropout)

    def fit(self, E, y, validation_data=None, ids=None):
        """Train on embeddings ``E`` with ratings ``y``.

        ``ids`` (question ids) break rating ties when picking the extreme
        sets; ``validation_data`` is ``(E_val, y_val)`` or
        ``(E_val, y_val, ids_val)``.
        """
        E = check_embeddings(E)
        y = check_targets(y, len(E))
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        rng = np.random.default_rng(self.seed)
        net = self._build(E.shape[-1], rng)
        try:
            triples = build_triples(y, self.c, rng, ids=ids)
        except TripleError as exc:
            raise TripleError(f"training split too small for QDQE: {exc}") from None
        val = None
        if validation_data is not None:
            E_val = check_embeddings(validation_data[0])
            y_val = check_targets(validation_data[1], len(E_val))
            val_ids = validation_data[2] if len(validation_data) > 2 else None
            try:
                vt = build_triples(y_val, self.c_val, rng, ids=val_ids)
            except TripleError as exc:
                raise TripleError(f"validation split too small for QDQE: {exc}") from None
            val = (E_val, vt)

        params = net.parameters()
        opt = Adam(params, lr=self.lr)
        sched = StepSchedule(self.lr, self.step_size, self.gamma)
        history, best, best_loss = [], None, np.inf
        for epoch in range(self.epochs):
            t0 = time.perf_counter()
            opt.lr = sched.rate(epoch)
            total = 0.0
            for t in rng.permutation(len(triples)):
                batch = E[[triples.anchor[t], triples.pos[t], triples.neg[t]]]
                q = net(batch, training=True, rng=rng)
                loss = info_nce(q[0], q[1], q[2], self.tau)
                if not np.isfinite(loss.data):
                    raise FloatingPointError(f"QDQE loss is not finite at epoch {epoch}, triple {t}")
                loss.backward()
                opt.step()
                total += float(loss.data)
            entry = {"epoch": epoch, "lr": opt.lr, "train_loss": total / len(triples),
                     "seconds": time.perf_counter() - t0}
            if val is not None:
                entry["val_loss"] = float(self._mean_loss(net, *val))
                if entry["val_loss"] < best_loss:
                    best_loss, best = entry["val_loss"], (epoch, net.state_dict())
            history.append(entry)
            if self.verbose:
                logger.info("qdqe epoch %d: %s", epoch, entry)
        if best is not None:
            net.load_state_dict(best[1])
            self.best_epoch_ = best[0]
        else:
            self.best_epoch_ = self.epochs - 1
        self.network_ = net
        self.history_ = history
        self.width_ = E.shape[-1]
        self.n_triples_ = len(triples)
        self.triples_ = triples
        return self

    def _mean_loss(self, net, E, triples):
        with no_grad():
            q = net(E, training=False).data
            return info_nce(q[triples.anchor], q[triples.pos], q[triples.neg], self.tau).data.mean()

    def transform(self, E):
        check_fitted(self, "network_")
        E = check_embeddings(E)
        with no_grad():
            return self.network_.encode_matrix(E).data

    def encode(self, E):
        check_fitted(self, "network_")
        E = check_embeddings(E)
        with no_grad():
            return self.network_(E).data

    def triple_accuracy(self, E, triples):
        """Fraction of triples with ``sim(a, pos) > sim(a, neg)``."""
        q = self.encode(E)
        s_pos = cosine_similarity(q[triples.anchor], q[triples.pos]).data
        s_neg = cosine_similarity(q[triples.anchor], q[triples.neg]).data
        return float(np.mean(s_pos > s_neg))

    def similarity_gap(self, E, triples):
        q = self.encode(E)
        s_pos = cosine_similarity(q[triples.anchor], q[triples.pos]).data
        s_neg = cosine_similarity(q[triples.anchor], q[triples.neg]).data
        return float(s_pos.mean() - s_neg.mean())

    def get_state(self):
        check_fitted(self, "network_")
        return self.network_.state_dict()

    @classmethod
    def from_state(cls, params: dict, state: dict):
        enc = cls(**params)
        width = state["layer.w_q"].shape[0]
        enc.network_ = enc._build(width, np.random.default_rng(0))
        enc.network_.load_state_dict(state)
        enc.width_ = width
        return enc


QDQE_CHECKPOINT_VERSION = 1


def save_qdqe(encoder: QdqeEncoder, path, extra=None):
    """Write the encoder to ``.npz``: ``qdqe/<param>`` arrays plus JSON ``__meta__``."""
    meta = {
        "format_version": QDQE_CHECKPOINT_VERSION,
        "kind": "qdqe",
        "params": encoder.get_params(),
        "best_epoch": getattr(encoder, "best_epoch_", None),
        "history": getattr(encoder, "history_", []),
        "extra": extra or {},
    }
    arrays = {f"qdqe/{k}": v for k, v in encoder.get_state().items()}
    arrays["__meta__"] = np.array(json.dumps(meta, sort_keys=True))
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_qdqe(path):
    with np.load(path, allow_pickle=False) as z:
        if "__meta__" not in z.files:
            raise ValueError(f"{path} is not a QDQE checkpoint")
        meta = json.loads(str(z["__meta__"]))
        state = {k[5:]: z[k] for k in z.files if k.startswith("qdqe/")}
    if meta.get("kind") != "qdqe" or meta.get("format_version") != QDQE_CHECKPOINT_VERSION:
        raise ValueError(f"{path} is not a version {QDQE_CHECKPOINT_VERSION} QDQE checkpoint")
    enc = QdqeEncoder.from_state(meta["params"], state)
    enc.best_epoch_ = meta["best_epoch"]
    enc.history_ = meta["history"]
    enc.checkpoint_meta_ = meta
    return enc


def qdqe_component_embeddings(re, encoder: QdqeEncoder):
    """Replace GloVe component rows with the encoder's ``7 x d`` output."""
    return encoder.transform(re)


def train_qdqe(train, val, glove, c=80, c_val=20, **hyper):
    """Fit a ``QdqeEncoder`` on datasets using GloVe component embeddings."""
    from .embeddings import GloveEmbedder

    embedder = GloveEmbedder(glove).fit()
    E_train = embedder.transform(train)
    E_val = embedder.transform(val) if val is not None else None
    enc = QdqeEncoder(c=c, c_val=c_val, **hyper)
    vd = (E_val, val.labels(), val.ids) if val is not None else None
    return enc.fit(E_train, train.labels(), validation_data=vd, ids=train.ids)
