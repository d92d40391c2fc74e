"""The five rating models and their scikit-learn style estimator.

All models end in a single linear head over a concatenation of feature
blocks:

============  ===================================
kind          head input
============  ===================================
edf-solo      normalized EDF (18)
edf-enriched  EDF (18) + SCQC (d_scqc)
sf            SF (d_sf)
combined      EDF + SCQC + SF
deepqr        EDF + SCQC + SF, fed QDQE embeddings
============  ===================================
"""
from __future__ import annotations

import enum
import json
import logging
import time
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin

from .embeddings import GloveEmbedder, GloveTable
from .layers import Module, uniform_init
from .qdqe import QdqeEncoder, QdqeNetwork
from .scqc import ScqcEncoder
from .sf_encoder import SfEncoder
from .tensor import Adam, ShapeError, StepSchedule, Tensor, as_tensor, mse_loss, no_grad, parameter
from .text_features import N_FEATURES, EdfExtractor, FeatureStats
from .validation import check_fitted, check_records, check_targets

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


class ModelKind(str, enum.Enum):
    EDF_SOLO = "edf-solo"
    EDF_ENRICHED = "edf-enriched"
    SF = "sf"
    COMBINED = "combined"
    DEEPQR = "deepqr"

    @property
    def uses_edf(self):
        return self is not ModelKind.SF

    @property
    def uses_scqc(self):
        return self in (ModelKind.EDF_ENRICHED, ModelKind.COMBINED, ModelKind.DEEPQR)

    @property
    def uses_sf(self):
        return self in (ModelKind.SF, ModelKind.COMBINED, ModelKind.DEEPQR)

    @property
    def uses_embeddings(self):
        return self is not ModelKind.EDF_SOLO

    def input_width(self, d_scqc, d_sf):
        return (N_FEATURES if self.uses_edf else 0) + (d_scqc if self.uses_scqc else 0) + (
            d_sf if self.uses_sf else 0
        )


class TrainingError(RuntimeError):
    pass


class PredictionHead(Module):
    """``x . w + b`` for inputs of a fixed width.

    ``x`` may also be a list of feature blocks; each block is multiplied
    by its slice of ``w`` and the products are added in order, so a block
    whose weights are all zero contributes exactly nothing.
    """

    def __init__(self, width, rng=None, bias=0.0):
        self.width = width
        w = np.zeros((width, 1)) if rng is None else uniform_init(rng, width, (width, 1))
        self.weight = parameter(w)
        self.bias = parameter(np.array([float(bias)]))

    def __call__(self, x):
        blocks = [as_tensor(b) for b in x] if isinstance(x, (list, tuple)) else [as_tensor(x)]
        total = sum(b.shape[-1] for b in blocks)
        if total != self.width:
            raise ShapeError(f"head expects width {self.width}, got {total}")
        out, start = None, 0
        for b in blocks:
            stop = start + b.shape[-1]
            term = b @ self.weight[start:stop]
            out = term if out is None else out + term
            start = stop
        out = out + self.bias
        return out.reshape(out.shape[:-1])


def predict_edf_solo(edf_norm, head):
    return head(edf_norm)


def predict_edf_enriched(edf_norm, scqc_feature, head):
    return head([edf_norm, scqc_feature])


def predict_sf(sf_feature, head):
    return head(sf_feature)


def predict_combined(edf_norm, scqc_feature, sf_feature, head):
    return head([edf_norm, scqc_feature, sf_feature])


class RatingNetwork(Module):
    """Feature branches plus head for one ``ModelKind``.

    ``forward`` takes normalized EDF ``(B, 18)`` and component embeddings
    ``(B, 7, d)`` (ignored by edf-solo) and returns ``(B,)`` ratings.
    When ``qdqe`` is given, its layer is applied to the embeddings inside
    the graph (fine-tuning); otherwise callers pass pre-encoded inputs.
    """

    def __init__(self, kind, width, rng, d_scqc=7, d_sf=16, scqc_d_ff=28, sf_d_ff=None,
                 dropout=0.5, head_bias=0.0, qdqe=None, scqc_pool="column"):
        self.kind = ModelKind(kind)
        self.dropout = dropout
        if self.kind.uses_scqc:
            self.scqc = ScqcEncoder(width, rng, d_scqc=d_scqc, d_ff=scqc_d_ff, dropout=dropout,
                                    pool=scqc_pool)
        if self.kind.uses_sf:
            self.sf = SfEncoder(width, rng, d_sf=d_sf, d_ff=sf_d_ff, dropout=dropout)
        if qdqe is not None:
            self.qdqe = qdqe
        self.head = PredictionHead(self.kind.input_width(d_scqc, d_sf), bias=head_bias)

    def forward(self, edf, re=None, training=False, rng=None, return_attention=False):
        parts, co = [], None
        if self.kind.uses_embeddings:
            if re is None:
                raise ValueError(f"{self.kind.value} needs component embeddings")
            re = as_tensor(re)
            if getattr(self, "qdqe", None) is not None:
                re = self.qdqe.encode_matrix(re, training, rng)
        if self.kind.uses_edf:
            edf = as_tensor(edf)
            if edf.shape[-1] != N_FEATURES:
                raise ShapeError(f"expected {N_FEATURES} EDF columns, got {edf.shape}")
            parts.append(edf)
        if self.kind.uses_scqc:
            out = self.scqc(re, training, rng)
            co = out.co_matrix
            parts.append(out.feature)
        if self.kind.uses_sf:
            parts.append(self.sf(re, training, rng))
        pred = self.head(parts)
        return (pred, co) if return_attention else pred

    __call__ = forward


def _json_safe(value):
    if isinstance(value, (str, int, float, bool)) or value is None:
        return value
    if isinstance(value, Path):
        return str(value)
    if isinstance(value, GloveTable):
        return value.source
    if isinstance(value, (list, tuple)):
        return [_json_safe(v) for v in value]
    return repr(value)


class QuestionRater(RegressorMixin, BaseEstimator):
    """Predict the average quality rating of multiple-choice questions.

    ``X`` is a list of ``McqRecord`` (or dicts in the JSONL schema); ``y``
    holds the ratings. Models other than ``edf-solo`` need ``glove`` (a
    ``GloveTable`` or vectors file path); ``deepqr`` additionally needs a
    fitted ``QdqeEncoder`` as ``qdqe``.

    Training minimizes MSE with Adam and a step learning-rate schedule.
    When ``validation_data=(X_val, y_val)`` is passed to ``fit``, the
    parameters of the epoch with the lowest validation MSE are restored.
    """

    def __init__(self, kind="deepqr", glove=None, qdqe=None, qdqe_finetune=False, d_scqc=7,
                 d_sf=16, scqc_d_ff=28, scqc_pool="column", sf_d_ff=None, epochs=50, batch_size=16, lr=1e-3,
                 step_size=3, gamma=0.7, dropout=0.5, seed=2021, checker=None, spache_path=None,
                 dale_chall_path=None, verbose=False):
        self.kind = kind
        self.glove = glove
        self.qdqe = qdqe
        self.qdqe_finetune = qdqe_finetune
        self.d_scqc = d_scqc
        self.d_sf = d_sf
        self.scqc_d_ff = scqc_d_ff
        self.scqc_pool = scqc_pool
        self.sf_d_ff = sf_d_ff
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.step_size = step_size
        self.gamma = gamma
        self.dropout = dropout
        self.seed = seed
        self.checker = checker
        self.spache_path = spache_path
        self.dale_chall_path = dale_chall_path
        self.verbose = verbose

    # -- features -------------------------------------------------------
    def _kind(self):
        return ModelKind(self.kind)

    def _check_qdqe(self):
        if self._kind() is ModelKind.DEEPQR:
            if self.qdqe is None:
                raise ValueError("deepqr needs a trained QDQE encoder (run qdqe-pretrain first)")
            check_fitted(self.qdqe, "network_")

    def _embed(self, records):
        kind = self._kind()
        if not kind.uses_embeddings:
            return None
        E = GloveEmbedder(self.glove).transform(records)
        if kind is ModelKind.DEEPQR and not self.qdqe_finetune:
            E = self.qdqe.transform(E)
        return E

    def _extractor(self):
        return EdfExtractor(self.checker, spache_path=self.spache_path, dale_chall_path=self.dale_chall_path)

    def featurize(self, X):
        """``(edf_normalized, embeddings)`` arrays for ``X``."""
        check_fitted(self, "edf_")
        records = check_records(X)
        return self.edf_.transform(records), self._embed(records)

    # -- training -------------------------------------------------------
    def fit(self, X, y, validation_data=None):
        records = check_records(X)
        y = check_targets(y, len(records))
        self._check_qdqe()
        self.edf_ = self._extractor().fit(records)
        edf, E = self.featurize(records)
        val = None
        if validation_data is not None:
            v_records = check_records(validation_data[0])
            val = (*self.featurize(v_records), check_targets(validation_data[1], len(v_records)))
        return self.fit_arrays(edf, E, y, val)

    def fit_arrays(self, edf, E, y, val=None):
        """Train on precomputed features (see ``featurize``)."""
        kind = self._kind()
        rng = np.random.default_rng(self.seed)
        width = E.shape[-1] if E is not None else 0
        qdqe_net = None
        if kind is ModelKind.DEEPQR and self.qdqe_finetune:
            qdqe_net = QdqeNetwork(width, np.random.default_rng(0), heads=self.qdqe.heads,
                                   d_ff=self.qdqe.d_ff, dropout=self.qdqe.dropout)
            qdqe_net.load_state_dict(self.qdqe.network_.state_dict())
        net = RatingNetwork(kind, width, rng, self.d_scqc, self.d_sf, self.scqc_d_ff, self.sf_d_ff,
                            self.dropout, head_bias=float(np.mean(y)), qdqe=qdqe_net,
                            scqc_pool=self.scqc_pool)
        opt = Adam(net.parameters(), lr=self.lr)
        sched = StepSchedule(self.lr, self.step_size, self.gamma)
        n = len(y)
        history, best_state, best_val, best_epoch = [], None, np.inf, None
        for epoch in range(self.epochs):
            t0 = time.perf_counter()
            opt.lr = sched.rate(epoch)
            order = rng.permutation(n)
            total = 0.0
            for b, start in enumerate(range(0, n, self.batch_size)):
                idx = order[start:start + self.batch_size]
                pred = net(edf[idx], None if E is None else E[idx], training=True, rng=rng)
                loss = mse_loss(pred, Tensor(y[idx]))
                if not np.isfinite(loss.data):
                    raise TrainingError(f"non-finite loss at epoch {epoch}, batch {b}")
                loss.backward()
                opt.step()
                total += float(loss.data) * len(idx)
            entry = {"epoch": epoch, "lr": opt.lr, "train_loss": total / n}
            if val is not None:
                entry["val_mse"] = float(np.mean((self._predict_arrays(net, val[0], val[1]) - val[2]) ** 2))
                if entry["val_mse"] < best_val:
                    best_val, best_epoch, best_state = entry["val_mse"], epoch, net.state_dict()
            entry["seconds"] = time.perf_counter() - t0
            history.append(entry)
            if self.verbose:
                logger.info("%s epoch %d: %s", kind.value, epoch, entry)
        if best_state is not None:
            net.load_state_dict(best_state)
        self.network_ = net
        self.history_ = history
        self.best_epoch_ = best_epoch if best_epoch is not None else self.epochs - 1
        self.n_features_in_ = N_FEATURES
        return self

    @staticmethod
    def _predict_arrays(net, edf, E, batch=256):
        out = []
        with no_grad():
            for s in range(0, len(edf), batch):
                out.append(net(edf[s:s + batch], None if E is None else E[s:s + batch]).data)
        return np.concatenate(out)

    # -- inference ------------------------------------------------------
    def predict(self, X):
        check_fitted(self, "network_")
        edf, E = self.featurize(X)
        return self._predict_arrays(self.network_, edf, E)

    def attention_matrices(self, X):
        """Pre-encoder SCQC correlation matrices, ``(n, 7, 7)``."""
        check_fitted(self, "network_")
        if not self._kind().uses_scqc:
            raise ValueError(f"{self._kind().value} has no SCQC branch")
        edf, E = self.featurize(X)
        with no_grad():
            _, co = self.network_(edf, E, return_attention=True)
        return co

    # -- persistence ----------------------------------------------------
    def save(self, path, extra=None):
        """Write a ``.npz`` checkpoint (see README for the layout)."""
        check_fitted(self, "network_")
        params = {k: _json_safe(v) for k, v in self.get_params(deep=False).items() if k not in ("qdqe", "checker")}
        meta = {
            "format_version": CHECKPOINT_VERSION,
            "kind": self._kind().value,
            "params": params,
            "feature_stats": self.edf_.stats_.to_dict(),
            "embedding_width": self._width(),
            "best_epoch": self.best_epoch_,
            "extra": extra or {},
        }
        arrays = {f"model/{k}": v for k, v in self.network_.state_dict().items()}
        if self.qdqe is not None and self._kind() is ModelKind.DEEPQR:
            qp = {k: v for k, v in self.qdqe.get_params(deep=False).items()}
            meta["qdqe_params"] = qp
            arrays.update({f"qdqe/{k}": v for k, v in self.qdqe.get_state().items()})
        arrays["__meta__"] = np.array(json.dumps(meta, sort_keys=True))
        with open(path, "wb") as fh:
            np.savez(fh, **arrays)

    def _width(self):
        net = self.network_
        if hasattr(net, "sf"):
            return net.sf.width
        if hasattr(net, "scqc"):
            return net.scqc.d_em
        return 0

    @classmethod
    def load(cls, path, glove=None):
        with np.load(path, allow_pickle=False) as z:
            meta = json.loads(str(z["__meta__"]))
            if meta.get("format_version") != CHECKPOINT_VERSION:
                raise ValueError(f"unsupported checkpoint version {meta.get('format_version')}")
            model_state = {k[6:]: z[k] for k in z.files if k.startswith("model/")}
            qdqe_state = {k[5:]: z[k] for k in z.files if k.startswith("qdqe/")}
        params = dict(meta["params"])
        if glove is not None:
            params["glove"] = glove
        qdqe = None
        if qdqe_state:
            qdqe = QdqeEncoder.from_state(meta["qdqe_params"], qdqe_state)
        rater = cls(**params, qdqe=qdqe)
        rater.edf_ = rater._extractor()
        rater.edf_.stats_ = FeatureStats.from_dict(meta["feature_stats"])
        rater.edf_.n_features_in_ = N_FEATURES
        kind = ModelKind(meta["kind"])
        width = meta["embedding_width"] or 0
        qdqe_net = None
        if kind is ModelKind.DEEPQR and rater.qdqe_finetune:
            qdqe_net = QdqeNetwork(width, np.random.default_rng(0), heads=qdqe.heads, d_ff=qdqe.d_ff,
                                   dropout=qdqe.dropout)
        net = RatingNetwork(kind, width, np.random.default_rng(0), rater.d_scqc, rater.d_sf,
                            rater.scqc_d_ff, rater.sf_d_ff, rater.dropout, qdqe=qdqe_net,
                            scqc_pool=rater.scqc_pool)
        net.load_state_dict(model_state)
        rater.network_ = net
        rater.best_epoch_ = meta["best_epoch"]
        rater.n_features_in_ = N_FEATURES
        rater.checkpoint_meta_ = meta
        return rater
