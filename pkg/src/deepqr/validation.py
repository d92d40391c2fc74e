"""Input checks shared by the estimators."""
from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_is_fitted


def check_records(X):
    """Coerce ``X`` to a list of validated ``McqRecord``.

    Accepts records, dicts in the JSONL schema, or a ``QualityDataset``.
    """
    from .data_io import McqRecord, QualityDataset

    if isinstance(X, QualityDataset):
        return list(X.records)
    if isinstance(X, (str, bytes)) or not hasattr(X, "__iter__"):
        raise TypeError(f"expected an iterable of questions, got {type(X).__name__}")
    out = []
    for item in X:
        if isinstance(item, McqRecord):
            out.append(item)
        elif isinstance(item, dict):
            out.append(McqRecord.from_dict(item))
        else:
            raise TypeError(f"cannot interpret {type(item).__name__} as a question record")
    if not out:
        raise ValueError("no questions given")
    return out


def check_targets(y, n):
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if y.shape[0] != n:
        raise ValueError(f"got {y.shape[0]} ratings for {n} questions")
    if not np.all(np.isfinite(y)):
        raise ValueError("ratings must be finite")
    return y


def check_embeddings(E, n_rows=7):
    E = np.asarray(E, dtype=np.float64)
    if E.ndim == 2:
        E = E[None]
    if E.ndim != 3 or E.shape[1] != n_rows:
        raise ValueError(f"expected component embeddings of shape (n, {n_rows}, d), got {E.shape}")
    return E


def check_fitted(estimator, attributes):
    check_is_fitted(estimator, attributes)
