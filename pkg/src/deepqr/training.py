"""Experimental protocol: splits, training runs, metrics and rating analyses."""
from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .models import ModelKind, QuestionRater

ACC_TOLERANCE = 0.25
HIST_BIN_WIDTH = 0.25


@dataclass
class SplitSpec:
    ratios: tuple = (8, 1, 1)
    seed: int = 2021


def split_sizes(n, ratios=(8, 1, 1)):
    total = sum(ratios)
    n_train = (n * ratios[0]) // total
    n_val = (n * ratios[1]) // total
    return n_train, n_val, n - n_train - n_val


def split_indices(n, spec=None):
    spec = spec or SplitSpec()
    perm = np.random.default_rng(spec.seed).permutation(n)
    n_train, n_val, _ = split_sizes(n, spec.ratios)
    return perm[:n_train], perm[n_train:n_train + n_val], perm[n_train + n_val:]


def split_dataset(dataset, spec=None):
    """Shuffle with the split seed and cut 8:1:1 (floor, floor, remainder)."""
    tr, va, te = split_indices(len(dataset), spec)
    return dataset.subset(tr), dataset.subset(va), dataset.subset(te)


def evaluate(predictions, labels, tolerance=ACC_TOLERANCE):
    """Return ``(mse, acc)``; a prediction within ``tolerance`` (inclusive) is correct."""
    p = np.asarray(predictions, dtype=np.float64).reshape(-1)
    y = np.asarray(labels, dtype=np.float64).reshape(-1)
    if p.shape != y.shape:
        raise ValueError(f"{len(p)} predictions for {len(y)} labels")
    if len(p) == 0:
        raise ValueError("cannot evaluate zero predictions")
    err = p - y
    return float(np.mean(err * err)), float(np.mean(np.abs(err) <= tolerance))


def classify_extremes(predictions, labels, mu, sigma):
    """Accuracy of high/not-high and low/not-low classification.

    A rating is high if above ``mu + sigma`` and low if below
    ``mu - sigma``; predictions are classified by the same thresholds.
    Returns ``(low_accuracy, high_accuracy)``.
    """
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    p = np.asarray(predictions, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if p.shape != y.shape or p.size == 0:
        raise ValueError("predictions and labels must be non-empty and of equal length")
    hi, lo = mu + sigma, mu - sigma
    low_acc = np.mean((p < lo) == (y < lo))
    high_acc = np.mean((p > hi) == (y > hi))
    return float(low_acc), float(high_acc)


def rating_histogram(values, width=HIST_BIN_WIDTH, lo=0.0, hi=5.0):
    """Counts over ``[lo, hi]`` in bins of ``width``; out-of-range values are clamped.

    Returns ``(counts, n_clamped)``. The last bin is closed on the right.
    """
    v = np.asarray(values, dtype=np.float64).reshape(-1)
    n_bins = int(round((hi - lo) / width))
    clamped = int(np.sum((v < lo) | (v > hi)))
    idx = np.floor((np.clip(v, lo, hi) - lo) / width).astype(int)
    idx = np.clip(idx, 0, n_bins - 1)
    return np.bincount(idx, minlength=n_bins), clamped


@dataclass
class TrainReport:
    model: str
    epochs: list
    selected_epoch: int
    test_mse: float
    test_acc: float
    low_accuracy: float | None = None
    high_accuracy: float | None = None
    dataset_mean: float | None = None
    dataset_std: float | None = None
    split_sizes: tuple = ()
    config: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    def table(self):
        lines = [f"model: {self.model}   selected epoch: {self.selected_epoch}",
                 f"{'epoch':>5} {'lr':>10} {'train_loss':>12} {'val_mse':>10} {'sec':>7}"]
        for e in self.epochs:
            lines.append(
                f"{e['epoch']:>5} {e['lr']:>10.3e} {e['train_loss']:>12.5f} "
                f"{e.get('val_mse', float('nan')):>10.5f} {e.get('seconds', 0.0):>7.2f}"
            )
        lines.append(f"test MSE {self.test_mse:.5f}   test ACC {100 * self.test_acc:.2f}%")
        if self.low_accuracy is not None:
            lines.append(f"low-quality acc {100 * self.low_accuracy:.2f}%   "
                         f"high-quality acc {100 * self.high_accuracy:.2f}%")
        return "\n".join(lines)


def select_epoch(val_mse):
    """Index of the minimum validation MSE, earliest on ties."""
    return int(np.argmin(np.asarray(val_mse)))


def train_model(kind, dataset, glove=None, qdqe=None, split=None, **hyper):
    """Full protocol on one (already filtered) dataset.

    Splits 8:1:1, trains with validation-based epoch selection, and scores
    the test split. Returns ``(rater, report, splits)``.
    """
    kind = ModelKind(kind)
    split = split or SplitSpec()
    train, val, test = split_dataset(dataset, split)
    if len(train) == 0 or len(val) == 0 or len(test) == 0:
        raise ValueError(f"dataset of {len(dataset)} questions is too small for an 8:1:1 split")
    rater = QuestionRater(kind=kind.value, glove=glove, qdqe=qdqe, **hyper)
    t0 = time.perf_counter()
    rater.fit(train.records, train.labels(), validation_data=(val.records, val.labels()))
    fit_seconds = time.perf_counter() - t0
    report = score_report(rater, dataset, test)
    report.split_sizes = (len(train), len(val), len(test))
    report.config = {"split_seed": split.seed, "fit_seconds": fit_seconds,
                     **{k: v for k, v in rater.get_params(deep=False).items() if k not in ("qdqe", "checker", "glove")}}
    return rater, report, (train, val, test)


def score_report(rater, dataset, test):
    preds = rater.predict(test.records)
    labels = test.labels()
    mse, acc = evaluate(preds, labels)
    all_labels = dataset.labels()
    mu, sigma = float(all_labels.mean()), float(all_labels.std())
    low = high = None
    if sigma > 0:
        low, high = classify_extremes(preds, labels, mu, sigma)
    return TrainReport(
        model=rater.kind if isinstance(rater.kind, str) else ModelKind(rater.kind).value,
        epochs=list(getattr(rater, "history_", [])),
        selected_epoch=int(rater.best_epoch_),
        test_mse=mse,
        test_acc=acc,
        low_accuracy=low,
        high_accuracy=high,
        dataset_mean=mu,
        dataset_std=sigma,
    )
