import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from deepqr.data_io import SyntheticSpec, generate_synthetic
from deepqr.tensor import StepSchedule
from deepqr.training import (
    SplitSpec,
    TrainReport,
    classify_extremes,
    evaluate,
    rating_histogram,
    select_epoch,
    split_dataset,
    split_indices,
    split_sizes,
    train_model,
)
from extreme_fixture import LABELS, PREDICTIONS, brute_force


class TestSplits:
    @pytest.mark.parametrize("n,sizes", [(10, (8, 1, 1)), (100, (80, 10, 10)), (1000, (800, 100, 100)),
                                         (13, (10, 1, 2))])
    def test_sizes(self, n, sizes):
        assert split_sizes(n) == sizes
        assert tuple(len(p) for p in split_indices(n)) == sizes

    @given(st.integers(10, 3000))
    def test_partition(self, n):
        parts = split_indices(n)
        joined = np.concatenate(parts)
        assert len(joined) == n and set(joined.tolist()) == set(range(n))

    def test_deterministic(self):
        a, b = split_indices(50), split_indices(50)
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x, y)
        assert not np.array_equal(split_indices(50, SplitSpec(seed=1))[0], a[0])

    def test_split_dataset(self):
        ds = generate_synthetic(SyntheticSpec(n=20), seed=1)
        tr, va, te = split_dataset(ds)
        assert (len(tr), len(va), len(te)) == (16, 2, 2)
        assert not set(tr.ids) & set(te.ids)


class TestSchedule:
    def test_epoch_seven(self):
        assert StepSchedule().rate(7) == pytest.approx(4.9e-4, rel=1e-12)

    def test_exact_formula(self):
        s = StepSchedule()
        for e in range(60):
            assert s.rate(e) == 1e-3 * 0.7 ** (e // 3)


class TestEvaluate:
    def test_hand_example(self):
        assert evaluate([1, 2], [1, 3]) == (0.5, 0.5)

    def test_boundary_inclusive(self):
        assert evaluate([2.71], [2.50])[1] == 1.0
        assert evaluate([0.25], [0.0])[1] == 1.0
        assert evaluate([0.2500001], [0.0])[1] == 0.0

    def test_identity(self):
        assert evaluate([1.5, 3.2], [1.5, 3.2]) == (0.0, 1.0)

    def test_errors(self):
        with pytest.raises(ValueError):
            evaluate([1, 2], [1])
        with pytest.raises(ValueError):
            evaluate([], [])

    @given(st.lists(st.tuples(st.floats(0, 5), st.floats(0, 5)), min_size=1, max_size=30), st.randoms())
    def test_permutation_symmetric(self, pairs, rnd):
        shuffled = pairs[:]
        rnd.shuffle(shuffled)
        a = evaluate(*zip(*pairs))
        b = evaluate(*zip(*shuffled))
        assert a[1] == b[1] and a[0] == pytest.approx(b[0], rel=1e-12, abs=1e-15)


class TestExtremes:
    def test_perfect(self):
        y = np.array(LABELS)
        assert classify_extremes(y, y, y.mean(), y.std()) == (1.0, 1.0)

    def test_constant_predictor(self):
        y = np.array(LABELS)
        mu, sigma = y.mean(), y.std()
        _, high = classify_extremes(np.full(20, mu), y, mu, sigma)
        assert high == np.mean(y <= mu + sigma)

    def test_brute_force_fixture(self):
        mu, sigma, low, high = brute_force(PREDICTIONS, LABELS, LABELS)
        assert mu == pytest.approx(np.mean(LABELS)) and sigma == pytest.approx(np.std(LABELS))
        assert classify_extremes(PREDICTIONS, LABELS, mu, sigma) == (low, high)
        # the fixture exercises both classes and some disagreement
        assert 0 < low < 1 and 0 < high < 1

    def test_zero_sigma(self):
        with pytest.raises(ValueError):
            classify_extremes([1.0], [1.0], 1.0, 0.0)


class TestHistogram:
    def test_single_bin(self):
        counts, clamped = rating_histogram([2.6] * 5)
        assert counts[10] == 5 and counts.sum() == 5 and clamped == 0

    def test_clamped(self):
        counts, clamped = rating_histogram([5.3, 5.0, -0.2])
        assert counts[-1] == 2 and counts[0] == 1 and clamped == 2

    @given(st.lists(st.floats(-2, 7), max_size=50))
    def test_conservation(self, values):
        counts, _ = rating_histogram(values)
        assert len(counts) == 20 and counts.sum() == len(values)


class TestProtocol:
    def test_select_epoch_tie_break(self):
        assert select_epoch([0.5, 0.2, 0.2, 0.3]) == 1
        assert select_epoch([3.0, 2.0, 1.0]) == 2

    def test_run_and_report(self):
        ds = generate_synthetic(SyntheticSpec("length-linear", n=60), seed=9)
        _, rep, (tr, va, te) = train_model("edf-solo", ds, epochs=6)
        assert rep.split_sizes == (48, 6, 6)
        assert len(rep.epochs) == 6
        assert rep.selected_epoch == select_epoch([e["val_mse"] for e in rep.epochs])
        assert rep.config["epochs"] == 6 and rep.config["split_seed"] == 2021
        back = TrainReport.from_dict(json.loads(rep.to_json()))
        assert back.test_mse == rep.test_mse
        assert "test MSE" in rep.table()

    def test_reproducible(self):
        ds = generate_synthetic(SyntheticSpec("length-linear", n=40), seed=9)
        a = train_model("edf-solo", ds, epochs=3)[1]
        b = train_model("edf-solo", ds, epochs=3)[1]
        assert a.test_mse == b.test_mse
        assert [e["train_loss"] for e in a.epochs] == [e["train_loss"] for e in b.epochs]

    def test_too_small(self):
        ds = generate_synthetic(SyntheticSpec(n=5), seed=1)
        with pytest.raises(ValueError, match="too small"):
            train_model("edf-solo", ds)
