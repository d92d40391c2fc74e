import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from deepqr.data_io import SyntheticSpec, generate_synthetic
from deepqr.embeddings import GloveEmbedder
from deepqr.qdqe import (
    QdqeEncoder,
    QdqeNetwork,
    TripleError,
    build_triples,
    extreme_sets,
    info_nce,
    train_qdqe,
)
from deepqr.tensor import Tensor, parameter
from deepqr.training import split_dataset
from gradcheck import check_gradients
from reference import ref_layer, ref_layer_norm


def brute_force_triples(ratings, ids, c, seed):
    ranked = sorted(range(len(ratings)), key=lambda i: (ratings[i], ids[i]))
    low, high = ranked[:c], ranked[-c:]
    rng = np.random.default_rng(seed)
    out = []
    for own, other in ((low, high), (high, low)):
        for i, j in itertools.permutations(range(c), 2):
            out.append((own[i], own[j], other[rng.integers(c)]))
    return out


def verify_membership(ts, c):
    low, high = set(ts.low.tolist()), set(ts.high.tolist())
    assert len(low) == len(high) == c and not low & high
    for a, p, n in zip(ts.anchor, ts.pos, ts.neg):
        assert a != p
        assert (a in low and p in low and n in high) or (a in high and p in high and n in low)
    # every ordered pair appears exactly once
    pairs = list(zip(ts.anchor.tolist(), ts.pos.tolist()))
    assert len(set(pairs)) == len(pairs)


class TestTriples:
    @pytest.mark.parametrize("c", [2, 5, 10, 80])
    def test_count_and_membership(self, c):
        rng = np.random.default_rng(c)
        ratings = rng.uniform(0, 5, size=2 * c + 7)
        ts = build_triples(ratings, c, np.random.default_rng(0))
        assert len(ts) == 2 * c * (c - 1)
        verify_membership(ts, c)

    def test_c80_count(self):
        ts = build_triples(np.arange(200.0), 80, np.random.default_rng(0))
        assert len(ts) == 12_640

    def test_brute_force_oracle(self):
        ratings = [3.1, 0.5, 4.9, 2.0, 0.5, 4.2, 1.7, 4.9, 2.8, 0.9]
        ids = [f"q{i}" for i in range(10)]
        ts = build_triples(ratings, 3, np.random.default_rng(11), ids=ids)
        got = list(zip(ts.anchor.tolist(), ts.pos.tolist(), ts.neg.tolist()))
        assert got == brute_force_triples(ratings, ids, 3, 11)

    def test_ties_broken_by_id(self):
        low, high = extreme_sets([1, 1, 1, 1, 5, 5, 5, 5, 3], 2, ids=["d", "c", "b", "a", "h", "g", "f", "e", "i"])
        assert sorted(low.tolist()) == [2, 3]
        assert sorted(high.tolist()) == [4, 5]

    def test_source_labels(self):
        ts = build_triples(np.arange(10.0), 3, np.random.default_rng(0))
        assert list(ts.source[:6]) == ["L"] * 6 and list(ts.source[6:]) == ["H"] * 6
        assert ts.as_ids("abcdefghij")[0][0] in "abc"

    @pytest.mark.parametrize("n,c", [(3, 1), (10, 5), (10, 1), (20, 12)])
    def test_invalid(self, n, c):
        with pytest.raises(TripleError):
            build_triples(np.arange(float(n)), c, np.random.default_rng(0))

    @given(st.integers(2, 12), st.integers(1, 20), st.integers(0, 10_000))
    def test_property(self, c, extra, seed):
        rng = np.random.default_rng(seed)
        ratings = rng.integers(0, 6, size=2 * c + extra).astype(float)
        ts = build_triples(ratings, c, rng)
        assert len(ts) == 2 * c * (c - 1)
        verify_membership(ts, c)


class TestInfoNce:
    def test_parity(self):
        a = Tensor([1.0, 0.0])
        assert abs(float(info_nce(a, Tensor([0.0, 1.0]), Tensor([0.0, -1.0])).data) - math.log(2)) < 1e-9

    def test_closed_form(self):
        a = Tensor([1.0, 0.0])
        loss = float(info_nce(a, Tensor([2.0, 0.0]), Tensor([-1.0, 0.0]), 0.07).data)
        assert loss == pytest.approx(math.log1p(math.exp(-2 / 0.07)), rel=1e-9)
        assert loss < 4e-13

    def test_strictly_decreasing_in_positive_similarity(self):
        a, neg = Tensor([1.0, 0.0]), Tensor([0.0, 1.0])
        angles = np.linspace(np.pi, 0, 25)
        losses = [float(info_nce(a, Tensor([np.cos(t), np.sin(t)]), neg).data) for t in angles]
        assert all(x > y for x, y in zip(losses, losses[1:]))
        assert all(x > 0 for x in losses)

    def test_zero_vector_similarity(self):
        loss = info_nce(Tensor([0.0, 0.0]), Tensor([1.0, 0.0]), Tensor([0.0, 1.0]))
        assert float(loss.data) == pytest.approx(math.log(2))

    def test_bad_tau(self):
        with pytest.raises(ValueError):
            info_nce(Tensor([1.0]), Tensor([1.0]), Tensor([1.0]), tau=0)

    def test_gradient(self, rng):
        a, p, n = (parameter(rng.normal(size=(3, 4))) for _ in range(3))
        errs = check_gradients(lambda: info_nce(a, p, n, 0.5).sum(), [a, p, n])
        assert max(errs.values()) < 1e-3


class TestNetwork:
    def test_shapes_and_determinism(self, rng):
        net = QdqeNetwork(8, rng)
        E = rng.normal(size=(3, 7, 8))
        assert net.encode_matrix(E).shape == (3, 7, 8)
        assert net(E).shape == (3, 8)
        np.testing.assert_array_equal(net(E).data, net(E).data)

    def test_zero_weights_reduce_to_layer_norm(self, rng):
        net = QdqeNetwork(8, rng)
        for name, p in net.named_parameters():
            if "norm" not in name:
                p.data = np.zeros(p.shape)
        x = rng.normal(size=(7, 8))
        one, zero = np.ones(8), np.zeros(8)
        expected = ref_layer_norm(ref_layer_norm(x, one, zero), one, zero)
        np.testing.assert_allclose(net.encode_matrix(x).data, expected, atol=1e-12)

    def test_reference(self, rng):
        net = QdqeNetwork(8, rng)
        x = rng.normal(size=(7, 8))
        state = {k.split(".", 1)[1]: v for k, v in net.state_dict().items()}
        np.testing.assert_allclose(net.encode_matrix(x).data, ref_layer(x, state, 4), atol=1e-10)

    def test_gradients(self, rng):
        net = QdqeNetwork(4, rng, d_ff=8)
        E = rng.normal(size=(3, 7, 4))
        errs = check_gradients(
            lambda: info_nce(*(net(Tensor(E[i])) for i in range(3)), tau=0.5),
            dict(net.named_parameters()), rng, max_entries=10,
        )
        assert max(errs.values()) < 1e-3, errs


@pytest.fixture(scope="module")
def vocab_split(toy_glove):
    ds = generate_synthetic(SyntheticSpec("vocabulary-split", n=150, noise=0.05), seed=5)
    return split_dataset(ds)


class TestEncoder:
    def test_learns_planted_split(self, vocab_split, toy_glove):
        train, val, test = vocab_split
        enc = train_qdqe(train, val, toy_glove, c=15, c_val=5, epochs=2)
        E = GloveEmbedder(toy_glove).transform(test)
        triples = build_triples(test.labels(), 5, np.random.default_rng(0))
        assert enc.triple_accuracy(E, triples) > 0.9
        assert enc.similarity_gap(E, triples) > 0.2
        assert enc.transform(E).shape == E.shape
        assert len(enc.history_) == 2 and "val_loss" in enc.history_[0]

    def test_same_seed_same_parameters(self, rng):
        E, y = rng.normal(size=(12, 7, 4)), rng.uniform(0, 5, 12)
        a = QdqeEncoder(c=3, epochs=2).fit(E, y).get_state()
        b = QdqeEncoder(c=3, epochs=2).fit(E, y).get_state()
        assert a.keys() == b.keys()
        for k in a:
            np.testing.assert_array_equal(a[k], b[k])

    def test_state_round_trip(self, rng):
        E, y = rng.normal(size=(12, 7, 4)), rng.uniform(0, 5, 12)
        enc = QdqeEncoder(c=3, epochs=1).fit(E, y)
        back = QdqeEncoder.from_state(enc.get_params(), enc.get_state())
        np.testing.assert_array_equal(back.transform(E), enc.transform(E))

    def test_fit_breaks_ties_by_id(self, rng):
        E = rng.normal(size=(9, 7, 4))
        y = np.array([1, 1, 1, 1, 5, 5, 5, 5, 3.0])
        ids = ["d", "c", "b", "a", "h", "g", "f", "e", "i"]
        enc = QdqeEncoder(c=2, epochs=1, seed=0).fit(E, y, ids=ids)
        expected = build_triples(y, 2, np.random.default_rng(0), ids=ids)
        assert set(enc.triples_.low.tolist()) == set(expected.low.tolist()) == {2, 3}

    def test_c_too_large(self, rng):
        with pytest.raises(TripleError, match="too small"):
            QdqeEncoder(c=6).fit(rng.normal(size=(12, 7, 4)), rng.uniform(0, 5, 12))

    def test_bad_embeddings(self, rng):
        with pytest.raises(ValueError):
            QdqeEncoder(c=2).fit(rng.normal(size=(12, 6, 4)), rng.uniform(0, 5, 12))
