import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from deepqr.data_io import (
    DataError,
    McqRecord,
    QualityDataset,
    SyntheticSpec,
    filter_and_label,
    generate_synthetic,
    load_jsonl,
    save_jsonl,
    toy_vocabulary,
    write_toy_glove,
)
from deepqr.embeddings import load_glove
from deepqr.text_features import words


def rec(**kw):
    base = dict(id="q1", stem="What?", answer="This", distractors=["That"], explanation="")
    base.update(kw)
    return base


class TestRecord:
    def test_components_padded(self):
        r = McqRecord.from_dict(rec(distractors=["a", "b"]))
        assert r.components() == ["What?", "This", "a", "b", "", "", ""]

    def test_label_from_ratings(self):
        r = McqRecord.from_dict(rec(ratings=[3, 4, 2]))
        assert r.label == 3.0 and r.rating_count == 3

    @pytest.mark.parametrize("bad,msg", [
        (dict(answer=""), "answer"),
        (dict(distractors=[]), "1-4"),
        (dict(distractors=["a"] * 5), "1-4"),
        (dict(distractors=["", " "]), "non-empty"),
        (dict(ratings=[3, 6]), "0..5"),
        (dict(ratings=[3.5]), "0..5"),
        (dict(average_rating=5.5), "outside"),
        (dict(ratings=[1, 2], average_rating=2.0), "disagrees"),
        (dict(colour="red"), "unknown"),
    ])
    def test_schema_violations(self, bad, msg):
        with pytest.raises(DataError, match=msg):
            McqRecord.from_dict(rec(**bad))

    def test_missing_field(self):
        d = rec()
        del d["answer"]
        with pytest.raises(DataError, match="answer"):
            McqRecord.from_dict(d)

    def test_duplicate_ids(self):
        r = McqRecord.from_dict(rec())
        with pytest.raises(DataError, match="duplicate"):
            QualityDataset("c", [r, r])


class TestJsonl:
    def test_round_trip(self, tmp_path, sample_mcq):
        ds = QualityDataset("m", [sample_mcq, McqRecord.from_dict(rec(id="b", ratings=[5, 5]))])
        p = tmp_path / "d.jsonl"
        save_jsonl(ds, p)
        back = load_jsonl(p)
        assert [r.to_dict() for r in back] == [r.to_dict() for r in ds]
        save_jsonl(back, tmp_path / "e.jsonl")
        assert (tmp_path / "e.jsonl").read_bytes() == p.read_bytes()

    def test_strict_names_line(self, tmp_path):
        p = tmp_path / "d.jsonl"
        p.write_text(json.dumps(rec()) + "\n{broken\n")
        with pytest.raises(DataError, match=r"d.jsonl:2"):
            load_jsonl(p)

    def test_lenient_collects(self, tmp_path):
        p = tmp_path / "d.jsonl"
        lines = [json.dumps(rec()), json.dumps(rec(id="q2", answer="")), "", json.dumps(rec(id="q1"))]
        p.write_text("\n".join(lines) + "\n")
        ds = load_jsonl(p, strict=False)
        assert len(ds) == 1
        assert [e[0] for e in ds.errors] == [2, 4]

    def test_unlabelled(self, tmp_path):
        ds = QualityDataset("c", [McqRecord.from_dict(rec())])
        with pytest.raises(DataError, match="unlabelled"):
            ds.labels()


@st.composite
def records(draw):
    n = draw(st.integers(1, 8))
    out = []
    for i in range(n):
        ratings = draw(st.lists(st.integers(0, 5), min_size=0, max_size=15))
        out.append(McqRecord(
            id=f"q{i}", stem=draw(st.text(max_size=20)), answer=draw(st.text(min_size=1, max_size=10).filter(str.strip)),
            distractors=["x"] + draw(st.lists(st.text(max_size=5), max_size=3)),
            ratings=ratings or None,
        ))
    return QualityDataset("h", out)


@settings(max_examples=40, deadline=None)
@given(records())
def test_round_trip_property(tmp_path_factory, ds):
    p = tmp_path_factory.mktemp("rt") / "d.jsonl"
    save_jsonl(ds, p)
    assert [r.to_dict() for r in load_jsonl(p)] == [r.to_dict() for r in ds]


@settings(max_examples=40, deadline=None)
@given(records())
def test_filter_idempotent(ds):
    try:
        once = filter_and_label(ds, min_ratings=5)
    except DataError:
        return
    twice = filter_and_label(once, min_ratings=5)
    assert [r.to_dict() for r in once] == [r.to_dict() for r in twice]
    assert all(r.rating_count >= 5 for r in once)


def test_filter_empty():
    ds = QualityDataset("c", [McqRecord.from_dict(rec(ratings=[1, 2]))])
    with pytest.raises(DataError, match="empty dataset"):
        filter_and_label(ds)


def test_filter_uses_rating_mean():
    ds = QualityDataset("c", [McqRecord.from_dict(rec(ratings=[4] * 9 + [5]))])
    assert filter_and_label(ds).labels().tolist() == [4.1]


class TestSynthetic:
    def test_length_linear_rule(self):
        ds = generate_synthetic(SyntheticSpec("length-linear", n=30), seed=1)
        for r in ds:
            assert r.label == pytest.approx(min(5.0, 3 + 0.01 * len(words(r.stem))), abs=1e-12)

    def test_same_seed_identical(self):
        a = generate_synthetic(SyntheticSpec("correlation", n=20, noise=0.1), seed=4)
        b = generate_synthetic(SyntheticSpec("correlation", n=20, noise=0.1), seed=4)
        assert [r.to_dict() for r in a] == [r.to_dict() for r in b]

    def test_vocabulary_pools_disjoint(self):
        ds = generate_synthetic(SyntheticSpec("vocabulary-split", n=60), seed=2)
        high = {w.lower() for r in ds if r.label > 2.5 for c in r.components() for w in words(c)}
        low = {w.lower() for r in ds if r.label <= 2.5 for c in r.components() for w in words(c)}
        assert high and low and not high & low

    def test_correlation_increases_with_overlap(self):
        ds = generate_synthetic(SyntheticSpec("correlation", n=200), seed=3)
        topic_of = {w: t for t, ws in toy_vocabulary().items() for w in ws}
        overlap = [sum(topic_of[w] == topic_of[r.answer.split()[0]] for w in r.distractors[0].split())
                   for r in ds]
        assert np.corrcoef(overlap, ds.labels())[0, 1] > 0.8

    @pytest.mark.parametrize("signal", ["length-linear", "correlation", "vocabulary-split"])
    def test_labels_in_range(self, signal):
        ds = generate_synthetic(SyntheticSpec(signal, n=100, noise=1.0), seed=0)
        y = ds.labels()
        assert y.min() >= 0 and y.max() <= 5
        assert all(r.rating_count >= 10 for r in ds)

    def test_unknown_signal(self):
        with pytest.raises(ValueError, match="unknown signal"):
            generate_synthetic(SyntheticSpec("sentiment"))

    def test_toy_glove_file(self, tmp_path):
        p = tmp_path / "toy.txt"
        write_toy_glove(p, dim=8)
        t = load_glove(p)
        assert t.dim == 8 and len(t) == sum(len(ws) for ws in toy_vocabulary().values())
