"""Question records, JSONL interchange, rating filters and synthetic data.

JSONL schema, one object per line::

    {"id": "q1", "stem": "...", "answer": "...",
     "distractors": ["...", "..."], "explanation": "...",
     "ratings": [3, 4, 2, ...]            # or
     "average_rating": 2.71, "rating_count": 75}

``distractors`` holds 1 to 4 strings. Either ``ratings`` (integers 0..5)
or ``average_rating`` (real in [0, 5]) must be present for labelled data;
unlabelled files (for prediction) may omit both.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)

COMPONENTS = ("S", "A", "D1", "D2", "D3", "D4", "E")


class DataError(ValueError):
    """A record or file violates the dataset schema."""


@dataclass
class McqRecord:
    id: str
    stem: str
    answer: str
    distractors: list = field(default_factory=list)
    explanation: str = ""
    ratings: list | None = None
    average_rating: float | None = None
    rating_count: int | None = None

    def __post_init__(self):
        self.id = str(self.id)
        self.distractors = list(self.distractors or [])
        if self.ratings is not None:
            self.ratings = list(self.ratings)
            if self.rating_count is None:
                self.rating_count = len(self.ratings)
        self.validate()

    def validate(self):
        if not isinstance(self.answer, str) or not self.answer.strip():
            raise DataError(f"question {self.id}: answer is required")
        if not 1 <= len(self.distractors) <= 4:
            raise DataError(f"question {self.id}: expected 1-4 distractors, got {len(self.distractors)}")
        if not any(isinstance(d, str) and d.strip() for d in self.distractors):
            raise DataError(f"question {self.id}: at least one non-empty distractor is required")
        for name in ("stem", "explanation"):
            if not isinstance(getattr(self, name), str):
                raise DataError(f"question {self.id}: {name} must be a string")
        if self.ratings is not None:
            for r in self.ratings:
                if isinstance(r, bool) or not isinstance(r, (int, np.integer)) or not 0 <= r <= 5:
                    raise DataError(f"question {self.id}: rating {r!r} is not an integer in 0..5")
            if self.rating_count != len(self.ratings):
                raise DataError(f"question {self.id}: rating_count disagrees with ratings list")
        if self.average_rating is not None:
            a = float(self.average_rating)
            if not (math.isfinite(a) and 0 <= a <= 5):
                raise DataError(f"question {self.id}: average_rating {a} outside [0, 5]")
            if self.ratings and abs(a - float(np.mean(self.ratings))) > 1e-9:
                raise DataError(f"question {self.id}: average_rating disagrees with ratings")
        if self.rating_count is not None and self.rating_count < 0:
            raise DataError(f"question {self.id}: negative rating_count")

    def components(self):
        """The 7 component texts in order S, A, D1..D4, E (absent -> "")."""
        ds = [d or "" for d in self.distractors] + [""] * (4 - len(self.distractors))
        return [self.stem or "", self.answer] + ds + [self.explanation or ""]

    @property
    def label(self):
        if self.average_rating is not None:
            return float(self.average_rating)
        if self.ratings:
            return float(np.mean(self.ratings))
        return None

    def to_dict(self):
        d = {
            "id": self.id,
            "stem": self.stem,
            "answer": self.answer,
            "distractors": list(self.distractors),
            "explanation": self.explanation,
        }
        if self.ratings is not None:
            d["ratings"] = [int(r) for r in self.ratings]
        if self.average_rating is not None:
            d["average_rating"] = float(self.average_rating)
        if self.rating_count is not None:
            d["rating_count"] = int(self.rating_count)
        return d

    @classmethod
    def from_dict(cls, d):
        missing = [k for k in ("id", "answer", "distractors") if k not in d]
        if missing:
            raise DataError(f"missing mandatory field(s): {', '.join(missing)}")
        unknown = set(d) - {
            "id", "stem", "answer", "distractors", "explanation",
            "ratings", "average_rating", "rating_count",
        }
        if unknown:
            raise DataError(f"unknown field(s): {', '.join(sorted(unknown))}")
        return cls(
            id=d["id"],
            stem=d.get("stem", ""),
            answer=d["answer"],
            distractors=d["distractors"],
            explanation=d.get("explanation", ""),
            ratings=d.get("ratings"),
            average_rating=d.get("average_rating"),
            rating_count=d.get("rating_count"),
        )


@dataclass
class QualityDataset:
    course: str
    records: list
    provenance: str = ""
    errors: list = field(default_factory=list)

    def __post_init__(self):
        seen = set()
        for r in self.records:
            if r.id in seen:
                raise DataError(f"duplicate question id {r.id!r}")
            seen.add(r.id)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __getitem__(self, i):
        return self.records[i]

    @property
    def ids(self):
        return [r.id for r in self.records]

    def labels(self):
        out = [r.label for r in self.records]
        if any(v is None for v in out):
            raise DataError("dataset contains unlabelled questions")
        return np.array(out, dtype=np.float64)

    def subset(self, indices, course=None):
        return QualityDataset(course or self.course, [self.records[i] for i in indices], self.provenance)


def load_jsonl(path, strict=True, course=None):
    """Read a JSONL file of questions.

    In strict mode the first bad line raises ``DataError`` naming the line.
    Otherwise bad lines are skipped, logged, and listed in ``.errors`` as
    ``(line_number, message)``.
    """
    path = Path(path)
    records, errors, seen = [], [], set()
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = McqRecord.from_dict(json.loads(line))
                if rec.id in seen:
                    raise DataError(f"duplicate question id {rec.id!r}")
            except (json.JSONDecodeError, DataError, TypeError, ValueError) as exc:
                msg = f"{path}:{lineno}: {exc}"
                if strict:
                    raise DataError(msg) from exc
                logger.warning("skipping %s", msg)
                errors.append((lineno, str(exc)))
                continue
            seen.add(rec.id)
            records.append(rec)
    ds = QualityDataset(course or path.stem, records, provenance=str(path))
    ds.errors = errors
    return ds


def save_jsonl(dataset, path):
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for rec in dataset.records:
            fh.write(json.dumps(rec.to_dict(), ensure_ascii=False) + "\n")


def filter_and_label(dataset, min_ratings=10):
    """Drop questions with fewer than ``min_ratings`` ratings and fix labels.

    The label is the mean of the rating list when present, otherwise the
    supplied average. Raises ``DataError`` if nothing survives.
    """
    kept = []
    for r in dataset.records:
        count = r.rating_count if r.rating_count is not None else 0
        if count < min_ratings or r.label is None:
            continue
        kept.append(McqRecord(
            id=r.id, stem=r.stem, answer=r.answer, distractors=list(r.distractors),
            explanation=r.explanation, ratings=r.ratings, average_rating=r.label,
            rating_count=r.rating_count,
        ))
    if not kept:
        raise DataError(f"empty dataset: no question has at least {min_ratings} ratings")
    return QualityDataset(dataset.course, kept, dataset.provenance)


# -- synthetic data -----------------------------------------------------

SIGNALS = ("length-linear", "correlation", "vocabulary-split")


def toy_vocabulary():
    """Topic name -> list of words, from the bundled vocabulary file."""
    text = resources.files("deepqr.resources").joinpath("toy_vocab.txt").read_text(encoding="utf-8")
    topics = {}
    for line in text.splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        name, ws = line.split(":", 1)
        topics[name.strip()] = ws.split()
    return topics


def toy_word_vectors(dim=16, seed=0):
    """Deterministic clustered vectors for the toy vocabulary.

    Each word is its topic centroid plus smaller word-specific noise, so
    words of one topic have high cosine similarity.
    """
    rng = np.random.default_rng(seed)
    table = {}
    for topic, ws in toy_vocabulary().items():
        centroid = rng.normal(0.0, 1.0, dim)
        for w in ws:
            table[w] = centroid + rng.normal(0.0, 0.5, dim)
    return table


def write_toy_glove(path, dim=16, seed=0):
    vectors = toy_word_vectors(dim, seed)
    with open(path, "w", encoding="utf-8") as fh:
        for w, v in vectors.items():
            fh.write(w + " " + " ".join(f"{x:.6f}" for x in v) + "\n")


@dataclass
class SyntheticSpec:
    """Planted-signal settings.

    * ``length-linear``: rating = a + b * (stem word count)
    * ``correlation``: rating = a + b * cosine(mean vector of answer,
      mean vector of distractor 1) under the toy word vectors
    * ``vocabulary-split``: a fraction ``high_fraction`` of questions draw
      all words from one half of the topics and are rated around ``a + b``;
      the rest use the other half and are rated around ``a``

    Gaussian noise with standard deviation ``noise`` is added and the
    result clipped to [0, 5].
    """

    signal: str = "length-linear"
    n: int = 200
    noise: float = 0.0
    a: float | None = None
    b: float | None = None
    high_fraction: float = 0.5
    spread: float = 0.15
    embed_dim: int = 16
    embed_seed: int = 0
    course: str = "synthetic"

    def coefficients(self):
        defaults = {"length-linear": (3.0, 0.01), "correlation": (0.5, 4.0), "vocabulary-split": (1.0, 3.0)}
        a0, b0 = defaults[self.signal]
        return (a0 if self.a is None else self.a), (b0 if self.b is None else self.b)


def _sentence(rng, pool, n_words):
    ws = list(rng.choice(pool, size=n_words))
    return " ".join(ws).capitalize() + "."


def _text(rng, pool, n_words, max_sentence=12):
    out, left = [], n_words
    while left > 0:
        k = int(min(left, rng.integers(5, max_sentence + 1)))
        out.append(_sentence(rng, pool, k))
        left -= k
    return " ".join(out)


def _phrase(rng, pool, n_words):
    return " ".join(rng.choice(pool, size=n_words))


def _mean_vector(text, vectors):
    vs = [vectors[w] for w in text.lower().split() if w in vectors]
    return np.mean(vs, axis=0)


def _cos(u, v):
    return float(u @ v / (np.linalg.norm(u) * np.linalg.norm(v)))


def generate_synthetic(spec: SyntheticSpec, seed=2021):
    if spec.signal not in SIGNALS:
        raise ValueError(f"unknown signal {spec.signal!r}; choose from {', '.join(SIGNALS)}")
    rng = np.random.default_rng(seed)
    topics = toy_vocabulary()
    names = list(topics)
    all_words = [w for ws in topics.values() for w in ws]
    a, b = spec.coefficients()
    vectors = toy_word_vectors(spec.embed_dim, spec.embed_seed) if spec.signal == "correlation" else None
    half = len(names) // 2
    pools = {
        "low": [w for t in names[:half] for w in topics[t]],
        "high": [w for t in names[half:] for w in topics[t]],
    }

    records = []
    for i in range(spec.n):
        n_distr = int(rng.integers(2, 5))
        if spec.signal == "length-linear":
            n_stem = int(rng.integers(5, 201))
            stem = _text(rng, all_words, n_stem)
            answer = _phrase(rng, all_words, int(rng.integers(1, 4)))
            distr = [_phrase(rng, all_words, int(rng.integers(1, 5))) for _ in range(n_distr)]
            expl = _text(rng, all_words, int(rng.integers(5, 30)))
            base = a + b * n_stem
        elif spec.signal == "correlation":
            topic = names[int(rng.integers(len(names)))]
            others = [w for t in names if t != topic for w in topics[t]]
            stem = _text(rng, all_words, int(rng.integers(15, 40)))
            answer = _phrase(rng, topics[topic], 4)
            k = int(rng.integers(0, 5))
            d1 = list(rng.choice(topics[topic], size=k)) + list(rng.choice(others, size=4 - k))
            distr = [" ".join(rng.permutation(d1))]
            distr += [_phrase(rng, all_words, 4) for _ in range(n_distr - 1)]
            expl = _text(rng, all_words, int(rng.integers(8, 20)))
            base = a + b * _cos(_mean_vector(answer, vectors), _mean_vector(distr[0], vectors))
        else:
            side = "high" if rng.random() < spec.high_fraction else "low"
            pool = pools[side]
            stem = _text(rng, pool, int(rng.integers(15, 40)))
            answer = _phrase(rng, pool, int(rng.integers(1, 4)))
            distr = [_phrase(rng, pool, int(rng.integers(1, 5))) for _ in range(n_distr)]
            expl = _text(rng, pool, int(rng.integers(8, 20)))
            base = (a + b if side == "high" else a) + rng.normal(0.0, spec.spread)
        rating = base + (rng.normal(0.0, spec.noise) if spec.noise > 0 else 0.0)
        rating = float(np.clip(rating, 0.0, 5.0))
        records.append(McqRecord(
            id=f"q{i:05d}", stem=stem, answer=answer, distractors=distr, explanation=expl,
            average_rating=rating, rating_count=int(rng.integers(10, 120)),
        ))
    return QualityDataset(spec.course, records, provenance=f"synthetic:{spec.signal}:seed={seed}")
