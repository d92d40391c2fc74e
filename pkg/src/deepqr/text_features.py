"""Explicitly-defined features (EDF) of a multiple-choice question.

The feature vector has 18 entries in a fixed order::

    n_op, words_stem, words_answer, words_d1..words_d4, words_explanation,
    grammar_error_rate, flesch_reading_ease, flesch_kincaid, fog,
    coleman_liau, linsear_write, ari, spache, dale_chall, smog

Grammar and readability are computed once per question, on the full text
(all components joined as sentences).
"""
from __future__ import annotations

import logging
import math
import re
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .validation import check_fitted, check_records

logger = logging.getLogger(__name__)

READABILITY_NAMES = (
    "flesch_reading_ease",
    "flesch_kincaid",
    "fog",
    "coleman_liau",
    "linsear_write",
    "ari",
    "spache",
    "dale_chall",
    "smog",
)
FEATURE_NAMES = (
    "n_op",
    "words_stem",
    "words_answer",
    "words_d1",
    "words_d2",
    "words_d3",
    "words_d4",
    "words_explanation",
    "grammar_error_rate",
) + READABILITY_NAMES
N_FEATURES = len(FEATURE_NAMES)

_WORD_RE = re.compile(r"[^\W_]+(?:['’\-][^\W_]+)*")
_SENTENCE_END_RE = re.compile(r"[.!?]+(?=\s|$)")
_VOWEL_GROUP_RE = re.compile(r"[aeiouy]+")


def words(text):
    return _WORD_RE.findall(text or "")


def sentences(text):
    """Split on runs of ``.!?`` followed by whitespace or end of text.

    Segments without any word are dropped. Abbreviations such as "Mr."
    end a sentence.
    """
    out = []
    start = 0
    text = text or ""
    for m in _SENTENCE_END_RE.finditer(text):
        out.append(text[start : m.end()])
        start = m.end()
    out.append(text[start:])
    return [s.strip() for s in out if _WORD_RE.search(s)]


def tokenize(text):
    """Return ``(words, sentences)`` for ``text``."""
    return words(text), sentences(text)


def count_syllables(word):
    if not word:
        raise ValueError("cannot count syllables of an empty word")
    w = word.lower()
    n = len(_VOWEL_GROUP_RE.findall(w))
    if w.endswith("e") and n > 1:
        n -= 1
    return max(n, 1)


# -- grammar ------------------------------------------------------------


class GrammarCheckError(RuntimeError):
    """A grammar checker failed; carries the checker's message."""


class GrammarChecker:
    """Interface: ``count_errors(text) -> int``."""

    def count_errors(self, text):
        raise NotImplementedError


_BRACKETS = (("(", ")"), ("[", "]"), ("{", "}"))


class HeuristicGrammarChecker(GrammarChecker):
    """Deterministic stand-in for a full grammar checker.

    Flags three things: a sentence whose first letter is lowercase, a word
    immediately repeated (case-insensitive), and each bracket pair or
    double-quote that is unbalanced.
    """

    def count_errors(self, text):
        errors = 0
        for sent in sentences(text):
            first = next((ch for ch in sent if ch.isalpha()), None)
            if first is not None and first.islower():
                errors += 1
        toks = [w.lower() for w in words(text)]
        errors += sum(1 for a, b in zip(toks, toks[1:]) if a == b)
        for opening, closing in _BRACKETS:
            if text.count(opening) != text.count(closing):
                errors += 1
        if text.count('"') % 2:
            errors += 1
        return errors


def grammar_error_rate(text, checker=None):
    """Grammar errors per 100 words."""
    checker = checker or HeuristicGrammarChecker()
    try:
        n_err = checker.count_errors(text or "")
    except GrammarCheckError:
        raise
    except Exception as exc:
        raise GrammarCheckError(f"{type(checker).__name__} failed: {exc}") from exc
    return 100.0 * n_err / max(1, len(words(text)))


# -- readability --------------------------------------------------------


@lru_cache(maxsize=None)
def _read_word_list(path):
    if path is None:
        return None
    with open(path, encoding="utf-8") as fh:
        return frozenset(line.strip().lower() for line in fh if line.strip())


@lru_cache(maxsize=None)
def _bundled_word_list(name):
    text = resources.files("deepqr.resources").joinpath(name).read_text(encoding="utf-8")
    return frozenset(line.strip().lower() for line in text.splitlines() if line.strip())


def easy_words(kind, path=None):
    """Easy-word set for ``kind`` in {"spache", "dale_chall"}; ``path`` overrides."""
    if path is not None:
        return _read_word_list(str(Path(path)))
    return _bundled_word_list(f"{kind}_easy.txt")


@dataclass(frozen=True)
class TextCounts:
    words: int
    sentences: int
    syllables: int
    letters: int
    polysyllables: int
    unfamiliar_spache: int
    unfamiliar_dale_chall: int


def text_counts(text, spache_words=None, dale_chall_words=None):
    ws, ss = tokenize(text)
    spache_words = spache_words or easy_words("spache")
    dale_chall_words = dale_chall_words or easy_words("dale_chall")
    syl = [count_syllables(w) for w in ws]
    lower = [w.lower() for w in ws]
    return TextCounts(
        words=len(ws),
        sentences=len(ss),
        syllables=sum(syl),
        letters=sum(ch.isalnum() for w in ws for ch in w),
        polysyllables=sum(s >= 3 for s in syl),
        unfamiliar_spache=sum(w not in spache_words for w in lower),
        unfamiliar_dale_chall=sum(w not in dale_chall_words for w in lower),
    )


def readability_from_counts(c: TextCounts):
    """The nine indices from raw counts. Zero words gives all zeros."""
    if c.words == 0:
        return np.zeros(9)
    W, S = c.words, max(c.sentences, 1)
    wps = W / S
    spw = c.syllables / W
    poly_pct = 100.0 * c.polysyllables / W

    flesch = 206.835 - 1.015 * wps - 84.6 * spw
    kincaid = 0.39 * wps + 11.8 * spw - 15.59
    fog = 0.4 * (wps + poly_pct)
    coleman = 0.0588 * (100.0 * c.letters / W) - 0.296 * (100.0 * S / W) - 15.8
    # Linsear Write over the whole text: easy words score 1, hard words 3
    lw = ((W - c.polysyllables) + 3 * c.polysyllables) / S
    linsear = lw / 2 if lw > 20 else (lw - 2) / 2
    ari = 4.71 * (c.letters / W) + 0.5 * wps - 21.43
    spache = 0.121 * wps + 0.082 * (100.0 * c.unfamiliar_spache / W) + 0.659
    difficult_pct = 100.0 * c.unfamiliar_dale_chall / W
    dale = 0.1579 * difficult_pct + 0.0496 * wps
    if difficult_pct > 5:
        dale += 3.6365
    smog = 1.0430 * math.sqrt(c.polysyllables * 30.0 / S) + 3.1291
    return np.array([flesch, kincaid, fog, coleman, linsear, ari, spache, dale, smog])


def readability_indices(text, spache_path=None, dale_chall_path=None):
    counts = text_counts(
        text, easy_words("spache", spache_path), easy_words("dale_chall", dale_chall_path)
    )
    return readability_from_counts(counts)


# -- feature vector -----------------------------------------------------


def question_text(mcq):
    """Join all non-empty components, each closed as a sentence."""
    parts = []
    for comp in mcq.components():
        piece = comp.strip()
        if not piece:
            continue
        if not piece.endswith((".", "!", "?")):
            piece += "."
        parts.append(piece)
    return " ".join(parts)


def extract_edf(mcq, checker=None, spache_path=None, dale_chall_path=None, on_checker_error="raise"):
    """Raw 18-entry EDF vector of one question."""
    comps = mcq.components()
    n_op = 1 + sum(1 for d in comps[2:6] if d.strip())
    counts = [len(words(c)) for c in comps]
    text = question_text(mcq)
    try:
        gamma = grammar_error_rate(text, checker)
    except GrammarCheckError as exc:
        if on_checker_error != "zero":
            raise
        logger.warning("grammar check failed for %s, using 0: %s", mcq.id, exc)
        gamma = 0.0
    rd = readability_indices(text, spache_path, dale_chall_path)
    return np.concatenate([[n_op], counts, [gamma], rd]).astype(np.float64)


@dataclass
class FeatureStats:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, matrix):
        matrix = np.asarray(matrix, dtype=np.float64)
        if matrix.ndim != 2 or matrix.shape[0] == 0:
            raise ValueError("feature statistics need a non-empty 2-d matrix")
        std = matrix.std(axis=0)
        std = np.where(std < 1e-12, 1.0, std)
        return cls(matrix.mean(axis=0), std)

    def to_dict(self):
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["mean"], dtype=np.float64), np.asarray(d["std"], dtype=np.float64))


def normalize_edf(v, stats: FeatureStats):
    return (np.asarray(v, dtype=np.float64) - stats.mean) / stats.std


class EdfExtractor(TransformerMixin, BaseEstimator):
    """Extract (and optionally z-score) EDF vectors for a list of questions.

    ``fit`` learns per-feature mean and standard deviation; ``transform``
    returns an ``(n, 18)`` array.
    """

    def __init__(self, checker=None, normalize=True, spache_path=None, dale_chall_path=None,
                 on_checker_error="raise"):
        self.checker = checker
        self.normalize = normalize
        self.spache_path = spache_path
        self.dale_chall_path = dale_chall_path
        self.on_checker_error = on_checker_error

    def extract(self, X):
        X = check_records(X)
        return np.array([
            extract_edf(r, self.checker, self.spache_path, self.dale_chall_path, self.on_checker_error)
            for r in X
        ]).reshape(len(X), N_FEATURES)

    def fit(self, X, y=None):
        self.stats_ = FeatureStats.fit(self.extract(X))
        self.n_features_in_ = N_FEATURES
        return self

    def transform(self, X):
        raw = self.extract(X)
        if not self.normalize:
            return raw
        check_fitted(self, "stats_")
        return normalize_edf(raw, self.stats_)

    def get_feature_names_out(self, input_features=None):
        return np.array(FEATURE_NAMES, dtype=object)
