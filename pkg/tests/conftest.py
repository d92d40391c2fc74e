import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from deepqr.data_io import McqRecord, toy_word_vectors  # noqa: E402
from deepqr.embeddings import GloveTable  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def toy_glove():
    return GloveTable.from_dict(toy_word_vectors(16))


@pytest.fixture
def sample_mcq():
    return McqRecord(
        id="sample",
        stem=(
            "Mr. Cram-zan is chilling in his room wondering another new way in which to make "
            "money. He believes he should create a global footballing league as God is telling "
            "him to. He is the chosen one, not Mourinho. He also thinks his close friend, Moo "
            "Leerihan, is plotting the downfall of his league. What is Mr. Cram-zan suffering from?"
        ),
        answer="Schizophrenia",
        distractors=["Hallucinations", "Illusions", "Over ambition", "Being too chilled"],
        explanation="Schizophrenia would be the SBA as it encompasses all the aspects.",
        average_rating=2.71,
        rating_count=75,
    )
