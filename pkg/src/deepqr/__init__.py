"""Automated quality rating of multiple-choice questions."""
from .data_io import McqRecord, QualityDataset, SyntheticSpec, filter_and_label, generate_synthetic, load_jsonl, save_jsonl
from .embeddings import GloveEmbedder, GloveTable, load_glove
from .models import ModelKind, QuestionRater
from .qdqe import QdqeEncoder, build_triples, info_nce
from .text_features import EdfExtractor, extract_edf
from .training import SplitSpec, TrainReport, evaluate, split_dataset, train_model

__version__ = "0.1.0"

__all__ = [
    "McqRecord",
    "QualityDataset",
    "SyntheticSpec",
    "filter_and_label",
    "generate_synthetic",
    "load_jsonl",
    "save_jsonl",
    "GloveEmbedder",
    "GloveTable",
    "load_glove",
    "ModelKind",
    "QuestionRater",
    "QdqeEncoder",
    "build_triples",
    "info_nce",
    "EdfExtractor",
    "extract_edf",
    "SplitSpec",
    "TrainReport",
    "evaluate",
    "split_dataset",
    "train_model",
]
