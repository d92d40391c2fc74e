"""Command-line interface: ``deepqr <command> [options]``.

Every option can also come from a JSON file given with ``--config``; its
keys are the option names with underscores (``batch_size``). Flags given
on the command line win over the file, and the file wins over the
built-in defaults. The merged settings are written next to every
artifact.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import __version__
from .data_io import (
    SIGNALS,
    DataError,
    SyntheticSpec,
    filter_and_label,
    generate_synthetic,
    load_jsonl,
    save_jsonl,
    write_toy_glove,
)
from .embeddings import GloveEmbedder, GloveFormatError, load_glove
from .models import ModelKind, QuestionRater, TrainingError
from .qdqe import QdqeEncoder, TripleError, build_triples, load_qdqe, save_qdqe
from .text_features import FEATURE_NAMES, EdfExtractor
from .training import SplitSpec, evaluate, classify_extremes, split_dataset, train_model

logger = logging.getLogger("deepqr")

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_USAGE = 2
EXIT_MISSING_FILE = 3
EXIT_SCHEMA = 4
EXIT_TRAINING = 5

EXIT_CODES_HELP = f"""exit codes:
  {EXIT_OK}  success
  {EXIT_INTERNAL}  unexpected internal error
  {EXIT_USAGE}  usage error: unknown flag, missing or invalid option, bad config file
  {EXIT_MISSING_FILE}  an input file does not exist
  {EXIT_SCHEMA}  an input file violates its schema (questions JSONL, vectors, checkpoint)
  {EXIT_TRAINING}  training failed (non-finite loss, too few questions for the contrastive sets)
"""

COMPONENT_LABELS = ("S", "A", "D1", "D2", "D3", "D4", "E")


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    data: str | None = None
    model: str = "deepqr"
    seed: int = 2021
    epochs: int = 50
    batch_size: int = 16
    lr: float = 1e-3
    step_size: int = 3
    gamma: float = 0.7
    dropout: float = 0.5
    d_em: int | None = None
    d_scqc: int = 7
    d_sf: int = 16
    scqc_pool: str = "column"
    c: int = 80
    c_val: int = 20
    tau: float = 0.07
    qdqe_epochs: int = 10
    qdqe_dropout: float = 0.1
    min_ratings: int = 10
    glove: str | None = None
    spache_words: str | None = None
    dale_chall_words: str | None = None
    qdqe_checkpoint: str | None = None
    checkpoint: str | None = None
    runs_dir: str = "runs"
    out: str | None = None
    out_dir: str | None = None
    split: str = "test"
    signal: str = "length-linear"
    n: int = 200
    noise: float = 0.0
    glove_out: str | None = None

    @classmethod
    def layered(cls, config_path, flags):
        values = {}
        if config_path:
            path = Path(config_path)
            if not path.exists():
                raise FileNotFoundError(f"config file not found: {path}")
            try:
                values = json.loads(path.read_text(encoding="utf-8"))
            except json.JSONDecodeError as exc:
                raise UsageError(f"config file {path} is not valid JSON: {exc}") from None
            if not isinstance(values, dict):
                raise UsageError(f"config file {path} must hold a JSON object")
            known = {f.name for f in fields(cls)}
            unknown = sorted(set(values) - known)
            if unknown:
                raise UsageError(f"unknown config key(s) in {path}: {', '.join(unknown)}")
        values.update(flags)
        return cls(**values)


def _split_spec(cfg):
    return SplitSpec(seed=cfg.seed)


def _require(cfg, *names):
    missing = [n for n in names if getattr(cfg, n) in (None, "")]
    if missing:
        raise UsageError("missing required option(s): " + ", ".join("--" + n.replace("_", "-") for n in missing))


def _existing(path, what):
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"{what} not found: {p}")
    return p


def _glove(cfg, required=True):
    if cfg.glove is None:
        if required:
            raise UsageError("this command needs word vectors: pass --glove <path>")
        return None
    table = load_glove(_existing(cfg.glove, "word vector file"))
    if cfg.d_em is not None and table.dim != cfg.d_em:
        raise GloveFormatError(f"{cfg.glove} has dimension {table.dim}, but --d-em is {cfg.d_em}")
    return table


def _labelled(cfg):
    raw = load_jsonl(_existing(cfg.data, "dataset"))
    return filter_and_label(raw, cfg.min_ratings)


def _meta_path(path):
    return Path(str(path) + ".meta.json")


def _write_meta(path, cfg, **extra):
    meta = {"deepqr_version": __version__, "config": asdict(cfg), "seed": cfg.seed, **extra}
    _meta_path(path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _write_csv(path, header, rows, cfg, **extra):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    _write_meta(path, cfg, **extra)


# -- commands -----------------------------------------------------------


def cmd_gen_synthetic(cfg):
    if cfg.signal not in SIGNALS:
        raise UsageError(f"--signal must be one of {', '.join(SIGNALS)}")
    out = Path(cfg.out or f"synthetic-{cfg.signal}-{cfg.seed}.jsonl")
    out.parent.mkdir(parents=True, exist_ok=True)
    dim = cfg.d_em or 16
    spec = SyntheticSpec(cfg.signal, n=cfg.n, noise=cfg.noise, embed_dim=dim, course=out.stem)
    ds = generate_synthetic(spec, seed=cfg.seed)
    save_jsonl(ds, out)
    vectors = Path(cfg.glove_out or out.with_suffix(".vectors.txt"))
    write_toy_glove(vectors, dim=dim)
    _write_meta(out, cfg, vectors=str(vectors), n_questions=len(ds))
    print(f"wrote {len(ds)} questions to {out} and toy word vectors to {vectors}")


def cmd_extract_features(cfg):
    _require(cfg, "data", "out")
    ds = load_jsonl(_existing(cfg.data, "dataset"))
    ext = EdfExtractor(normalize=False, spache_path=cfg.spache_words, dale_chall_path=cfg.dale_chall_words)
    X = ext.transform(ds.records)
    rows = ([r.id, *map(float, x)] for r, x in zip(ds.records, X))
    _write_csv(cfg.out, ["question_id", *FEATURE_NAMES], rows, cfg)
    print(f"wrote {len(ds)} feature rows to {cfg.out}")


def cmd_qdqe_pretrain(cfg):
    _require(cfg, "data", "out")
    glove = _glove(cfg)
    ds = _labelled(cfg)
    train, val, test = split_dataset(ds, _split_spec(cfg))
    emb = GloveEmbedder(glove).fit()
    enc = QdqeEncoder(c=cfg.c, c_val=cfg.c_val, tau=cfg.tau, epochs=cfg.qdqe_epochs, lr=cfg.lr,
                      step_size=cfg.step_size, gamma=cfg.gamma, dropout=cfg.qdqe_dropout, seed=cfg.seed)
    enc.fit(emb.transform(train), train.labels(), validation_data=(emb.transform(val), val.labels(), val.ids),
            ids=train.ids)
    summary = {"best_epoch": enc.best_epoch_, "n_triples": enc.n_triples_,
               "split_sizes": [len(train), len(val), len(test)]}
    c_test = min(cfg.c_val, (len(test) - 1) // 2)
    if c_test >= 2:
        triples = build_triples(test.labels(), c_test, np.random.default_rng(cfg.seed), ids=test.ids)
        E_test = emb.transform(test)
        summary["test_triple_accuracy"] = enc.triple_accuracy(E_test, triples)
        summary["test_similarity_gap"] = enc.similarity_gap(E_test, triples)
    Path(cfg.out).parent.mkdir(parents=True, exist_ok=True)
    save_qdqe(enc, cfg.out, extra={"config": asdict(cfg), "summary": summary})
    print(json.dumps(summary, sort_keys=True))


def _run_dir(cfg, dataset_name, model):
    if cfg.out_dir:
        return Path(cfg.out_dir)
    stamp = time.strftime("%Y%m%d-%H%M%S")
    return Path(cfg.runs_dir) / dataset_name / model / stamp


def cmd_train(cfg):
    _require(cfg, "data")
    try:
        kind = ModelKind(cfg.model)
    except ValueError:
        raise UsageError(f"--model must be one of {', '.join(k.value for k in ModelKind)}") from None
    qdqe = None
    if kind is ModelKind.DEEPQR:
        if not cfg.qdqe_checkpoint:
            raise UsageError("deepqr needs a pretrained encoder: run qdqe-pretrain first and pass "
                             "--qdqe-checkpoint <path>")
        qdqe = load_qdqe(_existing(cfg.qdqe_checkpoint, "QDQE checkpoint"))
    glove = _glove(cfg, required=kind.uses_embeddings)
    ds = _labelled(cfg)
    rater, report, (train, val, test) = train_model(
        kind, ds, glove=glove, qdqe=qdqe, split=_split_spec(cfg),
        epochs=cfg.epochs, batch_size=cfg.batch_size, lr=cfg.lr, step_size=cfg.step_size, gamma=cfg.gamma,
        dropout=cfg.dropout, seed=cfg.seed, d_scqc=cfg.d_scqc, d_sf=cfg.d_sf, scqc_pool=cfg.scqc_pool,
        spache_path=cfg.spache_words, dale_chall_path=cfg.dale_chall_words,
    )
    if glove is not None:
        rater.glove = str(Path(cfg.glove).resolve())
    report.config = {**report.config, "run": asdict(cfg)}
    run = _run_dir(cfg, Path(cfg.data).stem, kind.value)
    run.mkdir(parents=True, exist_ok=True)
    rater.save(run / "model.npz", extra={"config": asdict(cfg), "test_mse": report.test_mse,
                                        "test_acc": report.test_acc})
    (run / "report.json").write_text(report.to_json(indent=2, sort_keys=True) + "\n", encoding="utf-8")
    (run / "report.txt").write_text(report.table() + "\n", encoding="utf-8")
    (run / "config.json").write_text(json.dumps(asdict(cfg), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    rows = ([e["epoch"], e["lr"], e["train_loss"], e.get("val_mse", ""), e["seconds"]] for e in report.epochs)
    _write_csv(run / "metrics.csv", ["epoch", "lr", "train_loss", "val_mse", "seconds"], rows, cfg,
               selected_epoch=report.selected_epoch)
    print(report.table())
    print(f"run directory: {run}")


def _load_rater(cfg):
    _require(cfg, "checkpoint")
    path = _existing(cfg.checkpoint, "checkpoint")
    try:
        rater = QuestionRater.load(path, glove=cfg.glove)
    except (KeyError, ValueError, OSError) as exc:
        raise DataError(f"{path}: not a usable model checkpoint ({exc})") from exc
    if rater._kind().uses_embeddings:
        if rater.glove is None:
            raise UsageError("this checkpoint needs word vectors: pass --glove <path>")
        _existing(rater.glove, "word vector file")
    return rater


def cmd_evaluate(cfg):
    rater = _load_rater(cfg)
    saved = rater.checkpoint_meta_.get("extra", {}).get("config", {})
    cfg.data = cfg.data or saved.get("data")
    _require(cfg, "data")
    # split and filter exactly as the training run did
    min_ratings = saved.get("min_ratings", cfg.min_ratings)
    seed = saved.get("seed", cfg.seed)
    ds = filter_and_label(load_jsonl(_existing(cfg.data, "dataset")), min_ratings)
    parts = dict(zip(("train", "val", "test"), split_dataset(ds, SplitSpec(seed=seed))))
    parts["all"] = ds
    if cfg.split not in parts:
        raise UsageError("--split must be one of train, val, test, all")
    subset = parts[cfg.split]
    preds = rater.predict(subset.records)
    mse, acc = evaluate(preds, subset.labels())
    labels = ds.labels()
    mu, sigma = float(labels.mean()), float(labels.std())
    result = {"split": cfg.split, "n": len(subset), "mse": mse, "acc": acc, "model": rater._kind().value}
    if sigma > 0:
        result["low_accuracy"], result["high_accuracy"] = classify_extremes(preds, subset.labels(), mu, sigma)
    if cfg.out:
        Path(cfg.out).write_text(json.dumps({**result, "config": asdict(cfg)}, indent=2, sort_keys=True) + "\n")
    print(json.dumps(result, sort_keys=True))


def cmd_predict(cfg):
    _require(cfg, "data", "out")
    rater = _load_rater(cfg)
    ds = load_jsonl(_existing(cfg.data, "dataset"))
    preds = rater.predict(ds.records)
    _write_csv(cfg.out, ["question_id", "predicted_rating"], zip(ds.ids, map(float, preds)), cfg)
    print(f"wrote {len(ds)} predictions to {cfg.out}")


def cmd_export_attention(cfg):
    _require(cfg, "data", "out_dir")
    rater = _load_rater(cfg)
    if not rater._kind().uses_scqc:
        raise UsageError(f"model {rater._kind().value} has no SCQC attention to export")
    ds = load_jsonl(_existing(cfg.data, "dataset"))
    co = rater.attention_matrices(ds.records)
    out = Path(cfg.out_dir)
    for qid, m in zip(ds.ids, co):
        rows = ([label, *map(float, row)] for label, row in zip(COMPONENT_LABELS, m))
        _write_csv(out / f"{qid}.csv", ["", *COMPONENT_LABELS], rows, cfg, question_id=qid)
    print(f"wrote {len(ds)} attention matrices to {out}")


def cmd_export_embeddings(cfg):
    _require(cfg, "data", "out")
    glove = _glove(cfg)
    ds = load_jsonl(_existing(cfg.data, "dataset"))
    if cfg.qdqe_checkpoint:
        enc = load_qdqe(_existing(cfg.qdqe_checkpoint, "QDQE checkpoint"))
        vecs, source = enc.encode(GloveEmbedder(glove).transform(ds.records)), "qdqe"
    else:
        vecs = GloveEmbedder(glove, pad_multiple=None).transform(ds.records).mean(axis=1)
        source = "glove-mean"
    header = ["question_id", *(f"dim_{i}" for i in range(vecs.shape[1]))]
    _write_csv(cfg.out, header, ([qid, *map(float, v)] for qid, v in zip(ds.ids, vecs)), cfg, source=source)
    print(f"wrote {len(ds)} {source} embeddings to {cfg.out}")


COMMANDS = {
    "gen-synthetic": (cmd_gen_synthetic, "generate a planted-signal dataset and toy word vectors"),
    "extract-features": (cmd_extract_features, "write the 18 raw EDF features per question as CSV"),
    "qdqe-pretrain": (cmd_qdqe_pretrain, "train the contrastive question encoder"),
    "train": (cmd_train, "train and test one rating model (8:1:1 split)"),
    "evaluate": (cmd_evaluate, "score a trained checkpoint on a split of a dataset"),
    "predict": (cmd_predict, "predict ratings for (possibly unlabelled) questions"),
    "export-attention": (cmd_export_attention, "write each question's 7x7 SCQC attention matrix as CSV"),
    "export-embeddings": (cmd_export_embeddings, "write question-level embeddings (QDQE or mean GloVe) as CSV"),
}

# flag -> (commands using it, argparse kwargs)
_DATA = ("extract-features", "qdqe-pretrain", "train", "evaluate", "predict", "export-attention",
         "export-embeddings")
_TRAINING = ("qdqe-pretrain", "train")
FLAGS = {
    "--data": (_DATA, dict(help="questions JSONL file")),
    "--glove": (("qdqe-pretrain", "train", "evaluate", "predict", "export-attention", "export-embeddings"),
                dict(help="word vector file (word v1 ... vd per line)")),
    "--d-em": (("gen-synthetic", "qdqe-pretrain", "train", "export-embeddings"),
               dict(type=int, help="word vector dimension (checked against --glove; toy vectors use it)")),
    "--model": (("train",), dict(help="edf-solo | edf-enriched | sf | combined | deepqr")),
    "--seed": (("gen-synthetic", "qdqe-pretrain", "train"), dict(type=int, help="random seed (default 2021)")),
    "--epochs": (("train",), dict(type=int, help="training epochs (default 50)")),
    "--batch-size": (("train",), dict(type=int, help="mini-batch size (default 16)")),
    "--lr": (_TRAINING, dict(type=float, help="base learning rate (default 1e-3)")),
    "--step-size": (_TRAINING, dict(type=int, help="epochs per learning-rate decay (default 3)")),
    "--gamma": (_TRAINING, dict(type=float, help="learning-rate decay factor (default 0.7)")),
    "--dropout": (("train",), dict(type=float, help="dropout rate (default 0.5)")),
    "--d-scqc": (("train",), dict(type=int, help="SCQC feature width (default 7)")),
    "--d-sf": (("train",), dict(type=int, help="SF feature width (default 16)")),
    "--scqc-pool": (("train",), dict(choices=("column", "row"), help="SCQC averaging direction")),
    "--c": (("qdqe-pretrain",), dict(type=int, help="extreme-set size for training triples (default 80)")),
    "--c-val": (("qdqe-pretrain",), dict(type=int, help="extreme-set size for validation triples")),
    "--tau": (("qdqe-pretrain",), dict(type=float, help="InfoNCE temperature (default 0.07)")),
    "--qdqe-epochs": (("qdqe-pretrain",), dict(type=int, help="contrastive epochs (default 10)")),
    "--qdqe-dropout": (("qdqe-pretrain",), dict(type=float, help="encoder dropout (default 0.1)")),
    "--min-ratings": (("qdqe-pretrain", "train", "evaluate"),
                      dict(type=int, help="drop questions with fewer ratings (default 10)")),
    "--spache-words": (("extract-features", "train"), dict(help="easy-word list for the Spache index")),
    "--dale-chall-words": (("extract-features", "train"), dict(help="easy-word list for Dale-Chall")),
    "--qdqe-checkpoint": (("train", "export-embeddings"), dict(help="encoder written by qdqe-pretrain")),
    "--checkpoint": (("evaluate", "predict", "export-attention"), dict(help="model.npz written by train")),
    "--runs-dir": (("train",), dict(help="root of runs/<dataset>/<model>/<timestamp>/ (default runs)")),
    "--out-dir": (("train", "export-attention"), dict(help="exact output directory")),
    "--out": (("gen-synthetic", "extract-features", "qdqe-pretrain", "evaluate", "predict", "export-embeddings"),
              dict(help="output file")),
    "--split": (("evaluate",), dict(choices=("train", "val", "test", "all"), help="split to score (default test)")),
    "--signal": (("gen-synthetic",), dict(choices=SIGNALS, help="planted signal")),
    "--n": (("gen-synthetic",), dict(type=int, help="number of questions (default 200)")),
    "--noise": (("gen-synthetic",), dict(type=float, help="rating noise standard deviation")),
    "--glove-out": (("gen-synthetic",), dict(help="where to write the toy word vectors")),
}


def build_parser():
    parser = argparse.ArgumentParser(
        prog="deepqr",
        description="Rate the quality of multiple-choice questions.",
        epilog=EXIT_CODES_HELP,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="command")
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text, epilog=EXIT_CODES_HELP,
                           formatter_class=argparse.RawDescriptionHelpFormatter)
        p.add_argument("--config", help="JSON file of option values; flags override it")
        p.add_argument("-v", "--verbose", action="store_true", help="log progress")
        for flag, (users, kwargs) in FLAGS.items():
            if name in users:
                p.add_argument(flag, default=argparse.SUPPRESS, **kwargs)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_help()
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    flags = {k: v for k, v in vars(args).items() if k not in ("command", "config", "verbose")}
    func = COMMANDS[args.command][0]
    try:
        cfg = RunConfig.layered(args.config, flags)
        func(cfg)
    except UsageError as exc:
        print(f"deepqr {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"deepqr {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_MISSING_FILE
    except (DataError, GloveFormatError) as exc:
        print(f"deepqr {args.command}: invalid input: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except (TrainingError, TripleError, FloatingPointError) as exc:
        print(f"deepqr {args.command}: training failed: {exc}", file=sys.stderr)
        return EXIT_TRAINING
    except Exception as exc:  # noqa: BLE001
        logger.debug("internal error", exc_info=True)
        print(f"deepqr {args.command}: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
