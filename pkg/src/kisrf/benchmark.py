"""The frozen reference benchmark: corpus, queries, trajectories, checkpoints.

Everything here is pinned by seeds so two builds produce identical artifacts.
``build_benchmark`` is staged and resumable: finished artifacts on disk are
reused, and per-stage wall-clock seconds are recorded in ``timings.json`` at
build time so the cost of a cold build stays inspectable afterwards.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass
from pathlib import Path

from kisrf.corpus import Corpus, load_corpus, save_corpus
from kisrf.perception import (
    PerceptionPredictor,
    PredictorConfig,
    load_checkpoint,
    save_checkpoint,
)
from kisrf.session import Hyperparams
from kisrf.synth import SynthSpec, calibrate_queries, load_queries, save_queries, synth_corpus
from kisrf.trajectories import generate_trajectories, load_trajectories
from kisrf.training import alignment_accuracy, build_examples, train

logger = logging.getLogger(__name__)

BENCHMARK_SPEC = SynthSpec(
    n_items=50_000,
    n_spaces=3,
    dim=64,
    inter_space_correlation=0.7,
    query_noise=0.0,
    seed=90125,
)
QUERIES_PER_BUCKET = 150
TRAIN_QUERIES_PER_BUCKET = 520
EVAL_QUERY_SEED = 701
TRAIN_QUERY_SEED = 702
TRAJECTORY_SEED = 703
TRAIN_SEED = 704
EVAL_SEED = 705
TRAIN_EPOCHS = 10
TRAIN_LR = 1e-3
TRAIN_BATCH = 32

# Checkpoint variants: full model plus the retrained input ablations.
VARIANTS = ("full", "staterep", "distemb")


def benchmark_params(prune: bool) -> Hyperparams:
    """Session hyperparameters for benchmark runs."""
    return Hyperparams(n_prune=5000 if prune else 0)


@dataclass
class BenchmarkPaths:
    """Locations of every frozen artifact."""

    root: Path

    @property
    def corpus_manifest(self) -> Path:
        return self.root / "corpus" / "manifest.json"

    @property
    def eval_queries(self) -> Path:
        return self.root / "queries_eval.json"

    @property
    def train_queries(self) -> Path:
        return self.root / "queries_train.json"

    @property
    def trajectories(self) -> Path:
        return self.root / "trajectories.jsonl"

    def checkpoints(self, variant: str = "full") -> Path:
        if variant not in VARIANTS:
            raise ValueError(f"unknown variant {variant!r}")
        return self.root / f"checkpoints-{variant}"

    @property
    def metrics(self) -> Path:
        return self.root / "train_metrics.json"

    @property
    def timings(self) -> Path:
        return self.root / "timings.json"


def _record_timing(paths: BenchmarkPaths, stage: str, seconds: float) -> None:
    doc = {}
    if paths.timings.exists():
        doc = json.loads(paths.timings.read_text())
    doc[stage] = seconds
    doc["total"] = sum(v for k, v in doc.items() if k != "total")
    paths.timings.write_text(json.dumps(doc, indent=2) + "\n")


def build_benchmark(root: str | Path, force: bool = False) -> BenchmarkPaths:
    """Build (or resume) every benchmark artifact under ``root``."""
    paths = BenchmarkPaths(root=Path(root))
    paths.root.mkdir(parents=True, exist_ok=True)

    if force or not paths.corpus_manifest.exists():
        started = time.perf_counter()
        logger.info("benchmark: synthesizing corpus %s", BENCHMARK_SPEC)
        corpus = synth_corpus(BENCHMARK_SPEC)
        save_corpus(corpus, paths.corpus_manifest.parent)
        _record_timing(paths, "corpus", time.perf_counter() - started)
    corpus = load_corpus(paths.corpus_manifest)

    if force or not paths.eval_queries.exists():
        started = time.perf_counter()
        logger.info("benchmark: calibrating evaluation queries")
        from kisrf.evaluation import BUCKETS

        eval_queries = calibrate_queries(
            corpus, BUCKETS, QUERIES_PER_BUCKET, seed=EVAL_QUERY_SEED
        )
        save_queries(eval_queries, BENCHMARK_SPEC, paths.eval_queries)
        _record_timing(paths, "eval_queries", time.perf_counter() - started)

    if force or not paths.train_queries.exists():
        started = time.perf_counter()
        logger.info("benchmark: calibrating training queries")
        from kisrf.evaluation import BUCKETS

        _, eval_queries = load_queries(paths.eval_queries)
        taken = frozenset(q.target for q in eval_queries)
        train_queries = calibrate_queries(
            corpus,
            BUCKETS,
            TRAIN_QUERIES_PER_BUCKET,
            seed=TRAIN_QUERY_SEED,
            exclude=taken,
        )
        save_queries(train_queries, BENCHMARK_SPEC, paths.train_queries)
        _record_timing(paths, "train_queries", time.perf_counter() - started)

    if force or not paths.trajectories.exists():
        started = time.perf_counter()
        logger.info("benchmark: generating trajectories")
        _, train_queries = load_queries(paths.train_queries)
        stats = generate_trajectories(
            corpus,
            train_queries,
            benchmark_params(prune=False),
            seed=TRAJECTORY_SEED,
            out_path=paths.trajectories,
        )
        logger.info("benchmark: kept fraction %.3f", stats.kept_fraction)
        _record_timing(paths, "trajectories", time.perf_counter() - started)

    for variant in VARIANTS:
        ckpt_dir = paths.checkpoints(variant)
        done = ckpt_dir / ".done"
        if not force and done.exists():
            continue
        started = time.perf_counter()
        _train_variant(corpus, paths, variant)
        done.write_text("ok\n")
        _record_timing(paths, f"train_{variant}", time.perf_counter() - started)

    return paths


def _train_variant(corpus: Corpus, paths: BenchmarkPaths, variant: str) -> None:
    """Train one checkpoint set (all spaces) and record held-out metrics."""
    logger.info("benchmark: training %s predictors", variant)
    records = load_trajectories(paths.trajectories)
    ckpt_dir = paths.checkpoints(variant)
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    metrics = {}
    if paths.metrics.exists():
        metrics = json.loads(paths.metrics.read_text())
    for f, space in enumerate(corpus.spaces):
        examples = build_examples(records, corpus, f)
        model = PerceptionPredictor(
            PredictorConfig(),
            dim=space.dim,
            disable_state=(variant == "staterep"),
            disable_dist=(variant == "distemb"),
        )
        result = train(
            model,
            examples,
            epochs=TRAIN_EPOCHS,
            lr=TRAIN_LR,
            batch_size=TRAIN_BATCH,
            seed=TRAIN_SEED + f,
        )
        val_ids = set(result.val_traj_ids)
        val_examples = [ex for ex in examples if ex.traj_id in val_ids]
        accuracy, majority = alignment_accuracy(model, val_examples)
        metrics[f"{variant}/{space.space_id}"] = {
            "train_loss": result.train_loss,
            "val_loss": result.val_loss,
            "val_accuracy": accuracy,
            "val_majority_rate": majority,
            "n_examples": len(examples),
            "n_val_examples": len(val_examples),
        }
        logger.info(
            "benchmark: %s/%s val acc %.3f (majority %.3f)",
            variant, space.space_id, accuracy, majority,
        )
        save_checkpoint(model, space.space_id, ckpt_dir / f"{space.space_id}.ckpt")
    paths.metrics.write_text(json.dumps(metrics, indent=2) + "\n")


def load_predictors(ckpt_dir: str | Path, corpus: Corpus) -> list[PerceptionPredictor]:
    """Load one predictor per corpus space from a checkpoint directory.

    Raises:
        FileNotFoundError: a space's checkpoint file is missing.
    """
    ckpt_dir = Path(ckpt_dir)
    models = []
    for space in corpus.spaces:
        path = ckpt_dir / f"{space.space_id}.ckpt"
        if not path.exists():
            raise FileNotFoundError(f"no checkpoint for space {space.space_id!r}: {path}")
        model, space_id = load_checkpoint(path)
        if space_id != space.space_id:
            raise ValueError(
                f"checkpoint {path} is for space {space_id!r}, expected "
                f"{space.space_id!r}"
            )
        models.append(model)
    return models
