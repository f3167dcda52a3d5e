"""Shared fixtures: tiny hand-built corpora and the cached reference benchmark."""

from __future__ import annotations

import os

import numpy as np
import pytest

from kisrf.corpus import (
    Corpus,
    CorpusManifest,
    EmbeddingSpace,
    ItemRecord,
    SpaceRef,
    normalize_rows,
)


def build_corpus(spaces: dict[str, np.ndarray]) -> Corpus:
    """Corpus from raw (N, dim) arrays; rows are normalized per space."""
    first = next(iter(spaces.values()))
    n = first.shape[0]
    items = [ItemRecord(item_id=f"item-{i:04d}", label=f"label {i}") for i in range(n)]
    refs = []
    embedded = []
    for space_id, raw in spaces.items():
        raw = np.asarray(raw, dtype=np.float32)
        rows = normalize_rows(raw, space_id)
        refs.append(SpaceRef(space_id=space_id, dim=rows.shape[1], path=f"{space_id}.kise"))
        embedded.append(EmbeddingSpace(space_id=space_id, dim=rows.shape[1], vectors=rows))
    return Corpus(manifest=CorpusManifest(items=items, spaces=refs), spaces=embedded)


def random_corpus(n: int, dim: int, n_spaces: int = 1, seed: int = 0) -> Corpus:
    rng = np.random.default_rng(seed)
    return build_corpus(
        {f"s{f}": rng.standard_normal((n, dim)) for f in range(n_spaces)}
    )


@pytest.fixture
def quad_corpus() -> Corpus:
    """Four items in the plane with easy cosines against the query (1, 0)."""
    return build_corpus(
        {"s0": np.array([[1, 0], [0, 1], [-1, 0], [0.6, 0.8]], dtype=np.float32)}
    )


@pytest.fixture(scope="session")
def bench_paths(tmp_path_factory):
    """The frozen reference benchmark, built once and cached across runs.

    Set KISRF_BENCHMARK_CACHE to a directory to persist the artifacts between
    test invocations; otherwise they are built into a per-session tmp dir
    (a cold build takes tens of minutes on one core).
    """
    from kisrf.benchmark import build_benchmark

    cache = os.environ.get("KISRF_BENCHMARK_CACHE")
    root = cache if cache else tmp_path_factory.mktemp("benchmark")
    return build_benchmark(root)
