"""Corpus container, binary embedding files, and similarity kernels."""

from __future__ import annotations

import struct

import numpy as np
import pytest

from conftest import build_corpus, random_corpus
from kisrf.corpus import (
    Corpus,
    CorpusError,
    CorpusManifest,
    EmbeddingSpace,
    ItemRecord,
    SpaceRef,
    load_corpus,
    norm_statistics,
    normalize_rows,
    read_embeddings,
    save_corpus,
    similarity,
    similarity_to_all,
    write_embeddings,
)


def unit_rows(n: int, dim: int, seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    raw = rng.standard_normal((n, dim))
    return (raw / np.linalg.norm(raw, axis=1, keepdims=True)).astype(np.float32)


class TestNormalizeRows:
    def test_rows_become_unit(self):
        raw = np.array([[3.0, 4.0], [0.0, 2.0]], dtype=np.float32)
        rows = normalize_rows(raw, "s0")
        np.testing.assert_allclose(
            np.linalg.norm(rows.astype(np.float64), axis=1), 1.0, atol=1e-6
        )

    def test_already_unit_rows_pass_through_bit_exact(self):
        rows = unit_rows(16, 8, seed=3)
        out = normalize_rows(rows.copy(), "s0")
        assert np.array_equal(out, rows)

    def test_zero_norm_row_rejected(self):
        raw = np.array([[1.0, 0.0], [0.0, 0.0]], dtype=np.float32)
        with pytest.raises(CorpusError, match="zero-norm"):
            normalize_rows(raw, "s0")

    def test_non_finite_rejected(self):
        raw = np.array([[1.0, 0.0], [np.nan, 1.0]], dtype=np.float32)
        with pytest.raises(CorpusError, match="non-finite"):
            normalize_rows(raw, "s0")


class TestEmbeddingSpace:
    def test_norm_validation(self):
        bad = np.array([[1.0, 0.0], [2.0, 0.0]], dtype=np.float32)
        with pytest.raises(CorpusError, match="norm"):
            EmbeddingSpace(space_id="s0", dim=2, vectors=bad)

    def test_dtype_validation(self):
        with pytest.raises(CorpusError, match="float32"):
            EmbeddingSpace(space_id="s0", dim=2, vectors=np.eye(2, dtype=np.float64))

    def test_shape_vs_dim(self):
        with pytest.raises(CorpusError, match="dim"):
            EmbeddingSpace(space_id="s0", dim=3, vectors=np.eye(2, dtype=np.float32))


class TestManifestAndCorpus:
    def test_duplicate_item_ids_rejected(self):
        items = [ItemRecord("a", "a"), ItemRecord("a", "b")]
        with pytest.raises(CorpusError, match="duplicate"):
            CorpusManifest(items=items, spaces=[SpaceRef("s0", 2, "s0.kise")])

    def test_index_of(self):
        corpus = random_corpus(5, 3, seed=1)
        assert corpus.manifest.index_of("item-0003") == 3
        with pytest.raises(KeyError):
            corpus.manifest.index_of("missing")

    def test_item_count_mismatch_between_spaces(self):
        a = EmbeddingSpace("s0", 2, unit_rows(3, 2))
        b = EmbeddingSpace("s1", 2, unit_rows(4, 2))
        items = [ItemRecord(f"i{k}", f"i{k}") for k in range(3)]
        manifest = CorpusManifest(
            items=items, spaces=[SpaceRef("s0", 2, "x"), SpaceRef("s1", 2, "y")]
        )
        with pytest.raises(CorpusError, match="item-count"):
            Corpus(manifest=manifest, spaces=[a, b])

    def test_manifest_row_count_mismatch(self):
        a = EmbeddingSpace("s0", 2, unit_rows(3, 2))
        items = [ItemRecord(f"i{k}", f"i{k}") for k in range(2)]
        manifest = CorpusManifest(items=items, spaces=[SpaceRef("s0", 2, "x")])
        with pytest.raises(CorpusError, match="manifest"):
            Corpus(manifest=manifest, spaces=[a])


class TestEmbeddingFiles:
    def test_roundtrip_bit_exact(self, tmp_path):
        rows = unit_rows(10, 6, seed=2)
        path = tmp_path / "x.kise"
        write_embeddings(path, rows)
        back = read_embeddings(path)
        assert back.dtype == np.float32
        assert np.array_equal(back, rows)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "x.kise"
        path.write_bytes(b"NOPE" + b"\x00" * 12)
        with pytest.raises(CorpusError, match="magic"):
            read_embeddings(path)

    def test_bad_version(self, tmp_path):
        path = tmp_path / "x.kise"
        path.write_bytes(struct.pack("<4sIII", b"KISE", 9, 1, 1) + b"\x00" * 4)
        with pytest.raises(CorpusError, match="version"):
            read_embeddings(path)

    def test_truncated_payload(self, tmp_path):
        rows = unit_rows(4, 4)
        path = tmp_path / "x.kise"
        write_embeddings(path, rows)
        data = path.read_bytes()
        path.write_bytes(data[:-8])
        with pytest.raises(CorpusError, match="(size|bytes)"):
            read_embeddings(path)


class TestSaveLoadCorpus:
    def test_roundtrip(self, tmp_path):
        corpus = random_corpus(12, 5, n_spaces=2, seed=7)
        manifest_path = save_corpus(corpus, tmp_path)
        back = load_corpus(manifest_path)
        assert back.n_items == corpus.n_items
        assert back.n_spaces == corpus.n_spaces
        for a, b in zip(corpus.spaces, back.spaces):
            assert a.space_id == b.space_id
            assert np.array_equal(a.vectors, b.vectors)

    def test_reload_is_byte_stable(self, tmp_path):
        corpus = random_corpus(12, 5, seed=8)
        manifest_path = save_corpus(corpus, tmp_path)
        first = (tmp_path / corpus.manifest.spaces[0].path).read_bytes()
        reloaded = load_corpus(manifest_path)
        save_corpus(reloaded, tmp_path)
        second = (tmp_path / corpus.manifest.spaces[0].path).read_bytes()
        assert first == second

    def test_dim_mismatch_detected(self, tmp_path):
        corpus = random_corpus(6, 4, seed=9)
        manifest_path = save_corpus(corpus, tmp_path)
        text = manifest_path.read_text().replace('"dim": 4', '"dim": 5')
        manifest_path.write_text(text)
        with pytest.raises(CorpusError, match="dim"):
            load_corpus(manifest_path)


class TestSimilarity:
    def test_matches_manual_dot(self):
        corpus = random_corpus(6, 8, seed=4)
        space = corpus.spaces[0]
        v = space.vectors.astype(np.float64)
        expected = float(v[1] @ v[4])
        assert similarity(space, 1, 4) == pytest.approx(expected, abs=1e-12)

    def test_index_error(self):
        corpus = random_corpus(3, 4, seed=5)
        with pytest.raises(IndexError):
            similarity(corpus.spaces[0], 0, 7)

    def test_similarity_to_all_matches_pairwise(self):
        corpus = random_corpus(9, 6, seed=6)
        space = corpus.spaces[0]
        q = space.vectors64[2]
        scores = similarity_to_all(space, q)
        unit_q = q / np.linalg.norm(q)
        for i in range(9):
            assert scores[i] == pytest.approx(
                float(unit_q @ space.vectors64[i]), abs=1e-12
            )
            # the stored row is unit only to float32 precision, so the raw
            # row-vs-row dot agrees to ~1e-7, not exactly
            assert scores[i] == pytest.approx(similarity(space, 2, i), abs=1e-6)

    def test_unnormalized_query_is_normalized(self):
        corpus = random_corpus(5, 4, seed=10)
        space = corpus.spaces[0]
        q = space.vectors64[1] * 7.5
        scores = similarity_to_all(space, q)
        assert scores[1] == pytest.approx(1.0, abs=1e-6)

    def test_zero_query_rejected(self):
        corpus = random_corpus(5, 4, seed=11)
        with pytest.raises(CorpusError, match="zero"):
            similarity_to_all(corpus.spaces[0], np.zeros(4))

    def test_dim_mismatch_rejected(self):
        corpus = random_corpus(5, 4, seed=12)
        with pytest.raises(CorpusError, match="dim"):
            similarity_to_all(corpus.spaces[0], np.ones(3))


def test_norm_statistics_reports_unit_rows():
    corpus = random_corpus(20, 6, seed=13)
    stats = norm_statistics(corpus.spaces[0])
    assert stats["min"] == pytest.approx(1.0, abs=1e-6)
    assert stats["max"] == pytest.approx(1.0, abs=1e-6)


def test_build_corpus_helper_smoke():
    corpus = build_corpus({"s0": np.eye(3), "s1": np.eye(3)[::-1].copy()})
    assert corpus.n_items == 3
    assert corpus.n_spaces == 2
