"""Corpus loading, validation, and cosine-similarity primitives.

A corpus is a manifest of items plus F parallel embedding spaces, one matrix per
space with one unit-norm float32 row per item. All similarity scores are plain
dot products of unit rows, so the hot loops never renormalize.

Embedding file format ("KISE"): little-endian binary, header = magic ``KISE``,
u32 version, u32 N, u32 dim, followed by N x dim float32 values row-major.
"""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)

KISE_MAGIC = b"KISE"
KISE_VERSION = 1
_HEADER = struct.Struct("<4sIII")

# Rows whose norm is already this close to 1 are kept bit-identical at load so
# that a saved corpus reloads with byte-stable scores (renormalizing an
# already-unit float32 row can flip last-ULP bits).
_UNIT_TOL = 1e-6


class CorpusError(ValueError):
    """A manifest or embedding file failed validation."""


@dataclass(frozen=True)
class ItemRecord:
    """One corpus item: stable id, display label, optional thumbnail."""

    item_id: str
    label: str
    thumbnail_uri: str | None = None


@dataclass(frozen=True)
class SpaceRef:
    """Manifest entry pointing at one embedding file."""

    space_id: str
    dim: int
    path: str


@dataclass
class CorpusManifest:
    """Ordered item list plus embedding-space references.

    Manifest order defines the canonical integer index used everywhere else.
    """

    items: list[ItemRecord]
    spaces: list[SpaceRef]

    def __post_init__(self) -> None:
        seen: set[str] = set()
        for item in self.items:
            if item.item_id in seen:
                raise CorpusError(f"duplicate item_id {item.item_id!r}")
            seen.add(item.item_id)

    def index_of(self, item_id: str) -> int:
        """Return the canonical index of ``item_id``.

        Raises:
            KeyError: unknown item_id.
        """
        try:
            return self._index[item_id]
        except AttributeError:
            self._index = {item.item_id: i for i, item in enumerate(self.items)}
            return self._index[item_id]


@dataclass
class EmbeddingSpace:
    """One embedding space: an (N, dim) float32 matrix with unit L2 rows.

    Treated as immutable after construction; concurrent reads are safe.
    """

    space_id: str
    dim: int
    vectors: np.ndarray
    _vectors64: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self) -> None:
        if self.vectors.ndim != 2 or self.vectors.shape[1] != self.dim:
            raise CorpusError(
                f"space {self.space_id!r}: vectors shape {self.vectors.shape} "
                f"does not match dim {self.dim}"
            )
        if self.vectors.dtype != np.float32:
            raise CorpusError(f"space {self.space_id!r}: vectors must be float32")
        norms = np.linalg.norm(self.vectors.astype(np.float64), axis=1)
        bad = np.flatnonzero(np.abs(norms - 1.0) > 1e-4)
        if bad.size:
            raise CorpusError(
                f"space {self.space_id!r}: row {bad[0]} has norm {norms[bad[0]]:.6f}, "
                "expected 1.0 within 1e-4"
            )

    @property
    def n_items(self) -> int:
        return self.vectors.shape[0]

    @property
    def vectors64(self) -> np.ndarray:
        """Float64 copy of the rows, cached for 64-bit score accumulation."""
        if self._vectors64 is None:
            self._vectors64 = self.vectors.astype(np.float64)
        return self._vectors64


@dataclass
class Corpus:
    """Manifest plus F parallel embedding spaces (F >= 1, fixed for life)."""

    manifest: CorpusManifest
    spaces: list[EmbeddingSpace]

    def __post_init__(self) -> None:
        if not self.spaces:
            raise CorpusError("corpus needs at least one embedding space")
        n = self.spaces[0].n_items
        for space in self.spaces:
            if space.n_items != n:
                raise CorpusError(
                    f"item-count mismatch: space {self.spaces[0].space_id!r} has "
                    f"{n} rows, space {space.space_id!r} has {space.n_items}"
                )
        if len(self.manifest.items) != n:
            raise CorpusError(
                f"item-count mismatch: manifest lists {len(self.manifest.items)} "
                f"items, embeddings have {n} rows"
            )

    @property
    def n_items(self) -> int:
        return self.spaces[0].n_items

    @property
    def n_spaces(self) -> int:
        return len(self.spaces)


def normalize_rows(vectors: np.ndarray, space_id: str) -> np.ndarray:
    """Return ``vectors`` with unit L2 rows as float32.

    Rows already unit within 1e-6 are returned bit-identical (see module note on
    byte-stable reloads); other rows are divided by their float64 norm.

    Raises:
        CorpusError: a row has zero norm or non-finite values.
    """
    vectors = np.ascontiguousarray(vectors, dtype=np.float32)
    if not np.isfinite(vectors).all():
        row = int(np.flatnonzero(~np.isfinite(vectors).all(axis=1))[0])
        raise CorpusError(f"space {space_id!r}: row {row} has non-finite values")
    norms = np.linalg.norm(vectors.astype(np.float64), axis=1)
    zero = np.flatnonzero(norms == 0.0)
    if zero.size:
        raise CorpusError(f"space {space_id!r}: zero-norm row {zero[0]}")
    if np.abs(norms - 1.0).max() <= _UNIT_TOL:
        return vectors
    return (vectors.astype(np.float64) / norms[:, None]).astype(np.float32)


def write_embeddings(path: str | Path, vectors: np.ndarray) -> None:
    """Write an (N, dim) float32 matrix in the KISE binary format."""
    vectors = np.ascontiguousarray(vectors, dtype=np.float32)
    n, dim = vectors.shape
    with open(path, "wb") as f:
        f.write(_HEADER.pack(KISE_MAGIC, KISE_VERSION, n, dim))
        f.write(vectors.tobytes())


def read_embeddings(path: str | Path) -> np.ndarray:
    """Read a KISE embedding file into an (N, dim) float32 matrix.

    Raises:
        CorpusError: bad magic, unsupported version, or truncated payload.
    """
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise CorpusError(f"{path}: truncated header")
    magic, version, n, dim = _HEADER.unpack_from(raw)
    if magic != KISE_MAGIC:
        raise CorpusError(f"{path}: bad magic {magic!r}")
    if version != KISE_VERSION:
        raise CorpusError(f"{path}: unsupported version {version}")
    expected = _HEADER.size + 4 * n * dim
    if len(raw) != expected:
        raise CorpusError(f"{path}: expected {expected} bytes, found {len(raw)}")
    data = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size)
    return data.reshape(n, dim).copy()


def load_manifest(path: str | Path) -> CorpusManifest:
    """Parse a manifest JSON file."""
    path = Path(path)
    with open(path, encoding="utf-8") as f:
        doc = json.load(f)
    try:
        items = [
            ItemRecord(
                item_id=str(rec["item_id"]),
                label=str(rec.get("label", rec["item_id"])),
                thumbnail_uri=rec.get("thumbnail_uri"),
            )
            for rec in doc["items"]
        ]
        spaces = [
            SpaceRef(space_id=str(s["space_id"]), dim=int(s["dim"]), path=str(s["path"]))
            for s in doc["spaces"]
        ]
    except (KeyError, TypeError) as exc:
        raise CorpusError(f"{path}: malformed manifest ({exc})") from exc
    return CorpusManifest(items=items, spaces=spaces)


def load_corpus(manifest_path: str | Path) -> Corpus:
    """Load and validate a corpus from a manifest file.

    Embedding paths are resolved relative to the manifest's directory. All
    vectors are row-normalized at load; zero rows are rejected.

    Raises:
        CorpusError: missing files, dimension mismatch, item-count mismatch,
            or zero-norm rows, naming the offending space and row.
    """
    manifest_path = Path(manifest_path)
    manifest = load_manifest(manifest_path)
    base = manifest_path.parent
    spaces: list[EmbeddingSpace] = []
    for ref in manifest.spaces:
        file_path = base / ref.path
        if not file_path.exists():
            raise CorpusError(f"space {ref.space_id!r}: missing file {file_path}")
        vectors = read_embeddings(file_path)
        if vectors.shape[1] != ref.dim:
            raise CorpusError(
                f"space {ref.space_id!r}: manifest declares dim {ref.dim}, "
                f"file has dim {vectors.shape[1]}"
            )
        vectors = normalize_rows(vectors, ref.space_id)
        spaces.append(EmbeddingSpace(space_id=ref.space_id, dim=ref.dim, vectors=vectors))
    return Corpus(manifest=manifest, spaces=spaces)


def save_corpus(corpus: Corpus, directory: str | Path, name: str = "manifest.json") -> Path:
    """Write a corpus (manifest + KISE files) into ``directory``.

    Returns the manifest path. Embedding files are named ``<space_id>.kise``.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    refs = []
    for space in corpus.spaces:
        filename = f"{space.space_id}.kise"
        write_embeddings(directory / filename, space.vectors)
        refs.append({"space_id": space.space_id, "dim": space.dim, "path": filename})
    doc = {
        "items": [
            {
                "item_id": item.item_id,
                "label": item.label,
                "thumbnail_uri": item.thumbnail_uri,
            }
            for item in corpus.manifest.items
        ],
        "spaces": refs,
    }
    manifest_path = directory / name
    with open(manifest_path, "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=2)
        f.write("\n")
    return manifest_path


def similarity(space: EmbeddingSpace, a: int, b: int) -> float:
    """Cosine similarity between items ``a`` and ``b`` in one space.

    Rows are unit norm, so this is their dot product, accumulated in float64.

    Raises:
        IndexError: item index out of range.
    """
    n = space.n_items
    if not (0 <= a < n and 0 <= b < n):
        raise IndexError(f"item index out of range: ({a}, {b}) with N={n}")
    return float(np.dot(space.vectors64[a], space.vectors64[b]))


def similarity_to_all(space: EmbeddingSpace, query: np.ndarray) -> np.ndarray:
    """Cosine similarity of ``query`` against every row of the space.

    The query is normalized internally; rows are already unit. Single GEMM over
    the whole matrix, float64 accumulation, no per-item allocation.

    Args:
        query: (dim,) vector, any float dtype, nonzero.

    Returns:
        (N,) float64 score vector.

    Raises:
        CorpusError: dimension mismatch or zero-norm query.
    """
    query = np.asarray(query, dtype=np.float64).reshape(-1)
    if query.shape[0] != space.dim:
        raise CorpusError(
            f"space {space.space_id!r}: query dim {query.shape[0]} != {space.dim}"
        )
    norm = np.linalg.norm(query)
    if norm == 0.0:
        raise CorpusError(f"space {space.space_id!r}: zero-norm query")
    return space.vectors64 @ (query / norm)


def norm_statistics(space: EmbeddingSpace) -> dict[str, float]:
    """Min/mean/max row norms for one space, for `ingest --check` reporting."""
    norms = np.linalg.norm(space.vectors.astype(np.float64), axis=1)
    return {
        "min": float(norms.min()),
        "mean": float(norms.mean()),
        "max": float(norms.max()),
    }
