"""Synthetic corpora with controlled inter-space agreement, plus query noising.

Row i of space f is the unit normalization of
sqrt(rho_corr) * z_i + sqrt(1 - rho_corr) * w_f * e_i^f, where z is a shared
latent, e is independent per space, and w_f weights the private component.
With several spaces, space 0 is deliberately divergent (large w_0) while the
rest stay mainstream (small w): mainstream spaces track the shared structure
and so almost always vote with the cross-space majority, whereas the divergent
space brings a strong private opinion that systematically clashes with the
consensus. rho_corr = 1 makes all spaces byte-identical; rho_corr = 0 makes
them independent; a single-space corpus is plain isotropic Gaussian.

Queries are unit normalizations of the target row plus sigma times a fixed
unit noise direction, one direction per space, so the initial rank of the
target is a (noisily monotone) function of sigma that a per-target bisection
can invert to land in a requested depth bucket. The divergent space's noise is
capped: its query stays anchored to the target even for deep-start
calibrations, which makes that space's own pairwise choices - and hence
whether they will match the majority - readable from the display geometry
against its query, instead of drowned in calibration noise. Deep initial
ranks are still reachable because the bisection drives the remaining spaces'
queries away from the target.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from kisrf.corpus import (
    Corpus,
    CorpusManifest,
    EmbeddingSpace,
    ItemRecord,
    SpaceRef,
    similarity_to_all,
)

logger = logging.getLogger(__name__)

# Bisection budget per calibration chunk: bracket doublings, then halvings.
_BRACKET_ROUNDS = 16
_BISECT_ROUNDS = 22

# Private-component weights. In a multi-space corpus, space 0 amplifies its
# private directions (it disagrees with the majority often, and by a margin
# tied to geometry rather than coin noise) while the other spaces suppress
# theirs, so their votes nearly always match the majority.
DIVERGENT_WEIGHT = 3.2
MAINSTREAM_WEIGHT = 0.65
# Ceiling on the divergent space's query noise: keeps that space's query
# pinned near the target at every calibrated depth.
ANCHOR_NOISE_CAP = 0.45


@dataclass
class SynthSpec:
    """Recipe for one synthetic corpus."""

    n_items: int
    n_spaces: int
    dim: int
    inter_space_correlation: float
    query_noise: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.inter_space_correlation <= 1.0:
            raise ValueError(
                f"inter_space_correlation must be in [0, 1], got "
                f"{self.inter_space_correlation}"
            )
        if self.n_items < 1 or self.n_spaces < 1 or self.dim < 1:
            raise ValueError("n_items, n_spaces, dim must be positive")

    def to_dict(self) -> dict:
        return {
            "n_items": self.n_items,
            "n_spaces": self.n_spaces,
            "dim": self.dim,
            "inter_space_correlation": self.inter_space_correlation,
            "query_noise": self.query_noise,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "SynthSpec":
        return cls(**doc)


@dataclass
class QueryRecord:
    """One evaluation query: a noised view of a known target."""

    target: int
    sigma: float
    vectors: list[np.ndarray]
    initial_rank: int
    bucket: tuple[int, int] | None = None

    def to_dict(self) -> dict:
        return {
            "target": self.target,
            "sigma": self.sigma,
            "vectors": [[float(x) for x in v] for v in self.vectors],
            "initial_rank": self.initial_rank,
            "bucket": list(self.bucket) if self.bucket else None,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "QueryRecord":
        return cls(
            target=int(doc["target"]),
            sigma=float(doc["sigma"]),
            vectors=[np.asarray(v, dtype=np.float32) for v in doc["vectors"]],
            initial_rank=int(doc["initial_rank"]),
            bucket=tuple(doc["bucket"]) if doc.get("bucket") else None,
        )


def _private_weight(f: int, n_spaces: int) -> float:
    """Weight of space ``f``'s private component; space 0 diverges when F > 1."""
    if n_spaces == 1:
        return 1.0
    return DIVERGENT_WEIGHT if f == 0 else MAINSTREAM_WEIGHT


def _query_sigma(sigma: float, f: int, n_spaces: int) -> float:
    """Effective query noise for space ``f``; the divergent space is capped."""
    if n_spaces > 1 and f == 0:
        return min(sigma, ANCHOR_NOISE_CAP)
    return sigma


def synth_corpus(spec: SynthSpec) -> Corpus:
    """Generate a corpus per ``spec``; fully determined by ``spec.seed``."""
    rng = np.random.default_rng(spec.seed)
    rho = spec.inter_space_correlation
    z = rng.standard_normal((spec.n_items, spec.dim))
    spaces = []
    refs = []
    for f in range(spec.n_spaces):
        e = rng.standard_normal((spec.n_items, spec.dim))
        w = _private_weight(f, spec.n_spaces)
        x = np.sqrt(rho) * z + np.sqrt(1.0 - rho) * w * e
        norms = np.linalg.norm(x, axis=1)
        vectors = (x / norms[:, None]).astype(np.float32)
        space_id = f"s{f}"
        spaces.append(EmbeddingSpace(space_id=space_id, dim=spec.dim, vectors=vectors))
        refs.append(SpaceRef(space_id=space_id, dim=spec.dim, path=f"{space_id}.kise"))
    items = [
        ItemRecord(item_id=f"item-{i:06d}", label=f"item {i}")
        for i in range(spec.n_items)
    ]
    return Corpus(manifest=CorpusManifest(items=items, spaces=refs), spaces=spaces)


def make_query(
    corpus: Corpus, target: int, sigma: float, rng: np.random.Generator
) -> list[np.ndarray]:
    """Per-space query vectors: normalize(row_target + sigma * unit noise).

    The divergent space's sigma is capped at ``ANCHOR_NOISE_CAP``; its noise
    direction is still drawn so the draw sequence matches the uncapped case.
    """
    vectors = []
    for f, space in enumerate(corpus.spaces):
        eta = rng.standard_normal(space.dim)
        eta /= np.linalg.norm(eta)
        q = space.vectors64[target] + _query_sigma(sigma, f, corpus.n_spaces) * eta
        q /= np.linalg.norm(q)
        vectors.append(q.astype(np.float32))
    return vectors


def initial_scores(corpus: Corpus, vectors: list[np.ndarray]) -> np.ndarray:
    """Mean cosine of the query against every item, the session-init score."""
    acc = np.zeros(corpus.n_items, dtype=np.float64)
    for space, q in zip(corpus.spaces, vectors):
        acc += similarity_to_all(space, q)
    return acc / corpus.n_spaces


def initial_rank(corpus: Corpus, target: int, vectors: list[np.ndarray]) -> int:
    """1-based rank of the target under the initial scores, index tie-break."""
    scores = initial_scores(corpus, vectors)
    s = scores[target]
    return 1 + int(np.count_nonzero(scores > s)) + int(
        np.count_nonzero(scores[:target] == s)
    )


def _chunk_ranks(
    corpus: Corpus, targets: np.ndarray, eta: np.ndarray, sigma: np.ndarray
) -> np.ndarray:
    """Initial ranks for a chunk of targets at per-target sigmas.

    One float32 GEMM per space over the whole chunk; ranks use a strict-greater
    count (the target's own score ties only with itself).
    """
    m = targets.shape[0]
    acc = np.zeros((corpus.n_items, m), dtype=np.float64)
    for f, space in enumerate(corpus.spaces):
        s_eff = sigma
        if corpus.n_spaces > 1 and f == 0:
            s_eff = np.minimum(sigma, ANCHOR_NOISE_CAP)
        q = space.vectors[targets].astype(np.float64) + s_eff[:, None] * eta[:, f, :]
        q /= np.linalg.norm(q, axis=1)[:, None]
        acc += space.vectors @ q.astype(np.float32).T
    own = acc[targets, np.arange(m)]
    return 1 + (acc > own[None, :]).sum(axis=0)


def calibrate_queries(
    corpus: Corpus,
    buckets: tuple[tuple[int, int], ...],
    per_bucket: int,
    seed: int,
    exclude: frozenset[int] | set[int] = frozenset(),
) -> list[QueryRecord]:
    """Find (target, sigma) pairs whose initial rank lands in each bucket.

    Buckets are half-open intervals (lo, hi]. Per target, the noise directions
    are fixed and sigma is bisected against the rank curve; targets that never
    land in the bucket (non-monotone wiggles, unlucky directions) are skipped
    and replaced from the shuffled item pool. Calibrated ranks are re-verified
    in float64 before acceptance.

    Raises:
        RuntimeError: the item pool is exhausted before a bucket fills.
    """
    rng = np.random.default_rng(seed)
    pool = [int(i) for i in rng.permutation(corpus.n_items) if int(i) not in exclude]
    pool_pos = 0
    out: list[QueryRecord] = []
    for lo, hi in buckets:
        got: list[QueryRecord] = []
        while len(got) < per_bucket:
            need = per_bucket - len(got)
            take = min(len(pool) - pool_pos, need + max(8, need // 4))
            if take <= 0:
                raise RuntimeError(
                    f"bucket ({lo}, {hi}]: item pool exhausted with "
                    f"{len(got)}/{per_bucket} queries"
                )
            targets = np.asarray(pool[pool_pos : pool_pos + take], dtype=np.int64)
            pool_pos += take
            got.extend(
                _calibrate_chunk(corpus, targets, (lo, hi), rng)[: per_bucket - len(got)]
            )
        out.extend(got)
        logger.info("bucket (%d, %d]: calibrated %d queries", lo, hi, len(got))
    return out


def _calibrate_chunk(
    corpus: Corpus,
    targets: np.ndarray,
    bucket: tuple[int, int],
    rng: np.random.Generator,
) -> list[QueryRecord]:
    lo, hi = bucket
    m = targets.shape[0]
    f = corpus.n_spaces
    dim = corpus.spaces[0].dim
    eta = rng.standard_normal((m, f, dim))
    eta /= np.linalg.norm(eta, axis=2)[:, :, None]

    # Bracket: double sigma until the rank leaves the shallow side.
    sigma_hi = np.full(m, 0.1)
    bracketed = np.zeros(m, dtype=bool)
    for _ in range(_BRACKET_ROUNDS):
        ranks = _chunk_ranks(corpus, targets, eta, sigma_hi)
        newly = ~bracketed & (ranks > lo)
        bracketed |= newly
        sigma_hi[~bracketed] *= 2.0

    sigma_lo = np.zeros(m)
    best_sigma = np.full(m, np.nan)
    for _ in range(_BISECT_ROUNDS):
        mid = 0.5 * (sigma_lo + sigma_hi)
        ranks = _chunk_ranks(corpus, targets, eta, mid)
        in_bucket = (ranks > lo) & (ranks <= hi)
        best_sigma[in_bucket] = mid[in_bucket]
        deep = ranks > lo
        sigma_hi[deep] = mid[deep]
        sigma_lo[~deep] = mid[~deep]

    out = []
    for i in range(m):
        if not np.isfinite(best_sigma[i]):
            continue
        target = int(targets[i])
        sigma = float(best_sigma[i])
        vectors = []
        for s, space in enumerate(corpus.spaces):
            q = space.vectors64[target] + _query_sigma(sigma, s, corpus.n_spaces) * eta[i, s]
            q /= np.linalg.norm(q)
            vectors.append(q.astype(np.float32))
        rank = initial_rank(corpus, target, vectors)
        if lo < rank <= hi:
            out.append(
                QueryRecord(
                    target=target,
                    sigma=sigma,
                    vectors=vectors,
                    initial_rank=rank,
                    bucket=bucket,
                )
            )
    return out


def oracle_agreement(corpus: Corpus, n_samples: int, seed: int) -> float:
    """Mean pairwise-space agreement of oracle choices on random triples.

    Samples (a, b, target) with distinct entries and compares the sign of the
    similarity gap across every pair of spaces.
    """
    rng = np.random.default_rng(seed)
    n = corpus.n_items
    a = rng.integers(0, n, size=n_samples)
    b = rng.integers(0, n, size=n_samples)
    t = rng.integers(0, n, size=n_samples)
    ok = (a != b) & (a != t) & (b != t)
    a, b, t = a[ok], b[ok], t[ok]
    choices = []
    for space in corpus.spaces:
        v = space.vectors64
        gap = np.einsum("ij,ij->i", v[a], v[t]) - np.einsum("ij,ij->i", v[b], v[t])
        choices.append(gap < 0.0)
    f = len(choices)
    agreements = [
        float(np.mean(choices[i] == choices[j]))
        for i in range(f)
        for j in range(i + 1, f)
    ]
    return float(np.mean(agreements))


def save_queries(
    queries: list[QueryRecord], spec: SynthSpec, path: str | Path
) -> None:
    """Write a query set as JSON next to the spec that produced its corpus."""
    doc = {"spec": spec.to_dict(), "queries": [q.to_dict() for q in queries]}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)
        fh.write("\n")


def load_queries(path: str | Path) -> tuple[SynthSpec, list[QueryRecord]]:
    """Read a query set written by ``save_queries``."""
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    spec = SynthSpec.from_dict(doc["spec"])
    return spec, [QueryRecord.from_dict(q) for q in doc["queries"]]
