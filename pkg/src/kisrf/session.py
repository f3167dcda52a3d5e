"""Per-session probability state and Bayesian relevance-feedback updates.

The engine keeps an N-length probability vector over corpus items. Each step,
pairwise judgments produce a per-space temporal factor (hard or
confidence-weighted soft), the factors are summed over spaces, multiplied into
the prior, and renormalized. All probability arithmetic is float64; similarity
gaps are accumulated in the gap domain first and pushed through one sigmoid per
pair per candidate so that rho = 0.05 (arguments up to +/-40) never saturates
asymmetrically.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Sequence

import numpy as np
from scipy.special import expit

from kisrf.corpus import Corpus, EmbeddingSpace, similarity_to_all

if TYPE_CHECKING:
    from kisrf.display import Display

logger = logging.getLogger(__name__)

# Snapshot probabilities below this floor are dropped from the sparse JSON form.
SNAPSHOT_PROB_FLOOR = 1e-12


class UnderflowError(ArithmeticError):
    """Multiplicative update lost all probability mass.

    Seven steps of sigmoid products can underflow float64 on adversarial
    inputs; the fix is accumulating the update in the log domain rather than
    multiplying raw factors.
    """


@dataclass
class Hyperparams:
    """Session knobs. Defaults match the evaluation setup.

    ``n_prune = 0`` disables pruning.
    """

    rho: float = 0.05
    num_pairs: int = 5
    n_display: int = 100
    n_prune: int = 5000
    max_steps: int = 7
    init_temperature: float = 0.05

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        if self.rho <= 0:
            raise ValueError(f"rho must be positive, got {self.rho}")
        if self.num_pairs < 1:
            raise ValueError(f"num_pairs must be >= 1, got {self.num_pairs}")
        if self.init_temperature <= 0:
            raise ValueError(
                f"init_temperature must be positive, got {self.init_temperature}"
            )
        if self.n_prune < 0 or self.max_steps < 1 or self.n_display < 0:
            raise ValueError("n_prune, n_display must be >= 0 and max_steps >= 1")

    def to_dict(self) -> dict:
        return {
            "rho": self.rho,
            "num_pairs": self.num_pairs,
            "n_display": self.n_display,
            "n_prune": self.n_prune,
            "max_steps": self.max_steps,
            "init_temperature": self.init_temperature,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Hyperparams":
        params = cls(**doc)
        params.validate()
        return params


@dataclass(frozen=True)
class Judgment:
    """One judged pair: label 0 selects ``a``, label 1 selects ``b``."""

    a: int
    b: int
    label: int

    def __post_init__(self) -> None:
        if self.a == self.b:
            raise ValueError(f"pair must contain distinct items, got ({self.a}, {self.a})")
        if self.label not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {self.label}")

    @property
    def selected(self) -> int:
        return self.a if self.label == 0 else self.b

    @property
    def rejected(self) -> int:
        return self.b if self.label == 0 else self.a


@dataclass
class StepRecord:
    """History entry for one completed step.

    ``state_embeddings`` holds the per-space unit-mean embeddings of the
    distribution the display was drawn from (pre-update), aligned with
    ``corpus.spaces`` order.
    """

    display: "Display"
    labels: list[int]
    state_embeddings: list[np.ndarray]
    verdict: dict | None = None


@dataclass
class SessionState:
    """Mutable per-session state; one logical owner, serialized mutations."""

    probs: np.ndarray
    active: np.ndarray
    step: int
    history: list[StepRecord]
    params: Hyperparams
    target: int | None = None

    @property
    def n_items(self) -> int:
        return self.probs.shape[0]

    @property
    def n_active(self) -> int:
        return int(np.count_nonzero(self.active))

    def is_active(self, item: int) -> bool:
        return bool(self.active[item])


def init_session(
    corpus: Corpus,
    params: Hyperparams,
    query_vectors: Sequence[np.ndarray] | None = None,
    scores: np.ndarray | None = None,
    target: int | None = None,
) -> SessionState:
    """Build the step-0 state from an initial query.

    Exactly one of ``query_vectors`` (one vector per space, mean cosine taken
    over spaces) or ``scores`` (precomputed N-length score vector) must be
    given. The initial distribution is a temperature softmax of the scores;
    when ``params.n_prune > 0``, all but the top n_prune items of this initial
    ranking are masked out and the remainder renormalized.

    Raises:
        ValueError: neither or both query forms given, or dim mismatch.
    """
    params.validate()
    n = corpus.n_items
    if (query_vectors is None) == (scores is None):
        raise ValueError("provide exactly one of query_vectors or scores")
    if query_vectors is not None:
        if len(query_vectors) != corpus.n_spaces:
            raise ValueError(
                f"expected {corpus.n_spaces} query vectors, got {len(query_vectors)}"
            )
        acc = np.zeros(n, dtype=np.float64)
        for space, q in zip(corpus.spaces, query_vectors):
            acc += similarity_to_all(space, q)
        scores = acc / corpus.n_spaces
    else:
        scores = np.asarray(scores, dtype=np.float64).reshape(-1)
        if scores.shape[0] != n:
            raise ValueError(f"scores length {scores.shape[0]} != N={n}")

    # Max-shifted softmax: exp never overflows and the top score never rounds
    # to zero, so init cannot underflow.
    logits = scores / params.init_temperature
    probs = np.exp(logits - logits.max())
    probs /= probs.sum()

    active = np.ones(n, dtype=bool)
    if params.n_prune > 0:
        if params.n_prune >= n:
            logger.warning(
                "n_prune=%d >= N=%d: pruning is a no-op", params.n_prune, n
            )
        else:
            keep = top_indices(probs, active, params.n_prune)
            active = np.zeros(n, dtype=bool)
            active[keep] = True
            probs = np.where(active, probs, 0.0)
            probs /= probs.sum()

    return SessionState(
        probs=probs,
        active=active,
        step=0,
        history=[],
        params=params,
        target=target,
    )


def _pair_gaps(
    state: SessionState,
    judgments: Sequence[Judgment],
    space: EmbeddingSpace,
) -> tuple[np.ndarray, np.ndarray]:
    """Similarity gaps s(v+, v_i) - s(v-, v_i) for each judgment.

    Returns (active_idx, gaps) with gaps of shape (n_active, n_judgments),
    float64. One GEMM over the active rows covers all pairs.
    """
    if not judgments:
        raise ValueError("judgments must be non-empty")
    for j in judgments:
        if not (state.active[j.a] and state.active[j.b]):
            raise ValueError(f"judged pair ({j.a}, {j.b}) contains an inactive item")
    cols = np.empty((space.dim, 2 * len(judgments)), dtype=np.float64)
    for k, j in enumerate(judgments):
        cols[:, 2 * k] = space.vectors64[j.selected]
        cols[:, 2 * k + 1] = space.vectors64[j.rejected]
    vecs = space.vectors64
    if state.active.all():
        active_idx = np.arange(state.n_items)
        scores = vecs @ cols
    else:
        active_idx = np.flatnonzero(state.active)
        scores = vecs[active_idx] @ cols
    return active_idx, scores[:, 0::2] - scores[:, 1::2]


def temporal_hard(
    state: SessionState,
    judgments: Sequence[Judgment],
    space: EmbeddingSpace,
    rho: float,
) -> np.ndarray:
    """Hard temporal factor: sum over pairs of sigmoid(gap / rho).

    Returns an (N,) float64 vector, zero at inactive indices; active entries
    lie in (0, len(judgments)).

    Raises:
        ValueError: empty judgments or a pair touching an inactive item.
    """
    if rho <= 0:
        raise ValueError(f"rho must be positive, got {rho}")
    active_idx, gaps = _pair_gaps(state, judgments, space)
    contrib = expit(gaps / rho).sum(axis=1)
    out = np.zeros(state.n_items, dtype=np.float64)
    out[active_idx] = contrib
    return out


def temporal_soft(
    state: SessionState,
    judgments: Sequence[Judgment],
    confidences: Sequence[float],
    space: EmbeddingSpace,
    rho: float,
) -> np.ndarray:
    """Soft temporal factor: sum over pairs of sigmoid(c_j * gap / rho).

    ``confidences`` scale each judgment's sigmoid argument; c = 1 recovers the
    hard factor, c = 0 turns the pair into a constant 0.5 for every candidate.

    Raises:
        ValueError: length mismatch or confidence outside [0, 1].
    """
    if rho <= 0:
        raise ValueError(f"rho must be positive, got {rho}")
    conf = np.asarray(confidences, dtype=np.float64).reshape(-1)
    if conf.shape[0] != len(judgments):
        raise ValueError(
            f"{len(judgments)} judgments but {conf.shape[0]} confidences"
        )
    if conf.size and (conf.min() < 0.0 or conf.max() > 1.0):
        raise ValueError("confidences must lie in [0, 1]")
    active_idx, gaps = _pair_gaps(state, judgments, space)
    contrib = expit(gaps * (conf / rho)).sum(axis=1)
    out = np.zeros(state.n_items, dtype=np.float64)
    out[active_idx] = contrib
    return out


def apply_update(
    state: SessionState,
    per_space_temporals: Sequence[np.ndarray],
) -> SessionState:
    """Aggregate per-space temporal factors and fold them into the posterior.

    The factors are summed over spaces, multiplied elementwise into the current
    probabilities, and renormalized over the active set. Increments the step
    counter; the caller appends the matching history record.

    Raises:
        ValueError: no factors, shape mismatch, or a factor that is not
            strictly positive on the active set.
        UnderflowError: the update annihilated all probability mass.
    """
    if not per_space_temporals:
        raise ValueError("need at least one per-space temporal vector")
    total = np.zeros(state.n_items, dtype=np.float64)
    for vec in per_space_temporals:
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (state.n_items,):
            raise ValueError(f"temporal vector shape {vec.shape} != ({state.n_items},)")
        if not (vec[state.active] > 0.0).all():
            raise ValueError("temporal factor must be strictly positive on the active set")
        total += vec
    product = state.probs * total
    mass = product.sum()
    if mass <= 0.0 or not np.isfinite(mass):
        raise UnderflowError(
            "update underflowed to zero mass; accumulate updates in the log "
            "domain for this corpus"
        )
    state.probs = product / mass
    state.probs[~state.active] = 0.0
    state.step += 1
    return state


def top_indices(probs: np.ndarray, active: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k highest-probability active items.

    Ordered by descending probability, ties by ascending index. Uses a
    partition to avoid a full sort; boundary ties are resolved exactly.
    """
    act = np.flatnonzero(active)
    p = probs[act]
    if k >= act.size:
        pool = np.arange(act.size)
        k = act.size
    else:
        part = np.argpartition(-p, k - 1)[:k]
        threshold = p[part].min()
        pool = np.flatnonzero(p >= threshold)
    order = np.lexsort((act[pool], -p[pool]))
    return act[pool[order][:k]]


def rank_of(state: SessionState, item: int) -> int:
    """1-based rank of ``item`` by descending probability, index tie-break.

    Inactive items get the sentinel rank N and a logged warning.
    """
    n = state.n_items
    if not (0 <= item < n):
        raise IndexError(f"item {item} out of range for N={n}")
    if not state.active[item]:
        logger.warning("rank_of: item %d is inactive (pruned); sentinel rank %d", item, n)
        return n
    p = state.probs[item]
    greater = int(np.count_nonzero(state.active & (state.probs > p)))
    equal_before = int(
        np.count_nonzero(state.active[:item] & (state.probs[:item] == p))
    )
    return 1 + greater + equal_before


def ranking(state: SessionState, k: int) -> list[tuple[int, float]]:
    """Top-k (item index, probability) pairs in rank order."""
    idx = top_indices(state.probs, state.active, k)
    return [(int(i), float(state.probs[i])) for i in idx]


def snapshot_to_json(state: SessionState) -> str:
    """Serialize a session to JSON.

    Probabilities are stored sparsely: active entries above 1e-12 only. The
    dropped tail is at most N * 1e-12, well inside the engine's +/-1e-6
    normalization tolerance, and is not redistributed on load.
    """
    from kisrf.display import Display  # deferred to avoid an import cycle

    probs_doc = {
        str(int(i)): float(state.probs[i])
        for i in np.flatnonzero(state.active & (state.probs > SNAPSHOT_PROB_FLOOR))
    }
    history_doc = []
    for rec in state.history:
        history_doc.append(
            {
                "display": rec.display.to_dict(),
                "labels": [int(v) for v in rec.labels],
                "state_embeddings": [
                    [float(x) for x in emb] for emb in rec.state_embeddings
                ],
                "verdict": rec.verdict,
            }
        )
    doc = {
        "n_items": state.n_items,
        "step": state.step,
        "probs": probs_doc,
        "active": [int(i) for i in np.flatnonzero(state.active)],
        "history": history_doc,
        "params": state.params.to_dict(),
        "target": state.target,
    }
    return json.dumps(doc)


def snapshot_from_json(text: str) -> SessionState:
    """Rebuild a session from its JSON snapshot."""
    from kisrf.display import Display  # deferred to avoid an import cycle

    doc = json.loads(text)
    n = int(doc["n_items"])
    probs = np.zeros(n, dtype=np.float64)
    for key, value in doc["probs"].items():
        probs[int(key)] = float(value)
    active = np.zeros(n, dtype=bool)
    active[np.asarray(doc["active"], dtype=np.int64)] = True
    history = [
        StepRecord(
            display=Display.from_dict(rec["display"]),
            labels=[int(v) for v in rec["labels"]],
            state_embeddings=[
                np.asarray(emb, dtype=np.float64) for emb in rec["state_embeddings"]
            ],
            verdict=rec.get("verdict"),
        )
        for rec in doc["history"]
    ]
    return SessionState(
        probs=probs,
        active=active,
        step=int(doc["step"]),
        history=history,
        params=Hyperparams.from_dict(doc["params"]),
        target=doc.get("target"),
    )
