"""Session driver: one place that advances a session step by step.

The driver owns the per-session RNG and the display/feedback alternation, so a
simulated harness run and an HTTP demo session with the same seed consume
randomness in the same order and produce identical rank traces. Policies differ
only in where judgment confidences come from: the trained predictors ("ours"),
the constant 1 ("pichunter"), or per-space coin flips ("random").
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from kisrf.corpus import Corpus
from kisrf.display import Display, make_display
from kisrf.perception import PerceptionPredictor, encode_step, predict_confidences, state_embedding
from kisrf.session import (
    Hyperparams,
    Judgment,
    SessionState,
    StepRecord,
    apply_update,
    init_session,
    rank_of,
    temporal_hard,
    temporal_soft,
)
from kisrf.simulator import judge

POLICY_OURS = "ours"
POLICY_PICHUNTER = "pichunter"
POLICY_RANDOM = "random"
POLICIES = (POLICY_OURS, POLICY_PICHUNTER, POLICY_RANDOM)


@dataclass
class FeedbackResult:
    """Summary of one applied step."""

    step: int
    confidences: list[list[float]]
    target_rank: int | None


class SessionDriver:
    """Drives one session: propose a display, accept labels, update.

    The pending display is cached until feedback consumes it, which makes
    repeated display reads idempotent and gives the service its
    display/feedback alternation for free.
    """

    def __init__(
        self,
        corpus: Corpus,
        state: SessionState,
        policy: str = POLICY_PICHUNTER,
        predictors: list[PerceptionPredictor] | None = None,
        query_vectors: list[np.ndarray] | None = None,
        seed: int = 0,
    ):
        if policy not in POLICIES:
            raise ValueError(f"unknown policy {policy!r}; expected one of {POLICIES}")
        if policy == POLICY_OURS:
            if predictors is None or len(predictors) != corpus.n_spaces:
                raise ValueError(
                    "policy 'ours' needs one trained predictor per space"
                )
            if query_vectors is None:
                raise ValueError("policy 'ours' needs the per-space query vectors")
        self.corpus = corpus
        self.state = state
        self.policy = policy
        self.predictors = predictors
        self.query_vectors = query_vectors
        self.rng = np.random.default_rng(seed)
        self.pending: Display | None = None
        self.tokens: list[list] = [[] for _ in corpus.spaces]

    @property
    def finished(self) -> bool:
        return self.state.step >= self.state.params.max_steps

    def propose_display(self, strategy: str = "greedy") -> Display:
        """Build (or return the cached) display for the next step.

        Raises:
            RuntimeError: the session already ran max_steps.
        """
        if self.finished:
            raise RuntimeError(f"session finished after {self.state.step} steps")
        if self.pending is None:
            seed = int(self.rng.integers(2**63))
            self.pending = make_display(
                self.state,
                strategy,
                self.state.params.num_pairs,
                self.state.params.n_display,
                seed,
            )
        return self.pending

    def submit(self, labels: list[int], verdicts: list | None = None) -> FeedbackResult:
        """Apply one step of feedback against the pending display.

        Raises:
            RuntimeError: no pending display.
            ValueError: label count mismatch.
        """
        if self.pending is None:
            raise RuntimeError("no pending display; call propose_display first")
        display = self.pending
        if len(labels) != len(display.pairs):
            raise ValueError(
                f"{len(display.pairs)} pairs but {len(labels)} labels"
            )
        judgments = [
            Judgment(a=a, b=b, label=int(l)) for (a, b), l in zip(display.pairs, labels)
        ]
        state = self.state
        params = state.params
        state_embeddings = [
            state_embedding(space, state.probs, state.active)
            for space in self.corpus.spaces
        ]
        confidences = self._confidences(display, labels)
        temporals = []
        for f, space in enumerate(self.corpus.spaces):
            if self.policy == POLICY_PICHUNTER:
                temporals.append(temporal_hard(state, judgments, space, params.rho))
            else:
                temporals.append(
                    temporal_soft(state, judgments, confidences[f], space, params.rho)
                )
        apply_update(state, temporals)
        verdict_doc = None
        if verdicts is not None:
            verdict_doc = {"pairs": [v.to_dict() for v in verdicts]}
        state.history.append(
            StepRecord(
                display=display,
                labels=[int(l) for l in labels],
                state_embeddings=state_embeddings,
                verdict=verdict_doc,
            )
        )
        self.pending = None
        target_rank = rank_of(state, state.target) if state.target is not None else None
        return FeedbackResult(
            step=state.step,
            confidences=[[float(c) for c in row] for row in confidences],
            target_rank=target_rank,
        )

    def _confidences(self, display: Display, labels: list[int]) -> list[np.ndarray]:
        """Per-space confidence vectors for the pending judgments.

        The random policy draws its coins from the session RNG in space order,
        after the display seed, so traces are reproducible.
        """
        num = len(display.pairs)
        out = []
        for f in range(self.corpus.n_spaces):
            if self.policy == POLICY_OURS:
                tokens = encode_step(self.corpus, f, self.state, display, labels)
                self.tokens[f].extend(tokens)
                conf = predict_confidences(
                    self.predictors[f], self.query_vectors[f], self.tokens[f]
                )
            elif self.policy == POLICY_RANDOM:
                conf = self.rng.integers(0, 2, size=num).astype(np.float64)
            else:
                conf = np.ones(num, dtype=np.float64)
            out.append(conf)
        return out


@dataclass
class SessionResult:
    """Per-step rank trace of one simulated session.

    ``ranks[0]`` is the initial rank; the trace stops early once the target
    reaches rank 1 (converged sessions keep rank 1 thereafter by convention).
    """

    ranks: list[int]
    state: SessionState
    seconds_per_step: float

    @property
    def converged_step(self) -> int | None:
        for step, rank in enumerate(self.ranks):
            if rank == 1:
                return step
        return None

    def rank_at(self, step: int) -> int:
        return self.ranks[min(step, len(self.ranks) - 1)]


def run_session(
    corpus: Corpus,
    query_vectors: list[np.ndarray],
    target: int,
    policy: str,
    params: Hyperparams,
    seed: int,
    predictors: list[PerceptionPredictor] | None = None,
    strategy: str = "greedy",
) -> SessionResult:
    """Run one simulated session under a policy, early-stopping at rank 1.

    ``strategy`` is a display-strategy name, or "alternate" to switch between
    greedy (odd steps) and diverse (even steps) as used for training-data
    generation. Evaluation uses greedy only.
    """
    state = init_session(
        corpus, params, query_vectors=query_vectors, target=target
    )
    driver = SessionDriver(
        corpus,
        state,
        policy=policy,
        predictors=predictors,
        query_vectors=query_vectors,
        seed=seed,
    )
    ranks = [rank_of(state, target)]
    started = time.perf_counter()
    steps_run = 0
    while ranks[-1] != 1 and not driver.finished:
        if strategy == "alternate":
            step_strategy = "greedy" if state.step % 2 == 0 else "diverse"
        else:
            step_strategy = strategy
        display = driver.propose_display(step_strategy)
        verdicts = [judge(corpus, pair, target) for pair in display.pairs]
        labels = [v.majority for v in verdicts]
        result = driver.submit(labels, verdicts=verdicts)
        ranks.append(result.target_rank)
        steps_run += 1
    elapsed = time.perf_counter() - started
    return SessionResult(
        ranks=ranks,
        state=state,
        seconds_per_step=elapsed / steps_run if steps_run else 0.0,
    )
