"""Self-supervised trajectory generation for predictor training.

Sessions run under hard (confidence 1) updates with majority-vote labels and
alternating display strategies; a trajectory is stored only if the target
reaches rank 1 at some step 1 <= t <= max_steps. Records carry everything the
trainer needs to rebuild judgment tokens: per-step displays, labels, per-space
alignment bits, per-space state embeddings, and the per-space query vectors.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from kisrf.corpus import Corpus
from kisrf.policies import POLICY_PICHUNTER, run_session
from kisrf.session import Hyperparams
from kisrf.synth import QueryRecord

logger = logging.getLogger(__name__)


@dataclass
class GenerationStats:
    """Outcome of one generation run."""

    sessions: int
    kept: int
    path: Path

    @property
    def kept_fraction(self) -> float:
        return self.kept / self.sessions if self.sessions else 0.0


def session_to_record(
    query: QueryRecord, result, corpus: Corpus
) -> dict | None:
    """Convert a finished session into a trajectory record dict.

    Returns None when the session is filtered out: no convergence within
    max_steps, or convergence at step 0 (nothing to learn from).
    """
    converged = result.converged_step
    if converged is None or converged == 0:
        return None
    steps = []
    for t, rec in enumerate(result.state.history, start=1):
        verdicts = rec.verdict["pairs"]
        f = corpus.n_spaces
        alignment = [
            [int(v["alignment"][space]) for v in verdicts] for space in range(f)
        ]
        steps.append(
            {
                "display": rec.display.to_dict(),
                "labels": rec.labels,
                "alignment": alignment,
                "state_embeddings": [
                    [float(x) for x in emb] for emb in rec.state_embeddings
                ],
                "post_rank": result.ranks[t],
            }
        )
    return {
        "target": query.target,
        "sigma": query.sigma,
        "bucket": list(query.bucket) if query.bucket else None,
        "initial_rank": result.ranks[0],
        "query": [[float(x) for x in v] for v in query.vectors],
        "steps": steps,
        "terminal_step": converged,
    }


def generate_trajectories(
    corpus: Corpus,
    queries: list[QueryRecord],
    params: Hyperparams,
    seed: int,
    out_path: str | Path,
) -> GenerationStats:
    """Run one session per query and write the kept trajectories as JSONL."""
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    kept = 0
    with open(out_path, "w", encoding="utf-8") as fh:
        for qi, query in enumerate(queries):
            session_seed = int(
                np.random.SeedSequence((seed, qi)).generate_state(1)[0]
            )
            result = run_session(
                corpus,
                query.vectors,
                query.target,
                policy=POLICY_PICHUNTER,
                params=params,
                seed=session_seed,
                strategy="alternate",
            )
            record = session_to_record(query, result, corpus)
            if record is not None:
                fh.write(json.dumps(record))
                fh.write("\n")
                kept += 1
    stats = GenerationStats(sessions=len(queries), kept=kept, path=out_path)
    logger.info(
        "trajectories: kept %d/%d sessions (%.2f) -> %s",
        stats.kept, stats.sessions, stats.kept_fraction, out_path,
    )
    return stats


def load_trajectories(path: str | Path) -> list[dict]:
    """Read a JSONL trajectory file (one record per line)."""
    records = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records
