"""Policy evaluation: step-wise recall, depth buckets, t-tests, reports.

Sessions are paired across policies: query i always runs with the same session
seed regardless of policy, so per-bucket comparisons are matched. The CSV
output is byte-deterministic for fixed seeds; wall-clock numbers only appear
in the JSON report.
"""

from __future__ import annotations

import io
import json
import logging
from dataclasses import dataclass

import numpy as np

from kisrf.corpus import Corpus
from kisrf.perception import PerceptionPredictor
from kisrf.policies import POLICIES, POLICY_OURS, SessionResult, run_session
from kisrf.session import Hyperparams
from kisrf.stats import TTestResult, paired_t_test
from kisrf.synth import QueryRecord

logger = logging.getLogger(__name__)

BUCKETS = ((10, 50), (50, 100), (100, 500), (500, 1000), (1000, 5000))
RECALL_KS = (1, 10)


def bucket_label(bucket: tuple[int, int]) -> str:
    return f"({bucket[0]},{bucket[1]}]"


@dataclass
class PolicySpec:
    """One evaluated variant: a display name plus the update mechanism.

    ``kind`` picks the confidence source (one of the session policies);
    ablation variants reuse a kind under their own name, e.g. the soft-update
    ablation runs hard updates under the name "ours-softupd" and the retrained
    input ablations run kind "ours" with their own predictors.
    """

    name: str
    kind: str
    predictors: list[PerceptionPredictor] | None = None

    def __post_init__(self) -> None:
        if self.kind not in POLICIES:
            raise ValueError(f"unknown policy kind {self.kind!r}")
        if self.kind == POLICY_OURS and not self.predictors:
            raise ValueError(f"policy {self.name!r} needs predictors")


@dataclass
class PolicyEval:
    """Recall curves for one policy."""

    name: str
    n_queries: int
    recall: dict[int, list[float]]
    bucket_recall: dict[str, dict[int, list[float]]]
    bucket_counts: dict[str, int]
    seconds_per_step: float

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "n_queries": self.n_queries,
            "recall": {str(k): v for k, v in self.recall.items()},
            "bucket_recall": {
                b: {str(k): v for k, v in per.items()}
                for b, per in self.bucket_recall.items()
            },
            "bucket_counts": self.bucket_counts,
            "seconds_per_step": self.seconds_per_step,
        }


@dataclass
class EvalReport:
    """Everything one `evaluate` run produced."""

    policies: list[PolicyEval]
    t_tests: dict[str, TTestResult]
    max_steps: int
    base_seed: int
    params: Hyperparams
    buckets: tuple[tuple[int, int], ...] = BUCKETS

    def policy(self, name: str) -> PolicyEval:
        for p in self.policies:
            if p.name == name:
                return p
        raise KeyError(f"no policy {name!r} in report")

    def to_json(self) -> str:
        doc = {
            "params": self.params.to_dict(),
            "base_seed": self.base_seed,
            "max_steps": self.max_steps,
            "buckets": [list(b) for b in self.buckets],
            "policies": [p.to_dict() for p in self.policies],
            "t_tests": {k: v.to_dict() for k, v in self.t_tests.items()},
        }
        return json.dumps(doc, indent=2) + "\n"

    def to_csv(self) -> str:
        """Byte-deterministic CSV: policy, bucket, step, n, recall columns."""
        out = io.StringIO()
        ks = sorted(self.policies[0].recall) if self.policies else list(RECALL_KS)
        header = ["policy", "bucket", "step", "n"] + [f"recall_at_{k}" for k in ks]
        out.write(",".join(header) + "\n")
        for pol in self.policies:
            rows: list[tuple[str, int, dict[int, list[float]]]] = [
                ("all", pol.n_queries, pol.recall)
            ]
            for bucket in self.buckets:
                label = bucket_label(bucket)
                if label in pol.bucket_recall:
                    rows.append((label, pol.bucket_counts[label], pol.bucket_recall[label]))
            for label, n, recall in rows:
                for step in range(self.max_steps + 1):
                    cells = [pol.name, f'"{label}"', str(step), str(n)]
                    cells += [repr(recall[k][step]) for k in ks]
                    out.write(",".join(cells) + "\n")
        return out.getvalue()


def session_seed(base_seed: int, query_index: int) -> int:
    """Stable per-query seed, shared across policies for pairing."""
    return int(np.random.SeedSequence((base_seed, query_index)).generate_state(1)[0])


def _recall_curves(
    results: list[SessionResult], max_steps: int, ks=RECALL_KS
) -> dict[int, list[float]]:
    return {
        k: [
            float(np.mean([r.rank_at(step) <= k for r in results]))
            for step in range(max_steps + 1)
        ]
        for k in ks
    }


def evaluate(
    corpus: Corpus,
    queries: list[QueryRecord],
    policies: list[PolicySpec],
    params: Hyperparams,
    base_seed: int,
) -> EvalReport:
    """Run every policy over every query and assemble the report.

    Buckets with no queries are absent from the report, not zero. A paired
    t-test on per-query final-step recall@1 (sessions matched by seed) is
    computed for every ordered policy pair.
    """
    if not queries:
        raise ValueError("no queries to evaluate")
    per_policy: list[PolicyEval] = []
    final_hits: dict[str, list[float]] = {}
    for spec in policies:
        results: list[SessionResult] = []
        for qi, query in enumerate(queries):
            results.append(
                run_session(
                    corpus,
                    query.vectors,
                    query.target,
                    policy=spec.kind,
                    params=params,
                    seed=session_seed(base_seed, qi),
                    predictors=spec.predictors,
                    strategy="greedy",
                )
            )
        by_bucket: dict[str, list[SessionResult]] = {}
        for query, result in zip(queries, results):
            if query.bucket is not None:
                by_bucket.setdefault(bucket_label(tuple(query.bucket)), []).append(result)
        bucket_recall = {
            label: _recall_curves(rs, params.max_steps)
            for label, rs in sorted(by_bucket.items())
        }
        per_policy.append(
            PolicyEval(
                name=spec.name,
                n_queries=len(queries),
                recall=_recall_curves(results, params.max_steps),
                bucket_recall=bucket_recall,
                bucket_counts={label: len(rs) for label, rs in sorted(by_bucket.items())},
                seconds_per_step=float(
                    np.mean([r.seconds_per_step for r in results if r.seconds_per_step])
                    if any(r.seconds_per_step for r in results)
                    else 0.0
                ),
            )
        )
        final_hits[spec.name] = [
            1.0 if r.rank_at(params.max_steps) <= 1 else 0.0 for r in results
        ]
        logger.info(
            "policy %s: step-%d recall@1 %.4f",
            spec.name, params.max_steps, per_policy[-1].recall[1][params.max_steps],
        )

    t_tests: dict[str, TTestResult] = {}
    names = [p.name for p in per_policy]
    for i, a in enumerate(names):
        for b in names[i + 1 :]:
            va, vb = final_hits[a], final_hits[b]
            if len(va) >= 2:
                t_tests[f"{a}_vs_{b}"] = paired_t_test(va, vb)

    return EvalReport(
        policies=per_policy,
        t_tests=t_tests,
        max_steps=params.max_steps,
        base_seed=base_seed,
        params=params,
    )
