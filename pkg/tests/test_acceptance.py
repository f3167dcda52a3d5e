"""End-to-end acceptance gates, one test per gate.

The frozen-benchmark gates share module fixtures that reuse the session
``bench_paths`` artifacts (see conftest: KISRF_BENCHMARK_CACHE persists them
across runs) and run the evaluation protocol once per policy-variant set.
Every threshold is pinned as a module constant.
"""

from __future__ import annotations

import json
import math
import time

import numpy as np
import pytest
from conftest import random_corpus

from kisrf.benchmark import (
    EVAL_SEED,
    benchmark_params,
    load_predictors,
)
from kisrf.corpus import load_corpus
from kisrf.display import diverse_display
from kisrf.evaluation import BUCKETS, PolicySpec, bucket_label, evaluate
from kisrf.perception import (
    JudgmentToken,
    PerceptionPredictor,
    PredictorConfig,
    dist_bin,
)
from kisrf.policies import run_session
from kisrf.session import (
    Hyperparams,
    Judgment,
    apply_update,
    init_session,
    temporal_hard,
    temporal_soft,
)
from kisrf.simulator import judge
from kisrf.synth import SynthSpec, calibrate_queries, load_queries, synth_corpus
from kisrf.training import (
    SequenceExample,
    evaluate_loss,
    gradient_check,
    train,
)

# Gate thresholds and tolerances.
ORACLE_ATOL = 1e-9
NORMALIZATION_ATOL = 1e-6
SOFT_HARD_ATOL = 1e-12
CONVERGENCE_RATE = 0.95
CONVERGENCE_BUDGET_SECONDS = 120.0
OURS_MARGIN = 0.02
PICHUNTER_MARGIN = 0.10
T_TEST_P = 0.05
BENCHMARK_BUDGET_SECONDS = 1800.0
PRUNING_TOLERANCE = 0.005
GRADCHECK_EPSILON = 1e-4
GRADCHECK_TOL = 1e-4
UNTRAINED_BCE_TOL = 0.01
OVERFIT_BCE = 0.1
HELDOUT_ACCURACY = 0.60


# ---------------------------------------------------------------------------
# Gate 1: engine posteriors match an independent scalar re-implementation.


def _scalar_sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def _scalar_session(corpus, query_vectors, steps, rho, temperature):
    """Pure-Python reference: init softmax, per-pair sigmoid sums summed over
    spaces, multiplicative update, renormalization. No numpy vector math."""
    n = corpus.n_items
    spaces = [[list(map(float, row)) for row in s.vectors64] for s in corpus.spaces]
    queries = []
    for q in query_vectors:
        vals = list(map(float, q))
        m = math.sqrt(sum(x * x for x in vals))
        queries.append([x / m for x in vals])

    def dot(u, v):
        return sum(ui * vi for ui, vi in zip(u, v))

    scores = [
        sum(dot(spaces[f][i], queries[f]) for f in range(len(spaces)))
        / len(spaces)
        for i in range(n)
    ]
    logits = [s / temperature for s in scores]
    peak = max(logits)
    weights = [math.exp(v - peak) for v in logits]
    total = sum(weights)
    probs = [w / total for w in weights]

    for judgments, confidences in steps:
        aggregate = [0.0] * n
        for f in range(len(spaces)):
            for j, conf in zip(judgments, confidences[f]):
                sel = spaces[f][j.selected]
                rej = spaces[f][j.rejected]
                for i in range(n):
                    gap = dot(sel, spaces[f][i]) - dot(rej, spaces[f][i])
                    aggregate[i] += _scalar_sigmoid(gap * (conf / rho))
        probs = [p * a for p, a in zip(probs, aggregate)]
        total = sum(probs)
        probs = [p / total for p in probs]
    return probs


def test_small_corpus_posteriors_match_scalar_reference():
    cases = [
        (random_corpus(7, 4, n_spaces=1, seed=101), 0.05, 2),
        (random_corpus(10, 5, n_spaces=2, seed=102), 0.31, 3),
    ]
    started = time.perf_counter()
    for corpus, rho, n_steps in cases:
        rng = np.random.default_rng(103)
        queries = []
        for space in corpus.spaces:
            q = rng.standard_normal(space.dim)
            queries.append((q / np.linalg.norm(q)).astype(np.float32))
        params = Hyperparams(rho=rho, num_pairs=2, n_display=0, n_prune=0)
        state = init_session(corpus, params, query_vectors=queries)
        steps = []
        for s in range(n_steps):
            judgments = [
                Judgment(a=int(2 * s % corpus.n_items), b=int((2 * s + 1) % corpus.n_items), label=s % 2),
                Judgment(a=int((2 * s + 2) % corpus.n_items), b=int((2 * s + 3) % corpus.n_items), label=(s + 1) % 2),
            ]
            confidences = [
                [float(c) for c in rng.uniform(0.0, 1.0, size=len(judgments))]
                for _ in corpus.spaces
            ]
            steps.append((judgments, confidences))
            temporals = [
                temporal_soft(state, judgments, confidences[f], space, rho)
                for f, space in enumerate(corpus.spaces)
            ]
            apply_update(state, temporals)
        reference = _scalar_session(
            corpus, queries, steps, rho, params.init_temperature
        )
        np.testing.assert_allclose(
            state.probs, np.asarray(reference), atol=ORACLE_ATOL, rtol=0.0
        )
    assert time.perf_counter() - started < 1.0


# ---------------------------------------------------------------------------
# Gate 2: update invariants.


def test_update_invariants_hold():
    corpus = random_corpus(300, 12, n_spaces=2, seed=201)
    params = Hyperparams(num_pairs=3, n_prune=0)
    rng = np.random.default_rng(202)
    q = [
        (lambda v: (v / np.linalg.norm(v)).astype(np.float32))(
            rng.standard_normal(space.dim)
        )
        for space in corpus.spaces
    ]
    state = init_session(corpus, params, query_vectors=q)

    # Probability normalization stays within tolerance across updates.
    for _ in range(4):
        judgments = [
            Judgment(int(a), int(b), int(rng.integers(2)))
            for a, b in rng.choice(corpus.n_items, size=(3, 2), replace=False)
        ]
        temporals = [
            temporal_hard(state, judgments, space, params.rho)
            for space in corpus.spaces
        ]
        apply_update(state, temporals)
        assert abs(float(state.probs.sum()) - 1.0) <= NORMALIZATION_ATOL

    # Label-flip symmetry: swapping (a, b) and flipping the label is the
    # identical judgment, bit for bit.
    plain = temporal_hard(state, [Judgment(5, 9, 0)], corpus.spaces[0], params.rho)
    flipped = temporal_hard(state, [Judgment(9, 5, 1)], corpus.spaces[0], params.rho)
    np.testing.assert_array_equal(plain, flipped)

    # Soft update with c = 1 matches hard; c = 0 leaves the ranking alone.
    judgments = [Judgment(3, 14, 0), Judgment(21, 8, 1)]
    hard = temporal_hard(state, judgments, corpus.spaces[0], params.rho)
    soft_one = temporal_soft(
        state, judgments, [1.0, 1.0], corpus.spaces[0], params.rho
    )
    np.testing.assert_allclose(soft_one, hard, atol=SOFT_HARD_ATOL, rtol=0.0)
    before = state.probs.copy()
    soft_zero = [
        temporal_soft(state, judgments, [0.0, 0.0], space, params.rho)
        for space in corpus.spaces
    ]
    apply_update(state, soft_zero)
    np.testing.assert_array_equal(np.argsort(-before), np.argsort(-state.probs))
    np.testing.assert_allclose(state.probs, before, atol=1e-12, rtol=0.0)

    # Per-candidate factor is monotone in the similarity gap.
    single = [Judgment(2, 31, 0)]
    factor = temporal_hard(state, single, corpus.spaces[0], params.rho)
    v = corpus.spaces[0].vectors64
    gaps = v @ v[2] - v @ v[31]
    order = np.argsort(gaps)
    assert np.all(np.diff(factor[order]) >= 0.0)

    # A perfect user's chosen side never penalizes the target.
    solo = random_corpus(80, 8, n_spaces=1, seed=203)
    solo_state = init_session(
        solo, Hyperparams(n_prune=0), query_vectors=[solo.spaces[0].vectors[7]]
    )
    target = 7
    for _ in range(50):
        a, b = (int(x) for x in rng.choice(solo.n_items, size=2, replace=False))
        if a == target or b == target:
            continue
        verdict = judge(solo, (a, b), target)
        factor = temporal_hard(
            solo_state, [Judgment(a, b, verdict.majority)], solo.spaces[0],
            Hyperparams().rho,
        )
        assert factor[target] >= 0.5 - 1e-12

    # Distance bins partition [0, 2] into 100 cells, monotonically.
    norms = np.linspace(0.0, 2.0, 4001)
    bins = [dist_bin(float(x)) for x in norms]
    assert min(bins) == 0 and max(bins) == 99
    assert all(b2 >= b1 for b1, b2 in zip(bins, bins[1:]))
    assert len(set(bins)) == 100

    # Diverse displays pair one head-band member with one tail-band member.
    banded = random_corpus(200, 6, n_spaces=1, seed=204)
    scores = np.linspace(1.0, 0.0, 200)
    band_state = init_session(
        banded, Hyperparams(num_pairs=5, n_display=100, n_prune=0), scores=scores
    )
    for seed in range(1000):
        display = diverse_display(band_state, 5, 100, rng_seed=seed)
        seen: set[int] = set()
        for a, b in display.pairs:
            head, tail = (a, b) if a < b else (b, a)
            assert head <= 49 and 50 <= tail <= 99
            seen.update((a, b))
        assert len(seen) == 10


# ---------------------------------------------------------------------------
# Gate 3: single-space perfect-user convergence rate.


def test_single_space_perfect_user_convergence_rate():
    started = time.perf_counter()
    corpus = synth_corpus(SynthSpec(10_000, 1, 64, 0.7, seed=303))
    queries = calibrate_queries(corpus, BUCKETS, per_bucket=40, seed=304)
    assert len(queries) == 200
    params = Hyperparams(num_pairs=5)
    converged = []
    for qi, query in enumerate(queries):
        seed = int(np.random.SeedSequence((305, qi)).generate_state(1)[0])
        result = run_session(
            corpus, query.vectors, query.target, policy="pichunter",
            params=params, seed=seed, strategy="greedy",
        )
        converged.append(result.ranks[-1] == 1)
    elapsed = time.perf_counter() - started
    rate = float(np.mean(converged))
    by_bucket = {
        bucket_label(b): float(
            np.mean([c for c, q in zip(converged, queries) if tuple(q.bucket) == b])
        )
        for b in BUCKETS
    }
    assert elapsed < CONVERGENCE_BUDGET_SECONDS
    assert rate >= CONVERGENCE_RATE, (
        f"convergence rate {rate:.3f} < {CONVERGENCE_RATE} over {len(queries)} "
        f"bucket-balanced runs; per bucket {by_bucket}"
    )


# ---------------------------------------------------------------------------
# Frozen-benchmark fixtures shared by gates 4-7.


@pytest.fixture(scope="module")
def bench(bench_paths):
    corpus = load_corpus(bench_paths.corpus_manifest)
    _, eval_queries = load_queries(bench_paths.eval_queries)
    return bench_paths, corpus, eval_queries


def _timed_eval(corpus, queries, specs, params):
    started = time.perf_counter()
    report = evaluate(corpus, queries, specs, params, base_seed=EVAL_SEED)
    return report, time.perf_counter() - started


@pytest.fixture(scope="module")
def main_eval(bench):
    paths, corpus, queries = bench
    specs = [
        PolicySpec("ours", "ours", load_predictors(paths.checkpoints("full"), corpus)),
        PolicySpec("pichunter", "pichunter"),
        PolicySpec("random", "random"),
    ]
    return _timed_eval(corpus, queries, specs, benchmark_params(prune=True))


@pytest.fixture(scope="module")
def ablation_eval(bench):
    paths, corpus, queries = bench
    specs = [
        PolicySpec("ours-softupd", "pichunter"),
        PolicySpec(
            "ours-staterep", "ours", load_predictors(paths.checkpoints("staterep"), corpus)
        ),
        PolicySpec(
            "ours-distemb", "ours", load_predictors(paths.checkpoints("distemb"), corpus)
        ),
    ]
    report, _ = _timed_eval(corpus, queries, specs, benchmark_params(prune=True))
    return report


@pytest.fixture(scope="module")
def unpruned_eval(bench):
    paths, corpus, queries = bench
    specs = [
        PolicySpec("ours", "ours", load_predictors(paths.checkpoints("full"), corpus)),
        PolicySpec("pichunter", "pichunter"),
    ]
    report, _ = _timed_eval(corpus, queries, specs, benchmark_params(prune=False))
    return report


def _final_recall(report, name: str) -> float:
    return report.policy(name).recall[1][report.max_steps]


# ---------------------------------------------------------------------------
# Gate 4: policy ordering with paired significance, within the time budget.


def test_policy_ordering_on_frozen_benchmark(bench, main_eval):
    paths, _, _ = bench
    report, eval_seconds = main_eval
    ours = _final_recall(report, "ours")
    pichunter = _final_recall(report, "pichunter")
    rand = _final_recall(report, "random")
    ttest = report.t_tests["ours_vs_pichunter"]
    timings = json.loads(paths.timings.read_text())
    charged = (
        sum(
            timings[stage]
            for stage in ("corpus", "eval_queries", "train_queries", "trajectories", "train_full")
        )
        + eval_seconds
    )
    assert ours >= pichunter + OURS_MARGIN, (
        f"ours {ours:.4f} vs pichunter {pichunter:.4f}: margin "
        f"{ours - pichunter:+.4f} < {OURS_MARGIN}"
    )
    assert pichunter >= rand + PICHUNTER_MARGIN, (
        f"pichunter {pichunter:.4f} vs random {rand:.4f}"
    )
    assert ttest.t > 0 and ttest.p < T_TEST_P, (
        f"paired t-test ours vs pichunter: t={ttest.t:.3f} p={ttest.p:.4g}"
    )
    assert charged < BENCHMARK_BUDGET_SECONDS, f"pipeline took {charged:.0f}s"


# ---------------------------------------------------------------------------
# Gate 5: pruning never hurts either policy.


def test_pruning_never_hurts_on_frozen_benchmark(main_eval, unpruned_eval):
    pruned, _ = main_eval
    for name in ("ours", "pichunter"):
        with_pruning = _final_recall(pruned, name)
        without = _final_recall(unpruned_eval, name)
        assert with_pruning >= without - PRUNING_TOLERANCE, (
            f"{name}: pruned {with_pruning:.4f} vs unpruned {without:.4f}"
        )


# ---------------------------------------------------------------------------
# Gate 6: every ablation costs recall, the hard-update one the most.


def test_ablation_ordering_on_frozen_benchmark(main_eval, ablation_eval):
    full, _ = main_eval
    ours = _final_recall(full, "ours")
    ablations = {
        name: _final_recall(ablation_eval, name)
        for name in ("ours-softupd", "ours-staterep", "ours-distemb")
    }
    for name, value in ablations.items():
        assert ours >= value, f"full {ours:.4f} < {name} {value:.4f}"
    worst = min(ablations, key=ablations.get)
    assert worst == "ours-softupd", f"ablation recalls {ablations}"


# ---------------------------------------------------------------------------
# Gate 7: training stack correctness.


def _toy_examples(n, dim, rng, tokens_per=2):
    out = []
    for i in range(n):
        tokens = []
        for _ in range(tokens_per):
            d = rng.standard_normal(dim) * 0.6
            s = rng.standard_normal(dim)
            s /= np.linalg.norm(s)
            tokens.append(
                JudgmentToken(
                    v_diff=d.astype(np.float32),
                    v_s=s.astype(np.float32),
                    bin=dist_bin(float(np.linalg.norm(d))),
                    step=1,
                )
            )
        q = rng.standard_normal(dim)
        q /= np.linalg.norm(q)
        targets = np.asarray([k % 2 for k in range(tokens_per)], dtype=np.float64)
        rng.shuffle(targets)
        out.append(
            SequenceExample(
                traj_id=i, q0=q.astype(np.float32), tokens=tokens, targets=targets
            )
        )
    return out


def test_training_stack_correctness(bench):
    paths, _, _ = bench
    rng = np.random.default_rng(701)
    tiny = PredictorConfig(
        model_dim=32, layers=1, heads=2, ff_dim=64, dropout=0.0, max_sequence=36
    )

    # Analytic gradients match central differences on a random-head model.
    probe = PerceptionPredictor(tiny, dim=12, head_init="random")
    err = gradient_check(
        probe, _toy_examples(6, 12, rng), epsilon=GRADCHECK_EPSILON
    )
    assert err < GRADCHECK_TOL, f"max relative gradient error {err:.2e}"

    # An untrained (zero-head) predictor scores ln 2 on balanced labels.
    fresh = PerceptionPredictor(tiny, dim=12)
    balanced = _toy_examples(32, 12, rng)
    bce = evaluate_loss(fresh, balanced, batch_size=16)
    assert abs(bce - math.log(2.0)) <= UNTRAINED_BCE_TOL

    # 64 records are memorizable.
    memorizer = PerceptionPredictor(tiny, dim=12, head_init="random")
    records = _toy_examples(64, 12, rng)
    train(
        memorizer, records, epochs=300, lr=3e-3, batch_size=16, seed=702,
        val_fraction=0.0,
    )
    final = evaluate_loss(memorizer, records, batch_size=16)
    assert final < OVERFIT_BCE, f"overfit BCE {final:.4f}"

    # Held-out alignment prediction on the frozen benchmark beats 0.60;
    # the majority-class rate rides along in the failure message.
    metrics = json.loads(paths.metrics.read_text())
    full = {k: v for k, v in metrics.items() if k.startswith("full/")}
    assert full, "no full-variant training metrics recorded"
    summary = {
        k: (v["val_accuracy"], v["val_majority_rate"]) for k, v in full.items()
    }
    for key, (accuracy, majority) in summary.items():
        assert accuracy > HELDOUT_ACCURACY, (
            f"{key}: held-out accuracy {accuracy:.3f} <= {HELDOUT_ACCURACY} "
            f"(majority-class rate {majority:.3f}; all spaces {summary})"
        )


# ---------------------------------------------------------------------------
# Gate 8: evaluation runs are byte-deterministic.


def test_evaluation_reports_are_byte_deterministic():
    corpus = synth_corpus(SynthSpec(2000, 3, 32, 0.7, seed=801))
    queries = calibrate_queries(corpus, ((10, 50), (50, 100)), per_bucket=6, seed=802)
    fresh = [
        PerceptionPredictor(
            PredictorConfig(model_dim=32, layers=1, heads=2, ff_dim=64, dropout=0.0),
            dim=space.dim,
        )
        for space in corpus.spaces
    ]
    specs = [
        PolicySpec("ours", "ours", fresh),
        PolicySpec("pichunter", "pichunter"),
        PolicySpec("random", "random"),
    ]
    params = Hyperparams(num_pairs=3, n_prune=0, max_steps=4)
    first = evaluate(corpus, queries, specs, params, base_seed=803).to_csv()
    second = evaluate(corpus, queries, specs, params, base_seed=803).to_csv()
    assert first.encode() == second.encode()
