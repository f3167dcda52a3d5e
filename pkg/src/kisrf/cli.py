"""Unified command-line interface.

Subcommands: ingest (validate a corpus), synth (generate a synthetic corpus and
calibrated queries), gen-traj (training trajectories), train (one space's
predictor), simulate (run sessions and print traces), evaluate (policy
comparison report), benchmark (build the frozen reference benchmark), serve
(HTTP service).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

logger = logging.getLogger(__name__)


def _params_from_args(args: argparse.Namespace):
    from kisrf.session import Hyperparams

    params = Hyperparams(
        rho=args.rho,
        num_pairs=args.num_pairs,
        n_prune=0 if args.prune == "off" else args.n_prune,
        max_steps=args.max_steps,
    )
    params.validate()
    return params


def _add_params_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--rho", type=float, default=0.05)
    parser.add_argument("--num-pairs", type=int, default=5)
    parser.add_argument("--n-prune", type=int, default=5000)
    parser.add_argument("--prune", choices=("on", "off"), default="on")
    parser.add_argument("--max-steps", type=int, default=7)


def cmd_ingest(args: argparse.Namespace) -> int:
    from kisrf.corpus import CorpusError, load_corpus, norm_statistics

    try:
        corpus = load_corpus(args.manifest)
    except CorpusError as exc:
        print(f"invalid corpus: {exc}", file=sys.stderr)
        return 1
    print(f"corpus ok: {corpus.n_items} items, {corpus.n_spaces} spaces")
    if args.check:
        for space in corpus.spaces:
            stats = norm_statistics(space)
            print(
                f"  space {space.space_id}: dim={space.dim} "
                f"norm min={stats['min']:.6f} mean={stats['mean']:.6f} "
                f"max={stats['max']:.6f}"
            )
    return 0


def cmd_synth(args: argparse.Namespace) -> int:
    from kisrf.corpus import save_corpus
    from kisrf.evaluation import BUCKETS
    from kisrf.synth import SynthSpec, calibrate_queries, save_queries, synth_corpus

    spec = SynthSpec(
        n_items=args.n_items,
        n_spaces=args.spaces,
        dim=args.dim,
        inter_space_correlation=args.correlation,
        seed=args.seed,
    )
    corpus = synth_corpus(spec)
    out = Path(args.out)
    manifest = save_corpus(corpus, out)
    print(f"wrote corpus: {manifest}")
    if args.queries_per_bucket > 0:
        queries = calibrate_queries(
            corpus, BUCKETS, args.queries_per_bucket, seed=args.seed + 1
        )
        queries_path = out / "queries.json"
        save_queries(queries, spec, queries_path)
        print(f"wrote {len(queries)} queries: {queries_path}")
    return 0


def cmd_gen_traj(args: argparse.Namespace) -> int:
    from kisrf.corpus import load_corpus
    from kisrf.synth import load_queries
    from kisrf.trajectories import generate_trajectories

    corpus = load_corpus(args.manifest)
    _, queries = load_queries(args.queries)
    stats = generate_trajectories(
        corpus, queries, _params_from_args(args), seed=args.seed, out_path=args.out
    )
    print(
        f"kept {stats.kept}/{stats.sessions} sessions "
        f"({stats.kept_fraction:.2f}) -> {stats.path}"
    )
    return 0


def _load_trajectory_records(path: Path) -> list[dict]:
    from kisrf.trajectories import load_trajectories

    if path.is_dir():
        records = []
        for file in sorted(path.glob("*.jsonl")):
            records.extend(load_trajectories(file))
        return records
    return load_trajectories(path)


def _resolve_space(corpus, token: str) -> int:
    for i, space in enumerate(corpus.spaces):
        if space.space_id == token:
            return i
    try:
        index = int(token)
    except ValueError:
        raise SystemExit(f"unknown space {token!r}")
    if not 0 <= index < corpus.n_spaces:
        raise SystemExit(f"space index {index} out of range")
    return index


def cmd_train(args: argparse.Namespace) -> int:
    from kisrf.corpus import load_corpus
    from kisrf.perception import PerceptionPredictor, PredictorConfig, save_checkpoint
    from kisrf.training import alignment_accuracy, build_examples, train

    corpus = load_corpus(args.manifest)
    space_index = _resolve_space(corpus, args.space)
    records = _load_trajectory_records(Path(args.trajectories))
    if not records:
        print("no trajectory records found", file=sys.stderr)
        return 1
    examples = build_examples(records, corpus, space_index)
    model = PerceptionPredictor(
        PredictorConfig(),
        dim=corpus.spaces[space_index].dim,
        disable_state=(args.ablate == "staterep"),
        disable_dist=(args.ablate == "distemb"),
    )
    result = train(
        model,
        examples,
        epochs=args.epochs,
        lr=args.lr,
        batch_size=args.batch_size,
        seed=args.seed,
    )
    val_ids = set(result.val_traj_ids)
    val_examples = [ex for ex in examples if ex.traj_id in val_ids]
    if val_examples:
        accuracy, majority = alignment_accuracy(model, val_examples)
        print(f"held-out accuracy {accuracy:.3f} (majority-class {majority:.3f})")
    save_checkpoint(model, corpus.spaces[space_index].space_id, args.out)
    print(
        f"trained space {corpus.spaces[space_index].space_id}: "
        f"final train loss {result.train_loss[-1]:.4f} -> {args.out}"
    )
    return 0


def _load_policy_specs(args: argparse.Namespace, corpus):
    from kisrf.benchmark import load_predictors
    from kisrf.evaluation import PolicySpec

    def variant_dir(variant: str) -> Path:
        base = Path(args.checkpoints)
        if "full" in base.name:
            return base.with_name(base.name.replace("full", variant))
        return base.with_name(f"{base.name}-{variant}")

    specs = []
    for name in args.policies.split(","):
        name = name.strip()
        if not name:
            continue
        if name == "ours":
            specs.append(
                PolicySpec(
                    name="ours",
                    kind="ours",
                    predictors=load_predictors(args.checkpoints, corpus),
                )
            )
        elif name in ("pichunter", "random"):
            specs.append(PolicySpec(name=name, kind=name))
        else:
            raise SystemExit(f"unknown policy {name!r}")
    for ablation in (args.ablate or "").split(","):
        ablation = ablation.strip()
        if not ablation:
            continue
        if ablation == "softupd":
            specs.append(PolicySpec(name="ours-softupd", kind="pichunter"))
        elif ablation in ("staterep", "distemb"):
            specs.append(
                PolicySpec(
                    name=f"ours-{ablation}",
                    kind="ours",
                    predictors=load_predictors(variant_dir(ablation), corpus),
                )
            )
        else:
            raise SystemExit(f"unknown ablation {ablation!r}")
    return specs


def cmd_simulate(args: argparse.Namespace) -> int:
    from kisrf.benchmark import load_predictors
    from kisrf.corpus import load_corpus
    from kisrf.evaluation import session_seed
    from kisrf.policies import run_session
    from kisrf.synth import load_queries

    corpus = load_corpus(args.manifest)
    _, queries = load_queries(args.queries)
    if args.limit:
        queries = queries[: args.limit]
    predictors = None
    if args.policy == "ours":
        if not args.checkpoints:
            raise SystemExit("policy 'ours' needs --checkpoints")
        predictors = load_predictors(args.checkpoints, corpus)
    params = _params_from_args(args)
    converged = 0
    for qi, query in enumerate(queries):
        result = run_session(
            corpus,
            query.vectors,
            query.target,
            policy=args.policy,
            params=params,
            seed=session_seed(args.seed, qi),
            predictors=predictors,
            strategy=args.strategy,
        )
        converged += result.converged_step is not None
        print(
            json.dumps(
                {
                    "target": query.target,
                    "initial_rank": query.initial_rank,
                    "ranks": result.ranks,
                    "converged_step": result.converged_step,
                }
            )
        )
    print(
        f"# converged {converged}/{len(queries)} within {params.max_steps} steps",
        file=sys.stderr,
    )
    return 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    from kisrf.corpus import load_corpus
    from kisrf.evaluation import evaluate
    from kisrf.synth import load_queries

    corpus = load_corpus(args.manifest)
    _, queries = load_queries(args.queries)
    specs = _load_policy_specs(args, corpus)
    report = evaluate(corpus, queries, specs, _params_from_args(args), args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / "report.csv"
    json_path = out / "report.json"
    csv_path.write_text(report.to_csv())
    json_path.write_text(report.to_json())
    for pol in report.policies:
        print(
            f"{pol.name}: step-{report.max_steps} recall@1 "
            f"{pol.recall[1][report.max_steps]:.4f}"
        )
    for key, result in report.t_tests.items():
        print(f"t-test {key}: t={result.t:.3f} p={result.p:.4g}")
    print(f"wrote {csv_path} and {json_path}")
    return 0


def cmd_benchmark(args: argparse.Namespace) -> int:
    from kisrf.benchmark import build_benchmark

    paths = build_benchmark(args.root, force=args.force)
    print(f"benchmark ready under {paths.root}")
    if paths.timings.exists():
        print(paths.timings.read_text().strip())
    return 0


def cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    from kisrf.benchmark import load_predictors
    from kisrf.corpus import load_corpus
    from kisrf.service import create_app

    corpus = load_corpus(args.corpus)
    predictors = None
    if args.checkpoints:
        predictors = load_predictors(args.checkpoints, corpus)
    app = create_app(corpus, predictors=predictors, log_dir=args.log_dir)
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kisrf", description="Interactive known-item search engine"
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="validate a corpus manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--check", action="store_true", help="print per-space norm statistics")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--n-items", type=int, default=10_000)
    p.add_argument("--spaces", type=int, default=3)
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--correlation", type=float, default=0.7)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--queries-per-bucket", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("gen-traj", help="generate training trajectories")
    p.add_argument("--manifest", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    _add_params_args(p)
    p.set_defaults(func=cmd_gen_traj)

    p = sub.add_parser("train", help="train one space's confidence predictor")
    p.add_argument("--trajectories", required=True, help="JSONL file or directory")
    p.add_argument("--space", required=True, help="space id or index")
    p.add_argument("--out", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--ablate", choices=("staterep", "distemb"), default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("simulate", help="run sessions and print rank traces")
    p.add_argument("--manifest", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--policy", choices=("ours", "pichunter", "random"), default="pichunter")
    p.add_argument("--checkpoints")
    p.add_argument("--strategy", choices=("greedy", "diverse", "alternate"), default="greedy")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--limit", type=int, default=0)
    _add_params_args(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("evaluate", help="compare policies and write a report")
    p.add_argument("--manifest", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--policies", default="pichunter,random")
    p.add_argument("--ablate", default="", help="comma list: softupd,staterep,distemb")
    p.add_argument("--checkpoints", help="full-model checkpoint dir")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    _add_params_args(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("benchmark", help="build the frozen reference benchmark")
    p.add_argument("--root", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--corpus", required=True, help="corpus manifest path")
    p.add_argument("--checkpoints")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--log-dir", default=None)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
