"""Command-line entry point: ``asmatch <subcommand> [flags]``."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .errors import ASMError

GRAD_TOL = 1e-4


def _levels(text: str) -> tuple:
    return tuple(float(x) for x in text.split(",") if x)


def _pair(text: str) -> tuple:
    lo, hi = (int(x) for x in text.split(","))
    return lo, hi


def cmd_gen(args) -> int:
    from .datagen import DatasetConfig, generate_dataset, save_dataset
    cfg = DatasetConfig(n_pairs=args.n_pairs, noise_levels=_levels(args.levels), sample_mode=args.mode,
                        query_size=_pair(args.query_size), target_nodes=args.target_nodes,
                        target_edges=args.target_edges, num_labels=args.labels, n_targets=args.n_targets,
                        seed=args.seed)
    ds = generate_dataset(cfg)
    save_dataset(ds, args.out)
    counts = {s: len(ds.split(s)) for s in ("train", "val", "test")}
    print(f"wrote {len(ds.pairs)} pairs to {args.out} {counts}")
    return 0


def cmd_train(args) -> int:
    from .datagen import load_dataset
    from .encodings import EncodingConfig
    from .policy_net import EncoderConfig
    from .training import TrainConfig, train
    ds = load_dataset(args.dataset)
    enc = EncoderConfig(num_labels=ds.config.num_labels, encoding=EncodingConfig(mode=args.encoding))
    cfg = TrainConfig(encoder=enc, seed=args.seed, il_epochs=args.il_epochs, il_batch_size=args.il_batch_size,
                      il_lr=args.il_lr, ppo_epochs=args.ppo_epochs, ppo_lr=args.ppo_lr,
                      val_pairs=args.val_pairs, time_limit=args.time_limit)
    res = train(cfg, ds.split("train"), ds.split("val"), out_dir=args.out, resume=args.resume)
    print(f"best validation mean GED {res.best_val:.3f}; checkpoints in {args.out}")
    return 0


def cmd_search(args) -> int:
    from .bench import make_policy
    from .graph import load_graph
    from .search import SearchBudget, branch_and_bound
    gq, gt = load_graph(args.query), load_graph(args.target)
    policy = make_policy(args.policy, args.seed, args.checkpoint)
    budget = SearchBudget(wall_clock_limit=args.budget_seconds, max_expansions=args.max_expansions)
    res = branch_and_bound(gq, gt, policy, budget, cache_enabled=args.cache == "on")
    doc = res.to_dict()
    if args.out:
        Path(args.out).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    print(f"cost {res.best_cost.total} (node {res.best_cost.node_cost}, edge {res.best_cost.edge_cost}); "
          f"first round {res.first_round_cost.total}; expansions {res.expansions}; "
          f"{'exhausted' if res.exhausted else 'budget reached'}")
    print("mapping " + " ".join(f"{u}->{v}" for u, v in res.best_mapping.pairs))
    return 0


def cmd_oracle(args) -> int:
    from .graph import load_graph
    from .oracle import exact_asm
    res = exact_asm(load_graph(args.query), load_graph(args.target), limit=args.limit)
    print(f"optimum {res.best_cost.total} over {res.mappings_enumerated} mappings")
    print("mapping " + " ".join(f"{u}->{v}" for u, v in res.best_mapping.pairs))
    return 0


def cmd_bench(args) -> int:
    from .bench import RunManifest, format_table, run_benchmark, write_outputs
    if args.replay:
        manifest = RunManifest.load(args.replay)
    else:
        if not args.dataset:
            raise ASMError("bench needs --dataset or --replay")
        manifest = RunManifest(dataset=str(args.dataset), policies=args.policies.split(","),
                               budget_seconds=args.budget_seconds, seed=args.seed,
                               cache=args.cache == "on", checkpoint=args.checkpoint, split=args.split,
                               workers=args.workers)
    result = run_benchmark(manifest)
    out = write_outputs(result, manifest, args.out)
    sys.stdout.write(format_table(result["report"]))
    for kind, curve in result["timings"]["optimal_within_budget"].items():
        pts = " ".join(f"{k}s:{v:.2f}" for k, v in curve.items() if k != "instances" and v is not None)
        print(f"{kind} optimal within budget ({curve['instances']} instances): {pts}")
    print(f"reports in {out}")
    return 0


def cmd_grad_check(args) -> int:
    from .checks import policy_check, primitive_checks
    errs = primitive_checks(args.seed)
    if args.checkpoint:
        from .policy_net import PolicyNet
        errs["policy_forward"] = policy_check(PolicyNet.load(args.checkpoint), args.seed)
    else:
        errs["policy_forward"] = policy_check(seed=args.seed)
    for name, e in errs.items():
        print(f"{name:18s} {e:.3e}")
    worst = max(errs.values())
    print(f"max relative error {worst:.3e}")
    return 0 if worst < GRAD_TOL else 1


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="asmatch", description="Approximate subgraph matching search and training.")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a synthetic dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--n-pairs", type=int, default=100)
    g.add_argument("--levels", default="0,0.05,0.1")
    g.add_argument("--mode", choices=("bfs", "rw"), default="bfs")
    g.add_argument("--query-size", default="10,20")
    g.add_argument("--target-nodes", type=int, default=100)
    g.add_argument("--target-edges", type=int, default=196)
    g.add_argument("--labels", type=int, default=13)
    g.add_argument("--n-targets", type=int, default=300)
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="imitation then policy-gradient training")
    t.add_argument("--dataset", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--il-epochs", type=int, default=1000)
    t.add_argument("--il-batch-size", type=int, default=1024)
    t.add_argument("--il-lr", type=float, default=1e-3)
    t.add_argument("--ppo-epochs", type=int, default=10)
    t.add_argument("--ppo-lr", type=float, default=1e-4)
    t.add_argument("--encoding", choices=("lappe", "rwse", "both", "none"), default="rwse")
    t.add_argument("--val-pairs", type=int, default=None)
    t.add_argument("--time-limit", type=float, default=None)
    t.add_argument("--resume", default=None)
    t.add_argument("--seed", type=int, default=0)
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("search", help="branch-and-bound on one query/target pair")
    s.add_argument("--query", required=True)
    s.add_argument("--target", required=True)
    s.add_argument("--policy", choices=("random", "greedy", "neural"), default="greedy")
    s.add_argument("--checkpoint", default=None)
    s.add_argument("--budget-seconds", type=float, default=600.0)
    s.add_argument("--max-expansions", type=int, default=None)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--cache", choices=("on", "off"), default="on")
    s.add_argument("--out", default=None, help="write the result as JSON")
    s.set_defaults(func=cmd_search)

    o = sub.add_parser("oracle", help="exact optimum by enumeration (small graphs)")
    o.add_argument("--query", required=True)
    o.add_argument("--target", required=True)
    o.add_argument("--limit", type=int, default=10 ** 7)
    o.set_defaults(func=cmd_oracle)

    b = sub.add_parser("bench", help="benchmark policies on a dataset split")
    b.add_argument("--dataset", default=None)
    b.add_argument("--policies", default="greedy")
    b.add_argument("--checkpoint", default=None)
    b.add_argument("--budget-seconds", type=float, default=10.0)
    b.add_argument("--workers", type=int, default=1)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--split", default="test")
    b.add_argument("--cache", choices=("on", "off"), default="on")
    b.add_argument("--out", required=True)
    b.add_argument("--replay", default=None, help="re-run a saved manifest.json")
    b.set_defaults(func=cmd_bench)

    c = sub.add_parser("grad-check", help="finite-difference check of all gradients")
    c.add_argument("--checkpoint", default=None)
    c.add_argument("--seed", type=int, default=0)
    c.set_defaults(func=cmd_grad_check)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.func(args)
    except ASMError as exc:
        ap.print_usage(sys.stderr)
        print(f"asmatch {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"asmatch {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
