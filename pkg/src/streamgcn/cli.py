"""Command-line front end.

Subcommands: run, grid, joint, gen-sbm, profile-hops. Exit code 0 on
success; failures print one machine-readable line ``error: <kind>: <detail>``
to stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np


def _add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", required=True, help="flat key = value file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=None,
                   help="replace the seed list with one seed")
    p.add_argument("--strategy", default=None, help="override the strategy")
    p.add_argument("--override", action="append", default=[],
                   metavar="KEY=VAL", help="override one config key")


def _load_cfg(args):
    from .runner import apply_overrides, load_config
    from dataclasses import replace

    cfg = load_config(args.config)
    if getattr(args, "strategy", None):
        cfg = replace(cfg, strategy=args.strategy)
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seeds=str(args.seed))
    return apply_overrides(cfg, args.override)


def cmd_run(args) -> int:
    from .runner import run_experiment

    cfg = _load_cfg(args)
    report = run_experiment(cfg, out_dir=args.out)
    summary = report.metric_summary()
    print(json.dumps({"out": args.out, "ap_mean": summary["ap"]["mean"],
                      "af_mean": summary["af"]["mean"],
                      "aap_mean": summary["aap"]["mean"]}, sort_keys=True))
    return 0


def cmd_grid(args) -> int:
    from .runner import grid_select

    cfg = _load_cfg(args)
    grid = None
    if args.grid:
        with open(args.grid) as fh:
            grid = json.load(fh)
    best, trials = grid_select(cfg, grid, out_dir=args.out)
    print(json.dumps({"selected": best, "trials": len(trials)},
                     sort_keys=True))
    return 0


def cmd_joint(args) -> int:
    from .runner import run_joint_upper_bound

    cfg = _load_cfg(args)
    summary = run_joint_upper_bound(cfg, out_dir=args.out)
    print(json.dumps({"joint_ap_mean": summary["ap"]["mean"]}, sort_keys=True))
    return 0


def cmd_gen_sbm(args) -> int:
    from .datasets import SbmSpec, gen_sbm

    spec = SbmSpec(classes=args.classes, per_class=args.per_class,
                   p_in=args.p_in, p_out=args.p_out, feature_dim=args.dim,
                   separation=args.sep, noise=args.noise, seed=args.seed)
    dataset = gen_sbm(spec, args.out)
    print(json.dumps({"out": args.out, "num_nodes": dataset.num_nodes,
                      "num_edges": int(len(dataset.edges)),
                      "num_classes": dataset.num_classes}, sort_keys=True))
    return 0


def cmd_profile_hops(args) -> int:
    from .datasets import load_dataset
    from .graph import GrowingGraph, profile_hops
    from .streams import events_for_order

    dataset = load_dataset(args.data)
    order = dataset.order if dataset.order is not None \
        else np.arange(dataset.num_nodes)
    events = events_for_order(dataset, order)
    graph = GrowingGraph(dataset.feature_dim, dataset.num_classes)

    lines = ["batch_index,hop,node_count,edge_count"]
    batch_index = 0
    for start in range(0, len(events), args.batch_size):
        batch = events[start:start + args.batch_size]
        for ev in batch:
            graph.ingest(ev)
        profile = profile_hops(graph, [ev.node_id for ev in batch], args.hops)
        for hop in range(args.hops + 1):
            lines.append(f"{batch_index},{hop},{profile.node_counts[hop]},"
                         f"{profile.edge_counts[hop]}")
        batch_index += 1
    with open(args.out, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    print(json.dumps({"out": args.out, "batches": batch_index},
                     sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="streamgcn",
        description="Online continual learning on streaming graph nodes")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one experiment over all seeds")
    _add_config_args(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("grid", help="first-tasks hyperparameter selection")
    _add_config_args(p)
    p.add_argument("--grid", default=None,
                   help="JSON file {key: [values]}; default per strategy")
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("joint", help="offline joint upper bound")
    _add_config_args(p)
    p.set_defaults(func=cmd_joint)

    p = sub.add_parser("gen-sbm", help="generate a synthetic dataset")
    p.add_argument("--classes", type=int, required=True)
    p.add_argument("--per-class", type=int, required=True)
    p.add_argument("--p-in", type=float, required=True)
    p.add_argument("--p-out", type=float, required=True)
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--sep", type=float, default=4.0)
    p.add_argument("--noise", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_sbm)

    p = sub.add_parser("profile-hops",
                       help="measure neighborhood expansion along the stream")
    p.add_argument("--data", required=True)
    p.add_argument("--batch-size", type=int, required=True)
    p.add_argument("--hops", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_profile_hops)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # surface a single machine-readable line
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
