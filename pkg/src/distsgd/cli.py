"""Command-line front end.

Subcommands: ``run``, ``compare``, ``graph``, ``bounds``, ``dataset-info``.
Exit codes: 0 ok, 2 usage/config error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import os
import platform
import sys
import time
from pathlib import Path

import numpy as np

from distsgd import __version__, analysis, dataio, netgraph
from distsgd.config import RunConfig, load_config, render_config
from distsgd.errors import (
    ConfigError,
    ConstructionFailure,
    InternalError,
    InvalidArgument,
    NumericalFailure,
    ParseError,
)
from distsgd.sim import DatasetSource, _MODEL, _TOPOLOGY, run_experiment, stream_seed

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3


def _threads(args) -> int:
    if args.threads is not None:
        return args.threads
    env = os.environ.get("DISTSGD_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError("DISTSGD_THREADS", f"expected an integer, got {env!r}") from None
    return 1


def _manifest(rc: RunConfig, results, artifacts, threads: int, wall: float) -> str:
    first = rc.experiments[0]
    seeds = [
        f"{t}:topology={stream_seed(first.master_seed, t, _TOPOLOGY)},model={stream_seed(first.master_seed, t, _MODEL)}"
        for t in range(min(first.trials, 20))
    ]
    lines = [
        "# Run manifest. Feeding this file back to `distsgd run` reproduces the outputs.",
        "[manifest]",
        f"version = {__version__}",
        f"numpy = {np.__version__}",
        f"python = {platform.python_version()}",
        f"master_seed = {first.master_seed}",
        f"trial_seeds = {' '.join(seeds)}" + (" ..." if first.trials > 20 else ""),
        f"n_nodes = {first.n_nodes}",
        f"lambda = {first.loss.lam!r}",
    ]
    for label, res in results.items():
        lines.append(f"sigma.{label} = {res.sigma!r}")
        lines.append(f"g_max.{label} = {float(res.g_max[-1])!r}")
    if isinstance(first.data, DatasetSource):
        lines.append(f"dataset_sha256 = {dataio.file_checksum(first.data.path)}")
    lines += [
        f"artifacts = {' '.join(artifacts)}",
        f"threads = {threads}",
        f"wall_clock_seconds = {wall:.3f}",
        "",
    ]
    return "\n".join(lines) + "\n" + render_config(rc)


def _bound_csvs(rc: RunConfig, result, out: Path, suffix: str = "") -> list[str]:
    names = []
    for which in ("t1", "t2"):
        report = analysis.check_result(result, which, g=rc.bound_g)
        name = f"bounds_{which}{suffix}.csv"
        report.to_csv(out / name)
        print(f"[{result.config.name}] {report.summary()}")
        names.append(name)
    return names


def cmd_run(args) -> int:
    rc = load_config(args.config)
    if len(rc.experiments) != 1:
        raise ConfigError("algorithm", f"`run` takes exactly one algorithm section, found {len(rc.experiments)}; use `compare`")
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    threads = _threads(args)
    start = time.perf_counter()
    result = run_experiment(rc.experiments[0], threads)
    result.to_csv(out / "trajectory.csv")
    artifacts = ["trajectory.csv"]
    if rc.check_bounds or args.check_bounds:
        artifacts += _bound_csvs(rc, result, out)
    artifacts.append("manifest.txt")
    (out / "manifest.txt").write_text(
        _manifest(rc, {result.config.name: result}, artifacts, threads, time.perf_counter() - start), encoding="utf-8")
    print(f"wrote {len(artifacts)} files to {out} ({result.rounds} rounds, {result.trials} trials)")
    return EXIT_OK


def merged_csv_text(results: dict) -> str:
    labels = list(results)
    rounds = {r.rounds for r in results.values()}
    if len(rounds) != 1:
        raise InvalidArgument("all trajectories must have the same number of rounds")
    header = ["t"]
    cols = []
    for label in labels:
        for key in ("nce", "msd", "regret"):
            header.append(f"{label}_{key}_mean")
            cols.append(results[label].mean[key])
    lines = [",".join(header)]
    for k in range(rounds.pop()):
        lines.append(str(k + 1) + "," + ",".join(f"{c[k]:.17g}" for c in cols))
    return "\n".join(lines) + "\n"


def cmd_compare(args) -> int:
    rc = load_config(args.config)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    threads = _threads(args)
    start = time.perf_counter()
    results = {}
    artifacts = []
    for exp in rc.experiments:
        res = run_experiment(exp, threads)
        results[exp.label] = res
        name = f"trajectory_{exp.label}.csv"
        res.to_csv(out / name)
        artifacts.append(name)
        print(f"{exp.label}: final nce={res.mean['nce'][-1]:.6g} msd={res.mean['msd'][-1]:.6g}")
        if rc.check_bounds or args.check_bounds:
            artifacts += _bound_csvs(rc, res, out, suffix=f"_{exp.label}")
    (out / "merged.csv").write_text(merged_csv_text(results), encoding="utf-8")
    artifacts += ["merged.csv", "manifest.txt"]
    (out / "manifest.txt").write_text(
        _manifest(rc, results, artifacts, threads, time.perf_counter() - start), encoding="utf-8")
    return EXIT_OK


def _graph_matrix(kind: str, n: int, edge_prob: float, seed: int, uniform: bool):
    topo = netgraph.build_topology(kind, n, edge_prob, seed)
    build = netgraph.uniform_matrix if uniform else netgraph.metropolis_matrix
    return topo, build(topo, seed=seed)


def cmd_graph(args) -> int:
    topo, cm = _graph_matrix(args.kind, args.n, args.edge_prob, args.seed, args.uniform)
    for row in cm.h:
        print(",".join(f"{v:.17g}" for v in row))
    print(f"sigma = {cm.sigma:.17g}")
    if args.csv:
        cm.to_csv(args.csv)
    if args.validate:
        problems = netgraph.validate_matrix(cm.h, topo)
        if problems:
            for p in problems:
                print(f"violation: {p}")
            return EXIT_NUMERIC
        print("valid: doubly stochastic, supported on the topology, sigma < 1")
    return EXIT_OK


def cmd_bounds(args) -> int:
    if args.sigma is None:
        if args.topology is None:
            raise InvalidArgument("give --sigma or --topology")
        _, cm = _graph_matrix(args.topology, args.n, args.edge_prob, args.seed, args.uniform)
        sigma = cm.sigma
    else:
        sigma = args.sigma
    b = analysis.BoundInputs(args.n, args.lam, sigma, args.g, args.rounds)
    print(f"sigma = {sigma:.17g}")
    print(f"theorem1 (excess cost of weighted average) <= {analysis.theorem1_bound(b):.17g}")
    print(f"theorem2 (MSD of network average)         <= {analysis.theorem2_bound(b):.17g}")
    return EXIT_OK


def cmd_dataset_info(args) -> int:
    ds = dataio.parse_libsvm(args.path, args.positive_label)
    pos = int((ds.y > 0).sum())
    print(f"path = {args.path}")
    print(f"sha256 = {dataio.file_checksum(args.path)}")
    print(f"samples = {len(ds)}")
    print(f"dim = {ds.dim}")
    print(f"original labels = {' '.join(f'{v:g}' for v in ds.original_labels)}")
    print(f"labels +1/-1 = {pos}/{len(ds) - pos}")
    for name, url in dataio.DATASET_SOURCES.items():
        print(f"source {name}: {url}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="distsgd", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_threads(p):
        p.add_argument("--threads", type=int, default=None,
                       help="worker processes for trials (default: $DISTSGD_THREADS or 1)")

    p = sub.add_parser("run", help="run one experiment from a config file")
    p.add_argument("config")
    p.add_argument("out_dir")
    p.add_argument("--check-bounds", action="store_true", help="also write bounds_t1.csv and bounds_t2.csv")
    add_threads(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("compare", help="run every [algorithm.*] section of a config and merge the results")
    p.add_argument("config")
    p.add_argument("out_dir")
    p.add_argument("--check-bounds", action="store_true")
    add_threads(p)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("graph", help="print a combination matrix and its sigma")
    p.add_argument("kind", choices=netgraph.TOPOLOGY_KINDS)
    p.add_argument("n", type=int)
    p.add_argument("--uniform", action="store_true", help="max-degree weights instead of Metropolis")
    p.add_argument("--validate", action="store_true")
    p.add_argument("--edge-prob", type=float, default=0.3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--csv", help="also write the matrix to this CSV file")
    p.set_defaults(func=cmd_graph)

    p = sub.add_parser("bounds", help="evaluate the regret and MSD bounds")
    p.add_argument("--n", type=int, required=True, help="number of nodes")
    p.add_argument("--lam", type=float, required=True)
    p.add_argument("--g", type=float, required=True, help="gradient norm bound G")
    p.add_argument("--rounds", "-T", type=int, required=True)
    p.add_argument("--sigma", type=float)
    p.add_argument("--topology", choices=netgraph.TOPOLOGY_KINDS, help="compute sigma from this topology")
    p.add_argument("--edge-prob", type=float, default=0.3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--uniform", action="store_true")
    p.set_defaults(func=cmd_bounds)

    p = sub.add_parser("dataset-info", help="summarize a LIBSVM-format file")
    p.add_argument("path")
    p.add_argument("--positive-label", type=float, default=None)
    p.set_defaults(func=cmd_dataset_info)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, InvalidArgument, ParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericalFailure, ConstructionFailure, InternalError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
