"""``bt`` command-line entry point.

Exit codes: 0 success, 1 usage, 2 graph errors, 3 search cap, 4 cost budget,
5 numerical errors.
"""
from __future__ import annotations

import argparse
import csv
import json
import statistics
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .approx import (GeneratorSpec, IterationTrace, Strategy, WalkSummabilityError,
                     error_covariance_diag, generate_model, iterate_estimate)
from .blocktree import (SearchCapError, construct_block_tree,
                        exhaustive_block_treewidth, heuristic_root_search, validate_block_tree)
from .discrete import (CostBudgetError, ModelError, boundary_block_tree, brute_force_marginals,
                       bt_marginals, load_model, marginals_to_json)
from .gaussian import (GaussianModel, NumericalError, exact_estimate,
                       information_form, load_observation, parse_triplets)
from .graph import Graph, GraphError, grid_graph, hub_grid_graph, is_connected, parse_graph
from .spanning import base_block_tree

EXIT_OK, EXIT_USAGE, EXIT_GRAPH, EXIT_CAP, EXIT_BUDGET, EXIT_NUMERICAL = range(6)

TRACE_HEADER = ["iteration", "residual", "subgraph_kind", "wall_ms"]


class UsageError(Exception):
    pass


def _read(path: str) -> str:
    try:
        with open(path, encoding="utf-8") as fh:
            return fh.read()
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror}") from None


def _load_graph(path: str) -> Graph:
    return parse_graph(_read(path))


def _root_ids(g: Graph, spec: str | None) -> list[int] | None:
    if not spec:
        return None
    labels = [s for s in spec.replace(",", " ").split() if s]
    try:
        return g.ids_for(labels)
    except (KeyError, ValueError, GraphError) as exc:
        raise UsageError(f"bad --root: {exc}") from None


def _label_set(g: Graph, ids) -> str:
    return "{" + ",".join(g.labels[v] for v in ids) + "}"


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text + "\n", encoding="utf-8")
    else:
        print(text)


def cmd_build(args) -> int:
    g = _load_graph(args.graph)
    if not is_connected(g):
        raise GraphError("graph not connected")
    root = _root_ids(g, args.root)
    if root is None:
        root, _ = heuristic_root_search(g)
    bt = construct_block_tree(g, root)
    report = validate_block_tree(g, bt)
    if not report.ok:
        raise GraphError("constructed block-tree failed validation: " + "; ".join(report.lines()))
    _emit(bt.dumps(g), args.out)
    print(f"clusters={bt.n_clusters} block_width={bt.width}")
    return EXIT_OK


def cmd_btw(args) -> int:
    g = _load_graph(args.graph)
    if not is_connected(g):
        raise GraphError("graph not connected")
    if args.mode == "exact":
        w, root = exhaustive_block_treewidth(g, cap=args.cap)
    else:
        root, w = heuristic_root_search(g)
    print(f"btw<={w} root={_label_set(g, root)} mode={args.mode}")
    return EXIT_OK


def cmd_infer(args) -> int:
    m = load_model(args.model)
    g = m.graph
    if m.boundary is not None and m.boundary.nodes:
        if args.root:
            raise UsageError("--root is fixed to the boundary for boundary models")
        bt, fact = boundary_block_tree(m)
        ms = bt_marginals(m, bt, fact)
        print("root=[" + ",".join(g.labels[v] for v in bt.clusters[bt.root]) + "]", file=sys.stderr)
    else:
        if not is_connected(g):
            raise GraphError("graph not connected")
        root = _root_ids(g, args.root)
        if root is None:
            root, _ = heuristic_root_search(g)
        bt = construct_block_tree(g, root)
        ms = bt_marginals(m, bt)
        print("root=[" + ",".join(g.labels[v] for v in bt.clusters[bt.root]) + "]", file=sys.stderr)
    doc = {"marginals": marginals_to_json(ms, g), "block_tree": bt.to_json(g)}
    _emit(json.dumps(doc, indent=1), args.out)
    if args.check_brute_force:
        dev = ms.max_deviation(brute_force_marginals(m))
        if dev < 1e-10:
            print("brute-force check: PASS (max dev < 1e-10)", file=sys.stderr)
        else:
            print(f"brute-force check: FAIL (max dev {dev:.3g})", file=sys.stderr)
            return EXIT_NUMERICAL
    return EXIT_OK


def write_trace_csv(path, trace: IterationTrace) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(TRACE_HEADER)
        for i, r, s, ms in trace.csv_rows():
            w.writerow([i, repr(float(r)), s, f"{ms:.3f}"])


def trace_summary(trace: IterationTrace, tol: float, seed=None) -> dict:
    last = trace.csv_rows()[-1]
    return {"seed": seed, "strategy": trace.strategy, "tol": tol, "iterations": trace.iterations,
            "converged": trace.converged,
            "iterations_to_tol_ratio": trace.iterations_to(tol),
            "final_row": {"iteration": last[0], "residual": last[1], "subgraph_kind": last[2],
                          "wall_ms": last[3]}}


def _exact_solution(m: GaussianModel, obs) -> tuple[np.ndarray, np.ndarray]:
    bt = None
    if is_connected(m.graph) and m.graph.edges:
        cand = base_block_tree(m.graph)
        if cand.width <= 400:
            bt = cand
    return exact_estimate(m, obs, bt)


def cmd_estimate(args) -> int:
    J = parse_triplets(_read(args.J))
    obs = load_observation(args.obs)
    if obs.y.shape[0] != J.shape[0]:
        if obs.y.shape[0] < J.shape[0]:
            raise UsageError(f"observation has {obs.y.shape[0]} entries, J is {J.shape[0]}x{J.shape[0]}")
        J = parse_triplets(_read(args.J), n=obs.y.shape[0])
    m = GaussianModel(J)
    m.check_positive_definite()
    xhat, var = _exact_solution(m, obs)
    out_dir = Path(args.out_dir) if args.out_dir else None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)
    if args.mode == "exact":
        doc = {"xhat": xhat.tolist(), "variances": var.tolist()}
    else:
        V, b = information_form(m, obs)
        trace = iterate_estimate(V, b, args.strategy, args.tol, args.max_iter, args.refresh)
        dev = float(np.max(np.abs(trace.estimate - xhat))) if xhat.size else 0.0
        doc = {"xhat": trace.estimate.tolist(), **trace_summary(trace, args.tol),
               "max_abs_deviation_from_exact": dev}
        if out_dir:
            write_trace_csv(out_dir / "trace.csv", trace)
        print(f"iterations={trace.iterations} converged={str(trace.converged).lower()} "
              f"max_abs_dev_vs_exact={dev:.3e}", file=sys.stderr)
    text = json.dumps(doc, indent=1)
    if out_dir:
        (out_dir / "estimate.json").write_text(text + "\n", encoding="utf-8")
    else:
        print(text)
    return EXIT_OK


def experiment_graph(kind: str, size: int, hubs: int, graph_file: str | None) -> Graph:
    if kind == "grid":
        return grid_graph(size)
    if kind == "hub-grid":
        return hub_grid_graph(size, hubs)
    if graph_file is None:
        raise UsageError("--kind file needs --graph-file")
    return _load_graph(graph_file)


def run_trial(g: Graph, seed: int, strategy: str, tol: float, max_iter: int, refresh: int,
              rho: float, covariance: bool) -> dict:
    """One (seed, strategy) experiment; returns a JSON-able record with traces."""
    m, obs, meta = generate_model(GeneratorSpec(g, seed, target_rho=rho))
    V, b = information_form(m, obs)
    trace = iterate_estimate(V, b, strategy, tol, max_iter, refresh)
    rec = {"summary": {**trace_summary(trace, tol, seed), **meta}, "trace": trace}
    if covariance:
        _, ctrace = error_covariance_diag(V, strategy, tol, max_iter, refresh)
        rec["covariance_summary"] = trace_summary(ctrace, tol, seed)
        rec["covariance_trace"] = ctrace
    return rec


def _trial_safe(job):
    try:
        return job, run_trial(*job), None
    except (NumericalError, WalkSummabilityError, ValueError, GraphError) as exc:
        return job, None, f"{type(exc).__name__}: {exc}"


def cmd_experiment(args) -> int:
    if args.tol <= 0:
        raise UsageError("--tol must be positive")
    if args.seeds < 1:
        raise UsageError("--seeds must be at least 1")
    strategies = [s.strip() for s in args.strategies.split(",") if s.strip()]
    if not strategies:
        raise UsageError("at least one strategy is required")
    try:
        labels = [Strategy.parse(s).label for s in strategies]
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    g = experiment_graph(args.kind, args.size, args.hubs, args.graph_file)
    if not is_connected(g):
        raise GraphError("graph not connected")
    covariance = args.error_covariance or args.kind == "hub-grid"
    seeds = [args.seed_base + i for i in range(args.seeds)]
    jobs = [(g, s, lab, args.tol, args.max_iter, args.refresh, args.rho, covariance)
            for s in seeds for lab in labels]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_trial_safe, jobs))
    else:
        results = [_trial_safe(j) for j in jobs]

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    trials, failures = [], []
    for job, rec, err in results:
        _, seed, lab = job[:3]
        stem = f"{lab.replace(':', '')}_seed{seed}"
        if err is not None:
            failures.append({"seed": seed, "strategy": lab, "error": err})
            continue
        write_trace_csv(out / f"{stem}.csv", rec["trace"])
        if "covariance_trace" in rec:
            write_trace_csv(out / f"{stem}_cov.csv", rec["covariance_trace"])
            rec["summary"]["covariance"] = rec["covariance_summary"]
        (out / f"{stem}.json").write_text(json.dumps(rec["summary"], indent=1) + "\n",
                                          encoding="utf-8")
        trials.append(rec["summary"])
    medians = {}
    for lab in labels:
        its = [t["iterations_to_tol_ratio"] for t in trials if t["strategy"] == lab]
        its = [i for i in its if i is not None]
        medians[lab] = statistics.median(its) if its else None
    summary = {"kind": args.kind, "size": args.size, "n": g.n, "tol": args.tol,
               "max_iter": args.max_iter, "rho": args.rho, "seeds": seeds, "strategies": labels,
               "median_iterations": medians, "trials": trials, "failures": failures}
    (out / "summary.json").write_text(json.dumps(summary, indent=1) + "\n", encoding="utf-8")
    for lab in labels:
        print(f"{lab}: median_iterations={medians[lab]}")
    ok = all(any(t["strategy"] == lab for t in trials) for lab in labels)
    return EXIT_OK if ok else EXIT_NUMERICAL


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bt", description="Block-tree graphs and estimation.")
    sub = p.add_subparsers(dest="command", required=True)

    b = sub.add_parser("build", help="construct a block-tree from a root cluster")
    b.add_argument("graph")
    b.add_argument("--root", help="root cluster labels, comma separated (default: heuristic)")
    b.add_argument("--out")
    b.set_defaults(func=cmd_build)

    w = sub.add_parser("btw", help="block-treewidth upper bound")
    w.add_argument("graph")
    w.add_argument("--mode", choices=["exact", "heuristic"], default="heuristic")
    w.add_argument("--cap", type=int, default=16)
    w.set_defaults(func=cmd_btw)

    i = sub.add_parser("infer", help="exact discrete marginals")
    i.add_argument("model")
    i.add_argument("--root")
    i.add_argument("--check-brute-force", action="store_true")
    i.add_argument("--out")
    i.set_defaults(func=cmd_infer)

    e = sub.add_parser("estimate", help="Gaussian MMSE estimate")
    e.add_argument("J")
    e.add_argument("obs")
    e.add_argument("--mode", choices=["exact", "iterative"], default="exact")
    e.add_argument("--strategy", default="bt:3")
    e.add_argument("--tol", type=float, default=1e-6)
    e.add_argument("--max-iter", type=int, default=2000)
    e.add_argument("--refresh", type=int, default=1)
    e.add_argument("--out-dir")
    e.set_defaults(func=cmd_estimate)

    x = sub.add_parser("experiment", help="convergence experiment on generated models")
    x.add_argument("--kind", choices=["grid", "hub-grid", "file"], default="grid")
    x.add_argument("--size", type=int, default=30)
    x.add_argument("--hubs", type=int, default=2)
    x.add_argument("--graph-file")
    x.add_argument("--strategies", default="tree,bt:3,bt:5")
    x.add_argument("--seeds", type=int, default=10, help="number of seeds")
    x.add_argument("--seed-base", type=int, default=0)
    x.add_argument("--tol", type=float, default=1e-6)
    x.add_argument("--max-iter", type=int, default=2000)
    x.add_argument("--refresh", type=int, default=1)
    x.add_argument("--rho", type=float, default=0.99)
    x.add_argument("--error-covariance", action="store_true")
    x.add_argument("--jobs", type=int, default=1)
    x.add_argument("--out-dir", default="bt-experiment")
    x.set_defaults(func=cmd_experiment)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    if getattr(args, "refresh", 1) < 1:
        print("error: --refresh must be at least 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SearchCapError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CAP
    except CostBudgetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except (GraphError, ModelError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_GRAPH
    except (NumericalError, WalkSummabilityError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
