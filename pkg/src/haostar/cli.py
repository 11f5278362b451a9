"""Command-line driver: solve, verify, simulate, sweep, export."""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

from . import __version__
from .exceptions import ContractError, DomainError, OracleOverflow, ProblemError
from .model import HybridProblem, dump_problem, load_problem, problem_from_dict, problem_to_dict
from .oracle import solve_exact
from .pwc import grid_rows, piece_rows
from .rover import load_params, make_rover_problem
from .search import PolicyGraph, parse_horizon, reachable_discrete_states, solve
from .sim import dump_trajectory, evaluate_policy, simulate_trajectory

TOOL = f"haostar {__version__}"
STATS_COLUMNS = [
    "axis_value", "reachable_states", "nodes_created", "nodes_expanded", "regions_expanded",
    "policy_nodes", "policy_branches", "goals_pursued", "backups", "wall_ms", "value", "error_bound",
]
AXES = ("initial_time", "initial_energy", "k")


class CliError(Exception):
    pass


def file_sha256(path) -> str:
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def header_lines(path) -> list[str]:
    return [f"{TOOL} input-sha256={file_sha256(path)}"]


def parse_point(text: str | None, problem: HybridProblem) -> HybridProblem:
    if text is None:
        return problem
    try:
        x0 = tuple(float(v) for v in text.split(","))
    except ValueError:
        raise CliError(f"cannot parse resource point {text!r}") from None
    if len(x0) != problem.space.dims:
        raise CliError(f"x0 has {len(x0)} coordinates, the problem has {problem.space.dims} resources")
    if not problem.space.contains(x0):
        raise CliError(f"x0 {x0} lies outside the resource hypercube {problem.upper}")
    return problem.with_initial_point(x0)


def parse_state(text: str, problem: HybridProblem) -> int:
    t = text.strip()
    try:
        return int(t, 0)
    except ValueError:
        pass
    n = 0
    for name in filter(None, (s.strip() for s in t.strip("{}").split(","))):
        n |= 1 << problem.fluent_index(name)
    return n


def _write_csv(path, header: list[str], columns: list[str], rows) -> None:
    buf = io.StringIO()
    for line in header:
        buf.write(f"# {line}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    w.writerows(rows)
    if path in (None, "-"):
        sys.stdout.write(buf.getvalue())
    else:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(buf.getvalue())


# subcommands --------------------------------------------------------------

def cmd_solve(args) -> int:
    problem = parse_point(args.x0, load_problem(args.problem))
    sol = solve(problem, k=args.k, max_iterations=args.max_iter, time_limit=args.time_limit,
                multiregion=not args.no_multiregion, whole_region=args.whole_region)
    doc = {
        "meta": {"tool": TOOL, "input_sha256": file_sha256(args.problem), "k": str(args.k),
                 "multiregion": not args.no_multiregion},
        "problem": problem_to_dict(problem),
        "solution": sol.to_dict(),
    }
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=1, sort_keys=True)
            fh.write("\n")
    status = "converged" if sol.converged else "stopped early"
    print(f"value {sol.value_at_start:.12g} lower {sol.lower_bound:.12g} "
          f"error-bound {sol.error_bound:.12g} ({status}, {sol.iterations} iterations, "
          f"{sol.stats['nodes_created']} nodes)")
    return 0


def cmd_oracle(args) -> int:
    problem = parse_point(args.x0, load_problem(args.problem))
    table = solve_exact(problem, cap=args.cap, exact=args.exact)
    if args.out:
        table.dump_csv(args.out, header_lines(args.problem))
    print(f"value {table.start_value():.12g} ({len(table)} hybrid states, "
          f"{len(table.discrete_states())} discrete states)")
    return 0


def cmd_check(args) -> int:
    problem = parse_point(args.x0, load_problem(args.problem))
    sol = solve(problem, k=args.k, multiregion=not args.no_multiregion)
    ref = solve_exact(problem, cap=args.cap).start_value()
    delta = abs(sol.value_at_start - ref)
    ok = delta <= args.tol and sol.converged
    verdict = "PASS" if ok else "FAIL"
    rel = "<" if delta < args.tol else "="
    print(f"{verdict}, |Δ| {rel} {args.tol:g}" + ("" if delta < args.tol else f" ({delta:.3g})")
          + f"  search {sol.value_at_start:.12g} oracle {ref:.12g}")
    return 0 if ok else 1


def _load_policy(path) -> tuple[HybridProblem, PolicyGraph]:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    problem = problem_from_dict(doc["problem"])
    return problem, PolicyGraph.from_dict(doc["solution"], problem)


def cmd_simulate(args) -> int:
    problem, policy = _load_policy(args.policy)
    ev = evaluate_policy(problem, policy, args.trials, args.seed)
    print(f"mean {ev.mean:.12g} stderr {ev.stderr:.6g} trials {ev.trials} "
          f"fringe-rate {ev.fringe_rate:.6g} planned {policy.value_at_start:.12g}")
    for goal, rate in ev.goal_rates.items():
        print(f"  {goal} {rate:.6g}")
    if args.trajectory_out:
        traj = simulate_trajectory(problem, policy, args.seed, 0)
        dump_trajectory(problem, traj, args.trajectory_out, header_lines(args.policy))
    return 0


def cmd_export_vf(args) -> int:
    problem, policy = _load_policy(args.policy)
    n = problem.initial_state if args.node is None else parse_state(args.node, problem)
    node = policy.nodes.get(n)
    if node is None:
        raise CliError(f"state {n:#x} is not in the exported policy graph")
    d = problem.space.dims
    if args.pieces:
        cols = [f"lo_{i + 1}" for i in range(d)] + [f"hi_{i + 1}" for i in range(d)] + ["value"]
        rows = piece_rows(node.value)
    else:
        cols = [f"x_{i + 1}" for i in range(d)] + ["value"]
        rows = grid_rows(node.value, args.grid)
    _write_csv(args.out, header_lines(args.policy), cols, rows)
    return 0


def cmd_gen_rover(args) -> int:
    problem = make_rover_problem(load_params(args.params))
    dump_problem(problem, args.out)
    print(f"{problem.name}: {len(problem.fluents)} fluents, {len(problem.actions)} actions -> {args.out}")
    return 0


# sweeps -------------------------------------------------------------------

@dataclass
class SweepSpec:
    axis: str
    values: list
    problem: str | None = None
    params: str | None = None
    fixed: dict = field(default_factory=dict)
    outputs: str | None = None

    @classmethod
    def load(cls, path) -> "SweepSpec":
        with open(path, encoding="utf-8") as fh:
            d = json.load(fh)
        base = os.path.dirname(os.path.abspath(path))
        spec = cls(
            axis=d["axis"], values=list(d["values"]), problem=d.get("problem"),
            params=d.get("params"), fixed=dict(d.get("fixed", {})), outputs=d.get("outputs"),
        )
        for attr in ("problem", "params", "outputs"):
            v = getattr(spec, attr)
            if v is not None and not os.path.isabs(v):
                setattr(spec, attr, os.path.join(base, v))
        spec.check()
        return spec

    def check(self) -> None:
        if self.axis not in AXES:
            raise CliError(f"sweep axis must be one of {', '.join(AXES)}, got {self.axis!r}")
        if not self.values:
            raise CliError("sweep needs at least one value")
        if (self.problem is None) == (self.params is None):
            raise CliError("sweep spec needs exactly one of 'problem' or 'params'")

    def input_path(self) -> str:
        return self.problem if self.problem is not None else self.params

    def base_problem(self) -> HybridProblem:
        if self.problem is not None:
            return load_problem(self.problem)
        return make_rover_problem(load_params(self.params))


def _sweep_point(spec: SweepSpec, value) -> list:
    problem = spec.base_problem()
    fixed = spec.fixed
    if "x0" in fixed:
        problem = problem.with_initial_point(tuple(fixed["x0"]))
    k = parse_horizon(fixed.get("k", 7))
    if spec.axis == "k":
        k = parse_horizon(value)
    else:
        dim = AXES.index(spec.axis)
        if dim >= problem.space.dims:
            raise CliError(f"axis {spec.axis} needs at least {dim + 1} resources")
        x0 = list(problem.initial_point)
        x0[dim] = float(value)
        if not problem.space.contains(x0):
            raise CliError(f"sweep value {value} lies outside the resource hypercube")
        problem = problem.with_initial_point(x0)
    sol = solve(problem, k=k, multiregion=bool(fixed.get("multiregion", True)),
                max_iterations=fixed.get("max_iterations"), time_limit=fixed.get("time_limit"))
    st = sol.stats
    return [
        value, reachable_discrete_states(problem), st["nodes_created"], st["nodes_expanded"],
        st["regions_expanded"], st["policy_nodes"], st["policy_branches"], st["goals_pursued"],
        st["backups"], st["wall_ms"], repr(sol.value_at_start), repr(sol.error_bound),
    ]


def run_sweep(spec: SweepSpec, jobs: int = 1) -> list[list]:
    if jobs <= 1:
        return [_sweep_point(spec, v) for v in spec.values]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        # map keeps input order whatever the completion order
        return list(pool.map(_sweep_point, [spec] * len(spec.values), spec.values))


def cmd_sweep(args) -> int:
    spec = SweepSpec.load(args.spec)
    rows = run_sweep(spec, args.jobs)
    out = args.out or spec.outputs
    header = header_lines(spec.input_path()) + [f"axis={spec.axis} spec-sha256={file_sha256(args.spec)}"]
    _write_csv(out, header, STATS_COLUMNS, rows)
    if out not in (None, "-"):
        print(f"{len(rows)} sweep points -> {out}")
    return 0


# entry point --------------------------------------------------------------

def _horizon(text: str) -> float:
    try:
        return parse_horizon(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="haostar", description=__doc__)
    p.add_argument("--version", action="version", version=TOOL)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", help="run the heuristic search and write the policy graph")
    s.add_argument("--problem", required=True)
    s.add_argument("--k", type=_horizon, default=7, help="expansion horizon (integer or 'inf')")
    s.add_argument("--x0", help="initial resources, comma separated")
    s.add_argument("--out", help="policy JSON path")
    s.add_argument("--no-multiregion", action="store_true", help="back up closed regions only")
    s.add_argument("--max-iter", type=int)
    s.add_argument("--time-limit", type=float, help="seconds")
    s.add_argument("--whole-region", action="store_true",
                   help="solve for every start point dominated by x0 (for surface export)")
    s.set_defaults(func=cmd_solve)

    s = sub.add_parser("oracle", help="exact values by enumeration and backward induction")
    s.add_argument("--problem", required=True)
    s.add_argument("--x0")
    s.add_argument("--out", help="CSV dump of every reachable hybrid state")
    s.add_argument("--cap", type=int, default=1_000_000)
    s.add_argument("--exact", action="store_true", help="rational point arithmetic")
    s.set_defaults(func=cmd_oracle)

    s = sub.add_parser("check", help="compare the search result with the oracle")
    s.add_argument("--problem", required=True)
    s.add_argument("--x0")
    s.add_argument("--k", type=_horizon, default=7)
    s.add_argument("--no-multiregion", action="store_true")
    s.add_argument("--tol", type=float, default=1e-9)
    s.add_argument("--cap", type=int, default=1_000_000)
    s.set_defaults(func=cmd_check)

    s = sub.add_parser("simulate", help="Monte Carlo evaluation of a saved policy")
    s.add_argument("--policy", required=True)
    s.add_argument("--trials", type=int, default=10_000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--trajectory-out", help="CSV of trial 0, one row per step")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("sweep", help="stats over initial resources or expansion horizons")
    s.add_argument("--spec", required=True)
    s.add_argument("--out", help="stats CSV (defaults to the spec's outputs entry, else stdout)")
    s.add_argument("--jobs", type=int, default=1)
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("export-vf", help="value surface of one node as CSV")
    s.add_argument("--policy", required=True)
    s.add_argument("--node", help="discrete state: integer, hex, or {fluent,...}; default the start")
    s.add_argument("--grid", type=int, default=200, help="samples per dimension")
    s.add_argument("--pieces", action="store_true", help="emit boxes instead of grid samples")
    s.add_argument("--out")
    s.set_defaults(func=cmd_export_vf)

    s = sub.add_parser("gen-rover", help="build a rover problem file from parameters")
    s.add_argument("--params", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_gen_rover)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "grid", 2) < 2:
        print("error: --grid needs at least 2 samples per dimension", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except OracleOverflow as exc:
        print(f"error: oracle overflow: {exc}", file=sys.stderr)
        return 3
    except (CliError, OSError, ValueError, KeyError, TypeError,
            ProblemError, DomainError, ContractError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
