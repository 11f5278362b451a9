"""Brute-force ground truth: enumerate every reachable hybrid state, then solve backwards.

With a fixed start point and discrete outcomes only finitely many resource
points are reachable, so the optimality equation can be solved exactly on
that set.  Every consumption lowers the resource sum by at least ``c_min``,
so ordering states by resource sum gives a valid evaluation order.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

from .exceptions import OracleOverflow, ProblemError
from .model import HybridProblem, executable_action_indices, validate_problem

KEY_RESOLUTION = 1e-12
DEFAULT_CAP = 1_000_000


@dataclass
class OracleTable:
    problem: HybridProblem
    start: tuple
    exact: bool = False
    # key -> (discrete state, point)
    states: dict = field(default_factory=dict)
    # key -> list of (action, [(probability, successor key, reward)])
    transitions: dict = field(default_factory=dict)
    values: dict = field(default_factory=dict)
    best_action: dict = field(default_factory=dict)

    def key(self, n: int, x: Sequence) -> tuple:
        if self.exact:
            return (n, tuple(Fraction(v) for v in x))
        return (n, tuple(round(float(v) / KEY_RESOLUTION) for v in x))

    def __len__(self) -> int:
        return len(self.states)

    def value(self, n: int, x: Sequence[float]) -> float:
        return self.values[self.key(n, x)]

    def start_value(self) -> float:
        return self.values[self.start]

    def action(self, n: int, x: Sequence[float]) -> int | None:
        return self.best_action[self.key(n, x)]

    def q_value(self, n: int, x: Sequence[float], action: int) -> float:
        for a, outs in self.transitions[self.key(n, x)]:
            if a == action:
                return sum(p * (r + self.values[k]) for p, k, r in outs)
        raise ProblemError(f"action {self.problem.actions[action].name} is not executable there")

    def discrete_states(self) -> set[int]:
        return {n for n, _ in self.states.values()}

    def rows(self) -> list[list]:
        names = [a.name for a in self.problem.actions]
        out = []
        for k in sorted(self.states, key=lambda k: (k[0], k[1])):
            n, x = self.states[k]
            a = self.best_action.get(k)
            out.append([f"{n:#x}", *(float(v) for v in x), self.values.get(k), "" if a is None else names[a]])
        return out

    def dump_csv(self, path, header: Sequence[str] = ()) -> None:
        d = self.problem.space.dims
        with open(path, "w", newline="", encoding="utf-8") as fh:
            for line in header:
                fh.write(f"# {line}\n")
            w = csv.writer(fh)
            w.writerow(["fluents_hex", *(f"x_{i + 1}" for i in range(d)), "value", "action"])
            w.writerows(self.rows())


def enumerate_reachable(problem: HybridProblem, x0: Sequence[float] | None = None,
                        cap: int = DEFAULT_CAP, exact: bool = False) -> OracleTable:
    """All hybrid states reachable from the start under any action sequence."""
    if x0 is not None:
        problem = problem.with_initial_point(x0)
    n0 = problem.initial_state
    p0 = tuple(Fraction(v) for v in problem.initial_point) if exact else problem.initial_point
    table = OracleTable(problem, None, exact)
    table.start = table.key(n0, p0)
    table.states[table.start] = (n0, p0)
    up = problem.upper
    todo = [table.start]
    while todo:
        k = todo.pop()
        n, x = table.states[k]
        xf = tuple(float(v) for v in x)
        trans = []
        for ai in executable_action_indices(problem, n, xf):
            branch = problem.actions[ai].branch_at(xf, up)
            outs = []
            for o in branch.outcomes:
                if o.relative:
                    delta = [Fraction(v) for v in o.delta] if exact else o.delta
                    y = tuple(a + b for a, b in zip(x, delta))
                else:
                    y = tuple(Fraction(v) for v in o.point) if exact else o.point
                m = o.successor(n)
                kk = table.key(m, y)
                if kk not in table.states:
                    if len(table.states) >= cap:
                        raise OracleOverflow(f"more than {cap} reachable hybrid states")
                    table.states[kk] = (m, y)
                    todo.append(kk)
                outs.append((o.probability, kk, o.reward_at(tuple(float(v) for v in y))))
            trans.append((ai, outs))
        table.transitions[k] = trans
    return table


def backward_induction(table: OracleTable) -> OracleTable:
    """Fill values and greedy actions, smallest resource sum first."""
    order = sorted(table.states, key=lambda k: float(sum(table.states[k][1])))
    for k in order:
        best, arg = 0.0, None
        for a, outs in table.transitions[k]:
            q = sum(p * (r + table.values[kk]) for p, kk, r in outs)
            if arg is None or q > best:
                best, arg = q, a
        table.values[k] = best
        table.best_action[k] = arg
    return table


def solve_exact(problem: HybridProblem, x0: Sequence[float] | None = None,
                cap: int = DEFAULT_CAP, exact: bool = False) -> OracleTable:
    issues = validate_problem(problem)
    if issues:
        raise ProblemError("invalid problem: " + "; ".join(issues))
    return backward_induction(enumerate_reachable(problem, x0, cap, exact))
