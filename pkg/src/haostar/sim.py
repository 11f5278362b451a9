"""Monte Carlo execution of a solved policy against the problem's own dynamics.

Trial ``i`` of a run seeded with ``s`` draws from the stream
``default_rng([s, i])``, so results do not depend on trial scheduling.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .exceptions import ContractError, DomainError
from .model import HybridProblem, executable_action_indices
from .search import PolicyGraph, Solution

TERMINAL = "terminal"
FRINGE = "done-at-fringe"


@dataclass(frozen=True)
class Step:
    state: int
    point: tuple[float, ...]
    action: int
    outcome: int
    next_state: int
    next_point: tuple[float, ...]
    reward: float


@dataclass
class Trajectory:
    steps: list[Step] = field(default_factory=list)
    total_return: float = 0.0
    termination: str = TERMINAL
    final_state: int = 0
    final_point: tuple[float, ...] = ()


def _policy(solution) -> PolicyGraph:
    if isinstance(solution, Solution):
        return solution.policy_graph()
    if isinstance(solution, PolicyGraph):
        return solution
    raise TypeError("expected a Solution or a PolicyGraph")


def _sample(rng: np.random.Generator, probs: Sequence[float]) -> int:
    u = rng.random() * sum(probs)
    acc = 0.0
    for i, p in enumerate(probs):
        acc += p
        if u < acc:
            return i
    return len(probs) - 1


def simulate_trajectory(problem: HybridProblem, solution, seed: int, trial: int = 0) -> Trajectory:
    """Follow the greedy policy until a terminal state or the unexpanded fringe."""
    policy = _policy(solution)
    rng = np.random.default_rng([seed, trial])
    up = problem.upper
    n, x = problem.initial_state, tuple(policy.start_point)
    traj = Trajectory()
    while True:
        acts = executable_action_indices(problem, n, x)
        if not acts:
            traj.termination = TERMINAL
            break
        a = policy.action_at(n, x)
        if a is None:
            # unexpanded: stop with zero further reward
            traj.termination = FRINGE
            break
        if a not in acts:
            raise ContractError(
                f"policy at {problem.describe_state(n)} {x} picks "
                f"{'nothing' if a < 0 else problem.actions[a].name} on a closed region"
            )
        branch = problem.actions[a].branch_at(x, up)
        i = _sample(rng, [o.probability for o in branch.outcomes])
        o = branch.outcomes[i]
        m, y = o.successor(n), o.arrival(x)
        if not problem.space.contains(y):
            raise DomainError(f"arrival {y} leaves the resource hypercube")
        r = o.reward_at(y)
        traj.steps.append(Step(n, x, a, i, m, y, r))
        traj.total_return += r
        n, x = m, y
    traj.final_state, traj.final_point = n, x
    return traj


@dataclass
class PolicyEvaluation:
    mean: float
    stderr: float
    trials: int
    goal_rates: dict[str, float]
    fringe_rate: float


def evaluate_policy(problem: HybridProblem, solution, trials: int, seed: int) -> PolicyEvaluation:
    if trials < 1:
        raise ValueError("need at least one trial")
    policy = _policy(solution)
    returns = np.empty(trials)
    hits = np.zeros(len(problem.goals))
    fringe = 0
    for i in range(trials):
        t = simulate_trajectory(problem, policy, seed, i)
        returns[i] = t.total_return
        fringe += t.termination == FRINGE
        for j, g in enumerate(problem.goals):
            hits[j] += t.final_state >> g.fluent & 1
    stderr = float(returns.std(ddof=1) / math.sqrt(trials)) if trials > 1 else 0.0
    rates = {problem.fluents[g.fluent]: float(hits[j] / trials) for j, g in enumerate(problem.goals)}
    return PolicyEvaluation(float(returns.mean()), stderr, trials, rates, fringe / trials)


def dump_trajectory(problem: HybridProblem, traj: Trajectory, path, header: Sequence[str] = ()) -> None:
    d = problem.space.dims
    with open(path, "w", newline="", encoding="utf-8") as fh:
        for line in header:
            fh.write(f"# {line}\n")
        w = csv.writer(fh)
        w.writerow(["step", "fluents_hex", *(f"x_{i + 1}" for i in range(d)), "action", "outcome",
                    "next_fluents_hex", *(f"next_x_{i + 1}" for i in range(d)), "reward"])
        for k, s in enumerate(traj.steps):
            w.writerow([k, f"{s.state:#x}", *s.point, problem.actions[s.action].name, s.outcome,
                        f"{s.next_state:#x}", *s.next_point, s.reward])
