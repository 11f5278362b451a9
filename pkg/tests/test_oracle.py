import math

import numpy as np
import pytest

from haostar.exceptions import OracleOverflow, ProblemError
from haostar.model import Action, Branch, Goal, HybridProblem, Outcome, ResourceSpace, executable_action_indices
from haostar.oracle import backward_induction, enumerate_reachable, solve_exact
from haostar.pwc import Box


def chain_1d(x0=10.0):
    up = (10.0,)
    app = Box((3.0,), up)
    act = Action("step", 0, 0, app, (Branch(app, (Outcome(1.0, 0, 0, delta=(-3.0,)),)),))
    return HybridProblem(ResourceSpace(up), ("f",), (), (act,), 0, (x0,))


def two_step_chain():
    up = (10.0,)
    app = Box((2.0,), up)
    first = Action("first", 0, 0b11, app, (Branch(app, (Outcome(1.0, 0b01, 0, delta=(-2.0,), reward=5.0),)),))
    second = Action("second", 0b01, 0b10, app, (Branch(app, (Outcome(1.0, 0b10, 0, delta=(-2.0,), reward=3.0),)),))
    return HybridProblem(ResourceSpace(up), ("g1", "g2"), (Goal(0, 5.0), Goal(1, 3.0)), (first, second), 0, up)


def test_one_dimensional_chain_points():
    table = enumerate_reachable(chain_1d())
    assert sorted(x[0] for _, x in table.states.values()) == [1.0, 4.0, 7.0, 10.0]
    backward_induction(table)
    assert table.action(0, (1.0,)) is None
    assert all(v == 0.0 for v in table.values.values())


def test_terminal_start_is_single_state():
    table = solve_exact(chain_1d(2.0))
    assert len(table) == 1 and table.start_value() == 0.0


def test_two_step_chain_sums_rewards():
    table = solve_exact(two_step_chain())
    assert table.start_value() == 8.0
    assert table.q_value(0, (10.0,), 0) == 8.0
    with pytest.raises(ProblemError):
        table.q_value(0, (10.0,), 1)


def _dfs_count(problem):
    up = problem.upper
    seen = set()
    stack = [(problem.initial_state, problem.initial_point)]
    while stack:
        n, x = stack.pop()
        key = (n, tuple(round(v * 2 ** 20) for v in x))
        if key in seen:
            continue
        seen.add(key)
        for a in executable_action_indices(problem, n, x):
            for o in problem.actions[a].branch_at(x, up).outcomes:
                stack.append((o.successor(n), o.arrival(x)))
    return len(seen)


def test_deterministic_toy_count_matches_independent_dfs(toy_det):
    assert len(enumerate_reachable(toy_det)) == _dfs_count(toy_det)
    assert solve_exact(toy_det).start_value() == 30.0


def test_stochastic_toy_count_matches_independent_dfs(toy):
    assert len(enumerate_reachable(toy)) == _dfs_count(toy)


def test_overflow_is_explicit(toy):
    with pytest.raises(OracleOverflow):
        enumerate_reachable(toy, cap=10)


def test_exact_mode_agrees_with_float_mode(toy):
    a = solve_exact(toy)
    b = solve_exact(toy, exact=True)
    assert len(a) == len(b)
    assert float(b.start_value()) == pytest.approx(a.start_value(), abs=1e-12)


def test_x0_override(toy):
    low = solve_exact(toy, x0=(5.0, 5.0))
    assert low.start_value() <= solve_exact(toy).start_value()


def test_rows_are_sorted_and_complete(toy, tmp_path):
    table = solve_exact(toy)
    rows = table.rows()
    assert len(rows) == len(table)
    path = tmp_path / "o.csv"
    table.dump_csv(path, header=["hello"])
    lines = path.read_text().splitlines()
    assert lines[0] == "# hello" and lines[1] == "fluents_hex,x_1,x_2,value,action"
    assert len(lines) == len(table) + 2


def test_oracle_policy_monte_carlo(toy):
    """The oracle's own greedy policy, simulated, reproduces its start value."""
    table = solve_exact(toy)
    up = toy.upper
    rng = np.random.default_rng(2024)
    trials = 100_000
    returns = np.empty(trials)
    for i in range(trials):
        n, x, total = toy.initial_state, toy.initial_point, 0.0
        while True:
            a = table.action(n, x)
            if a is None:
                break
            outs = toy.actions[a].branch_at(x, up).outcomes
            o = outs[rng.choice(len(outs), p=[o.probability for o in outs])]
            n, x = o.successor(n), o.arrival(x)
            total += o.reward_at(x)
        returns[i] = total
    sigma = returns.std(ddof=1) / math.sqrt(trials)
    assert abs(returns.mean() - table.start_value()) <= 3 * sigma
