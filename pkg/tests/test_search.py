import itertools
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from haostar.exceptions import ProblemError
from haostar.model import (
    Action,
    Branch,
    Goal,
    HybridProblem,
    Outcome,
    ResourceSpace,
    executable_action_indices,
    make_random_problem,
)
from haostar.oracle import solve_exact
from haostar.pwc import Box, PwcFunction, region_and
from haostar.search import (
    PolicyGraph,
    SearchGraph,
    error_bound,
    expand_step,
    heuristic_value,
    parse_horizon,
    reachable_discrete_states,
    recompute_reachable,
    scc_decompose,
    solve,
    update_values,
)
from haostar.sim import simulate_trajectory


# scc ----------------------------------------------------------------------

def test_scc_dag_gives_singletons_sinks_first():
    g = {0: [1, 2], 1: [3], 2: [3], 3: [4], 4: []}
    comps = scc_decompose(g)
    assert sorted(c[0] for c in comps) == [0, 1, 2, 3, 4]
    pos = {c[0]: i for i, c in enumerate(comps)}
    for v, ws in g.items():
        for w in ws:
            assert pos[w] < pos[v]


def test_scc_two_cycle_before_tail():
    g = {"t": ["a"], "a": ["b"], "b": ["a"]}
    assert scc_decompose(g) == [["a", "b"], ["t"]]


def _closure(g, nodes):
    reach = {v: {v} for v in nodes}
    changed = True
    while changed:
        changed = False
        for v in nodes:
            new = set().union(*(reach[w] for w in g.get(v, ()) )) | reach[v]
            if new != reach[v]:
                reach[v] = new
                changed = True
    return reach


@pytest.mark.parametrize("seed", range(10))
def test_scc_matches_transitive_closure(seed):
    rng = np.random.default_rng(seed)
    nodes = list(range(50))
    g = {v: sorted({int(w) for w in rng.choice(50, rng.integers(0, 3))}) for v in nodes}
    comps = scc_decompose(g)
    reach = _closure(g, nodes)
    where = {v: i for i, c in enumerate(comps) for v in c}
    assert sorted(where) == nodes
    for u, v in itertools.combinations(nodes, 2):
        assert (where[u] == where[v]) == (v in reach[u] and u in reach[v])
    # condensation is acyclic and emitted sinks first
    for v, ws in g.items():
        for w in ws:
            assert where[w] <= where[v]


# heuristic ----------------------------------------------------------------

def test_heuristic_toy_start(toy):
    assert heuristic_value(toy, toy.initial_state) == 30.0


def test_heuristic_exclusions(toy):
    bit = lambda name: 1 << toy.fluent_index(name)
    assert heuristic_value(toy, bit("done_R1") | bit("done_R2")) == 0.0
    moved_lost = bit("at_L2") | bit("moved") | bit("track_R1")
    assert heuristic_value(toy, moved_lost | bit("done_R1")) == 0.0
    assert heuristic_value(toy, moved_lost) == 10.0
    # before moving, losing a track does not yet rule the goal out
    assert heuristic_value(toy, bit("at_L1")) == 30.0


# solve --------------------------------------------------------------------

def test_terminal_start_solves_to_zero():
    up = (5.0,)
    app = Box((3.0,), up)
    act = Action("go", 0, 0b10, app, (Branch(app, (Outcome(1.0, 0b10, 0, delta=(-3.0,), reward=1.0),)),))
    p = HybridProblem(ResourceSpace(up), ("f", "g"), (Goal(1, 1.0),), (act,), 0, (2.0,))
    sol = solve(p)
    assert sol.value_at_start == 0.0
    assert sol.converged and sol.iterations == 0
    assert sol.stats["nodes_expanded"] == 0 and sol.error_bound == 0.0


def test_deterministic_toy_is_thirty(toy_det):
    sol = solve(toy_det)
    assert sol.value_at_start == 30.0 and sol.converged


@pytest.mark.parametrize("k", [1, 2, math.inf])
def test_stochastic_toy_matches_oracle(toy, k):
    sol = solve(toy, k=k)
    assert sol.converged and sol.iterations < 50
    assert sol.value_at_start == pytest.approx(solve_exact(toy).start_value(), abs=1e-9)


def test_invalid_problem_rejected_before_search():
    p = make_random_problem(0)
    bad = HybridProblem(p.space, p.fluents, p.goals, p.actions, p.initial_state, p.initial_point, c_min=0.0)
    with pytest.raises(ProblemError):
        solve(bad)
    with pytest.raises(ProblemError):
        solve(p, k=0)


def test_early_stop_keeps_upper_bound(toy):
    exact = solve_exact(toy).start_value()
    sol = solve(toy, k=1, max_iterations=1)
    assert not sol.converged
    assert sol.value_at_start >= exact - 1e-9
    assert sol.lower_bound <= exact + 1e-9
    assert sol.lower_bound + sol.error_bound == pytest.approx(sol.value_at_start, abs=1e-9)


def test_parse_horizon():
    assert parse_horizon("inf") == math.inf
    assert parse_horizon("7") == 7
    with pytest.raises(ValueError):
        parse_horizon("0")


# expand_step --------------------------------------------------------------

def _discrete_within(problem, steps):
    """Discrete states met within ``steps`` actions by forward point enumeration."""
    up = problem.upper
    layer = {(problem.initial_state, problem.initial_point)}
    seen = {problem.initial_state}
    for _ in range(steps):
        nxt = set()
        for n, x in layer:
            for a in executable_action_indices(problem, n, x):
                for o in problem.actions[a].branch_at(x, up).outcomes:
                    nxt.add((o.successor(n), o.arrival(x)))
        seen |= {n for n, _ in nxt}
        layer = nxt
    return seen


def test_first_expansion_depth_two(toy):
    g = SearchGraph(toy)
    expand_step(g, 2)
    assert set(g.nodes) == _discrete_within(toy, 2)


@pytest.mark.parametrize("seed", [0, 4, 9, 13])
def test_exhaustive_expansion_creates_every_reachable_node(seed):
    p = make_random_problem(seed)
    g = SearchGraph(p)
    expand_step(g, math.inf)
    assert not g.has_frontier()
    assert all(not nd.open.any() for nd in g.nodes.values())
    assert set(g.nodes) == solve_exact(p).discrete_states()
    assert len(g.nodes) == reachable_discrete_states(p)


def test_closed_arrivals_open_nothing(toy):
    g = SearchGraph(toy)
    expand_step(g, math.inf)
    before = {s: nd.open.any() for s, nd in g.nodes.items()}
    root = g.nodes[g.start]
    root.open = region_and(root.closed, root.active)
    root.closed = PwcFunction.constant(toy.upper, False, dtype=bool)
    expand_step(g, 1)
    assert {s: nd.open.any() for s, nd in g.nodes.items()} == before


def test_open_and_closed_stay_disjoint(toy):
    def check(graph, _):
        for nd in graph.nodes.values():
            assert not region_and(nd.open, nd.closed).any()
    solve(toy, k=1, callback=check)


# update_values ------------------------------------------------------------

def test_update_values_fixpoint(toy):
    sol = solve(toy, k=2)
    g = sol.graph
    before = {s: nd.value for s, nd in g.nodes.items()}
    summary = update_values(g, list(g.nodes))
    assert summary["max_change"] < 1e-9
    assert all(g.nodes[s].value.max_abs_diff(v) < 1e-9 for s, v in before.items())


def test_acyclic_update_backs_each_node_up_once(toy):
    g = SearchGraph(toy)
    touched = expand_step(g, math.inf)
    summary = update_values(g, touched)
    assert g.stats["loop_components"] == 0
    assert g.stats["backups"] == summary["nodes"]


def test_round_trip_forms_a_loop_component(round_trip):
    sol = solve(round_trip, k=2)
    assert sol.stats["max_scc_size"] >= 2 and sol.stats["loop_components"] >= 1
    assert sol.value_at_start == pytest.approx(solve_exact(round_trip).start_value(), abs=1e-9)


# recompute_reachable ------------------------------------------------------

def test_start_reachable_is_the_start_cell(toy):
    g = SearchGraph(toy)
    touched = expand_step(g, 2)
    update_values(g, touched)
    recompute_reachable(g)
    r = g.nodes[g.start].reachable
    assert r(toy.initial_point)
    assert r.measure() == pytest.approx(0.0, abs=1e-9)


def test_unmarked_successors_are_unreachable(toy):
    sol = solve(toy, k=math.inf)
    g = sol.graph
    on_policy = set()
    for s in g.reached:
        on_policy |= g.nodes[s].successors(g.nodes[s].marked)
    for s, nd in g.nodes.items():
        if s != g.start and s not in on_policy:
            assert not nd.reachable.any()


def test_reachable_contains_sampled_trajectories(toy):
    sol = solve(toy, k=1, max_iterations=2)
    policy = sol.policy_graph()
    g = sol.graph
    for trial in range(20000):
        t = simulate_trajectory(toy, policy, seed=11, trial=trial)
        for st_ in t.steps:
            assert g.nodes[st_.state].reachable(st_.point)
        assert g.nodes[t.final_state].reachable(t.final_point)


# error bound --------------------------------------------------------------

def test_error_bound_before_expansion(toy):
    g = SearchGraph(toy)
    assert error_bound(g) == (0.0, 30.0)


def test_error_bound_brackets_optimum_mid_run(toy):
    exact = solve_exact(toy).start_value()
    sol = solve(toy, k=1, track_bounds=True)
    assert len(sol.trace) >= 3
    for rec in sol.trace:
        assert rec.g - 1e-9 <= exact <= rec.g + rec.h + 1e-9
        assert rec.g + rec.h == pytest.approx(rec.value, abs=1e-9)
    assert sol.trace[-1].h == 0.0 or abs(sol.trace[-1].h) < 1e-9


# policy export ------------------------------------------------------------

def test_policy_json_round_trip(toy):
    sol = solve(toy)
    d = json.loads(sol.to_json())
    back = PolicyGraph.from_dict(d, toy)
    orig = sol.policy_graph()
    assert set(back.nodes) == set(orig.nodes)
    for s, nd in orig.nodes.items():
        other = back.nodes[s]
        assert nd.value.max_abs_diff(other.value) == 0.0
        assert nd.policy.max_abs_diff(other.policy) == 0
        assert nd.reachable.max_abs_diff(other.reachable) == 0
    for t in range(200):
        traj = simulate_trajectory(toy, back, seed=3, trial=t)
        assert traj.total_return == simulate_trajectory(toy, orig, seed=3, trial=t).total_return


def test_solution_stats_keys(toy):
    stats = solve(toy).stats
    assert {"nodes_created", "nodes_expanded", "backups", "policy_nodes", "wall_ms"} <= stats.keys()
    assert stats["nodes_created"] >= stats["policy_nodes"] >= 1


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000))
def test_random_instances_match_oracle(seed):
    p = make_random_problem(seed)
    sol = solve(p, k=2)
    assert sol.converged
    assert sol.value_at_start == pytest.approx(solve_exact(p).start_value(), abs=1e-9)
