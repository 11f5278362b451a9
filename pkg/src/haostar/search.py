"""HAO*: heuristic search over discrete states with piecewise-constant values.

Each discrete state gets a node holding piecewise-constant functions of the
resource vector: the value estimate, the greedy action, and indicators for
the open, closed and reachable regions.  An iteration expands the open part
of the best partial solution to depth ``k``, backs values up through the
touched nodes and their ancestors in SCC order, and then recomputes which
regions the greedy policy reaches from the start.
"""
from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping

import numpy as np

from .backup import bellman_backup, box_indicator, policy_value, reach_images
from .exceptions import ContractError, ProblemError
from .model import HybridProblem, validate_problem
from .pwc import (
    NO_TAG,
    Box,
    PwcFunction,
    combine,
    empty_region,
    region_and,
    region_minus,
    region_or,
)

VALUE_TOL = 1e-9
MAX_SWEEPS = 100_000


# strongly connected components -------------------------------------------

def scc_decompose(graph: Mapping) -> list[list]:
    """Tarjan's algorithm, iterative.  Components come out sinks first.

    ``graph`` maps a node to its successors; successors missing from the
    keys are treated as nodes without outgoing edges.  Roots are visited in
    sorted order so the result is deterministic.
    """
    index: dict = {}
    low: dict = {}
    on_stack: set = set()
    stack: list = []
    comps: list[list] = []
    counter = 0

    def succ(v):
        return graph.get(v, ())

    for root in sorted(graph):
        if root in index:
            continue
        index[root] = low[root] = counter
        counter += 1
        stack.append(root)
        on_stack.add(root)
        work = [(root, iter(succ(root)))]
        while work:
            v, it = work[-1]
            pushed = False
            for w in it:
                if w not in index:
                    index[w] = low[w] = counter
                    counter += 1
                    stack.append(w)
                    on_stack.add(w)
                    work.append((w, iter(succ(w))))
                    pushed = True
                    break
                if w in on_stack:
                    low[v] = min(low[v], index[w])
            if pushed:
                continue
            work.pop()
            if work:
                u = work[-1][0]
                low[u] = min(low[u], low[v])
            if low[v] == index[v]:
                comp = []
                while True:
                    w = stack.pop()
                    on_stack.discard(w)
                    comp.append(w)
                    if w == v:
                        break
                comps.append(sorted(comp))
    return comps


# heuristic ----------------------------------------------------------------

def heuristic_value(problem: HybridProblem, n: int) -> float:
    """Sum of rewards of goals still achievable from ``n``.

    Once the moved flag is set, a goal whose prerequisite fluent is false
    can no longer be achieved and is left out.
    """
    moved = problem.moved_fluent is not None and bool(n >> problem.moved_fluent & 1)
    total = 0.0
    for g in problem.goals:
        if n >> g.fluent & 1:
            continue
        if moved and g.requires is not None and not n >> g.requires & 1:
            continue
        total += g.reward
    return total


# graph --------------------------------------------------------------------

class SearchNode:
    __slots__ = (
        "state", "heuristic", "active", "value", "policy", "open", "closed",
        "reachable", "parents", "children", "cache", "marked",
    )

    def __init__(self, state: int, heuristic: float, active: PwcFunction):
        up = active.upper
        self.state = state
        self.heuristic = heuristic
        # where some action is executable; the complement is terminal
        self.active = active
        self.value = initial_value(active, heuristic)
        self.policy = PwcFunction.constant(up, NO_TAG, dtype=np.int64)
        self.open = empty_region(up)
        self.closed = empty_region(up)
        self.reachable = empty_region(up)
        self.parents: set[tuple[int, int]] = set()
        self.children: dict[int, tuple[int, ...]] = {}
        self.cache: PwcFunction | None = None
        self.marked: frozenset[int] = frozenset()

    def policy_region(self, action: int) -> PwcFunction:
        return PwcFunction(self.policy.edges, self.policy.values == action).compact()

    def successors(self, actions: Iterable[int] | None = None) -> set[int]:
        acts = self.children if actions is None else actions
        out: set[int] = set()
        for a in acts:
            out.update(self.children.get(a, ()))
        return out


def initial_value(active: PwcFunction, heuristic: float) -> PwcFunction:
    return PwcFunction(active.edges, np.where(active.values, float(heuristic), 0.0))


class _Values(Mapping):
    """Node values, falling back to the initial estimate for ungenerated states."""

    def __init__(self, graph: "SearchGraph"):
        self.graph = graph

    def __getitem__(self, n):
        node = self.graph.nodes.get(n)
        if node is not None:
            return node.value
        return self.graph.fresh_value(n)

    def __iter__(self):
        return iter(self.graph.nodes)

    def __len__(self):
        return len(self.graph.nodes)


class SearchGraph:
    """Explicit graph of discrete-state nodes grown by the search."""

    def __init__(self, problem: HybridProblem, start_region: PwcFunction | None = None,
                 multiregion: bool = True):
        self.problem = problem
        self.upper = problem.upper
        self.multiregion = multiregion
        self.nodes: dict[int, SearchNode] = {}
        self.start = problem.initial_state
        self.start_point = problem.initial_point
        if start_region is None:
            start_region = PwcFunction.cell(self.upper, self.start_point)
        self.start_region = start_region
        self.stats = dict(
            regions_expanded=0, backups=0, sweeps=0, loop_components=0, max_scc_size=0,
        )
        self._active: dict[int, PwcFunction] = {}
        self._fresh: dict[int, PwcFunction] = {}
        root = self.node(self.start)
        root.open = region_and(start_region, root.active)
        root.reachable = start_region
        # states whose reachable region is nonempty
        self.reached: set[int] = {self.start}

    def active_region(self, n: int) -> PwcFunction:
        hit = self._active.get(n)
        if hit is None:
            boxes = [self.problem.actions[i].applicability for i in self.problem.matching_actions(n)]
            hit = self._active[n] = PwcFunction.indicator(self.upper, boxes)
        return hit

    def fresh_value(self, n: int) -> PwcFunction:
        hit = self._fresh.get(n)
        if hit is None:
            hit = self._fresh[n] = initial_value(self.active_region(n), heuristic_value(self.problem, n))
        return hit

    def node(self, n: int) -> SearchNode:
        node = self.nodes.get(n)
        if node is None:
            node = self.nodes[n] = SearchNode(n, heuristic_value(self.problem, n), self.active_region(n))
        return node

    def values(self) -> Mapping[int, PwcFunction]:
        return _Values(self)

    def frontier(self) -> dict[int, PwcFunction]:
        out = {}
        for s in sorted(self.reached):
            node = self.nodes[s]
            f = region_and(node.reachable, node.open)
            if f.any():
                out[s] = f
        return out

    def has_frontier(self) -> bool:
        return any(
            region_and(self.nodes[s].reachable, self.nodes[s].open).any() for s in self.reached
        )

    def value_at_start(self) -> float:
        return float(self.nodes[self.start].value(self.start_point))

    def policy_states(self) -> list[int]:
        return sorted(self.reached)


# one iteration ------------------------------------------------------------

def expand_step(graph: SearchGraph, k: float = 7) -> set[int]:
    """Expand the reachable open regions, then regions they open, to depth ``k``."""
    problem = graph.problem
    frontier = graph.frontier()
    expanded: set[int] = set()
    depth = 0
    while frontier and depth < k:
        depth += 1
        opened: dict[int, PwcFunction] = {}
        for s in sorted(frontier):
            node = graph.nodes[s]
            region = region_and(frontier[s], node.open)
            if not region.any():
                continue
            node.closed = region_or(node.closed, region)
            node.open = region_minus(node.open, region)
            expanded.add(s)
            graph.stats["regions_expanded"] += 1
            for ai in problem.matching_actions(s):
                images = reach_images(problem, s, region, ai)
                if not images:
                    continue
                node.children[ai] = tuple(sorted(set(node.children.get(ai, ())) | images.keys()))
                for t, img in images.items():
                    child = graph.node(t)
                    child.parents.add((s, ai))
                    new = region_minus(region_and(img, child.active), child.closed)
                    if new.any():
                        child.open = region_or(child.open, new)
                        prev = opened.get(t)
                        opened[t] = new if prev is None else region_or(prev, new)
        frontier = opened
    return expanded


def _backup_node(graph: SearchGraph, s: int) -> float:
    node = graph.nodes[s]
    if not node.closed.any():
        return 0.0
    problem = graph.problem
    if graph.multiregion:
        hi = node.closed.bounding_box().hi
        region = box_indicator(graph.upper, Box(tuple(0.0 for _ in hi), hi))
    else:
        region = node.closed
    value, policy = bellman_backup(problem, s, region, graph.values(), node.value, node.policy)
    if graph.multiregion:
        node.cache = value
        value = combine(np.where, node.closed, value, node.value)
        policy = combine(np.where, node.closed, policy, node.policy)
    change = value.max_abs_diff(node.value)
    node.value = value
    node.policy = policy
    node.marked = frozenset(int(t) for t in np.unique(policy.values) if t != NO_TAG)
    graph.stats["backups"] += 1
    return change


def _marked_ancestors(graph: SearchGraph, seeds: Iterable[int]) -> set[int]:
    z = set(seeds)
    todo = list(z)
    while todo:
        s = todo.pop()
        for p, a in graph.nodes[s].parents:
            if p not in z and a in graph.nodes[p].marked:
                z.add(p)
                todo.append(p)
    return z


def update_values(graph: SearchGraph, touched: Iterable[int]) -> dict:
    """Back up ``touched`` and its ancestors along marked edges, sinks first."""
    z = _marked_ancestors(graph, touched)
    edges = {s: [t for t in graph.nodes[s].successors() if t in z] for s in z}
    max_change = 0.0
    for comp in scc_decompose(edges):
        graph.stats["max_scc_size"] = max(graph.stats["max_scc_size"], len(comp))
        loop = len(comp) > 1 or comp[0] in edges[comp[0]]
        if not loop:
            max_change = max(max_change, _backup_node(graph, comp[0]))
            continue
        graph.stats["loop_components"] += 1
        for _ in range(MAX_SWEEPS):
            graph.stats["sweeps"] += 1
            change = max(_backup_node(graph, s) for s in comp)
            max_change = max(max_change, change)
            if change < VALUE_TOL:
                break
        else:
            raise ContractError(f"values in component {comp} failed to settle")
    return {"nodes": len(z), "max_change": max_change}


def recompute_reachable(graph: SearchGraph) -> None:
    """Forward-propagate the start region through greedy actions on closed regions."""
    problem = graph.problem
    for s in graph.reached:
        graph.nodes[s].reachable = empty_region(graph.upper)
    graph.nodes[graph.start].reachable = graph.start_region
    # only nodes the greedy policy can lead to from the start matter
    edges = {}
    todo = [graph.start]
    while todo:
        s = todo.pop()
        nd = graph.nodes[s]
        edges[s] = sorted(nd.successors(nd.marked))
        todo.extend(t for t in edges[s] if t not in edges)
    done: dict[int, PwcFunction] = {}

    def push(s: int) -> set[int]:
        nd = graph.nodes[s]
        src = region_and(nd.reachable, nd.closed)
        prev = done.get(s)
        if prev is not None:
            src = region_minus(src, prev)
        if not src.any():
            return set()
        done[s] = src if prev is None else region_or(prev, src)
        grown = set()
        for a in sorted(nd.marked):
            sub = region_and(src, nd.policy_region(a))
            if not sub.any():
                continue
            for t, img in reach_images(problem, s, sub, a).items():
                child = graph.nodes[t]
                if region_minus(img, child.reachable).any():
                    child.reachable = region_or(child.reachable, img)
                    grown.add(t)
        return grown

    for comp in reversed(scc_decompose(edges)):
        members = set(comp)
        dirty = set(comp)
        while dirty:
            nxt = set()
            for s in sorted(dirty):
                nxt |= push(s) & members
            dirty = nxt
    graph.reached = {s for s in edges if graph.nodes[s].reachable.any()}


def error_bound(graph: SearchGraph) -> tuple[float, float]:
    """Split of the start value into realized reward ``g`` and heuristic mass ``h``.

    Open and ungenerated regions count fully as heuristic; closed regions
    follow the greedy action with rewards going to ``g``.
    """
    problem = graph.problem
    up = graph.upper
    states = graph.policy_states()
    members = set(states)
    zero = PwcFunction.constant(up, 0.0)
    g: dict[int, PwcFunction] = {s: zero for s in states}
    h: dict[int, PwcFunction] = {s: graph.fresh_value(s) for s in states}

    class View(Mapping):
        def __init__(self, table, fallback):
            self.table, self.fallback = table, fallback

        def __getitem__(self, n):
            if n in self.table:
                return self.table[n]
            return self.fallback(n)

        def __iter__(self):
            return iter(self.table)

        def __len__(self):
            return len(self.table)

    values = graph.values()
    g_view = View(g, lambda n: zero)
    h_view = View(h, lambda n: values[n])

    def update(s: int) -> float:
        nd = graph.nodes[s]
        if not nd.closed.any():
            return 0.0
        ng = policy_value(problem, s, nd.policy, nd.closed, g_view, rewards=True, outside=zero)
        nh = policy_value(problem, s, nd.policy, nd.closed, h_view, rewards=False,
                          outside=graph.fresh_value(s))
        change = max(ng.max_abs_diff(g[s]), nh.max_abs_diff(h[s]))
        g[s], h[s] = ng, nh
        return change

    edges = {s: [t for t in graph.nodes[s].successors(graph.nodes[s].marked) if t in members] for s in states}
    for comp in scc_decompose(edges):
        if len(comp) == 1 and comp[0] not in edges[comp[0]]:
            update(comp[0])
            continue
        for _ in range(MAX_SWEEPS):
            if max(update(s) for s in comp) < VALUE_TOL:
                break
        else:
            raise ContractError(f"error bound in component {comp} failed to settle")
    x0 = graph.start_point
    return float(g[graph.start](x0)), float(h[graph.start](x0))


# exhaustive reachability --------------------------------------------------

def reachable_regions(problem: HybridProblem, start_region: PwcFunction | None = None) -> dict[int, PwcFunction]:
    """Regions of every discrete state reachable under any action choice."""
    up = problem.upper
    if start_region is None:
        start_region = PwcFunction.cell(up, problem.initial_point)
    reach = {problem.initial_state: start_region}
    done: dict[int, PwcFunction] = {}
    todo = {problem.initial_state}
    while todo:
        s = min(todo)
        todo.discard(s)
        src = reach[s]
        if s in done:
            src = region_minus(src, done[s])
        if not src.any():
            continue
        done[s] = src if s not in done else region_or(done[s], src)
        for ai in problem.matching_actions(s):
            for t, img in reach_images(problem, s, src, ai).items():
                prev = reach.get(t)
                if prev is None or region_minus(img, prev).any():
                    reach[t] = img if prev is None else region_or(prev, img)
                    todo.add(t)
    return reach


def reachable_discrete_states(problem: HybridProblem) -> int:
    return len(reachable_regions(problem))


# results ------------------------------------------------------------------

@dataclass
class PolicyNode:
    state: int
    value: PwcFunction
    policy: PwcFunction
    closed: PwcFunction
    reachable: PwcFunction

    def to_dict(self, problem: HybridProblem) -> dict:
        names = [a.name for a in problem.actions]
        return {
            "state": self.state,
            "fluents": problem.describe_state(self.state),
            "value": [[b.to_dict(), v] for b, v in self.value.pieces()],
            "policy": [[b.to_dict(), names[v]] for b, v in self.policy.pieces(skip=NO_TAG)],
            "closed": [b.to_dict() for b, _ in self.closed.pieces(skip=False)],
            "reachable": [b.to_dict() for b, _ in self.reachable.pieces(skip=False)],
        }

    @classmethod
    def from_dict(cls, d: dict, problem: HybridProblem) -> "PolicyNode":
        up = problem.upper
        index = {a.name: i for i, a in enumerate(problem.actions)}
        def load(items, default, dtype):
            return PwcFunction.from_pieces(up, items, default, dtype, raw=True).compact()

        value = load([(Box.from_dict(b), float(v)) for b, v in d["value"]], 0.0, float)
        policy = load([(Box.from_dict(b), index[v]) for b, v in d["policy"]], NO_TAG, np.int64)
        closed = load([(Box.from_dict(b), True) for b in d["closed"]], False, bool)
        reachable = load([(Box.from_dict(b), True) for b in d["reachable"]], False, bool)
        return cls(int(d["state"]), value, policy, closed, reachable)


@dataclass
class PolicyGraph:
    """The greedy policy restricted to nodes it reaches from the start."""

    problem: HybridProblem
    nodes: dict[int, PolicyNode]
    start_point: tuple[float, ...]
    value_at_start: float

    @classmethod
    def from_graph(cls, graph: SearchGraph) -> "PolicyGraph":
        nodes = {
            s: PolicyNode(s, nd.value, nd.policy, nd.closed, nd.reachable)
            for s, nd in graph.nodes.items() if nd.reachable.any()
        }
        return cls(graph.problem, nodes, graph.start_point, graph.value_at_start())

    def action_at(self, n: int, x) -> int | None:
        """Greedy action at ``(n, x)``, or None on the fringe or outside the expanded graph."""
        nd = self.nodes.get(n)
        if nd is None or not nd.closed(x):
            return None
        return int(nd.policy(x))

    def to_dict(self) -> dict:
        return {
            "start": {"state": self.problem.initial_state, "point": list(self.start_point)},
            "value_at_start": self.value_at_start,
            "nodes": [self.nodes[s].to_dict(self.problem) for s in sorted(self.nodes)],
        }

    @classmethod
    def from_dict(cls, d: dict, problem: HybridProblem) -> "PolicyGraph":
        nodes = {}
        for nd in d["nodes"]:
            pn = PolicyNode.from_dict(nd, problem)
            nodes[pn.state] = pn
        return cls(problem, nodes, tuple(d["start"]["point"]), float(d["value_at_start"]))


@dataclass
class IterationRecord:
    iteration: int
    value: float
    g: float
    h: float
    nodes_created: int


@dataclass
class Solution:
    problem: HybridProblem
    graph: SearchGraph
    value_at_start: float
    lower_bound: float
    error_bound: float
    converged: bool
    iterations: int
    stats: dict
    trace: list[IterationRecord] = field(default_factory=list)

    def policy_graph(self) -> PolicyGraph:
        return PolicyGraph.from_graph(self.graph)

    def to_dict(self) -> dict:
        d = self.policy_graph().to_dict()
        d.update(
            lower_bound=self.lower_bound,
            error_bound=self.error_bound,
            converged=self.converged,
            iterations=self.iterations,
            stats=self.stats,
        )
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)


def _solution_stats(graph: SearchGraph, iterations: int, wall: float) -> dict:
    problem = graph.problem
    states = graph.policy_states()
    leaves = 0
    pursued = 0
    for s in states:
        nd = graph.nodes[s]
        if region_minus(nd.reachable, nd.active).any():
            leaves += 1
    for g in problem.goals:
        bit = 1 << g.fluent
        if not problem.initial_state & bit and any(s & bit for s in states):
            pursued += 1
    return dict(
        nodes_created=len(graph.nodes),
        nodes_expanded=sum(1 for nd in graph.nodes.values() if nd.closed.any()),
        regions_expanded=graph.stats["regions_expanded"],
        backups=graph.stats["backups"],
        sweeps=graph.stats["sweeps"],
        loop_components=graph.stats["loop_components"],
        max_scc_size=graph.stats["max_scc_size"],
        policy_nodes=len(states),
        policy_branches=leaves,
        goals_pursued=pursued,
        value_pieces=len(graph.nodes[graph.start].value.pieces()),
        iterations=iterations,
        wall_ms=round(wall * 1000.0, 3),
    )


def solve(problem: HybridProblem, k: float = 7, max_iterations: int | None = None,
          time_limit: float | None = None, multiregion: bool = True,
          whole_region: bool = False, track_bounds: bool = False,
          callback: Callable[[SearchGraph, int], None] | None = None) -> Solution:
    """Run HAO* from the problem's initial state and point.

    ``k`` is the expansion horizon (``math.inf`` expands exhaustively).
    ``whole_region`` starts from every point dominated by the initial point
    rather than that point alone, so the start node's value is exact over
    the whole box ``[0, x0]`` (useful for surface export).  With
    ``track_bounds`` the g/h split is recorded after every iteration.
    """
    problems = validate_problem(problem)
    if problems:
        raise ProblemError("invalid problem: " + "; ".join(problems))
    if not (k >= 1):
        raise ProblemError(f"expansion horizon must be at least 1, got {k}")
    t0 = time.perf_counter()
    up = problem.upper
    start_region = None
    if whole_region:
        start_region = region_or(
            PwcFunction.indicator(up, [Box(tuple(0.0 for _ in up), tuple(problem.initial_point))])
            if all(v > 0 for v in problem.initial_point) else empty_region(up),
            PwcFunction.cell(up, problem.initial_point),
        )
    graph = SearchGraph(problem, start_region, multiregion)
    trace: list[IterationRecord] = []

    def record(it):
        g0, h0 = error_bound(graph)
        trace.append(IterationRecord(it, graph.value_at_start(), g0, h0, len(graph.nodes)))

    if track_bounds:
        record(0)
    it = 0
    while graph.has_frontier():
        if max_iterations is not None and it >= max_iterations:
            break
        if time_limit is not None and time.perf_counter() - t0 > time_limit:
            break
        it += 1
        touched = expand_step(graph, k)
        update_values(graph, touched)
        recompute_reachable(graph)
        if track_bounds:
            record(it)
        if callback is not None:
            callback(graph, it)
    converged = not graph.has_frontier()
    g0, h0 = error_bound(graph)
    if converged:
        h0 = 0.0 if abs(h0) < VALUE_TOL else h0
    wall = time.perf_counter() - t0
    return Solution(
        problem=problem,
        graph=graph,
        value_at_start=graph.value_at_start(),
        lower_bound=g0,
        error_bound=h0,
        converged=converged,
        iterations=it,
        stats=_solution_stats(graph, it, wall),
        trace=trace,
    )


def parse_horizon(text: str) -> float:
    t = str(text).strip().lower()
    if t in ("inf", "infinity", "∞"):
        return math.inf
    k = int(t)
    if k < 1:
        raise ValueError(f"expansion horizon must be at least 1, got {k}")
    return k
