"""Hybrid-state MDP problems with monotone continuous resources.

Discrete states are bit vectors stored as Python ints (bit ``i`` is fluent
``i``).  Resources live in the hypercube ``[0, max_1] x ... x [0, max_d]``.
Actions match discrete states through a require-true / require-false
pattern, are executable where the resource vector lies in their
applicability box, and split that box into branch regions, each with a
discrete distribution over outcomes.  An outcome flips fluents and either
shifts resources by a nonpositive vector (relative) or jumps to a fixed
point (absolute).  Rewards sit on outcomes and are earned on arrival.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.stats import norm

from .exceptions import DomainError, ProblemError
from .pwc import LATTICE, Box, PwcFunction, snap

PROB_TOL = 1e-9
DEFAULT_C_MIN = 1e-3


@dataclass(frozen=True)
class ResourceSpace:
    maximum: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "maximum", tuple(float(v) for v in self.maximum))

    @property
    def dims(self) -> int:
        return len(self.maximum)

    def contains(self, x: Sequence[float]) -> bool:
        return len(x) == self.dims and all(0.0 <= xi <= m for xi, m in zip(x, self.maximum))

    def full_box(self) -> Box:
        return Box(tuple(0.0 for _ in self.maximum), self.maximum)


@dataclass(frozen=True)
class Goal:
    fluent: int
    reward: float
    # Fluent that must stay true for the goal to remain achievable once the
    # problem's moved-flag is set (rock tracking in the rover domain).
    requires: int | None = None


@dataclass(frozen=True, eq=False)
class Outcome:
    probability: float
    set_bits: int = 0
    clear_bits: int = 0
    delta: tuple[float, ...] | None = None
    point: tuple[float, ...] | None = None
    reward: float | PwcFunction = 0.0

    def __post_init__(self):
        if (self.delta is None) == (self.point is None):
            raise ProblemError("an outcome needs exactly one of delta (relative) or point (absolute)")
        if self.delta is not None:
            object.__setattr__(self, "delta", snap(self.delta))
        else:
            object.__setattr__(self, "point", snap(self.point))

    @property
    def relative(self) -> bool:
        return self.delta is not None

    def successor(self, n: int) -> int:
        return (n | self.set_bits) & ~self.clear_bits

    def arrival(self, x: Sequence[float]) -> tuple[float, ...]:
        if self.delta is not None:
            return tuple(a + b for a, b in zip(x, self.delta))
        return self.point

    def reward_at(self, x: Sequence[float]) -> float:
        if isinstance(self.reward, PwcFunction):
            return float(self.reward(x))
        return float(self.reward)

    def max_reward(self) -> float:
        if isinstance(self.reward, PwcFunction):
            return float(np.max(self.reward.values))
        return float(self.reward)


@dataclass(frozen=True, eq=False)
class Branch:
    region: Box
    outcomes: tuple[Outcome, ...]


@dataclass(frozen=True, eq=False)
class Action:
    name: str
    require_true: int
    require_false: int
    applicability: Box
    branches: tuple[Branch, ...]

    def matches(self, n: int) -> bool:
        return (n & self.require_true) == self.require_true and not (n & self.require_false)

    def branch_at(self, x: Sequence[float], upper: Sequence[float]) -> Branch | None:
        for b in self.branches:
            if b.region.contains(x, upper):
                return b
        return None

    def outcomes(self) -> Iterable[Outcome]:
        for b in self.branches:
            yield from b.outcomes


@dataclass(frozen=True, eq=False)
class HybridProblem:
    space: ResourceSpace
    fluents: tuple[str, ...]
    goals: tuple[Goal, ...]
    actions: tuple[Action, ...]
    initial_state: int
    initial_point: tuple[float, ...]
    c_min: float = DEFAULT_C_MIN
    moved_fluent: int | None = None
    name: str = ""
    _matching: dict = field(default_factory=dict, init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "initial_point", snap(self.initial_point))
        object.__setattr__(self, "fluents", tuple(self.fluents))
        object.__setattr__(self, "goals", tuple(self.goals))
        object.__setattr__(self, "actions", tuple(self.actions))

    @property
    def goal_rewards(self) -> list[float]:
        return [g.reward for g in self.goals]

    @property
    def upper(self) -> tuple[float, ...]:
        return self.space.maximum

    def fluent_index(self, name: str) -> int:
        try:
            return self.fluents.index(name)
        except ValueError:
            raise ProblemError(f"unknown fluent {name!r}") from None

    def matching_actions(self, n: int) -> list[int]:
        """Indices of actions whose discrete pattern matches ``n`` (cached)."""
        hit = self._matching.get(n)
        if hit is None:
            hit = [i for i, a in enumerate(self.actions) if a.matches(n)]
            self._matching[n] = hit
        return hit

    def describe_state(self, n: int) -> str:
        on = [name for i, name in enumerate(self.fluents) if n >> i & 1]
        return "{" + ",".join(on) + "}"

    def with_initial_point(self, x0: Sequence[float]) -> "HybridProblem":
        x0 = snap(x0)
        if not self.space.contains(x0):
            raise DomainError(f"initial point {x0} lies outside the resource hypercube")
        return HybridProblem(
            self.space, self.fluents, self.goals, self.actions, self.initial_state, x0,
            self.c_min, self.moved_fluent, self.name,
        )


# queries ------------------------------------------------------------------

def executable_action_indices(problem: HybridProblem, n: int, x: Sequence[float]) -> list[int]:
    if not problem.space.contains(x):
        raise DomainError(f"point {tuple(x)} lies outside the resource hypercube")
    up = problem.upper
    return [
        i for i in problem.matching_actions(n)
        if problem.actions[i].applicability.contains(x, up)
    ]


def executable_actions(problem: HybridProblem, n: int, x: Sequence[float]) -> list[Action]:
    return [problem.actions[i] for i in executable_action_indices(problem, n, x)]


def is_terminal(problem: HybridProblem, n: int, x: Sequence[float]) -> bool:
    return not executable_action_indices(problem, n, x)


# validation ---------------------------------------------------------------

def _on_lattice(v: float) -> bool:
    return v == snap(v)


def validate_problem(problem: HybridProblem) -> list[str]:
    """Every model-side violation of the assumptions the planner relies on."""
    out: list[str] = []
    space = problem.space
    up = space.maximum
    nf = len(problem.fluents)
    c = problem.c_min

    if space.dims < 1:
        out.append("resource space has no dimensions")
    if any(m <= 0 for m in up):
        out.append(f"resource maxima must be positive, got {up}")
    if any(not _on_lattice(m) for m in up):
        out.append(f"resource maxima {up} are not on the resource lattice")
    if not c > 0:
        out.append(f"c_min must be positive, got {c}")
    elif c < 2 * LATTICE:
        out.append(f"c_min {c} is below twice the resource lattice step {LATTICE}")
    if problem.initial_state >> nf:
        out.append("initial state sets bits beyond the declared fluents")
    if not space.contains(problem.initial_point):
        out.append(f"initial point {problem.initial_point} lies outside the resource hypercube")

    goal_bits = 0
    goal_fluents = sorted(g.fluent for g in problem.goals)
    if goal_fluents != list(range(nf - len(goal_fluents), nf)):
        out.append("goal bits must be the trailing fluents")
    for g in problem.goals:
        goal_bits |= 1 << g.fluent
        if not g.reward > 0:
            out.append(f"goal {problem.fluents[g.fluent]} has nonpositive reward {g.reward}")
    reward_of_bit = {1 << g.fluent: g.reward for g in problem.goals}
    protected = 0
    if problem.moved_fluent is not None:
        protected = sum(1 << g.requires for g in problem.goals if g.requires is not None)

    for a in problem.actions:
        tag = f"action {a.name!r}"
        app = a.applicability
        if app.dims != space.dims:
            out.append(f"{tag}: applicability box has wrong dimension")
            continue
        if any(lo < 0 or hi > m for lo, hi, m in zip(app.lo, app.hi, up)):
            out.append(f"{tag}: applicability box leaves the resource hypercube")
        if any(not _on_lattice(v) for v in app.lo + app.hi):
            out.append(f"{tag}: applicability box is not on the resource lattice")
        if (a.require_true | a.require_false) >> nf:
            out.append(f"{tag}: pattern mentions undeclared fluents")

        covered = 0.0
        for bi, br in enumerate(a.branches):
            btag = f"{tag} branch {bi}"
            inside = br.region.intersect(app)
            if inside is None or abs(inside.volume() - br.region.volume()) > 1e-12 * max(1.0, app.volume()):
                out.append(f"{btag}: region is not inside the applicability box")
            covered += br.region.volume()
            for bj in range(bi):
                if br.region.intersect(a.branches[bj].region) is not None:
                    out.append(f"{btag}: region overlaps branch {bj}")
            total = sum(o.probability for o in br.outcomes)
            if abs(total - 1.0) > PROB_TOL:
                out.append(f"{btag}: probabilities sum to {total:.12g}")
            for oi, o in enumerate(br.outcomes):
                otag = f"{btag} outcome {oi}"
                if not 0.0 < o.probability <= 1.0:
                    out.append(f"{otag}: probability {o.probability} outside (0, 1]")
                if (o.set_bits | o.clear_bits) >> nf:
                    out.append(f"{otag}: effect mentions undeclared fluents")
                if o.clear_bits & goal_bits:
                    out.append(f"{otag}: clears a goal bit")
                lo = br.region.lo
                if o.relative:
                    d = o.delta
                    if all(v == 0 for v in d):
                        out.append(f"{otag}: zero consumption")
                    elif any(v > 0 for v in d):
                        out.append(f"{otag}: replenishes a resource (delta {d})")
                    elif not any(v <= -c for v in d):
                        out.append(f"{otag}: consumption below c_min {c} (delta {d})")
                    if any(l + v < 0 for l, v in zip(lo, d)):
                        out.append(f"{otag}: arrival leaves the resource hypercube")
                else:
                    p = o.point
                    if not space.contains(p):
                        out.append(f"{otag}: absolute arrival {p} lies outside the resource hypercube")
                    if any(pi > l for pi, l in zip(p, lo)):
                        out.append(f"{otag}: absolute arrival {p} replenishes a resource")
                    elif not any(pi <= l - c for pi, l in zip(p, lo)):
                        out.append(f"{otag}: consumption below c_min {c} (absolute arrival {p})")
                # rewards must be covered by goal utilities for the goal-sum heuristic to stay admissible
                new_goals = o.set_bits & goal_bits & a.require_false
                cap = sum(r for bit, r in reward_of_bit.items() if new_goals & bit)
                if o.max_reward() > cap + 1e-12:
                    out.append(f"{otag}: reward {o.max_reward()} exceeds the utility of goals it achieves ({cap})")
                if problem.moved_fluent is not None:
                    moved = 1 << problem.moved_fluent
                    if o.clear_bits & moved:
                        out.append(f"{otag}: clears the moved flag")
                    if o.set_bits & protected and not (a.require_false & moved):
                        out.append(f"{otag}: re-acquires a goal prerequisite after moving")
        if abs(covered - app.volume()) > 1e-9 * max(1.0, app.volume()):
            out.append(f"{tag}: branch regions do not cover the applicability box")
    return out


# resource consumption discretization -------------------------------------

def discretize_normal(mean: float, stddev: float, buckets: int, floor: float = 0.0,
                      c_min: float = DEFAULT_C_MIN) -> list[tuple[float, float]]:
    """Point masses approximating a normal truncated below at ``floor``.

    The truncated distribution is cut into ``buckets`` equiprobable quantile
    slices; each mass sits at the conditional mean of its slice and carries
    probability ``1 / buckets``.  Values are raised to at least
    ``max(floor, c_min)``.
    """
    if stddev < 0:
        raise DomainError(f"standard deviation must be nonnegative, got {stddev}")
    if buckets < 1:
        raise DomainError(f"bucket count must be positive, got {buckets}")
    if not mean > floor:
        raise DomainError(f"mean {mean} must exceed the truncation floor {floor}")
    low = max(floor, c_min)
    p = 1.0 / buckets
    if stddev == 0:
        return [(max(mean, low), p)] * buckets
    a = (floor - mean) / stddev
    tail = norm.sf(a)
    # boundaries expressed through survival probabilities to stay accurate under heavy truncation
    surv = tail * (1.0 - np.arange(buckets + 1) / buckets)
    z = norm.isf(surv)
    z[0] = a
    z[-1] = np.inf
    dens = norm.pdf(z)
    centers = mean + stddev * (dens[:-1] - dens[1:]) / (tail / buckets)
    return [(max(float(v), low), p) for v in centers]


# JSON ---------------------------------------------------------------------

def _bits(names, problem_fluents) -> int:
    idx = {n: i for i, n in enumerate(problem_fluents)}
    out = 0
    for n in names:
        if n not in idx:
            raise ProblemError(f"unknown fluent {n!r}")
        out |= 1 << idx[n]
    return out


def _names(bits: int, fluents) -> list[str]:
    return [f for i, f in enumerate(fluents) if bits >> i & 1]


def _reward_to_json(r):
    if isinstance(r, PwcFunction):
        return {
            "pieces": [{"lo": list(b.lo), "hi": list(b.hi), "value": v} for b, v in r.pieces(skip=0.0)],
            "default": 0.0,
        }
    return float(r)


def _reward_from_json(r, upper):
    if isinstance(r, dict):
        pieces = [(Box(tuple(p["lo"]), tuple(p["hi"])), float(p["value"])) for p in r["pieces"]]
        return PwcFunction.from_pieces(upper, pieces, default=float(r.get("default", 0.0)), dtype=float)
    return float(r)


def problem_to_dict(problem: HybridProblem) -> dict:
    fl = problem.fluents
    return {
        "name": problem.name,
        "space": {"max": list(problem.space.maximum)},
        "fluents": list(fl),
        "goals": [
            {
                "fluent": fl[g.fluent],
                "reward": g.reward,
                "requires": None if g.requires is None else fl[g.requires],
            }
            for g in problem.goals
        ],
        "moved_fluent": None if problem.moved_fluent is None else fl[problem.moved_fluent],
        "actions": [
            {
                "name": a.name,
                "require_true": _names(a.require_true, fl),
                "require_false": _names(a.require_false, fl),
                "applicability": a.applicability.to_dict(),
                "branches": [
                    {
                        "region": b.region.to_dict(),
                        "outcomes": [
                            {
                                "p": o.probability,
                                "set": _names(o.set_bits, fl),
                                "clear": _names(o.clear_bits, fl),
                                **({"delta": list(o.delta)} if o.relative else {"point": list(o.point)}),
                                "reward": _reward_to_json(o.reward),
                            }
                            for o in b.outcomes
                        ],
                    }
                    for b in a.branches
                ],
            }
            for a in problem.actions
        ],
        "initial": {"state": _names(problem.initial_state, fl), "point": list(problem.initial_point)},
        "c_min": problem.c_min,
    }


def problem_from_dict(d: dict) -> HybridProblem:
    try:
        fl = tuple(d["fluents"])
        space = ResourceSpace(tuple(snap(d["space"]["max"])))
        idx = {n: i for i, n in enumerate(fl)}
        goals = tuple(
            Goal(idx[g["fluent"]], float(g["reward"]), None if g.get("requires") is None else idx[g["requires"]])
            for g in d.get("goals", [])
        )
        actions = []
        for a in d["actions"]:
            branches = []
            for b in a["branches"]:
                outs = []
                for o in b["outcomes"]:
                    outs.append(Outcome(
                        probability=float(o["p"]),
                        set_bits=_bits(o.get("set", []), fl),
                        clear_bits=_bits(o.get("clear", []), fl),
                        delta=tuple(o["delta"]) if "delta" in o else None,
                        point=tuple(o["point"]) if "point" in o else None,
                        reward=_reward_from_json(o.get("reward", 0.0), space.maximum),
                    ))
                branches.append(Branch(_snap_box(Box.from_dict(b["region"])), tuple(outs)))
            actions.append(Action(
                name=a["name"],
                require_true=_bits(a.get("require_true", []), fl),
                require_false=_bits(a.get("require_false", []), fl),
                applicability=_snap_box(Box.from_dict(a["applicability"])),
                branches=tuple(branches),
            ))
        moved = d.get("moved_fluent")
        return HybridProblem(
            space=space,
            fluents=fl,
            goals=goals,
            actions=tuple(actions),
            initial_state=_bits(d["initial"]["state"], fl),
            initial_point=tuple(d["initial"]["point"]),
            c_min=float(d.get("c_min", DEFAULT_C_MIN)),
            moved_fluent=None if moved is None else idx[moved],
            name=d.get("name", ""),
        )
    except (KeyError, TypeError) as exc:
        raise ProblemError(f"malformed problem description: {exc!r}") from exc


def _snap_box(b: Box) -> Box:
    return Box(snap(b.lo), snap(b.hi))


def load_problem(path) -> HybridProblem:
    with open(path, encoding="utf-8") as fh:
        return problem_from_dict(json.load(fh))


def dump_problem(problem: HybridProblem, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(problem_to_dict(problem), fh, indent=1)
        fh.write("\n")


# random small instances --------------------------------------------------

_SPLITS = {1: [(1.0,)], 2: [(0.5, 0.5), (0.25, 0.75), (0.75, 0.25)], 3: [(0.25, 0.25, 0.5), (0.5, 0.25, 0.25)]}


def make_random_problem(seed: int, n_fluents: int | None = None, n_goals: int | None = None,
                        dims: int | None = None, max_outcomes: int = 3,
                        n_actions: int | None = None) -> HybridProblem:
    """Small randomized problem on an integer resource grid with dyadic probabilities.

    Integer coordinates and dyadic probabilities make every value the
    planner and the oracle compute exactly representable, so the two can be
    compared at tight tolerances.
    """
    rng = np.random.default_rng(seed)
    nf = int(rng.integers(1, 5)) if n_fluents is None else n_fluents
    ng = int(rng.integers(1, 3)) if n_goals is None else n_goals
    d = int(rng.integers(1, 3)) if dims is None else dims
    na = int(rng.integers(3, 7)) if n_actions is None else n_actions
    upper = tuple(float(rng.integers(8, 15)) for _ in range(d))
    fluents = tuple(f"f{i}" for i in range(nf)) + tuple(f"goal{j}" for j in range(ng))
    goals = tuple(Goal(nf + j, float(rng.integers(1, 21))) for j in range(ng))
    base_mask = (1 << nf) - 1

    def random_bits(p):
        return sum(1 << i for i in range(nf) if rng.random() < p)

    actions = []
    for ai in range(na):
        req_t = random_bits(0.3)
        req_f = random_bits(0.2) & ~req_t
        goal = int(rng.integers(ng)) if rng.random() < 0.6 else None
        if goal is not None:
            req_f |= 1 << goals[goal].fluent
        n_br = 1 if rng.random() < 0.6 else 2
        specs = []
        for _ in range(n_br):
            m = int(rng.integers(1, max_outcomes + 1))
            probs = _SPLITS[m][int(rng.integers(len(_SPLITS[m])))]
            outs = []
            for oi, p in enumerate(probs):
                delta = [-float(rng.integers(0, 4)) for _ in range(d)]
                k = int(rng.integers(d))
                delta[k] = min(delta[k], -1.0)
                absolute = rng.random() < 0.15
                outs.append(dict(
                    p=p,
                    set=random_bits(0.25),
                    clear=random_bits(0.25) & base_mask,
                    delta=delta,
                    absolute=absolute,
                    goal=(goal is not None and oi == 0),
                ))
            specs.append(outs)
        need = [0.0] * d
        for outs in specs:
            for o in outs:
                for i in range(d):
                    need[i] = max(need[i], -o["delta"][i])
        lo = [max(need[i], float(rng.integers(0, 4))) for i in range(d)]
        lo[0] = max(lo[0], 1.0)
        lo = [min(v, u - 1.0) for v, u in zip(lo, upper)]
        app = Box(tuple(lo), upper)
        regions = [app]
        if len(specs) == 2:
            axis = int(rng.integers(d))
            if upper[axis] - lo[axis] >= 2:
                cut = float(rng.integers(int(lo[axis]) + 1, int(upper[axis])))
                hi1 = list(upper)
                hi1[axis] = cut
                lo2 = list(lo)
                lo2[axis] = cut
                regions = [Box(tuple(lo), tuple(hi1)), Box(tuple(lo2), upper)]
            else:
                specs = specs[:1]
        branches = []
        for region, outs in zip(regions, specs):
            built = []
            for o in outs:
                set_bits = o["set"] & ~o["clear"]
                reward = 0.0
                if o["goal"]:
                    set_bits |= 1 << goals[goal].fluent
                    reward = goals[goal].reward
                if o["absolute"]:
                    pt = [float(rng.integers(0, int(v) + 1)) for v in lo]
                    pt[0] = min(pt[0], lo[0] - 1.0)
                    built.append(Outcome(o["p"], set_bits, o["clear"], point=tuple(pt), reward=reward))
                else:
                    built.append(Outcome(o["p"], set_bits, o["clear"], delta=tuple(o["delta"]), reward=reward))
            branches.append(Branch(region, tuple(built)))
        actions.append(Action(f"a{ai}", req_t, req_f, app, tuple(branches)))

    x0 = tuple(upper) if rng.random() < 0.5 else tuple(float(rng.integers(int(u) // 2, int(u) + 1)) for u in upper)
    return HybridProblem(
        space=ResourceSpace(upper),
        fluents=fluents,
        goals=goals,
        actions=tuple(actions),
        initial_state=random_bits(0.4),
        initial_point=x0,
        c_min=DEFAULT_C_MIN,
        name=f"random-{seed}",
    )

