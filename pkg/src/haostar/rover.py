"""Synthetic planetary-rover problems with rock tracking.

The rover moves along directed paths between locations and measures rocks.
Navigating requires tracking at least one rock that enables the path (any
rock when the path lists none), costs
more the more rocks are tracked, and may lose track of rocks at random.
Lost tracks are never reacquired.  Measuring a rock requires tracking it and
earns the rock's reward once.

Fluents, in order: ``at_<loc>`` per location, ``track_<rock>`` per rock,
``moved``, then one ``done_<rock>`` goal bit per rock.
"""
from __future__ import annotations

import itertools
import json
from dataclasses import asdict, dataclass, field

from .exceptions import ProblemError
from .model import (
    DEFAULT_C_MIN,
    Action,
    Branch,
    Goal,
    HybridProblem,
    Outcome,
    ResourceSpace,
    discretize_normal,
)
from .pwc import Box, snap


@dataclass
class PathSpec:
    source: str
    target: str
    time: tuple[float, float]
    energy: tuple[float, float]
    enabling: list[str] = field(default_factory=list)
    loss: dict[str, float] = field(default_factory=dict)


@dataclass
class RockSpec:
    name: str
    location: str
    reward: float
    time: tuple[float, float] = (3.0, 0.5)
    energy: tuple[float, float] = (2.0, 0.5)
    failure: float = 0.0


@dataclass
class RoverParams:
    locations: list[str]
    start: str
    paths: list[PathSpec]
    rocks: list[RockSpec]
    max_resources: tuple[float, float]
    initial: tuple[float, float] | None = None
    track_surcharge: tuple[float, float] = (1.0, 0.5)
    stop_tracking: bool = False
    stop_cost: tuple[float, float] = (0.5, 0.25)
    buckets: int = 5
    quantum: float = 0.25
    c_min: float = DEFAULT_C_MIN
    name: str = "rover"

    def check(self) -> None:
        locs = set(self.locations)
        names = [r.name for r in self.rocks]
        if len(set(names)) != len(names):
            raise ProblemError("rock names must be unique")
        if self.start not in locs:
            raise ProblemError(f"start location {self.start!r} is unknown")
        for r in self.rocks:
            if r.location not in locs:
                raise ProblemError(f"rock {r.name!r} sits at unknown location {r.location!r}")
            if not r.reward > 0:
                raise ProblemError(f"rock {r.name!r} must have a positive reward")
            if not 0.0 <= r.failure < 1.0:
                raise ProblemError(f"rock {r.name!r} failure probability must lie in [0, 1)")
        for p in self.paths:
            if p.source not in locs or p.target not in locs:
                raise ProblemError(f"path {p.source}->{p.target} mentions an unknown location")
            for rock, q in p.loss.items():
                if rock not in names:
                    raise ProblemError(f"path {p.source}->{p.target} loses unknown rock {rock!r}")
                if not 0.0 <= q <= 1.0:
                    raise ProblemError(f"tracking-loss probability {q} outside [0, 1]")
            for rock in p.enabling:
                if rock not in names:
                    raise ProblemError(f"path {p.source}->{p.target} enabled by unknown rock {rock!r}")
        if self.buckets < 1:
            raise ProblemError("bucket count must be positive")
        if self.quantum < self.c_min:
            raise ProblemError("consumption quantum must be at least c_min")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RoverParams":
        d = dict(d)
        locs = d["locations"]
        if isinstance(locs, int):
            d["locations"] = [f"L{i + 1}" for i in range(locs)]
        d["paths"] = [PathSpec(**{**p, "time": tuple(p["time"]), "energy": tuple(p["energy"])}) for p in d["paths"]]
        d["rocks"] = [RockSpec(**{**r, **{k: tuple(r[k]) for k in ("time", "energy") if k in r}}) for r in d["rocks"]]
        for key in ("max_resources", "initial", "track_surcharge", "stop_cost"):
            if d.get(key) is not None:
                d[key] = tuple(d[key])
        return cls(**d)


def load_params(path) -> RoverParams:
    with open(path, encoding="utf-8") as fh:
        return RoverParams.from_dict(json.load(fh))


def _consumption(params: RoverParams, time, energy):
    """Joint (delta, probability) list for independent time and energy draws."""
    def marginal(mean, sd):
        masses = {}
        for v, p in discretize_normal(mean, sd, params.buckets, 0.0, params.c_min):
            q = max(params.quantum, round(v / params.quantum) * params.quantum)
            q = snap(q)
            masses[q] = masses.get(q, 0.0) + p
        return sorted(masses.items())

    out = []
    for (t, pt), (e, pe) in itertools.product(marginal(*time), marginal(*energy)):
        out.append(((-t, -e), pt * pe))
    return out


def make_rover_problem(params: RoverParams) -> HybridProblem:
    params.check()
    locs = list(params.locations)
    rocks = list(params.rocks)
    nl, nr = len(locs), len(rocks)
    fluents = (
        [f"at_{l}" for l in locs]
        + [f"track_{r.name}" for r in rocks]
        + ["moved"]
        + [f"done_{r.name}" for r in rocks]
    )
    at = {l: 1 << i for i, l in enumerate(locs)}
    track_idx = {r.name: nl + j for j, r in enumerate(rocks)}
    track = {name: 1 << i for name, i in track_idx.items()}
    moved_idx = nl + nr
    moved = 1 << moved_idx
    done_idx = {r.name: nl + nr + 1 + j for j, r in enumerate(rocks)}
    done = {name: 1 << i for name, i in done_idx.items()}
    goals = tuple(Goal(done_idx[r.name], float(r.reward), track_idx[r.name]) for r in rocks)
    upper = tuple(snap(params.max_resources))

    def box_for(cons):
        lo = tuple(max(-delta[i] for delta, _ in cons) for i in range(2))
        if any(l >= u for l, u in zip(lo, upper)):
            return None
        return Box(lo, upper)

    actions = []
    for p in params.paths:
        # an empty enabling list means any tracked rock will do
        enabling = set(p.enabling) or {r.name for r in rocks}
        for size in range(nr + 1):
            for tracked in itertools.combinations([r.name for r in rocks], size):
                tracked = set(tracked)
                if not tracked & enabling:
                    continue
                k = len(tracked)
                cons = _consumption(
                    params,
                    (p.time[0] + params.track_surcharge[0] * k, p.time[1]),
                    (p.energy[0] + params.track_surcharge[1] * k, p.energy[1]),
                )
                app = box_for(cons)
                if app is None:
                    continue
                lossy = [r for r in sorted(tracked) if p.loss.get(r, 0.0) > 0.0]
                loss_events = []
                for pattern in itertools.product((False, True), repeat=len(lossy)):
                    prob = 1.0
                    lost = 0
                    for r, gone in zip(lossy, pattern):
                        q = p.loss[r]
                        prob *= q if gone else 1.0 - q
                        if gone:
                            lost |= track[r]
                    if prob > 0.0:
                        loss_events.append((lost, prob))
                outs = []
                for lost, pl in loss_events:
                    for delta, pc in cons:
                        clear = lost | (at[p.source] if p.source != p.target else 0)
                        outs.append(Outcome(pl * pc, at[p.target] | moved, clear, delta=delta))
                req_t = at[p.source] | sum(track[r] for r in tracked)
                req_f = sum(track[r.name] for r in rocks if r.name not in tracked)
                label = ",".join(sorted(tracked)) or "-"
                actions.append(Action(
                    f"navigate({p.source},{p.target})[{label}]", req_t, req_f, app,
                    (Branch(app, tuple(outs)),),
                ))

    for r in rocks:
        cons = _consumption(params, r.time, r.energy)
        app = box_for(cons)
        if app is None:
            continue
        outs = []
        for delta, pc in cons:
            if r.failure < 1.0:
                outs.append(Outcome(pc * (1.0 - r.failure), done[r.name], 0, delta=delta, reward=float(r.reward)))
            if r.failure > 0.0:
                outs.append(Outcome(pc * r.failure, 0, 0, delta=delta))
        actions.append(Action(
            f"pic({r.name})", at[r.location] | track[r.name], done[r.name], app,
            (Branch(app, tuple(outs)),),
        ))

    if params.stop_tracking:
        cost = tuple(-snap(c) for c in params.stop_cost)
        lo = tuple(-c for c in cost)
        if all(l < u for l, u in zip(lo, upper)):
            app = Box(lo, upper)
            for r in rocks:
                actions.append(Action(
                    f"stop_tracking({r.name})", track[r.name], 0, app,
                    (Branch(app, (Outcome(1.0, 0, track[r.name], delta=cost),)),),
                ))

    initial_state = at[params.start] | sum(track.values())
    x0 = upper if params.initial is None else tuple(snap(params.initial))
    return HybridProblem(
        space=ResourceSpace(upper),
        fluents=tuple(fluents),
        goals=goals,
        actions=tuple(actions),
        initial_state=initial_state,
        initial_point=x0,
        c_min=params.c_min,
        moved_fluent=moved_idx,
        name=params.name,
    )


# canned instances ---------------------------------------------------------

def toy_params(stochastic: bool = True, max_resources=(20.0, 15.0), buckets: int = 3) -> RoverParams:
    """Two locations, one path, rock R1 (reward 10) at L1 and R2 (reward 20) at L2."""
    sd = 1.0 if stochastic else 0.0
    return RoverParams(
        locations=["L1", "L2"],
        start="L1",
        paths=[PathSpec("L1", "L2", (6.0, 1.5 * sd), (5.0, sd), enabling=["R2"],
                        loss={"R2": 0.3} if stochastic else {})],
        rocks=[
            RockSpec("R1", "L1", 10.0, (4.0, sd), (3.0, 0.5 * sd)),
            RockSpec("R2", "L2", 20.0, (5.0, sd), (4.0, sd)),
        ],
        max_resources=tuple(max_resources),
        buckets=buckets if stochastic else 1,
        name="toy-stochastic" if stochastic else "toy-deterministic",
    )


def round_trip_params(max_resources=(18.0, 13.0)) -> RoverParams:
    """Two locations joined both ways, so the discrete projection has cycles.

    The outbound trip may lose track of R2, which keeps the optimum below 30.
    """
    return RoverParams(
        locations=["L1", "L2"],
        start="L1",
        paths=[
            PathSpec("L1", "L2", (4.0, 1.0), (3.0, 0.5), loss={"R2": 0.2}),
            PathSpec("L2", "L1", (4.0, 1.0), (3.0, 0.5)),
        ],
        rocks=[
            RockSpec("R1", "L1", 10.0, (3.0, 0.5), (2.0, 0.5)),
            RockSpec("R2", "L2", 20.0, (3.0, 0.5), (2.0, 0.5)),
        ],
        max_resources=tuple(max_resources),
        track_surcharge=(0.0, 0.0),
        buckets=2,
        name="round-trip",
    )


def oversubscribed_params(initial_energy: float | None = None, buckets: int = 2,
                          stop_tracking: bool = False) -> RoverParams:
    """Five rocks on four locations; resources cover only a few of them."""
    paths = [
        PathSpec("L1", "L2", (5.0, 1.0), (4.0, 0.5), ["R2", "R3"], {"R2": 0.1}),
        PathSpec("L2", "L3", (5.0, 1.0), (4.0, 0.5), ["R3", "R4"], {"R4": 0.1}),
        PathSpec("L1", "L4", (6.0, 1.0), (5.0, 0.5), ["R5"], {"R5": 0.1}),
        PathSpec("L4", "L3", (4.0, 1.0), (3.0, 0.5), ["R3", "R5"], {}),
        PathSpec("L2", "L1", (5.0, 1.0), (4.0, 0.5), ["R1"], {}),
    ]
    rocks = [
        RockSpec("R1", "L1", 5.0, (3.0, 0.5), (2.0, 0.5)),
        RockSpec("R2", "L2", 10.0, (3.0, 0.5), (2.0, 0.5)),
        RockSpec("R3", "L3", 20.0, (4.0, 0.5), (3.0, 0.5)),
        RockSpec("R4", "L3", 8.0, (3.0, 0.5), (2.0, 0.5)),
        RockSpec("R5", "L4", 12.0, (3.0, 0.5), (2.0, 0.5)),
    ]
    mx = (40.0, 30.0)
    return RoverParams(
        locations=["L1", "L2", "L3", "L4"],
        start="L1",
        paths=paths,
        rocks=rocks,
        max_resources=mx,
        initial=None if initial_energy is None else (mx[0], initial_energy),
        track_surcharge=(0.5, 0.25),
        stop_tracking=stop_tracking,
        stop_cost=(0.5, 0.25),
        buckets=buckets,
        quantum=0.5,
        name="oversubscribed-5",
    )
