"""Exact Bellman backups and forward images over piecewise-constant functions.

Outcome distributions are discrete, so the expectation over arrival states
is a finite sum: a relative outcome pulls the successor's value back by its
shift, an absolute outcome contributes a constant.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Mapping

import numpy as np

from .exceptions import ContractError
from .model import HybridProblem, Outcome
from .pwc import (
    NO_TAG,
    Box,
    PwcFunction,
    combine,
    pointwise_max_tagged,
    region_and,
    region_or,
    translate,
)

NOT_APPLICABLE = -np.inf


@lru_cache(maxsize=8192)
def box_indicator(upper: tuple[float, ...], box: Box) -> PwcFunction:
    return PwcFunction.indicator(upper, [box])


def _overlaps(bbox: Box, app: Box, upper) -> bool:
    # bbox comes from grid coordinates, where the closed top face ends at u + LATTICE
    for lo, hi, alo, ahi, u in zip(bbox.lo, bbox.hi, app.lo, app.hi, upper):
        if hi <= alo or (lo >= ahi and ahi < u):
            return False
    return True


@dataclass(frozen=True)
class QResult:
    action: int
    q: PwcFunction


def _arrival_value(outcome: Outcome, value: PwcFunction, rewards: bool) -> PwcFunction:
    if not rewards:
        return value
    r = outcome.reward
    if isinstance(r, PwcFunction):
        return combine(np.add, value, r)
    if r == 0:
        return value
    return PwcFunction(value.edges, value.values + float(r))


def q_value(problem: HybridProblem, n: int, action: int, region: PwcFunction,
            successor_values: Mapping[int, PwcFunction], rewards: bool = True) -> QResult:
    """Expected return of ``action`` from ``n`` on ``region``; ``-inf`` elsewhere.

    With ``rewards=False`` arrival rewards are dropped, which is what the
    heuristic half of the anytime error decomposition needs.
    """
    a = problem.actions[action]
    up = problem.upper
    dom = region_and(region, box_indicator(up, a.applicability))
    if not dom.any():
        return QResult(action, PwcFunction.constant(up, NOT_APPLICABLE))

    parts = []
    grids = [dom.edges]
    for b in a.branches:
        mask = region_and(dom, box_indicator(up, b.region))
        if not mask.any():
            continue
        const = 0.0
        rel = []
        for o in b.outcomes:
            succ = o.successor(n)
            try:
                v = successor_values[succ]
            except KeyError:
                raise ContractError(
                    f"no value supplied for successor {succ:#x} of {a.name} from {n:#x}"
                ) from None
            w = _arrival_value(o, v, rewards)
            if o.relative:
                rel.append((o.probability, w, o.delta))
                grids.append([e - d for e, d in zip(w.edges, o.delta)])
            else:
                const += o.probability * float(w(o.point))
        grids.append(mask.edges)
        parts.append((mask, const, rel))

    edges = []
    for d, top in enumerate(e[-1] for e in dom.edges):
        pts = np.concatenate([g[d] for g in grids])
        edges.append(np.unique(pts[(pts >= 0.0) & (pts <= top)]))
    corners = [e[:-1] for e in edges]
    q = np.full(tuple(len(e) - 1 for e in edges), NOT_APPLICABLE)
    for mask, const, rel in parts:
        val = np.full(q.shape, const)
        for p, w, delta in rel:
            idx = [
                np.clip(np.searchsorted(we, c + dd, side="right") - 1, 0, len(we) - 2)
                for we, c, dd in zip(w.edges, corners, delta)
            ]
            val = val + p * w.values[np.ix_(*idx)]
        q = np.where(mask.resample(edges), val, q)
    return QResult(action, PwcFunction(edges, q).compact())


def bellman_backup(problem: HybridProblem, n: int, region: PwcFunction,
                   successor_values: Mapping[int, PwcFunction],
                   prior_value: PwcFunction | None = None,
                   prior_policy: PwcFunction | None = None):
    """Max over applicable actions on ``region``; prior value and policy elsewhere.

    Returns ``(value, policy)``.  Where no action applies inside ``region``
    the value is 0 and the policy holds ``NO_TAG``.  Ties prefer the action
    ``prior_policy`` marks at that point, then the lowest action index.
    """
    up = problem.upper
    if prior_value is None:
        prior_value = PwcFunction.constant(up, 0.0)
    if prior_policy is None:
        prior_policy = PwcFunction.constant(up, NO_TAG, dtype=np.int64)
    cands = []
    bbox = region.bounding_box()
    if bbox is not None:
        for i in problem.matching_actions(n):
            if _overlaps(bbox, problem.actions[i].applicability, up):
                c = q_value(problem, n, i, region, successor_values)
                if c.q.values.size > 1 or not np.isneginf(c.q.values.flat[0]):
                    cands.append(c)
    if cands:
        best, arg = pointwise_max_tagged([(c.action, c.q) for c in cands], marked=prior_policy)
    else:
        best = PwcFunction.constant(up, NOT_APPLICABLE)
        arg = PwcFunction.constant(up, NO_TAG, dtype=np.int64)
    value = combine(
        lambda m, b, pv: np.where(m, np.where(np.isneginf(b), 0.0, b), pv),
        region, best, prior_value,
    )
    policy = combine(lambda m, t, pp: np.where(m, t, pp), region, arg, prior_policy)
    return value, policy


def policy_value(problem: HybridProblem, n: int, policy: PwcFunction, region: PwcFunction,
                 successor_values: Mapping[int, PwcFunction], rewards: bool = True,
                 outside: PwcFunction | None = None) -> PwcFunction:
    """Expected return on ``region`` when following the tagged ``policy`` one step."""
    up = problem.upper
    result = outside if outside is not None else PwcFunction.constant(up, 0.0)
    tags = np.unique(policy.resample(region.edges)[region.values]) if region.any() else []
    for t in tags:
        t = int(t)
        sub = region_and(region, PwcFunction(policy.edges, policy.values == t))
        if t == NO_TAG:
            raise ContractError(f"policy undefined on part of the requested region of {n:#x}")
        q = q_value(problem, n, t, sub, successor_values, rewards).q
        bad = combine(lambda m, v: m & np.isneginf(v), sub, q)
        if bad.any():
            raise ContractError(f"policy picks {problem.actions[t].name} where it is not executable")
        result = combine(np.where, sub, q, result)
    return result


def reach_images(problem: HybridProblem, n: int, source: PwcFunction, action: int) -> dict[int, PwcFunction]:
    """Arrival regions, per successor state, of ``action`` taken anywhere in ``source``."""
    a = problem.actions[action]
    up = problem.upper
    dom = region_and(source, box_indicator(up, a.applicability))
    out: dict[int, PwcFunction] = {}
    if not dom.any():
        return out
    for b in a.branches:
        s = region_and(dom, box_indicator(up, b.region))
        if not s.any():
            continue
        shifted: dict[tuple, PwcFunction] = {}
        for o in b.outcomes:
            succ = o.successor(n)
            if o.relative:
                img = shifted.get(o.delta)
                if img is None:
                    img = shifted[o.delta] = translate(s, o.delta)
            else:
                img = PwcFunction.cell(up, o.point)
            prev = out.get(succ)
            out[succ] = img if prev is None else region_or(prev, img)
    return out


def reach_image(problem: HybridProblem, n: int, source: PwcFunction, action: int, successor: int) -> PwcFunction:
    img = reach_images(problem, n, source, action).get(successor)
    if img is None:
        return PwcFunction.constant(problem.upper, False, dtype=bool)
    return img
