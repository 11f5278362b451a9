"""Piecewise-constant functions over a resource hypercube.

A function is stored on a rectilinear grid: one sorted breakpoint array per
dimension and an ndarray holding the constant value of every grid cell.
Cells are half-open, ``[lo, hi)``.  The hypercube ``[0, u]`` is closed, so
internally each dimension runs to ``u + LATTICE``: the top face then sits
inside an ordinary half-open cell, every point has exactly one owner, and
translating a region maps lattice points to lattice points with no special
case at the boundary.  Boxes given by callers keep the closed-top reading,
``hi == u`` meaning "up to and including u".

The grid form makes n-ary operations cheap and exact: operands are resampled
onto the union of their breakpoints and combined elementwise.  ``pieces()``
recovers a list of disjoint boxes for export.

Value arrays may be float (values, Q-functions, ``-inf`` marks "not
applicable"), int (action tags, ``-1`` marks "no action") or bool
(indicators of regions).
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .exceptions import DomainError

#: Resolution of the resource lattice.  Every coordinate handed to the
#: planner (thresholds, consumptions, points) is a multiple of this, which
#: keeps sums and differences of coordinates exact in float64.
LATTICE = 2.0 ** -20

NO_TAG = -1


def grid_end(u: float) -> float:
    """Last breakpoint of a dimension whose closed upper bound is ``u``."""
    return float(u) + LATTICE


def _grid_hi(b: float, u: float, raw: bool = False) -> float:
    if raw:
        return min(float(b), grid_end(u))
    return grid_end(u) if b >= u else float(b)


def snap(x):
    """Round coordinates to the resource lattice."""
    arr = np.round(np.asarray(x, dtype=float) / LATTICE) * LATTICE
    if arr.ndim == 0:
        return float(arr)
    return tuple(float(v) for v in arr)


@dataclass(frozen=True)
class Box:
    """Axis-aligned box ``[lo, hi)`` (closed on faces lying on the domain bound)."""

    lo: tuple[float, ...]
    hi: tuple[float, ...]

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lo)
        hi = tuple(float(v) for v in self.hi)
        if len(lo) != len(hi):
            raise DomainError(f"box corners differ in dimension: {lo} vs {hi}")
        if any(not a < b for a, b in zip(lo, hi)):
            raise DomainError(f"box has empty interior: lo={lo} hi={hi}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def dims(self) -> int:
        return len(self.lo)

    def contains(self, x: Sequence[float], upper: Sequence[float]) -> bool:
        for xi, a, b, u in zip(x, self.lo, self.hi, upper):
            if xi < a:
                return False
            if xi >= b and not (xi == b == u):
                return False
        return True

    def intersect(self, other: "Box") -> "Box | None":
        lo = tuple(max(a, b) for a, b in zip(self.lo, other.lo))
        hi = tuple(min(a, b) for a, b in zip(self.hi, other.hi))
        if any(not a < b for a, b in zip(lo, hi)):
            return None
        return Box(lo, hi)

    def volume(self) -> float:
        return float(np.prod([b - a for a, b in zip(self.lo, self.hi)]))

    def to_dict(self) -> dict:
        return {"lo": list(self.lo), "hi": list(self.hi)}

    @classmethod
    def from_dict(cls, d) -> "Box":
        return cls(tuple(d["lo"]), tuple(d["hi"]))


class PwcFunction:
    __slots__ = ("edges", "values")

    def __init__(self, edges, values):
        self.edges = tuple(np.asarray(e, dtype=float) for e in edges)
        self.values = np.asarray(values)
        shape = tuple(len(e) - 1 for e in self.edges)
        if self.values.shape != shape:
            raise DomainError(f"value grid {self.values.shape} does not match breakpoints {shape}")

    # construction ---------------------------------------------------------

    @classmethod
    def constant(cls, upper: Sequence[float], value, dtype=None) -> "PwcFunction":
        edges = [np.array([0.0, grid_end(u)]) for u in upper]
        return cls(edges, np.full((1,) * len(edges), value, dtype=dtype))

    @classmethod
    def from_pieces(cls, upper: Sequence[float], pieces: Iterable[tuple[Box, object]], default=0.0,
                    dtype=None, raw: bool = False):
        """Function equal to each piece's value on its box and ``default`` elsewhere.

        Boxes use the closed-top reading unless ``raw``, in which case they
        are grid coordinates as produced by ``pieces()``.
        """
        pieces = list(pieces)
        upper = [float(u) for u in upper]
        edges = []
        for d, u in enumerate(upper):
            pts = [0.0, grid_end(u)]
            for box, _ in pieces:
                pts.extend((min(max(box.lo[d], 0.0), u), _grid_hi(max(box.hi[d], 0.0), u, raw)))
            edges.append(np.unique(pts))
        if dtype is None:
            dtype = np.asarray([default] + [v for _, v in pieces]).dtype
        values = np.full(tuple(len(e) - 1 for e in edges), default, dtype=dtype)
        owned = np.zeros(values.shape, dtype=bool)
        for box, v in pieces:
            sl = _box_slices(edges, box, raw)
            if sl is None:
                continue
            if owned[sl].any():
                raise DomainError(f"pieces overlap at {box}")
            owned[sl] = True
            values[sl] = v
        return cls(edges, values)

    @classmethod
    def indicator(cls, upper: Sequence[float], boxes: Iterable[Box] = ()) -> "PwcFunction":
        boxes = list(boxes)
        upper = [float(u) for u in upper]
        edges = []
        for d, u in enumerate(upper):
            pts = [0.0, grid_end(u)]
            for b in boxes:
                pts.extend((min(max(b.lo[d], 0.0), u), _grid_hi(max(b.hi[d], 0.0), u)))
            edges.append(np.unique(pts))
        values = np.zeros(tuple(len(e) - 1 for e in edges), dtype=bool)
        for b in boxes:
            sl = _box_slices(edges, b)
            if sl is not None:
                values[sl] = True
        return cls(edges, values).compact()

    @classmethod
    def cell(cls, upper: Sequence[float], point: Sequence[float], width: float = LATTICE) -> "PwcFunction":
        """Indicator of the cell ``[p, p + width)``, clipped to the hypercube."""
        lo = tuple(min(float(p), float(u)) for p, u in zip(point, upper))
        hi = tuple(min(p + width, grid_end(u)) for p, u in zip(lo, upper))
        return cls.indicator(upper, [Box(lo, hi)])

    # basic properties -----------------------------------------------------

    @property
    def dims(self) -> int:
        return len(self.edges)

    @property
    def upper(self) -> tuple[float, ...]:
        return tuple(float(e[-1] - LATTICE) for e in self.edges)

    @property
    def dtype(self):
        return self.values.dtype

    @property
    def is_indicator(self) -> bool:
        return self.values.dtype == np.bool_

    @property
    def n_cells(self) -> int:
        return int(self.values.size)

    def __repr__(self):
        return f"PwcFunction(dims={self.dims}, cells={self.values.shape}, dtype={self.dtype})"

    # evaluation -----------------------------------------------------------

    def locate(self, x: Sequence[float]) -> tuple[int, ...]:
        if len(x) != self.dims:
            raise DomainError(f"point {tuple(x)} has wrong dimension for a {self.dims}-d function")
        idx = []
        for xi, e in zip(x, self.edges):
            if not (0.0 <= xi <= e[-1] - LATTICE):
                raise DomainError(f"point {tuple(x)} lies outside the resource hypercube")
            i = int(np.searchsorted(e, xi, side="right")) - 1
            idx.append(min(i, len(e) - 2))
        return tuple(idx)

    def __call__(self, x: Sequence[float]):
        return self.values[self.locate(x)].item()

    def evaluate_many(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if pts.shape[1] != self.dims:
            raise DomainError("points have the wrong dimension")
        idx = []
        for d, e in enumerate(self.edges):
            col = pts[:, d]
            if np.any(col < 0.0) or np.any(col > e[-1] - LATTICE):
                raise DomainError("some points lie outside the resource hypercube")
            i = np.searchsorted(e, col, side="right") - 1
            idx.append(np.minimum(i, len(e) - 2))
        return self.values[tuple(idx)]

    def resample(self, edges: Sequence[np.ndarray]) -> np.ndarray:
        """Values of this function on the (finer) grid ``edges``."""
        idx = []
        same = True
        for mine, theirs in zip(self.edges, edges):
            if mine is theirs or (len(mine) == len(theirs) and np.array_equal(mine, theirs)):
                idx.append(np.arange(len(mine) - 1))
                continue
            same = False
            # both grids span the same hypercube, so indices stay in range
            idx.append(np.searchsorted(mine, theirs[:-1], side="right") - 1)
        if same:
            return self.values
        return self.values[np.ix_(*idx)]

    # structure ------------------------------------------------------------

    def compact(self, tol: float = 0.0) -> "PwcFunction":
        """Drop breakpoints separating slabs whose values agree (within ``tol``)."""
        edges = list(self.edges)
        values = self.values
        for axis in range(self.dims):
            n = values.shape[axis]
            if n < 2:
                continue
            if tol == 0.0 or values.dtype.kind != "f":
                head = (slice(None),) * axis
                ne = values[head + (slice(1, None),)] != values[head + (slice(None, -1),)]
                other = tuple(i for i in range(values.ndim) if i != axis)
                differs = ne.any(axis=other) if other else ne
                keep = np.concatenate(([0], np.nonzero(differs)[0] + 1))
            else:
                keep = [0]
                ref = np.take(values, 0, axis=axis)
                for i in range(1, n):
                    cur = np.take(values, i, axis=axis)
                    if not np.all((cur == ref) | (np.abs(cur - ref) <= tol)):
                        keep.append(i)
                        ref = cur
                keep = np.asarray(keep)
            if len(keep) == n:
                continue
            values = np.take(values, keep, axis=axis)
            edges[axis] = np.concatenate((edges[axis][keep], edges[axis][-1:]))
        return PwcFunction(edges, values)

    def any(self) -> bool:
        return bool(np.any(self.values))

    def measure(self) -> float:
        """Volume of the region where the function is truthy."""
        widths = [np.diff(np.minimum(e, e[-1] - LATTICE)) for e in self.edges]
        vol = widths[0]
        for w in widths[1:]:
            vol = np.multiply.outer(vol, w)
        return float(np.sum(vol * (self.values != 0)))

    def bounding_box(self) -> Box | None:
        """Smallest box holding the truthy cells, in grid coordinates.

        A box reaching the top face reports ``u + LATTICE`` as its upper
        corner; ``indicator`` reads that back as the closed face.
        """
        if not self.any():
            return None
        lo, hi = [], []
        for axis, e in enumerate(self.edges):
            other = tuple(i for i in range(self.dims) if i != axis)
            hit = np.any(self.values, axis=other) if other else self.values
            nz = np.nonzero(hit)[0]
            lo.append(e[nz[0]])
            hi.append(e[nz[-1] + 1])
        return Box(tuple(lo), tuple(hi))

    def pieces(self, skip=None) -> list[tuple[Box, object]]:
        """Disjoint maximal-ish boxes covering the grid, greedily merged.

        Boxes are in grid coordinates: one reaching the closed top face of
        dimension ``d`` ends at ``u_d + LATTICE``.  Read them back with
        ``from_pieces(..., raw=True)``.  Cells whose value equals ``skip``
        are left out (use it for the default of a sparse function, e.g.
        ``False`` for indicators).
        """
        vals = self.values
        done = np.zeros(vals.shape, dtype=bool)
        out = []
        for idx in itertools.product(*(range(s) for s in vals.shape)):
            if done[idx]:
                continue
            v = vals[idx]
            start = list(idx)
            stop = [i + 1 for i in idx]
            for axis in range(vals.ndim):
                while stop[axis] < vals.shape[axis]:
                    sl = tuple(
                        slice(stop[a], stop[a] + 1) if a == axis else slice(start[a], stop[a])
                        for a in range(vals.ndim)
                    )
                    if np.all(vals[sl] == v) and not np.any(done[sl]):
                        stop[axis] += 1
                    else:
                        break
            region = tuple(slice(a, b) for a, b in zip(start, stop))
            done[region] = True
            if skip is not None and v == skip:
                continue
            box = Box(
                tuple(float(self.edges[a][start[a]]) for a in range(vals.ndim)),
                tuple(float(self.edges[a][stop[a]]) for a in range(vals.ndim)),
            )
            out.append((box, v.item()))
        return out

    def max_abs_diff(self, other: "PwcFunction") -> float:
        edges = union_edges([self, other])
        a = self.resample(edges).astype(float)
        b = other.resample(edges).astype(float)
        same = a == b
        diff = np.where(same, 0.0, np.abs(a - b))
        return float(np.max(diff)) if diff.size else 0.0


def _box_slices(edges, box: Box, raw: bool = False):
    sl = []
    for e, a, b in zip(edges, box.lo, box.hi):
        i = int(np.searchsorted(e, a, side="left"))
        j = int(np.searchsorted(e, _grid_hi(b, e[-1] - LATTICE, raw), side="left"))
        if j <= i:
            return None
        sl.append(slice(i, j))
    return tuple(sl)


def _check_same_domain(funcs):
    up = [e[-1] for e in funcs[0].edges]
    for f in funcs[1:]:
        if len(f.edges) != len(up) or any(e[-1] != u for e, u in zip(f.edges, up)):
            up = funcs[0].upper
            raise DomainError(f"functions live on different hypercubes: {up} vs {f.upper}")


def union_edges(funcs: Sequence[PwcFunction]) -> list[np.ndarray]:
    _check_same_domain(funcs)
    out = []
    for d in range(funcs[0].dims):
        first = funcs[0].edges[d]
        if all(f.edges[d] is first or np.array_equal(f.edges[d], first) for f in funcs[1:]):
            out.append(first)
        else:
            out.append(np.unique(np.concatenate([f.edges[d] for f in funcs])))
    return out


def combine(fn: Callable[..., np.ndarray], *funcs: PwcFunction) -> PwcFunction:
    """Apply an elementwise numpy function to several functions on their common refinement."""
    edges = union_edges(funcs)
    out = fn(*(f.resample(edges) for f in funcs))
    return PwcFunction(edges, out).compact()


def evaluate(f: PwcFunction, x: Sequence[float]):
    return f(x)


def where(mask: PwcFunction, a: PwcFunction, b: PwcFunction) -> PwcFunction:
    _require_indicator(mask)
    return combine(np.where, mask, a, b)


def pointwise_max_tagged(candidates, marked: PwcFunction | None = None):
    """Pointwise maximum of tagged functions and the tag attaining it.

    ``candidates`` is a sequence of ``(tag, f)`` with integer tags.  Ties go
    to the tag ``marked`` holds at that point when it is among the tied
    candidates, otherwise to the lowest tied tag.  Where every candidate is
    ``-inf`` the argmax is ``NO_TAG``.
    """
    candidates = list(candidates)
    if not candidates:
        raise DomainError("pointwise max of an empty candidate list")
    tags = np.array([int(t) for t, _ in candidates])
    funcs = [f for _, f in candidates]
    edges = union_edges(funcs + ([marked] if marked is not None else []))
    stack = np.stack([f.resample(edges).astype(float) for f in funcs])
    best = stack.max(axis=0)
    tied = stack == best
    order = np.argsort(tags, kind="stable")
    first = np.argmax(tied[order], axis=0)
    arg = tags[order][first]
    if marked is not None:
        m = marked.resample(edges)
        for i, t in enumerate(tags):
            arg = np.where((m == t) & tied[i], t, arg)
    arg = np.where(np.isneginf(best), NO_TAG, arg)
    return PwcFunction(edges, best).compact(), PwcFunction(edges, arg.astype(np.int64)).compact()


def affine_combine(terms, offset: PwcFunction | float | None = None) -> PwcFunction:
    terms = list(terms)
    if not terms:
        raise DomainError("affine combination needs at least one term")
    weights = [float(w) for w, _ in terms]
    funcs = [f for _, f in terms]
    extra = isinstance(offset, PwcFunction)
    if extra:
        funcs.append(offset)
    const = 0.0 if offset is None or extra else float(offset)

    def fn(*arrs):
        acc = np.full(arrs[0].shape, const)
        for w, a in zip(weights, arrs):
            acc = acc + w * a
        if extra:
            acc = acc + arrs[-1]
        return acc

    return combine(fn, *funcs)


def shift(f: PwcFunction, delta: Sequence[float], fill) -> PwcFunction:
    """Pull-back ``g(x) = f(x + delta)``; ``fill`` where ``x + delta`` leaves the hypercube."""
    edges, idx, valid = [], [], []
    for e, dd in zip(f.edges, delta):
        u = e[-1]
        cand = np.concatenate((e - dd, [0.0, u, -dd, u - dd]))
        ne = np.unique(cand[(cand >= 0.0) & (cand <= u)])
        arg = ne[:-1] + dd
        i = np.clip(np.searchsorted(e, arg, side="right") - 1, 0, len(e) - 2)
        edges.append(ne)
        idx.append(i)
        valid.append((arg >= 0.0) & (arg < u))
    vals = f.values[np.ix_(*idx)]
    ok = valid[0]
    for v in valid[1:]:
        ok = np.logical_and.outer(ok, v)
    out = np.where(ok, vals, np.asarray(fill, dtype=f.dtype))
    return PwcFunction(edges, out).compact()


def translate(region: PwcFunction, delta: Sequence[float]) -> PwcFunction:
    """Image of an indicator under ``x -> x + delta``, clipped to the hypercube."""
    _require_indicator(region)
    return shift(region, [-d for d in delta], False)


# region algebra -----------------------------------------------------------

def _require_indicator(*fs):
    for f in fs:
        if not f.is_indicator:
            raise DomainError("Boolean region operation on a non-indicator function")


def _uniform(f: PwcFunction):
    return f.values.flat[0] if f.values.size == 1 else None


def region_and(a: PwcFunction, b: PwcFunction) -> PwcFunction:
    _require_indicator(a, b)
    for x, y in ((a, b), (b, a)):
        u = _uniform(x)
        if u is not None:
            _check_same_domain([x, y])
            return y if u else x
    return combine(np.logical_and, a, b)


def region_or(a: PwcFunction, b: PwcFunction) -> PwcFunction:
    _require_indicator(a, b)
    for x, y in ((a, b), (b, a)):
        u = _uniform(x)
        if u is not None:
            _check_same_domain([x, y])
            return x if u else y
    return combine(np.logical_or, a, b)


def region_not(a: PwcFunction) -> PwcFunction:
    _require_indicator(a)
    return PwcFunction(a.edges, ~a.values)


def region_minus(a: PwcFunction, b: PwcFunction) -> PwcFunction:
    _require_indicator(a, b)
    return combine(lambda x, y: x & ~y, a, b)


def intersect_box(a: PwcFunction, box: Box) -> PwcFunction:
    return region_and(a, PwcFunction.indicator(a.upper, [box]))


def is_empty(a: PwcFunction) -> bool:
    _require_indicator(a)
    return not a.any()


def empty_region(upper: Sequence[float]) -> PwcFunction:
    return PwcFunction.constant(upper, False, dtype=bool)


def support(f: PwcFunction) -> PwcFunction:
    return PwcFunction(f.edges, f.values > 0).compact()


def simplify(f: PwcFunction, tol: float = 0.0) -> PwcFunction:
    if tol < 0:
        raise DomainError("simplify tolerance must be nonnegative")
    return f.compact(tol)


# export -------------------------------------------------------------------

def piece_rows(f: PwcFunction, skip=None) -> list[list]:
    """Rows ``lo_1..lo_d, hi_1..hi_d, value`` for CSV export, in grid coordinates."""
    return [list(b.lo) + list(b.hi) + [v] for b, v in f.pieces(skip=skip)]


def grid_rows(f: PwcFunction, points_per_dim: int) -> list[list]:
    """Rows ``x_1..x_d, value`` sampled on a uniform grid including both bounds."""
    axes = [np.linspace(0.0, u, points_per_dim) for u in f.upper]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=1)
    vals = f.evaluate_many(pts)
    return [list(map(float, p)) + [v.item()] for p, v in zip(pts, vals)]
