import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from haostar.exceptions import DomainError
from haostar.pwc import (
    LATTICE,
    NO_TAG,
    Box,
    PwcFunction,
    affine_combine,
    combine,
    empty_region,
    evaluate,
    grid_rows,
    is_empty,
    piece_rows,
    pointwise_max_tagged,
    region_and,
    region_minus,
    region_not,
    region_or,
    shift,
    simplify,
    snap,
    support,
    translate,
    where,
)

UP = (10.0, 10.0)


def probe_points(upper, n=7):
    axes = [np.unique(np.concatenate([np.linspace(0, u, n), [u - 0.5, 0.25]])) for u in upper]
    return list(itertools.product(*axes))


# strategies ---------------------------------------------------------------

coord = st.integers(0, 10).map(float)


@st.composite
def boxes(draw):
    lo, hi = [], []
    for _ in range(2):
        a = draw(st.integers(0, 9))
        b = draw(st.integers(a + 1, 10))
        lo.append(float(a))
        hi.append(float(b))
    return Box(tuple(lo), tuple(hi))


@st.composite
def functions(draw):
    n = draw(st.integers(0, 4))
    pieces = []
    for _ in range(n):
        b = draw(boxes())
        if all(b.intersect(p) is None for p, _ in pieces):
            pieces.append((b, float(draw(st.integers(-5, 5)))))
    return PwcFunction.from_pieces(UP, pieces, default=float(draw(st.integers(-5, 5))))


@st.composite
def regions(draw):
    return PwcFunction.indicator(UP, draw(st.lists(boxes(), max_size=3)))


# boxes and construction ---------------------------------------------------

def test_box_rejects_empty_interior():
    with pytest.raises(DomainError):
        Box((1.0, 1.0), (1.0, 2.0))


def test_box_closed_top_face():
    b = Box((0.0, 0.0), (10.0, 5.0))
    assert b.contains((10.0, 4.0), UP)
    assert not b.contains((3.0, 5.0), UP)
    assert Box((0.0, 0.0), (10.0, 10.0)).contains((10.0, 10.0), UP)


def test_constant_evaluates_everywhere():
    f = PwcFunction.constant(UP, 7.0)
    assert all(f(x) == 7.0 for x in probe_points(UP))


def test_overlapping_pieces_rejected():
    with pytest.raises(DomainError):
        PwcFunction.from_pieces(UP, [(Box((0, 0), (5, 5)), 1.0), (Box((4, 4), (6, 6)), 2.0)])


def test_point_outside_hypercube_is_rejected():
    f = PwcFunction.constant(UP, 1.0)
    with pytest.raises(DomainError):
        f((10.5, 1.0))
    with pytest.raises(DomainError):
        f((-1e-9, 1.0))


def test_piece_boundaries_are_half_open():
    f = PwcFunction.from_pieces(UP, [(Box((0, 0), (5, 10)), 1.0)], default=2.0)
    assert f((4.999, 3.0)) == 1.0
    assert f((5.0, 3.0)) == 2.0
    assert f((10.0, 10.0)) == 2.0


def test_cell_holds_exactly_one_lattice_point():
    c = PwcFunction.cell(UP, (3.0, 10.0))
    assert c((3.0, 10.0))
    assert not c((3.0 + LATTICE, 10.0))
    assert not c((3.0, 10.0 - LATTICE))
    assert c.measure() == pytest.approx(LATTICE * 0.0, abs=LATTICE ** 2)


def test_snap_rounds_to_lattice():
    assert snap(0.1) == round(0.1 / LATTICE) * LATTICE
    assert snap((1.0, 2.5)) == (1.0, 2.5)


# combination --------------------------------------------------------------

def test_where_and_combine():
    m = PwcFunction.indicator(UP, [Box((0, 0), (5, 10))])
    a = PwcFunction.constant(UP, 1.0)
    b = PwcFunction.constant(UP, 2.0)
    w = where(m, a, b)
    assert w((1, 1)) == 1.0 and w((6, 1)) == 2.0
    s = combine(np.add, w, a)
    assert s((1, 1)) == 2.0 and s((9, 9)) == 3.0


def test_pointwise_max_prefers_larger_value():
    f = PwcFunction.constant(UP, 3.0)
    g = PwcFunction.constant(UP, 5.0)
    v, tag = pointwise_max_tagged([(0, f), (1, g)])
    assert v((2, 2)) == 5.0 and tag((2, 2)) == 1


def test_pointwise_max_tie_prefers_marked_then_lowest():
    f = PwcFunction.constant(UP, 4.0)
    g = PwcFunction.constant(UP, 4.0)
    _, tag = pointwise_max_tagged([(3, f), (1, g)])
    assert tag((0, 0)) == 1
    marked = PwcFunction.from_pieces(UP, [(Box((0, 0), (5, 10)), 3)], default=NO_TAG, dtype=np.int64)
    _, tag = pointwise_max_tagged([(3, f), (1, g)], marked=marked)
    assert tag((1, 1)) == 3 and tag((7, 1)) == 1


def test_pointwise_max_all_minus_inf_gives_no_tag():
    f = PwcFunction.constant(UP, -np.inf)
    v, tag = pointwise_max_tagged([(0, f)])
    assert np.isneginf(v((1, 1))) and tag((1, 1)) == NO_TAG


def test_affine_combine_examples():
    f = PwcFunction.constant(UP, 2.0)
    g = PwcFunction.from_pieces(UP, [(Box((0, 0), (5, 5)), 4.0)])
    h = affine_combine([(0.5, f), (0.25, g)], offset=1.0)
    assert h((1, 1)) == 3.0 and h((8, 8)) == 2.0


def test_shift_pulls_back_and_fills():
    f = PwcFunction.from_pieces(UP, [(Box((3, 2), (8, 7)), 1.0)])
    g = shift(f, (-2.0, -3.0), fill=-1.0)
    # g(x) = f(x + delta)
    assert g((6.0, 6.0)) == 1.0
    assert g((1.0, 4.0)) == -1.0
    assert g((9.5, 3.0)) == 0.0


def test_translate_box():
    r = PwcFunction.indicator(UP, [Box((5, 5), (10, 10))])
    t = translate(r, (-2.0, -3.0))
    expected = PwcFunction.indicator(UP, [Box((3, 2), (8, 7))])
    # the closed top face of the source moves to lattice point (8, 7)
    assert t((8.0, 7.0))
    assert not t((8.0 + LATTICE, 7.0))
    for x in probe_points(UP):
        if x[0] != 8.0 and x[1] != 7.0:
            assert t(x) == expected(x)


def test_translate_keeps_top_face_point():
    r = PwcFunction.cell(UP, UP)
    t = translate(r, (-1.5, -2.0))
    assert t((8.5, 8.0))
    assert t.measure() == pytest.approx(0.0, abs=1e-9)


# region algebra -----------------------------------------------------------

def test_region_ops_reject_non_indicators():
    f = PwcFunction.constant(UP, 1.0)
    with pytest.raises(DomainError):
        region_and(f, f)


def test_region_algebra_examples():
    a = PwcFunction.indicator(UP, [Box((0, 0), (6, 6))])
    b = PwcFunction.indicator(UP, [Box((4, 4), (10, 10))])
    assert region_and(a, b).measure() == pytest.approx(4.0)
    assert region_or(a, b).measure() == pytest.approx(68.0, rel=1e-5)
    assert region_minus(a, b).measure() == pytest.approx(32.0)
    assert is_empty(region_and(a, region_not(a)))
    assert is_empty(empty_region(UP))


def test_support_of_sum_is_union():
    p = PwcFunction.from_pieces(UP, [(Box((0, 0), (5, 5)), 0.3)])
    q = PwcFunction.from_pieces(UP, [(Box((3, 3), (8, 8)), 0.2)])
    s = support(combine(np.add, p, q))
    u = region_or(support(p), support(q))
    for x in probe_points(UP):
        assert s(x) == u(x)
    assert not support(PwcFunction.constant(UP, 0.0)).any()


def test_simplify_merges_equal_neighbours():
    f = PwcFunction.from_pieces(UP, [(Box((0, 0), (5, 10)), 1.0), (Box((5, 0), (10, 10)), 1.0)])
    assert len(simplify(f).pieces()) == 1
    g = PwcFunction.from_pieces(UP, [(Box((0, 0), (5, 10)), 1.0), (Box((5, 0), (10, 10)), 1.0 + 1e-13)])
    assert len(simplify(g, 1e-12).pieces()) == 1
    with pytest.raises(DomainError):
        simplify(f, -1.0)


# export -------------------------------------------------------------------

def test_piece_rows_round_trip():
    f = PwcFunction.from_pieces(UP, [(Box((0, 0), (5, 10)), 1.0), (Box((5, 2), (10, 10)), 3.0)], default=-2.0)
    g = PwcFunction.from_pieces(UP, f.pieces(), raw=True)
    assert f.max_abs_diff(g) == 0.0
    rows = piece_rows(f)
    assert all(len(r) == 5 for r in rows)


def test_grid_rows_include_bounds():
    f = PwcFunction.constant(UP, 1.5)
    rows = grid_rows(f, 3)
    assert len(rows) == 9
    assert rows[-1] == [10.0, 10.0, 1.5]


# properties ---------------------------------------------------------------

@settings(max_examples=60, deadline=None)
@given(functions(), functions())
def test_operations_keep_a_partition(f, g):
    h = combine(np.add, f, g)
    # every probe lands in exactly one cell and evaluates
    for x in probe_points(UP):
        assert evaluate(h, x) == f(x) + g(x)
    boxes_ = [b for b, _ in h.pieces()]
    for a, b in itertools.combinations(boxes_, 2):
        assert a.intersect(b) is None
    assert sum(b.volume() for b in boxes_) == pytest.approx((10 + LATTICE) ** 2)


@settings(max_examples=60, deadline=None)
@given(functions(), functions(), functions())
def test_pointwise_max_algebra(f, g, h):
    v1, _ = pointwise_max_tagged([(0, f), (1, f)])
    assert v1.max_abs_diff(f) == 0.0
    a, _ = pointwise_max_tagged([(0, f), (1, g)])
    b, _ = pointwise_max_tagged([(1, g), (0, f)])
    assert a.max_abs_diff(b) == 0.0
    fg, _ = pointwise_max_tagged([(0, f), (1, g)])
    left, _ = pointwise_max_tagged([(0, fg), (2, h)])
    gh, _ = pointwise_max_tagged([(1, g), (2, h)])
    right, _ = pointwise_max_tagged([(0, f), (1, gh)])
    assert left.max_abs_diff(right) == 0.0


@settings(max_examples=60, deadline=None)
@given(functions(), functions(), st.floats(-3, 3), st.floats(-3, 3))
def test_affine_combine_is_linear(f, g, a, b):
    h = affine_combine([(a, f), (b, g)])
    for x in probe_points(UP, 5):
        assert h(x) == pytest.approx(a * f(x) + b * g(x), abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(regions(), st.integers(-6, 0), st.integers(-6, 0))
def test_translate_never_gains_measure(r, dx, dy):
    t = translate(r, (float(dx), float(dy)))
    # the lattice-wide top cell of r becomes a full interior strip after the move
    assert t.measure() <= r.measure() + 2 * 10 * LATTICE
    # points carried along stay inside the image
    for x in probe_points(UP, 6):
        y = (x[0] + dx, x[1] + dy)
        if r(x) and min(y) >= 0:
            assert t(y)


@settings(max_examples=40, deadline=None)
@given(functions())
def test_simplify_tolerance_zero_is_identity(f):
    assert simplify(f, 0.0).max_abs_diff(f) == 0.0
    assert len(simplify(f, 1e-12).pieces()) <= len(f.pieces())
