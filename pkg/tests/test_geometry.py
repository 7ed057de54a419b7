import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from imdpsynth.geometry import (
    EMPTY,
    Box,
    GeometryError,
    LabeledRegion,
    Partition,
    build_partition,
    contained_in,
    expand_box,
    intersects,
    reduce_box,
)


def test_expand_widens_each_side():
    assert expand_box(Box([0, 0], [1, 1]), [0.5, 0.5]) == Box([-0.5, -0.5], [1.5, 1.5])
    q = Box([0.2, -1], [0.3, 4])
    assert expand_box(q, [0, 0]) == q
    assert expand_box(Box([-2, -2], [2, 2]), 0.135) == Box([-2.135, -2.135], [2.135, 2.135])


def test_reduce_gives_open_box_or_empty():
    r = reduce_box(Box([0, 0], [2, 2]), [0.5, 0.5])
    assert r == Box([0.5, 0.5], [1.5, 1.5], is_open=True)
    assert reduce_box(Box([0, 0], [1, 1]), [0.5, 0.5]) is EMPTY
    interior = reduce_box(Box([0, 0], [1, 1]), [0, 0])
    assert interior.is_open and not interior.contains_point([0, 0.5])


def test_dimension_and_sign_errors():
    with pytest.raises(GeometryError):
        expand_box(Box([0, 0], [1, 1]), [1, 1, 1])
    with pytest.raises(GeometryError):
        reduce_box(Box([0, 0], [1, 1]), [-0.1, 0])
    with pytest.raises(GeometryError):
        Box([1], [0])


def test_intersection_rules():
    a = Box([0, 0], [1, 1])
    assert intersects(a, Box([1, 1], [2, 2]))
    assert not intersects(a, Box([1, 1], [2, 2], is_open=True))
    assert not intersects(a, EMPTY) and not intersects(EMPTY, a)


def test_containment_rules():
    a = Box([0, 0], [1, 1])
    assert contained_in(a, Box([-1, -1], [2, 2]))
    assert not contained_in(a, Box([0, 0], [1, 1], is_open=True))
    assert not contained_in(a, EMPTY)


def test_case_study_grid():
    part = build_partition(Box([-2, -2], [2, 2]), [], 0.125)
    assert part.n_cells == 1024 and part.unsafe_index == 1024 and part.n_states == 1025


def test_single_cell_and_labels():
    part = build_partition(Box([0], [1]), [], 1.0)
    assert part.n_cells == 1 and part.label(0) == frozenset()
    part = build_partition(Box([0, 0], [1, 1]), [LabeledRegion(Box([0, 0], [0.5, 0.5]), "des")], 0.5)
    assert part.n_cells == 4
    assert [q for q in range(4) if part.label(q)] == [0]
    assert part.label(part.unsafe_index) == frozenset()


def test_partition_rejects_bad_input():
    X = Box([0, 0], [1, 1])
    with pytest.raises(GeometryError):
        build_partition(X, [LabeledRegion(Box([0, 0], [0.3, 0.5]), "a")], 0.5)
    with pytest.raises(GeometryError):
        build_partition(X, [], 0.0)
    with pytest.raises(GeometryError):
        build_partition(X, [LabeledRegion(Box([0, 0], [1.5, 0.5]), "a")], 0.5)
    with pytest.raises(GeometryError):
        build_partition(X, [], 0.3)


def test_cells_tile_domain():
    part = build_partition(Box([-2, -1], [2, 1]), [], [0.5, 0.25])
    vols = np.prod(part.cell_upper - part.cell_lower, axis=1)
    assert np.isclose(vols.sum(), 8.0, rtol=1e-9)


def test_locate_breaks_ties_towards_smallest_index():
    part = build_partition(Box([0, 0], [1, 1]), [], 0.5)
    assert part.locate([0.5, 0.5]) == 0
    assert part.locate([0.75, 0.25]) == 2
    assert part.locate([0, 0]) == 0 and part.locate([1, 1]) == 3
    assert part.locate([1.01, 0.5]) == part.unsafe_index


def test_partition_round_trip():
    part = build_partition(Box([0, 0], [1, 1]), [LabeledRegion(Box([0.5, 0], [1, 0.5]), "obs")], 0.25)
    back = Partition.loads(part.dumps())
    assert np.array_equal(back.cell_lower, part.cell_lower)
    assert back.labels == part.labels and back.unsafe_index == part.unsafe_index


coords = st.floats(-5, 5, allow_nan=False)
pos = st.floats(0, 2, allow_nan=False)


@settings(max_examples=200, deadline=None)
@given(coords, coords, pos, pos, pos)
def test_expand_reduce_algebra(x, y, w, h, c):
    q = Box([x, y], [x + w, y + h])
    big = expand_box(q, [c, c])
    assert contained_in(q, big)
    small = reduce_box(q, [c, c])
    if small is not EMPTY:
        assert np.all(small.lower >= q.lower) and np.all(small.upper <= q.upper)
    back = reduce_box(big, [c, c])
    if back is not EMPTY:
        assert np.allclose(back.lower, q.lower, atol=1e-12) and np.allclose(back.upper, q.upper, atol=1e-12)


@settings(max_examples=200, deadline=None)
@given(st.floats(-2, 2), st.floats(-2, 2))
def test_every_point_has_one_cell(x, y):
    part = build_partition(Box([-2, -2], [2, 2]), [], 0.5)
    q = part.locate([x, y])
    assert 0 <= q < part.n_cells
    assert part.cell(q).contains_point([x, y])
    # no smaller index also contains the point
    assert not any(part.cell(k).contains_point([x, y]) for k in range(q))
