from __future__ import annotations

import pytest

from buffered_pst.models import (
    HIGH,
    LOW,
    Ordering,
    Point,
    SampleValue,
    ThreeSidedQuery,
    TopKQuery,
    compare_x,
    compare_y,
    x_key,
    x_range_bounds,
    y_key,
)


def test_orders_break_ties_on_the_other_coordinate() -> None:
    a = Point(1, 5)
    b = Point(1, 7)
    c = Point(2, 5)

    assert compare_x(a, b) is Ordering.LESS
    assert compare_x(b, c) is Ordering.LESS
    assert compare_y(a, c) is Ordering.LESS
    assert compare_y(c, b) is Ordering.LESS
    assert compare_x(a, Point(1, 5)) is Ordering.EQUAL


def test_payload_does_not_take_part_in_equality() -> None:
    assert Point(3, 4, b"left") == Point(3, 4, b"right")
    assert hash(Point(3, 4, b"left")) == hash(Point(3, 4))


def test_query_bounds_cover_whole_x_columns() -> None:
    bounds = ThreeSidedQuery(2, 4, 10).bounds()

    assert bounds.contains(Point(2, 10))
    assert bounds.contains(Point(4, 99))
    assert not bounds.contains(Point(4, 9))
    assert not bounds.contains(Point(5, 50))
    assert LOW < bounds.lo <= x_key(Point(2, -(1 << 63)))
    assert x_key(Point(4, (1 << 63) - 1)) <= bounds.hi < HIGH


def test_x_range_bounds_default_floor_is_unbounded() -> None:
    bounds = x_range_bounds(0, 0)

    assert bounds.contains(Point(0, -(1 << 63)))
    assert bounds.with_floor(y_key(Point(0, 3))).contains(Point(0, 3))
    assert not bounds.with_floor(y_key(Point(0, 3))).contains(Point(0, 2))


def test_query_descriptors_validate_their_arguments() -> None:
    with pytest.raises(ValueError):
        ThreeSidedQuery(5, 4, 0)
    with pytest.raises(ValueError):
        TopKQuery(0, 1, -1)
    assert TopKQuery(3, 3, 0).k == 0


def test_sample_sentinel_outranks_every_key() -> None:
    top = SampleValue.sentinel()
    high = SampleValue.of(((1 << 63) - 1, (1 << 63) - 1))

    assert top > high > SampleValue.of((0, 0))
    assert min(top, high) == high
