"""Points, the two lexicographic orders, and query descriptors.

Every ordering decision in the package goes through ``x_key``/``y_key``:
``x_key(p) == (p.x, p.y)`` and ``y_key(p) == (p.y, p.x)``. Plain tuple
comparison of those keys is the XOrder/YOrder of the model, so points with
equal coordinates on one axis are still totally ordered.

Query bounds use the same key space. Infinite coordinates only ever appear in
bounds and child-slot separators, never in stored points.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum
from typing import Tuple, Union

INT64_MIN = -(1 << 63)
INT64_MAX = (1 << 63) - 1

NEG_INF = float("-inf")
POS_INF = float("inf")

Coord = Union[int, float]
XKey = Tuple[Coord, Coord]
YKey = Tuple[Coord, Coord]

LOW: XKey = (NEG_INF, NEG_INF)
HIGH: XKey = (POS_INF, POS_INF)


class Ordering(IntEnum):
    LESS = -1
    EQUAL = 0
    GREATER = 1


@dataclass(frozen=True, slots=True)
class Point:
    x: int
    y: int
    payload: bytes = field(default=b"", compare=False, repr=False)

    def as_pair(self) -> tuple[int, int]:
        return (self.x, self.y)


def x_key(p: Point) -> XKey:
    return (p.x, p.y)


def y_key(p: Point) -> YKey:
    return (p.y, p.x)


def _order(a: tuple, b: tuple) -> Ordering:
    if a < b:
        return Ordering.LESS
    if a > b:
        return Ordering.GREATER
    return Ordering.EQUAL


def compare_x(a: Point, b: Point) -> Ordering:
    return _order(x_key(a), x_key(b))


def compare_y(a: Point, b: Point) -> Ordering:
    return _order(y_key(a), y_key(b))


@dataclass(frozen=True)
class QueryBounds:
    """[lo, hi] in XOrder intersected with everything at or above ``floor`` in YOrder."""

    lo: XKey
    hi: XKey
    floor: YKey

    def contains(self, p: Point) -> bool:
        k = x_key(p)
        return self.lo <= k <= self.hi and y_key(p) >= self.floor

    def contains_x(self, key: XKey) -> bool:
        return self.lo <= key <= self.hi

    def with_floor(self, floor: YKey) -> QueryBounds:
        return QueryBounds(self.lo, self.hi, floor)


def x_range_bounds(x1: Coord, x2: Coord, floor: YKey = LOW) -> QueryBounds:
    return QueryBounds((x1, NEG_INF), (x2, POS_INF), floor)


@dataclass(frozen=True)
class ThreeSidedQuery:
    x1: int
    x2: int
    y: Coord

    def __post_init__(self) -> None:
        if self.x1 > self.x2:
            raise ValueError(f"x1={self.x1} exceeds x2={self.x2}")

    def bounds(self) -> QueryBounds:
        return x_range_bounds(self.x1, self.x2, (self.y, NEG_INF))


@dataclass(frozen=True)
class TopKQuery:
    x1: int
    x2: int
    k: int

    def __post_init__(self) -> None:
        if self.x1 > self.x2:
            raise ValueError(f"x1={self.x1} exceeds x2={self.x2}")
        if self.k < 0:
            raise ValueError(f"k must be non-negative, got {self.k}")

    def bounds(self) -> QueryBounds:
        return x_range_bounds(self.x1, self.x2)


@dataclass(frozen=True, order=True)
class SampleValue:
    """A y-value in the sample tree; the infinite variant outranks every key."""

    infinite: bool
    key: YKey = ()

    @classmethod
    def sentinel(cls) -> SampleValue:
        return cls(True, ())

    @classmethod
    def of(cls, key: YKey) -> SampleValue:
        return cls(False, key)
