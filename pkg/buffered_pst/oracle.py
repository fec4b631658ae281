"""Brute-force reference for differential testing."""

from __future__ import annotations

import heapq
from typing import Iterable, Sequence

from sortedcontainers import SortedDict

from .models import Point, ThreeSidedQuery, TopKQuery, XKey, YKey, x_key, y_key


class OracleSet:
    def __init__(self, points: Iterable[Point] = ()) -> None:
        self._points: SortedDict = SortedDict((x_key(p), p) for p in points)

    def __len__(self) -> int:
        return len(self._points)

    def __contains__(self, p: Point) -> bool:
        return x_key(p) in self._points

    def o_insert(self, p: Point) -> None:
        self._points[x_key(p)] = p

    def o_delete(self, p: Point) -> None:
        self._points.pop(x_key(p), None)

    def _in_x_range(self, x1: int, x2: int) -> Iterable[Point]:
        lo: XKey = (x1, float("-inf"))
        hi: XKey = (x2, float("inf"))
        return (self._points[k] for k in self._points.irange(lo, hi))

    def o_report(self, q: ThreeSidedQuery) -> list[Point]:
        return [p for p in self._in_x_range(q.x1, q.x2) if p.y >= q.y]

    def o_topk(self, q: TopKQuery) -> list[Point]:
        return heapq.nlargest(q.k, self._in_x_range(q.x1, q.x2), key=y_key)

    def points(self) -> list[Point]:
        return list(self._points.values())

    def copy(self) -> OracleSet:
        return OracleSet(self._points.values())


def sweep_reference(
    bases: Sequence[Sequence[Point]], block_size: int
) -> list[tuple[int, int, YKey, list[Point]]]:
    """Fused blocks by literally raising a sweep line one point at a time.

    When the line reaches a point, the group holding that point is tested
    against its left neighbour and then its right neighbour; a pair with
    exactly ``block_size`` points on or above the line is fused, and the
    test repeats at the same height until no pair qualifies.
    """
    groups = [(t, t, list(chunk)) for t, chunk in enumerate(bases)]
    levels = sorted({y_key(p) for chunk in bases for p in chunk})
    fused: list[tuple[int, int, YKey, list[Point]]] = []
    for level in levels:
        merged = True
        while merged and len(groups) > 1:
            merged = False
            owner = next(
                (idx for idx, group in enumerate(groups) if level in {y_key(p) for p in group[2]}),
                None,
            )
            if owner is None:
                break
            for idx in (owner - 1, owner):
                if idx < 0 or idx + 1 >= len(groups):
                    continue
                (first, _, left), (_, last, right) = groups[idx], groups[idx + 1]
                above = [p for p in (*left, *right) if y_key(p) >= level]
                if len(above) != block_size:
                    continue
                above.sort(key=x_key)
                groups[idx : idx + 2] = [(first, last, above)]
                fused.append((first, last, level, above))
                merged = True
                break
    return fused
