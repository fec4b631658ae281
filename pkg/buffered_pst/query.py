"""3-sided reporting and top-k queries.

A 3-sided query walks the tree top-down. Besides the nodes on the two search
paths it visits every child lying inside the x-range whose lowest point
buffer entry is still above the query floor; all other children are covered
by their parent's child structure. Buffered updates between visited nodes
are pushed down before anything is reported, and the overflows this causes
are repaired once the answer is collected.

Top-k first picks a threshold ``y_bar`` by best-first selection in a lazily
materialised heap of sample values, answers the 3-sided query above it, and
trims the candidates with linear-time selection.
"""

from __future__ import annotations

import heapq
import itertools
import logging
from dataclasses import dataclass
from typing import TYPE_CHECKING, Any, Sequence

from .block_store import BlockRun, BlockStore, RunWriter
from .models import (
    LOW,
    Point,
    QueryBounds,
    SampleValue,
    ThreeSidedQuery,
    TopKQuery,
    XKey,
    YKey,
    x_range_bounds,
    y_key,
)
from .nodes import NodeState, Workspace

if TYPE_CHECKING:
    from .pst import PrioritySearchTree

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TopKThreshold:
    k_bar: int
    y_bar: YKey | None
    t: int
    explored: int = 0


def _rank(value: SampleValue) -> tuple:
    if value.infinite:
        return (0,)
    return (1, -value.key[0], -value.key[1])


class QueryMixin:
    # -- 3-sided reporting ------------------------------------------------

    def report_3sided(self: PrioritySearchTree, q: ThreeSidedQuery) -> list[Point]:
        return self._report(q.bounds())

    def _report(self: PrioritySearchTree, bounds: QueryBounds) -> list[Point]:
        ws = Workspace(self)
        root = ws.root()
        found: dict[XKey, Point] = {}
        for p in root.points.irange_key(bounds.lo, bounds.hi):
            if bounds.contains(p):
                found[p.x, p.y] = p
        self.last_visit_count = self._visit(ws, root, bounds, found)
        self._settle(ws)
        ws.commit()
        self._pin_root()
        return list(found.values())

    def _visit(
        self: PrioritySearchTree,
        ws: Workspace,
        v: NodeState,
        bounds: QueryBounds,
        found: dict[XKey, Point],
    ) -> int:
        if v.is_leaf:
            for p in v.inserts.irange_key(bounds.lo, bounds.hi):
                if bounds.contains(p):
                    found[p.x, p.y] = p
            return 1

        visited = self._visited_children(v, bounds)
        for idx in visited:
            lo, hi = v.child_range(idx)
            inserts = v.in_range(v.inserts, lo, hi)
            deletes = v.in_range(v.deletes, lo, hi)
            if not inserts and not deletes:
                continue
            for p in inserts:
                v.inserts.remove(p)
            for p in deletes:
                v.deletes.remove(p)
            v.touch("inserts", "deletes")
            self._push_down(ws, v, idx, inserts, deletes)

        deleted = {(p.x, p.y) for p in v.deletes}
        for p in v.cstruct.report(bounds):
            if (p.x, p.y) not in deleted:
                found[p.x, p.y] = p
        for p in v.inserts.irange_key(bounds.lo, bounds.hi):
            if bounds.contains(p):
                found[p.x, p.y] = p

        visits = 1
        for idx in visited:
            visits += self._visit(ws, ws.child(v, idx), bounds, found)
        return visits

    @staticmethod
    def _visited_children(v: NodeState, bounds: QueryBounds) -> list[int]:
        out: list[int] = []
        for idx, slot in enumerate(v.slots):
            lo, hi = v.child_range(idx)
            if hi < bounds.lo or lo >= bounds.hi:
                continue
            inside = lo >= bounds.lo and hi <= bounds.hi
            if not inside or (slot.min_y is not None and slot.min_y >= bounds.floor):
                out.append(idx)
        return out

    # -- top-k ------------------------------------------------------------

    def _search_paths(
        self: PrioritySearchTree, ws: Workspace, bounds: QueryBounds
    ) -> list[NodeState]:
        path: dict[int, NodeState] = {}
        for key in (bounds.lo, bounds.hi):
            state = ws.root()
            path.setdefault(state.node_id, state)
            while not state.is_leaf:
                state = ws.child(state, state.child_index(key))
                path.setdefault(state.node_id, state)
        return list(path.values())

    def _sample_path(
        self: PrioritySearchTree,
        ws: Workspace,
        v: NodeState,
        bounds: QueryBounds,
        cap: SampleValue,
        path_ids: set[int],
    ) -> list[tuple[SampleValue, int | None]]:
        """Decreasing sample values of ``v``, each optionally leading to a child's path."""
        if v.is_leaf:
            return []
        values: list[tuple[SampleValue, int | None]] = [
            (SampleValue.of(key), None) for key in v.cstruct.sample(bounds.lo, bounds.hi)
        ]
        for idx, slot in enumerate(v.slots):
            lo, hi = v.child_range(idx)
            if slot.child in path_ids or slot.min_y is None:
                continue
            if lo >= bounds.lo and hi <= bounds.hi and 2 * slot.size >= self.cfg.block_size:
                values.append((SampleValue.of(slot.min_y), idx))
        values.sort(key=lambda entry: entry[0], reverse=True)
        return [(min(value, cap), idx) for value, idx in values]

    def select_threshold(self: PrioritySearchTree, x1: int, x2: int, k: int) -> TopKThreshold:
        bounds = x_range_bounds(x1, x2)
        ws = Workspace(self)
        path = self._search_paths(ws, bounds)
        path_ids = {state.node_id for state in path}
        t = len(path)
        k_bar = 7 * t + -(-12 * k // self.cfg.block_size)

        sentinel = SampleValue.sentinel()
        counter = itertools.count()
        heap: list[tuple[tuple, int, SampleValue, tuple[Any, ...]]] = []

        def push(value: SampleValue, node: tuple[Any, ...]) -> None:
            heapq.heappush(heap, (_rank(value), next(counter), value, node))

        def push_path(owner: NodeState, cap: SampleValue) -> None:
            values = self._sample_path(ws, owner, bounds, cap, path_ids)
            if values:
                push(values[0][0], ("path", owner, values, 0))

        push(sentinel, ("sentinel", 0))
        popped = 0
        last: SampleValue | None = None
        while heap and popped < k_bar:
            _, _, value, node = heapq.heappop(heap)
            popped += 1
            last = value
            if node[0] == "sentinel":
                i = node[1]
                if i + 1 < t:
                    push(sentinel, ("sentinel", i + 1))
                push_path(path[i], sentinel)
                continue
            _, owner, values, j = node
            if j + 1 < len(values):
                push(values[j + 1][0], ("path", owner, values, j + 1))
            idx = values[j][1]
            if idx is not None:
                push_path(ws.child(owner, idx), value)

        y_bar = last.key if popped == k_bar and last is not None and not last.infinite else None
        return TopKThreshold(k_bar=k_bar, y_bar=y_bar, t=t, explored=popped)

    def top_k(self: PrioritySearchTree, q: TopKQuery) -> list[Point]:
        if q.k == 0:
            self.last_candidates = self.last_threshold_candidates = 0
            return []
        threshold = self.select_threshold(q.x1, q.x2, q.k)
        floor = threshold.y_bar if threshold.y_bar is not None else LOW
        candidates = self._report(x_range_bounds(q.x1, q.x2, floor))
        self.last_threshold_candidates = len(candidates)
        if len(candidates) < q.k and threshold.y_bar is not None:
            self.threshold_fallbacks += 1
            logger.warning(
                "threshold %s left %d < k=%d candidates; requerying without floor",
                threshold.y_bar,
                len(candidates),
                q.k,
            )
            candidates = self._report(x_range_bounds(q.x1, q.x2))
        self.last_candidates = len(candidates)
        if len(candidates) <= q.k:
            return candidates
        if len(candidates) <= self.cfg.memory:
            return select_largest(candidates, q.k)
        if q.k + self.cfg.block_size <= self.cfg.memory:
            return heapq.nlargest(q.k, candidates, key=y_key)
        run = BlockRun.write_new(self.store, candidates)
        try:
            return external_select_topk(self.store, run, q.k, self.cfg.memory)
        finally:
            run.free()


# -- selection --------------------------------------------------------------


def _median_of_five(group: Sequence[YKey]) -> YKey:
    ordered = sorted(group)
    return ordered[(len(ordered) - 1) // 2]


def _kth_largest_key(keys: list[YKey], k: int) -> YKey:
    """Blum-Floyd-Pratt-Rivest-Tarjan selection over distinct keys."""
    while True:
        if len(keys) <= 5:
            return sorted(keys, reverse=True)[k - 1]
        medians = [_median_of_five(keys[i : i + 5]) for i in range(0, len(keys), 5)]
        pivot = _kth_largest_key(medians, (len(medians) + 1) // 2)
        above = [key for key in keys if key > pivot]
        if k <= len(above):
            keys = above
        elif k == len(above) + 1:
            return pivot
        else:
            k -= len(above) + 1
            keys = [key for key in keys if key < pivot]


def select_largest(points: Sequence[Point], k: int) -> list[Point]:
    """The ``k`` highest points in y order, unsorted."""
    if k <= 0:
        return []
    if k >= len(points):
        return list(points)
    pivot = _kth_largest_key([y_key(p) for p in points], k)
    return [p for p in points if y_key(p) >= pivot]


def _external_kth_largest(store: BlockStore, run: BlockRun, k: int, memory: int) -> YKey:
    if len(run) <= memory:
        return _kth_largest_key([y_key(p) for p in run.iter_records()], k)

    medians = RunWriter(store)
    group: list[YKey] = []
    for p in run.iter_records():
        group.append(y_key(p))
        if len(group) == 5:
            medians.append(Point(*reversed(_median_of_five(group))))
            group = []
    if group:
        medians.append(Point(*reversed(_median_of_five(group))))
    median_run = medians.close()
    pivot = _external_kth_largest(store, median_run, (len(median_run) + 1) // 2, memory)
    median_run.free()

    above, below = RunWriter(store), RunWriter(store)
    for p in run.iter_records():
        key = y_key(p)
        if key > pivot:
            above.append(p)
        elif key < pivot:
            below.append(p)
    above_run, below_run = above.close(), below.close()
    try:
        if k <= len(above_run):
            return _external_kth_largest(store, above_run, k, memory)
        if k == len(above_run) + 1:
            return pivot
        return _external_kth_largest(store, below_run, k - len(above_run) - 1, memory)
    finally:
        above_run.free()
        below_run.free()


def external_select_topk(store: BlockStore, run: BlockRun, k: int, memory: int) -> list[Point]:
    """The ``k`` highest points of a block run in O(len(run) / B) IOs."""
    if k <= 0:
        return []
    if k >= len(run):
        return run.load()
    pivot = _external_kth_largest(store, run, k, memory)
    return [p for p in run.iter_records() if y_key(p) >= pivot]
