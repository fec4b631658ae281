"""Bulk construction from a point set.

Points are staged into blocks, externally sorted by x if needed, and cut
into leaves of ``ceil(B/2)`` points. Internal levels group ``max(2,
ceil(delta/2))`` nodes each. Point buffers are then filled bottom-up with
``ceil(B/2)`` pulls per node and topped up to ``B`` top-down, so every node
either holds ``B`` points or has nothing stored below it.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable

from .block_store import BlockRun, BlockStore, RunWriter
from .child_structure import ChildStructure
from .config import Config
from .errors import DuplicatePoint
from .extsort import external_sort
from .models import HIGH, Point, XKey, x_key, y_key
from .nodes import PstNode
from .records import ChildSlot

logger = logging.getLogger(__name__)


def stage_points(store: BlockStore, points: Iterable[Point], memory: int) -> BlockRun:
    """Write points to a run sorted by x, rejecting repeated coordinates."""
    writer = RunWriter(store)
    in_order = True
    prev: Point | None = None
    for p in points:
        if prev is not None:
            if x_key(p) == x_key(prev):
                writer.close().free()
                raise DuplicatePoint(f"point ({p.x}, {p.y}) appears twice")
            in_order = in_order and x_key(prev) < x_key(p)
        writer.append(p)
        prev = p
    run = writer.close()
    if in_order:
        return run

    ordered = external_sort(store, run.iter_records(), x_key, memory)
    run.free()
    prev = None
    for p in ordered.iter_records():
        if prev is not None and x_key(p) == x_key(prev):
            ordered.free()
            raise DuplicatePoint(f"point ({p.x}, {p.y}) appears twice")
        prev = p
    return ordered


@dataclass
class _Draft:
    is_leaf: bool
    upper: XKey
    children: list[_Draft] = field(default_factory=list)
    points: list[Point] = field(default_factory=list)
    below: int = 0


def _internal(children: list[_Draft]) -> _Draft:
    return _Draft(
        is_leaf=False,
        upper=children[-1].upper,
        children=children,
        below=sum(c.below + len(c.points) for c in children),
    )


def _pull(draft: _Draft, count: int, refill_to: int) -> None:
    """Move up to ``count`` highest child points into ``draft``.

    Child point lists are kept ascending in y, so a child's maximum is its
    last entry.
    """
    moved = 0
    while moved < count:
        best: _Draft | None = None
        for child in draft.children:
            if child.points and (best is None or y_key(child.points[-1]) > y_key(best.points[-1])):
                best = child
        if best is None:
            break
        draft.points.append(best.points.pop())
        draft.below -= 1
        moved += 1
        if not best.points and best.below:
            _pull(best, refill_to, refill_to)
    draft.points.sort(key=y_key)


def _group(level: list[_Draft], fan_out: int, delta: int) -> list[list[_Draft]]:
    groups = [level[i : i + fan_out] for i in range(0, len(level), fan_out)]
    if len(groups) > 1 and len(groups[-1]) < fan_out and fan_out + len(groups[-1]) <= delta:
        groups[-2].extend(groups.pop())
    return groups


def build_nodes(store: BlockStore, cfg: Config, run: BlockRun) -> tuple[int, dict[int, PstNode]]:
    """Build a tree over an x-sorted run of distinct points; returns (root id, nodes)."""
    b = cfg.block_size
    n = len(run)
    records = run.iter_records()
    if n <= b:
        root = _Draft(is_leaf=True, upper=HIGH, points=sorted(records, key=y_key))
        levels: list[list[_Draft]] = []
    else:
        half = cfg.half_block
        chunks: list[list[Point]] = []
        chunk: list[Point] = []
        for p in records:
            chunk.append(p)
            if len(chunk) == half:
                chunks.append(chunk)
                chunk = []
        if chunk:
            chunks[-1].extend(chunk)
        leaves = [
            _Draft(is_leaf=True, upper=x_key(c[-1]), points=sorted(c, key=y_key)) for c in chunks
        ]
        leaves[-1].upper = HIGH

        fan_out = max(2, -(-cfg.delta // 2))
        levels = []
        level = leaves
        while len(level) > 1:
            if len(level) <= cfg.delta:
                level = [_internal(level)]
            else:
                level = [_internal(g) for g in _group(level, fan_out, cfg.delta)]
            levels.append(level)
        root = level[0]

        for tier in levels:
            for draft in tier:
                _pull(draft, half, half)
        for tier in reversed(levels):
            for draft in tier:
                _pull(draft, b - len(draft.points), b)

    nodes: dict[int, PstNode] = {}

    def write(draft: _Draft) -> PstNode:
        node = PstNode.allocate(store, draft.is_leaf)
        node.points.save(sorted(draft.points, key=x_key))
        if not draft.is_leaf:
            children = [write(child) for child in draft.children]
            node.header.save(
                [
                    ChildSlot(
                        child=written.node_id,
                        upper=child.upper,
                        min_y=y_key(child.points[0]) if child.points else None,
                        size=len(child.points),
                    )
                    for written, child in zip(children, draft.children)
                ]
            )
            below = [p for child in draft.children for p in sorted(child.points, key=x_key)]
            node.cstruct = ChildStructure.build(store, cfg, below)
        nodes[node.node_id] = node
        return node

    root_node = write(root)
    logger.debug("constructed %d nodes over %d points, %d levels", len(nodes), n, len(levels) + 1)
    return root_node.node_id, nodes
