"""Tree nodes on disk and their in-memory working copies.

A ``PstNode`` is only a handle: the ids of the blocks holding the node's
child slots and its three buffers, plus the child structure over its
children's point buffers. The first header block id doubles as the node id
and never changes while the node exists.

Operations load the nodes they touch into ``NodeState`` objects through a
``Workspace`` and write back only the fields they changed on ``commit``.
"""

from __future__ import annotations

from bisect import bisect_left
from dataclasses import dataclass
from typing import TYPE_CHECKING, Iterable

from sortedcontainers import SortedKeyList

from .block_store import BlockRun, BlockStore
from .child_structure import ChildStructure
from .models import HIGH, LOW, Point, XKey, x_key, y_key
from .records import ChildSlot

if TYPE_CHECKING:
    from .pst import PrioritySearchTree

FIELDS = ("slots", "points", "inserts", "deletes")


@dataclass
class PstNode:
    node_id: int
    is_leaf: bool
    header: BlockRun
    points: BlockRun
    inserts: BlockRun
    deletes: BlockRun
    cstruct: ChildStructure | None = None

    @classmethod
    def allocate(cls, store: BlockStore, is_leaf: bool) -> PstNode:
        header = BlockRun(store, min_blocks=1)
        return cls(
            node_id=header.ids[0],
            is_leaf=is_leaf,
            header=header,
            points=BlockRun(store),
            inserts=BlockRun(store),
            deletes=BlockRun(store),
        )

    def buffer_blocks(self) -> list[int]:
        return [
            block_id
            for run in (self.header, self.points, self.inserts, self.deletes)
            for block_id in run.ids
        ]

    def free(self) -> None:
        for run in (self.header, self.points, self.inserts, self.deletes):
            run.free()
        if self.cstruct is not None:
            self.cstruct.free()
            self.cstruct = None


def pop_key(buffer: SortedKeyList, key: XKey) -> Point | None:
    idx = buffer.bisect_key_left(key)
    if idx < len(buffer) and x_key(buffer[idx]) == key:
        point = buffer[idx]
        del buffer[idx]
        return point
    return None


def point_buffer(points: Iterable[Point] = ()) -> SortedKeyList:
    return SortedKeyList(points, key=x_key)


class NodeState:
    def __init__(
        self,
        node: PstNode,
        slots: Iterable[ChildSlot] = (),
        points: Iterable[Point] = (),
        inserts: Iterable[Point] = (),
        deletes: Iterable[Point] = (),
    ) -> None:
        self.node = node
        self.parent: NodeState | None = None
        self.depth = 0
        self.lo: XKey = LOW
        self.hi: XKey = HIGH
        self.slots: list[ChildSlot] = list(slots)
        self.points = point_buffer(points)
        self.inserts = point_buffer(inserts)
        self.deletes = point_buffer(deletes)
        self.dirty: set[str] = set()

    def __repr__(self) -> str:
        kind = "leaf" if self.is_leaf else f"degree={len(self.slots)}"
        return (
            f"NodeState({self.node_id}, {kind}, P={len(self.points)}, "
            f"I={len(self.inserts)}, D={len(self.deletes)})"
        )

    @property
    def node_id(self) -> int:
        return self.node.node_id

    @property
    def is_leaf(self) -> bool:
        return self.node.is_leaf

    @property
    def cstruct(self) -> ChildStructure:
        assert self.node.cstruct is not None, f"node {self.node_id} has no child structure"
        return self.node.cstruct

    def touch(self, *fields: str) -> None:
        self.dirty.update(fields or FIELDS)

    def min_point(self) -> Point | None:
        return min(self.points, key=y_key) if self.points else None

    def floor(self):
        lowest = self.min_point()
        return None if lowest is None else y_key(lowest)

    def uppers(self) -> list[XKey]:
        return [slot.upper for slot in self.slots]

    def child_index(self, key: XKey) -> int:
        return min(bisect_left(self.uppers(), key), len(self.slots) - 1)

    def child_range(self, idx: int) -> tuple[XKey, XKey]:
        lo = self.slots[idx - 1].upper if idx else self.lo
        return lo, self.slots[idx].upper

    def index_of(self, child_id: int) -> int:
        for idx, slot in enumerate(self.slots):
            if slot.child == child_id:
                return idx
        raise KeyError(f"node {child_id} is not a child of {self.node_id}")

    def in_range(self, buffer: SortedKeyList, lo: XKey, hi: XKey) -> list[Point]:
        return list(buffer.irange_key(lo, hi, inclusive=(False, True)))

    def discard(self, key: XKey) -> Point | None:
        """Remove ``key`` from all three buffers; returns the P copy if there was one."""
        found = pop_key(self.points, key)
        if found is not None:
            self.touch("points")
        if pop_key(self.inserts, key) is not None:
            self.touch("inserts")
        if pop_key(self.deletes, key) is not None:
            self.touch("deletes")
        return found

    def holds_pending(self) -> bool:
        return bool(self.inserts or self.deletes) or any(s.size for s in self.slots)

    def slot_for(self, child: NodeState, upper: XKey) -> ChildSlot:
        lowest = child.min_point()
        return ChildSlot(
            child=child.node_id,
            upper=upper,
            min_y=None if lowest is None else y_key(lowest),
            size=len(child.points),
        )


class Workspace:
    """Node states opened by one tree operation."""

    def __init__(self, tree: PrioritySearchTree) -> None:
        self.tree = tree
        self.states: dict[int, NodeState] = {}
        self.pending: set[int] = set()

    def open(self, node_id: int) -> NodeState:
        state = self.states.get(node_id)
        if state is None:
            node = self.tree.nodes[node_id]
            state = NodeState(
                node,
                node.header.load(),
                node.points.load(),
                node.inserts.load(),
                node.deletes.load(),
            )
            self.states[node_id] = state
        return state

    def root(self) -> NodeState:
        state = self.open(self.tree.root_id)
        state.parent = None
        state.depth = 0
        state.lo, state.hi = LOW, HIGH
        return state

    def child(self, state: NodeState, idx: int) -> NodeState:
        child = self.open(state.slots[idx].child)
        child.parent = state
        child.depth = state.depth + 1
        child.lo, child.hi = state.child_range(idx)
        return child

    def create(
        self,
        is_leaf: bool,
        parent: NodeState | None,
        depth: int,
        lo: XKey,
        hi: XKey,
        slots: Iterable[ChildSlot] = (),
        points: Iterable[Point] = (),
        inserts: Iterable[Point] = (),
        deletes: Iterable[Point] = (),
    ) -> NodeState:
        node = PstNode.allocate(self.tree.store, is_leaf)
        self.tree.nodes[node.node_id] = node
        state = NodeState(node, slots, points, inserts, deletes)
        state.parent = parent
        state.depth = depth
        state.lo, state.hi = lo, hi
        state.touch()
        self.states[node.node_id] = state
        self.note(state)
        return state

    def reparent(self, parent: NodeState) -> None:
        for idx, slot in enumerate(parent.slots):
            child = self.states.get(slot.child)
            if child is not None:
                child.parent = parent
                child.depth = parent.depth + 1
                child.lo, child.hi = parent.child_range(idx)

    def shift_depths(self, by: int = 1) -> None:
        for state in self.states.values():
            state.depth += by

    def note(self, *states: NodeState) -> None:
        self.pending.update(state.node_id for state in states)

    def commit(self) -> None:
        for state in self.states.values():
            if not state.dirty:
                continue
            node = state.node
            if "slots" in state.dirty:
                node.header.save(state.slots)
            if "points" in state.dirty:
                node.points.save(list(state.points))
            if "inserts" in state.dirty:
                node.inserts.save(list(state.inserts))
            if "deletes" in state.dirty:
                node.deletes.save(list(state.deletes))
            state.dirty.clear()
