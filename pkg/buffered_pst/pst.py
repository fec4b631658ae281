"""Buffered external-memory priority search tree.

The tree is a B-tree over x with fan-out at most ``delta``. Every node ``v``
keeps a point buffer ``P_v`` of at most ``B`` points that are higher (in y
order) than everything stored below ``v``, plus an insertion buffer ``I_v``
and a deletion buffer ``D_v`` of delayed updates for its subtree. Internal
nodes also own a ``ChildStructure`` over the union of their children's point
buffers.

Updates enter at the root. Overflowing and underflowing buffers are repaired
by ``_settle`` which applies, in priority order: push deletions down, push
insertions down, split leaves, split internal nodes, refill point buffers
(deepest node first). After ``ceil(n_bar / 2)`` updates the whole tree is
rebuilt from its live points.
"""

from __future__ import annotations

import heapq
import logging
from bisect import bisect_left
from dataclasses import dataclass
from typing import Callable, Iterable, Iterator, Sequence, TypeVar

from .block_store import BlockRun, BlockStore, IOStats, RunWriter
from .child_structure import ChildStructure
from .config import Config, validate_config
from .construction import build_nodes, stage_points
from .errors import CachePressure, InvalidConfig
from .models import HIGH, LOW, Point, QueryBounds, XKey, x_key, y_key
from .nodes import NodeState, PstNode, Workspace, point_buffer, pop_key
from .query import QueryMixin
from .records import PendingUpdate

logger = logging.getLogger(__name__)

T = TypeVar("T")


def even_pieces(items: Sequence[T], count: int) -> list[list[T]]:
    """Split into ``count`` consecutive pieces whose sizes differ by at most one."""
    size, extra = divmod(len(items), count)
    out: list[list[T]] = []
    start = 0
    for idx in range(count):
        end = start + size + (1 if idx < extra else 0)
        out.append(list(items[start:end]))
        start = end
    return out


def chunked(items: Sequence[T], size: int) -> Iterator[Sequence[T]]:
    for start in range(0, len(items), size):
        yield items[start : start + size]


def _descending(key: XKey) -> tuple:
    return (-key[0], -key[1])


@dataclass
class Epoch:
    n_bar: int
    updates: int = 0

    @property
    def length(self) -> int:
        return max(1, -(-self.n_bar // 2))

    def tick(self) -> bool:
        self.updates += 1
        return self.updates >= self.length


class PrioritySearchTree(QueryMixin):
    def __init__(self, cfg: Config | None = None, store: BlockStore | None = None) -> None:
        self.cfg = validate_config(cfg or Config())
        if store is not None and store.block_size != self.cfg.block_size:
            raise InvalidConfig(
                f"store block size {store.block_size} differs from config {self.cfg.block_size}"
            )
        self.store = store or BlockStore(self.cfg.block_size, self.cfg.memory)
        self.superblock = self.store.alloc()
        root = PstNode.allocate(self.store, is_leaf=True)
        self._reset(nodes={root.node_id: root}, root_id=root.node_id, epoch=Epoch(0))

    def _reset(self, nodes: dict[int, PstNode], root_id: int, epoch: Epoch) -> None:
        self.nodes = nodes
        self.root_id = root_id
        self.epoch = epoch
        self.rebuilds = 0
        self.rebuild_ios = 0
        self.last_visit_count = 0
        self.last_candidates = 0
        self.last_threshold_candidates = 0
        self.threshold_fallbacks = 0
        self._pinned: list[int] = []
        self._pin_warned = False
        self._pin_root()

    @classmethod
    def from_points(
        cls,
        points: Iterable[Point],
        cfg: Config | None = None,
        store: BlockStore | None = None,
    ) -> PrioritySearchTree:
        tree = cls(cfg, store)
        run = stage_points(tree.store, points, tree.cfg.memory)
        tree._install(run)
        return tree

    @classmethod
    def attach(
        cls,
        cfg: Config,
        store: BlockStore,
        superblock: int,
        nodes: dict[int, PstNode],
        root_id: int,
        epoch: Epoch,
    ) -> PrioritySearchTree:
        """Wrap an existing node skeleton, e.g. one read back from a block file."""
        tree = cls.__new__(cls)
        tree.cfg = validate_config(cfg)
        tree.store = store
        tree.superblock = superblock
        tree._reset(nodes, root_id, epoch)
        return tree

    # -- public operations ------------------------------------------------

    def stats(self) -> IOStats:
        return self.store.stats()

    def insert(self, p: Point) -> None:
        ws = Workspace(self)
        root = ws.root()
        root.discard(x_key(p))
        floor = root.floor()
        if root.is_leaf or floor is None or y_key(p) >= floor:
            root.points.add(p)
            root.touch("points")
            if not root.is_leaf:
                self._demote_overflow(root)
        else:
            root.inserts.add(p)
            root.touch("inserts")
        ws.note(root)
        self._finish_update(ws)

    def delete(self, p: Point) -> None:
        ws = Workspace(self)
        root = ws.root()
        found = root.discard(x_key(p))
        if found is None and not root.is_leaf:
            floor = root.floor()
            if floor is None or y_key(p) < floor:
                root.deletes.add(p)
                root.touch("deletes")
        ws.note(root)
        self._finish_update(ws)

    def live_points(self) -> list[Point]:
        """Live set in x order, by top-down replay of all buffered updates."""
        out: list[Point] = []
        self._replay(self.root_id, None, out.append)
        return out

    def contains(self, p: Point) -> bool:
        key = x_key(p)
        return any(q == p for q in self._report(QueryBounds(key, key, y_key(p))))

    def height(self) -> int:
        with self.store.audit():
            node = self.nodes[self.root_id]
            levels = 1
            while not node.is_leaf:
                slots = node.header.load()
                node = self.nodes[slots[0].child]
                levels += 1
        return levels

    def global_rebuild(self) -> None:
        before = self.stats()
        writer = RunWriter(self.store)
        self._replay(self.root_id, None, writer.append)
        run = writer.close()
        for node in self.nodes.values():
            node.free()
        self.nodes = {}
        self._pinned = []
        self._install(run)
        self.rebuilds += 1
        cost = (self.stats() - before).total
        self.rebuild_ios += cost
        logger.debug(
            "global rebuild #%d over %d live points cost %d IOs", self.rebuilds, len(run), cost
        )

    # -- plumbing ---------------------------------------------------------

    def _install(self, run: BlockRun) -> None:
        for node in self.nodes.values():
            node.free()
        root_id, nodes = build_nodes(self.store, self.cfg, run)
        count = len(run)
        run.free()
        self.nodes = nodes
        self.root_id = root_id
        self.epoch = Epoch(count)
        self._pinned = []
        self._pin_root()

    def _pin_root(self) -> None:
        for block_id in self._pinned:
            self.store.unpin(block_id)
        self._pinned = []
        try:
            for block_id in self.nodes[self.root_id].buffer_blocks():
                self.store.pin(block_id)
                self._pinned.append(block_id)
        except CachePressure as exc:
            if not self._pin_warned:
                logger.warning("root node only partially pinned: %s", exc)
                self._pin_warned = True

    def _finish_update(self, ws: Workspace) -> None:
        self._settle(ws)
        ws.commit()
        self._pin_root()
        if self.epoch.tick():
            self.global_rebuild()

    def _snapshot(self, state: NodeState) -> dict[XKey, Point]:
        return {x_key(p): p for p in state.points}

    def _sync_child(
        self,
        ws: Workspace,
        parent: NodeState,
        idx: int,
        child: NodeState,
        before: dict[XKey, Point],
    ) -> None:
        """Bring the parent's child structure and slot in line with ``child.points``."""
        after = self._snapshot(child)
        removed = [p for key, p in before.items() if key not in after]
        added = [p for key, p in after.items() if before.get(key) is not p]
        b = self.cfg.block_size
        for chunk in chunked(removed, b):
            parent.cstruct.delete_batch(chunk)
        for chunk in chunked(added, b):
            parent.cstruct.insert_batch(chunk)
        parent.slots[idx] = parent.slot_for(child, parent.slots[idx].upper)
        parent.touch("slots")
        before.clear()
        before.update(after)
        ws.note(parent, child)

    def _demote_overflow(self, state: NodeState) -> None:
        excess = len(state.points) - self.cfg.block_size
        if excess <= 0:
            return
        for p in heapq.nsmallest(excess, state.points, key=y_key):
            state.points.remove(p)
            state.inserts.add(p)
        state.touch("points", "inserts")

    # -- settling ---------------------------------------------------------

    def _settle(self, ws: Workspace) -> None:
        while (step := self._next_step(ws)) is not None:
            action, state = step
            action(ws, state)

    def _next_step(
        self, ws: Workspace
    ) -> tuple[Callable[[Workspace, NodeState], None], NodeState] | None:
        b = self.cfg.block_size
        states = sorted(
            (ws.states[i] for i in ws.pending if i in ws.states),
            key=lambda s: (s.depth, s.node_id),
        )
        internal = [s for s in states if not s.is_leaf]
        for s in internal:
            if 4 * len(s.deletes) > b:
                return self._push_deletions, s
        for s in internal:
            if len(s.inserts) > b:
                return self._push_insertions, s
        for s in reversed(states):
            if s.is_leaf and (len(s.points) > b or s.inserts):
                return self._split_leaf, s
        for s in reversed(internal):
            if len(s.slots) > self.cfg.delta:
                return self._split_internal, s
        for s in reversed(internal):
            if 2 * len(s.points) < b and s.holds_pending():
                return self._refill, s
        ws.pending.clear()
        return None

    def _largest_group(self, v: NodeState, buffer) -> tuple[int, list[Point]]:
        groups: dict[int, list[Point]] = {}
        for p in buffer:
            groups.setdefault(v.child_index(x_key(p)), []).append(p)
        idx = max(groups, key=lambda i: (len(groups[i]), -i))
        return idx, groups[idx]

    def _push_deletions(self, ws: Workspace, v: NodeState) -> None:
        while 4 * len(v.deletes) > self.cfg.block_size:
            idx, group = self._largest_group(v, v.deletes)
            for p in group:
                v.deletes.remove(p)
            v.touch("deletes")
            self._push_down(ws, v, idx, (), group)
        ws.note(v)

    def _push_insertions(self, ws: Workspace, v: NodeState) -> None:
        while len(v.inserts) > self.cfg.block_size:
            idx, group = self._largest_group(v, v.inserts)
            for p in group:
                v.inserts.remove(p)
            v.touch("inserts")
            self._push_down(ws, v, idx, group, ())
        ws.note(v)

    def _push_down(
        self,
        ws: Workspace,
        v: NodeState,
        idx: int,
        inserts: Sequence[Point],
        deletes: Sequence[Point],
    ) -> None:
        """Hand buffered updates for child ``idx`` one level down."""
        child = ws.child(v, idx)
        before = self._snapshot(child)
        for p in (*inserts, *deletes):
            child.discard(x_key(p))
        if child.is_leaf:
            for p in inserts:
                child.points.add(p)
        else:
            floor = child.floor()
            for p in inserts:
                if floor is not None and y_key(p) >= floor:
                    child.points.add(p)
                else:
                    child.inserts.add(p)
            for p in deletes:
                if floor is None or y_key(p) < floor:
                    child.deletes.add(p)
        child.touch()
        self._demote_overflow(child)
        self._sync_child(ws, v, idx, child, before)

    # -- splits -----------------------------------------------------------

    def _split_leaf(self, ws: Workspace, v: NodeState) -> None:
        b = self.cfg.block_size
        before = self._snapshot(v)
        merged = sorted([*v.points, *v.inserts], key=x_key)
        v.inserts = point_buffer()
        v.touch("points", "inserts")
        parent = v.parent
        if len(merged) <= b:
            v.points = point_buffer(merged)
            if parent is not None:
                self._sync_child(ws, parent, parent.index_of(v.node_id), v, before)
            ws.note(v)
            return

        pieces = even_pieces(merged, -(-len(merged) // b))
        v.points = point_buffer(pieces[0])
        siblings = [
            ws.create(True, parent, v.depth, v.lo, v.hi, points=piece) for piece in pieces[1:]
        ]
        nodes = [v, *siblings]
        last_upper = HIGH if parent is None else parent.slots[parent.index_of(v.node_id)].upper
        uppers = [x_key(piece[-1]) for piece in pieces[:-1]] + [last_upper]
        for node, lo, hi in zip(nodes, [v.lo, *uppers[:-1]], uppers):
            node.lo, node.hi = lo, hi
        logger.debug("leaf %d split into %d pieces", v.node_id, len(pieces))
        if parent is None:
            self._grow_root(ws, nodes, uppers)
            return

        idx = parent.index_of(v.node_id)
        parent.slots[idx : idx + 1] = [parent.slot_for(n, up) for n, up in zip(nodes, uppers)]
        parent.touch("slots")
        ws.reparent(parent)
        ws.note(parent, *nodes)
        if len(parent.slots) > self.cfg.delta:
            self._split_internal(ws, parent)
            return
        added = [p for p in merged if x_key(p) not in before]
        for chunk in chunked(added, b):
            parent.cstruct.insert_batch(chunk)

    def _split_internal(self, ws: Workspace, v: NodeState) -> None:
        degree = len(v.slots)
        groups = even_pieces(v.slots, -(-degree // self.cfg.delta))
        for idx in range(degree):
            ws.child(v, idx)
        uppers = [group[-1].upper for group in groups]

        def partition(buffer) -> list[list[Point]]:
            parts: list[list[Point]] = [[] for _ in groups]
            for p in buffer:
                parts[bisect_left(uppers, x_key(p))].append(p)
            return parts

        points, inserts, deletes = partition(v.points), partition(v.inserts), partition(v.deletes)
        if v.node.cstruct is not None:
            v.node.cstruct.free()
        v.slots = groups[0]
        v.points = point_buffer(points[0])
        v.inserts = point_buffer(inserts[0])
        v.deletes = point_buffer(deletes[0])
        v.touch()
        parent = v.parent
        siblings = [
            ws.create(
                False,
                parent,
                v.depth,
                v.lo,
                v.hi,
                slots=groups[k],
                points=points[k],
                inserts=inserts[k],
                deletes=deletes[k],
            )
            for k in range(1, len(groups))
        ]
        nodes = [v, *siblings]
        lowers = [v.lo, *uppers[:-1]]
        for node, lo, hi in zip(nodes, lowers, uppers):
            node.lo, node.hi = lo, hi
        for node in nodes:
            below = [p for slot in node.slots for p in ws.open(slot.child).points]
            node.node.cstruct = ChildStructure.build(self.store, self.cfg, below)
            ws.reparent(node)
        logger.debug("internal node %d split into %d", v.node_id, len(nodes))

        if parent is None:
            self._grow_root(ws, nodes, uppers)
            return
        idx = parent.index_of(v.node_id)
        parent.slots[idx : idx + 1] = [parent.slot_for(n, up) for n, up in zip(nodes, uppers)]
        parent.touch("slots")
        ws.reparent(parent)
        ws.note(parent, *nodes)
        if len(parent.slots) > self.cfg.delta:
            self._split_internal(ws, parent)

    def _grow_root(self, ws: Workspace, children: list[NodeState], uppers: list[XKey]) -> None:
        ws.shift_depths(1)
        root = ws.create(False, None, 0, LOW, HIGH)
        root.slots = [root.slot_for(c, up) for c, up in zip(children, uppers)]
        ws.reparent(root)
        below = [p for c in children for p in c.points]
        root.node.cstruct = ChildStructure.build(self.store, self.cfg, below)
        self.root_id = root.node_id
        ws.note(root, *children)
        logger.debug("root grew to node %d with degree %d", root.node_id, len(children))

    # -- refilling --------------------------------------------------------

    def _refill(self, ws: Workspace, v: NodeState) -> None:
        b = self.cfg.block_size
        before = self._snapshot(v)
        if not any(slot.size for slot in v.slots):
            v.deletes = point_buffer()
            while len(v.points) < b and v.inserts:
                top = max(v.inserts, key=y_key)
                v.inserts.remove(top)
                v.points.add(top)
        else:
            pulled, exhausted = self._pull_from_children(ws, v, self.cfg.half_block)
            survivors: list[Point] = []
            for p in pulled:
                key = x_key(p)
                if pop_key(v.deletes, key) is not None:
                    continue
                fresh = pop_key(v.inserts, key)
                survivors.append(p if fresh is None else fresh)
            if exhausted:
                v.deletes = point_buffer()
            elif pulled:
                lowest = min(y_key(p) for p in pulled)
                v.deletes = point_buffer(d for d in v.deletes if y_key(d) < lowest)
            pool = sorted([*survivors, *v.inserts], key=y_key, reverse=True)
            keep = len(survivors)
            v.points.update(pool[:keep])
            v.inserts = point_buffer(pool[keep:])
        v.touch()
        if v.parent is not None:
            self._sync_child(ws, v.parent, v.parent.index_of(v.node_id), v, before)
        ws.note(v)

    def _pull_from_children(
        self, ws: Workspace, v: NodeState, count: int
    ) -> tuple[list[Point], bool]:
        """Remove up to ``count`` highest points from the children's point buffers."""
        snapshots: dict[int, dict[XKey, Point]] = {}
        heap: list[tuple[tuple, int]] = []
        for idx, slot in enumerate(v.slots):
            if not slot.size and slot.child not in ws.states:
                continue
            child = ws.child(v, idx)
            snapshots[idx] = self._snapshot(child)
            if not child.points and child.holds_pending():
                self._refill_until_nonempty(ws, v, idx, child, snapshots[idx])
            if child.points:
                heapq.heappush(heap, (self._top_rank(child), idx))

        out: list[Point] = []
        while len(out) < count and heap:
            _, idx = heapq.heappop(heap)
            child = ws.child(v, idx)
            top = max(child.points, key=y_key)
            child.points.remove(top)
            child.touch("points")
            out.append(top)
            if not child.points and child.holds_pending():
                self._refill_until_nonempty(ws, v, idx, child, snapshots[idx])
            if child.points:
                heapq.heappush(heap, (self._top_rank(child), idx))

        for idx, snapshot in snapshots.items():
            self._sync_child(ws, v, idx, ws.child(v, idx), snapshot)
        return out, not heap

    def _refill_until_nonempty(
        self,
        ws: Workspace,
        v: NodeState,
        idx: int,
        child: NodeState,
        snapshot: dict[XKey, Point],
    ) -> None:
        self._sync_child(ws, v, idx, child, snapshot)
        while not child.points and child.holds_pending():
            self._refill(ws, child)
        snapshot.clear()
        snapshot.update(self._snapshot(child))

    @staticmethod
    def _top_rank(state: NodeState) -> tuple:
        return _descending(y_key(max(state.points, key=y_key)))

    # -- replay -----------------------------------------------------------

    def _replay(
        self,
        node_id: int,
        pending: BlockRun | None,
        emit: Callable[[Point], None],
    ) -> None:
        """Apply buffered updates top-down; ancestors override descendants."""
        node = self.nodes[node_id]
        own = [PendingUpdate(p, True) for p in node.points.load()]
        own += [PendingUpdate(p, True) for p in node.inserts.load()]
        own += [PendingUpdate(p, False) for p in node.deletes.load()]
        own.sort(key=lambda u: x_key(u.point))
        newer: Iterable[PendingUpdate] = pending.iter_records() if pending is not None else ()
        stream = _overlay(newer, own)
        if node.is_leaf:
            for update in stream:
                if update.insert:
                    emit(update.point)
            return

        slots = node.header.load()
        uppers = [slot.upper for slot in slots]
        writers = [RunWriter(self.store) for _ in slots]
        for update in stream:
            idx = min(bisect_left(uppers, x_key(update.point)), len(slots) - 1)
            writers[idx].append(update)
        for slot, writer in zip(slots, writers):
            run = writer.close()
            self._replay(slot.child, run, emit)
            run.free()


def _overlay(
    newer: Iterable[PendingUpdate], older: Iterable[PendingUpdate]
) -> Iterator[PendingUpdate]:
    last: XKey | None = None
    for update in heapq.merge(newer, older, key=lambda u: x_key(u.point)):
        key = x_key(update.point)
        if key != last:
            last = key
            yield update


def bulk_construct(
    points: Iterable[Point],
    store: BlockStore | None = None,
    cfg: Config | None = None,
) -> PrioritySearchTree:
    return PrioritySearchTree.from_points(points, cfg=cfg, store=store)
