from __future__ import annotations

from typing import TYPE_CHECKING

from .errors import InvariantViolation
from .models import HIGH, LOW, Point, XKey, YKey, x_key, y_key
from .nodes import NodeState, Workspace

if TYPE_CHECKING:
    from .pst import PrioritySearchTree


def _keys(points) -> list[XKey]:
    return [x_key(p) for p in points]


def check_tree(tree: PrioritySearchTree) -> list[str]:
    """Walk every node without charging IOs; returns human-readable problems."""
    problems: list[str] = []
    cfg = tree.cfg
    b = cfg.block_size
    leaf_depths: set[int] = set()

    def walk(ws: Workspace, v: NodeState) -> YKey | None:
        """Returns the highest y-key stored anywhere in v's subtree."""
        name = f"node {v.node_id}"
        all_keys = _keys(v.points) + _keys(v.inserts) + _keys(v.deletes)
        if len(set(all_keys)) != len(all_keys):
            problems.append(f"{name}: buffers are not disjoint")
        for key in all_keys:
            if not (v.lo < key <= v.hi):
                problems.append(f"{name}: point {key} outside range ({v.lo}, {v.hi}]")
        floor = v.floor()
        pending = list(v.inserts) + list(v.deletes)
        if floor is not None and any(y_key(p) >= floor for p in pending):
            problems.append(f"{name}: buffered update at or above min y of P")

        if v.is_leaf:
            leaf_depths.add(v.depth)
            if v.inserts or v.deletes:
                problems.append(f"{name}: leaf holds buffered updates")
            if len(v.points) > b:
                problems.append(f"{name}: leaf holds {len(v.points)} > B points")
            return max((y_key(p) for p in v.points), default=None)

        degree = len(v.slots)
        low = 2 if v.parent is None else cfg.min_degree
        if not (low <= degree <= cfg.delta):
            problems.append(f"{name}: degree {degree} outside [{low}, {cfg.delta}]")
        uppers = v.uppers()
        if uppers != sorted(uppers) or len(set(uppers)) != len(uppers):
            problems.append(f"{name}: child separators out of order")
        if uppers and uppers[-1] != v.hi:
            problems.append(f"{name}: last separator {uppers[-1]} differs from range end {v.hi}")

        expected: dict[XKey, Point] = {}
        subtree_max: YKey | None = None
        subtree_empty = True
        for idx, slot in enumerate(v.slots):
            child = ws.child(v, idx)
            for p in child.points:
                expected[x_key(p)] = p
            lowest = child.floor()
            if slot.size != len(child.points) or slot.min_y != lowest:
                problems.append(f"{name}: stale slot for child {child.node_id}")
            child_max = walk(ws, child)
            child_pending = [y_key(p) for p in (*child.inserts, *child.deletes)]
            candidates = [k for k in (child_max, *child_pending) if k is not None]
            if candidates:
                subtree_empty = False
                top = max(candidates)
                subtree_max = top if subtree_max is None else max(subtree_max, top)

        live = {x_key(p): p for p in v.cstruct.live_points()}
        if live.keys() != expected.keys() or any(
            live[k].payload != expected[k].payload for k in live
        ):
            problems.append(f"{name}: child structure differs from children's point buffers")
        problems.extend(f"{name}: child structure: {msg}" for msg in v.cstruct.check())

        if floor is not None and subtree_max is not None and subtree_max >= floor:
            problems.append(f"{name}: heap order broken below P")
        half_ok = 2 * len(v.points) >= b and len(v.points) <= b
        size_one = half_ok and 4 * len(v.deletes) <= b and len(v.inserts) <= b
        size_two = 2 * len(v.points) < b and not v.inserts and not v.deletes and subtree_empty
        if not (size_one or size_two):
            problems.append(
                f"{name}: size invariant broken (P={len(v.points)}, I={len(v.inserts)}, "
                f"D={len(v.deletes)}, subtree_empty={subtree_empty})"
            )
        own = [y_key(p) for p in v.points]
        if own:
            top = max(own)
            subtree_max = top if subtree_max is None else max(subtree_max, top)
        return subtree_max

    with tree.store.audit():
        ws = Workspace(tree)
        root = ws.root()
        if (root.lo, root.hi) != (LOW, HIGH):
            problems.append("root range is not unbounded")
        walk(ws, root)
    if len(leaf_depths) > 1:
        problems.append(f"leaves at different depths {sorted(leaf_depths)}")
    return problems


def assert_invariants(tree: PrioritySearchTree) -> None:
    problems = check_tree(tree)
    if problems:
        raise InvariantViolation(problems)
