from __future__ import annotations

from fractions import Fraction

import pytest

from buffered_pst.config import Config, validate_config
from buffered_pst.errors import InvariantViolation
from buffered_pst.invariants import assert_invariants, check_tree
from buffered_pst.models import Point
from buffered_pst.pst import PrioritySearchTree


def _tree() -> PrioritySearchTree:
    cfg = validate_config(Config(block_size=8, epsilon=Fraction(1, 2), memory=512))
    return PrioritySearchTree.from_points([Point(x, (x * 29) % 97) for x in range(200)], cfg)


def test_healthy_tree_passes() -> None:
    tree = _tree()

    assert check_tree(tree) == []
    assert_invariants(tree)


def test_check_is_free_of_io() -> None:
    tree = _tree()
    before = tree.stats()

    check_tree(tree)

    assert tree.stats() == before


def test_buffered_update_in_a_leaf_is_reported() -> None:
    tree = _tree()
    leaf = next(node for node in tree.nodes.values() if node.is_leaf)
    leaf.inserts.save([Point(-1, -1)])

    problems = check_tree(tree)

    assert any("leaf holds buffered updates" in msg for msg in problems)
    with pytest.raises(InvariantViolation) as excinfo:
        assert_invariants(tree)
    assert excinfo.value.problems == problems


def test_stale_child_structure_is_reported() -> None:
    tree = _tree()
    root = tree.nodes[tree.root_id]
    root.cstruct.insert_batch([Point(10_000, 0)])

    problems = check_tree(tree)

    assert any("child structure differs" in msg for msg in problems)
