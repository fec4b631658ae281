from __future__ import annotations

import random
from fractions import Fraction

import pytest

from buffered_pst.block_store import BlockStore
from buffered_pst.config import Config, validate_config
from buffered_pst.construction import stage_points
from buffered_pst.errors import DuplicatePoint
from buffered_pst.invariants import assert_invariants
from buffered_pst.models import Point, ThreeSidedQuery, x_key
from buffered_pst.pst import PrioritySearchTree, bulk_construct


def _cfg(block_size: int = 16) -> Config:
    cfg = Config(block_size=block_size, epsilon=Fraction(1, 2), memory=64 * block_size)
    return validate_config(cfg)


def _points(n: int, seed: int = 0) -> list[Point]:
    rng = random.Random(seed)
    xs = rng.sample(range(10 * n), n)
    return sorted((Point(x, rng.randrange(1 << 30)) for x in xs), key=x_key)


def _build_cost(points: list[Point], cfg: Config) -> int:
    store = BlockStore(cfg.block_size, cfg.memory)
    PrioritySearchTree.from_points(points, cfg, store)
    store.flush_all()
    return store.stats().total


def test_sorted_and_shuffled_input_build_the_same_set() -> None:
    cfg = _cfg(8)
    points = _points(500, seed=1)
    shuffled = list(points)
    random.Random(2).shuffle(shuffled)

    a = bulk_construct(points, cfg=cfg)
    b = bulk_construct(shuffled, cfg=cfg)

    assert [p.as_pair() for p in a.live_points()] == [p.as_pair() for p in points]
    assert [p.as_pair() for p in b.live_points()] == [p.as_pair() for p in points]
    assert_invariants(a)
    assert_invariants(b)
    assert a.height() == b.height()


@pytest.mark.parametrize("n", [0, 1, 8, 9, 100, 1000])
def test_constructed_tree_satisfies_invariants(n: int) -> None:
    cfg = _cfg(8)
    points = _points(n, seed=n)

    tree = bulk_construct(points, cfg=cfg)

    assert_invariants(tree)
    found = tree.report_3sided(ThreeSidedQuery(-1, 10 * n + 1, -1))
    assert sorted(p.as_pair() for p in found) == [p.as_pair() for p in points]


def test_duplicates_are_rejected_and_staging_is_freed() -> None:
    store = BlockStore(8, 512)
    with pytest.raises(DuplicatePoint):
        stage_points(store, [Point(1, 1), Point(2, 2), Point(2, 2)], 512)
    assert store.stats().allocated_blocks == 0

    with pytest.raises(DuplicatePoint):
        stage_points(store, [Point(5, 1), Point(3, 3), Point(5, 1)], 512)
    assert store.stats().allocated_blocks == 0


def test_same_x_points_are_not_duplicates() -> None:
    tree = bulk_construct([Point(1, 1), Point(1, 2), Point(1, 3)], cfg=_cfg(4))

    assert [p.y for p in tree.live_points()] == [1, 2, 3]


def test_sorted_construction_is_linear_in_blocks() -> None:
    cfg = _cfg(16)
    small = _build_cost(_points(4096, seed=3), cfg)
    large = _build_cost(_points(8192, seed=4), cfg)

    assert large <= 10 * 8192 // cfg.block_size
    assert 1.6 <= large / small <= 2.5


def test_unsorted_construction_pays_for_sorting() -> None:
    cfg = _cfg(16)
    points = _points(4096, seed=5)
    shuffled = list(points)
    random.Random(6).shuffle(shuffled)

    assert _build_cost(shuffled, cfg) > _build_cost(points, cfg)
