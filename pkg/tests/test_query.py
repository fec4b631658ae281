from __future__ import annotations

import random
from fractions import Fraction

import pytest

from buffered_pst.block_store import BlockRun, BlockStore
from buffered_pst.config import Config, validate_config
from buffered_pst.invariants import assert_invariants
from buffered_pst.models import (
    Point,
    SampleValue,
    ThreeSidedQuery,
    TopKQuery,
    x_key,
    x_range_bounds,
    y_key,
)
from buffered_pst.nodes import NodeState, Workspace
from buffered_pst.oracle import OracleSet
from buffered_pst.pst import PrioritySearchTree
from buffered_pst.query import external_select_topk, select_largest

Y_RANGE = 1 << 30


def _cfg(block_size: int = 16) -> Config:
    cfg = Config(block_size=block_size, epsilon=Fraction(1, 2), memory=64 * block_size)
    return validate_config(cfg)


def _points(n: int, seed: int) -> list[Point]:
    rng = random.Random(seed)
    xs = rng.sample(range(10 * n), n)
    return sorted((Point(x, rng.randrange(Y_RANGE)) for x in xs), key=x_key)


def _pairs(points) -> list[tuple[int, int]]:
    return sorted(p.as_pair() for p in points)


def test_top_zero_is_empty() -> None:
    tree = PrioritySearchTree.from_points(_points(200, 1), _cfg(8))

    assert tree.top_k(TopKQuery(0, 2000, 0)) == []
    assert tree.last_candidates == 0


def test_top_k_beyond_range_size_returns_whole_range() -> None:
    points = _points(300, 2)
    tree = PrioritySearchTree.from_points(points, _cfg(8))
    in_range = [p for p in points if 100 <= p.x <= 400]

    found = tree.top_k(TopKQuery(100, 400, len(in_range) + 10))

    assert _pairs(found) == _pairs(in_range)


@pytest.mark.parametrize("block_size", [8, 16])
def test_top_k_matches_oracle_after_updates(block_size: int) -> None:
    rng = random.Random(block_size)
    points = _points(1500, 3)
    tree = PrioritySearchTree.from_points(points, _cfg(block_size))
    oracle = OracleSet(points)
    for _ in range(400):
        p = Point(rng.randrange(15_000), rng.randrange(Y_RANGE))
        tree.insert(p)
        oracle.o_insert(p)
    for p in rng.sample(points, 300):
        tree.delete(p)
        oracle.o_delete(p)

    for _ in range(60):
        x1, x2 = sorted(rng.randrange(15_000) for _ in range(2))
        q = TopKQuery(x1, x2, rng.choice([1, 2, 5, 16, 40, 200]))
        assert _pairs(tree.top_k(q)) == _pairs(oracle.o_topk(q))
    assert_invariants(tree)


def test_threshold_budget_follows_path_length() -> None:
    cfg = _cfg(16)
    tree = PrioritySearchTree.from_points(_points(4000, 4), cfg)

    for k in (1, 16, 100):
        threshold = tree.select_threshold(1000, 30_000, k)
        assert threshold.k_bar == 7 * threshold.t + -(-12 * k // cfg.block_size)
        assert 1 <= threshold.t <= 2 * tree.height()
        assert threshold.explored <= threshold.k_bar


def test_threshold_keeps_at_least_k_candidates() -> None:
    rng = random.Random(5)
    points = _points(4000, 5)
    cfg = _cfg(16)
    tree = PrioritySearchTree.from_points(points, cfg)
    oracle = OracleSet(points)
    for p in rng.sample(points, 400):
        tree.delete(p)
        oracle.o_delete(p)

    for _ in range(200):
        x1, x2 = sorted(rng.randrange(40_000) for _ in range(2))
        k = rng.choice([1, 10, 50, 300])
        threshold = tree.select_threshold(x1, x2, k)
        in_range = sum(1 for p in oracle.points() if x1 <= p.x <= x2)

        found = tree.top_k(TopKQuery(x1, x2, k))

        assert len(found) == min(k, in_range)
        first_pass = tree.last_threshold_candidates
        if threshold.y_bar is None:
            assert first_pass == in_range
        else:
            # Each expanded node adds at most (m + 1 + alpha) B points; alpha <= 5 at B=16.
            assert min(k, in_range) <= first_pass <= 7 * cfg.block_size * threshold.k_bar
    assert tree.threshold_fallbacks == 0


def test_threshold_is_the_kth_value_of_the_sample_heap() -> None:
    rng = random.Random(13)
    for block_size in (8, 16):
        points = _points(2500, block_size)
        tree = PrioritySearchTree.from_points(points, _cfg(block_size))
        for p in rng.sample(points, 200):
            tree.delete(p)
        for _ in range(300):
            tree.insert(Point(rng.randrange(25_000), rng.randrange(Y_RANGE)))

        for _ in range(15):
            x1, x2 = sorted(rng.randrange(25_000) for _ in range(2))
            k = rng.choice([1, 8, 40, 150])
            values, edges = _sample_heap(tree, x1, x2)
            threshold = tree.select_threshold(x1, x2, k)

            assert all(parent >= child for parent, child in edges)
            ranked = sorted(values, reverse=True)
            if len(ranked) >= threshold.k_bar and not ranked[threshold.k_bar - 1].infinite:
                assert threshold.y_bar == ranked[threshold.k_bar - 1].key
            else:
                assert threshold.y_bar is None


def _sample_heap(
    tree: PrioritySearchTree, x1: int, x2: int
) -> tuple[list[SampleValue], list[tuple[SampleValue, SampleValue]]]:
    """Every value of the lazily built sample heap, with its parent-child edges."""
    bounds = x_range_bounds(x1, x2)
    ws = Workspace(tree)
    path = tree._search_paths(ws, bounds)
    path_ids = {state.node_id for state in path}
    values: list[SampleValue] = []
    edges: list[tuple[SampleValue, SampleValue]] = []

    def expand(owner: NodeState, cap: SampleValue) -> None:
        parent = cap
        for value, idx in tree._sample_path(ws, owner, bounds, cap, path_ids):
            values.append(value)
            edges.append((parent, value))
            parent = value
            if idx is not None:
                expand(ws.child(owner, idx), value)

    for state in path:
        values.append(SampleValue.sentinel())
        expand(state, SampleValue.sentinel())
    return values, edges


def test_visited_nodes_follow_paths_and_output() -> None:
    rng = random.Random(14)
    cfg = _cfg(16)
    tree = PrioritySearchTree.from_points(_points(6000, 14), cfg)
    height = tree.height()

    for _ in range(40):
        x1, x2 = sorted(rng.randrange(60_000) for _ in range(2))
        found = tree.report_3sided(ThreeSidedQuery(x1, x2, rng.randrange(Y_RANGE)))

        output_blocks = 2 * len(found) // cfg.block_size
        assert tree.last_visit_count <= 1 + cfg.delta * (2 * height + output_blocks)


def test_select_largest_breaks_ties_on_x() -> None:
    points = [Point(x, 5) for x in range(10)] + [Point(100, 1)]

    top = select_largest(points, 3)

    assert _pairs(top) == [(7, 5), (8, 5), (9, 5)]
    assert select_largest(points, 0) == []
    assert _pairs(select_largest(points, 50)) == _pairs(points)


def test_select_largest_matches_sorting() -> None:
    rng = random.Random(6)
    points = [Point(x, rng.randrange(50)) for x in range(500)]

    for k in (1, 7, 123, 499):
        expected = sorted(points, key=y_key, reverse=True)[:k]
        assert _pairs(select_largest(points, k)) == _pairs(expected)


def test_external_selection_spills_past_memory() -> None:
    store = BlockStore(block_size=4, memory=16)
    rng = random.Random(7)
    points = [Point(x, rng.randrange(1000)) for x in range(300)]
    run = BlockRun.write_new(store, points)

    top = external_select_topk(store, run, 25, memory=16)

    expected = sorted(points, key=y_key, reverse=True)[:25]
    assert _pairs(top) == _pairs(expected)
    assert store.stats().allocated_blocks == len(run.ids)


def test_narrow_query_reads_far_less_than_a_scan() -> None:
    cfg = _cfg(16)
    n = 8192
    tree = PrioritySearchTree.from_points(_points(n, 8), cfg)
    tree.store.flush_all()
    tree.store.evict_all()
    before = tree.stats()

    found = tree.report_3sided(ThreeSidedQuery(20_000, 21_000, Y_RANGE - Y_RANGE // 8))

    cost = (tree.stats() - before).total
    assert len(found) < 40
    assert cost < (n // cfg.block_size) // 2


@pytest.mark.parametrize("memory", [128, 512, 4096])
def test_top_k_selection_matches_oracle_at_any_memory(memory: int) -> None:
    rng = random.Random(memory)
    points = _points(2000, 15)
    cfg = validate_config(Config(block_size=8, epsilon=Fraction(1, 2), memory=memory))
    tree = PrioritySearchTree.from_points(points, cfg)
    oracle = OracleSet(points)

    for k in (3, 60, 150, 400):
        x1, x2 = sorted(rng.randrange(20_000) for _ in range(2))
        q = TopKQuery(min(x1, 2_000), max(x2, 18_000), k)
        assert _pairs(tree.top_k(q)) == _pairs(oracle.o_topk(q))
    assert tree.threshold_fallbacks == 0
