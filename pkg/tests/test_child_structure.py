from __future__ import annotations

import random
from fractions import Fraction

import pytest

from buffered_pst.block_store import BlockStore
from buffered_pst.child_structure import ChildStructure, fusion_sweep
from buffered_pst.config import Config, validate_config
from buffered_pst.errors import BatchTooLarge, CapacityExceeded
from buffered_pst.models import Point, QueryBounds, ThreeSidedQuery, x_key, x_range_bounds, y_key
from buffered_pst.oracle import sweep_reference

# Eight base blocks of four points; block t covers x = 4t+1 .. 4t+4.
SWEEP_YS = [
    [1, 2, 5, 30],
    [3, 4, 31, 32],
    [6, 7, 10, 16],
    [8, 9, 34, 35],
    [17, 18, 19, 20],
    [11, 12, 15, 36],
    [13, 14, 37, 38],
    [21, 22, 23, 24],
]


def _cfg(block_size: int, memory: int | None = None) -> Config:
    return validate_config(
        Config(block_size=block_size, epsilon=Fraction(1, 2), memory=memory or 64 * block_size)
    )


def _sweep_points() -> list[Point]:
    return [Point(4 * t + i + 1, y) for t, ys in enumerate(SWEEP_YS) for i, y in enumerate(ys)]


def _brute(points: list[Point], bounds: QueryBounds) -> list[tuple[int, int]]:
    return sorted(p.as_pair() for p in points if bounds.contains(p))


def _random_points(rng: random.Random, count: int) -> list[Point]:
    xs = rng.sample(range(100_000), count)
    return sorted((Point(x, rng.randrange(100_000)) for x in xs), key=x_key)


def _pairs(fused: list) -> list:
    return [(first, last, level, [p.as_pair() for p in pts]) for first, last, level, pts in fused]


def test_fused_blocks_follow_the_sweep() -> None:
    store = BlockStore(4, 256)
    cs = ChildStructure.build(store, _cfg(4), _sweep_points())

    assert cs.base_count() == 8
    assert cs.fused_ranges() == [(0, 1), (2, 3), (5, 6), (2, 4), (5, 7), (0, 4), (0, 7)]
    _, fused = cs.layout()
    assert [entry.min_y[0] for entry, _ in fused] == [5, 10, 15, 19, 24, 31, 35]
    assert sorted(p.y for p in fused[-1][1]) == [35, 36, 37, 38]
    assert cs.check() == []


def test_query_reads_only_the_covering_blocks() -> None:
    store = BlockStore(4, 256)
    points = _sweep_points()
    cs = ChildStructure.build(store, _cfg(4), points)
    bounds = ThreeSidedQuery(10, 26, 17).bounds()

    covering = cs.covering_entries(bounds)
    assert [(e.first, e.last) for e in covering] == [(2, 3), (4, 4), (5, 6)]

    store.flush_all()
    store.evict_all()
    before = store.stats()
    found = cs.report(bounds)
    assert sorted(p.as_pair() for p in found) == _brute(points, bounds)
    assert (store.stats() - before).reads <= len(covering) + cs.bookkeeping_blocks()


@pytest.mark.parametrize("seed", range(20))
def test_fusion_matches_literal_sweep(seed: int) -> None:
    rng = random.Random(seed)
    block_size = rng.choice([4, 5, 8])
    blocks = rng.randint(2, 9)
    points = _random_points(rng, block_size * blocks)
    bases = [points[i : i + block_size] for i in range(0, len(points), block_size)]

    fast = _pairs(fusion_sweep(bases, block_size))
    slow = _pairs(sweep_reference(bases, block_size))

    assert fast == slow
    assert len(fast) == blocks - 1
    for first, last, level, pts in fusion_sweep(bases, block_size):
        members = {y_key(p) for chunk in bases[first : last + 1] for p in chunk}
        assert level in members
        assert level == min(y_key(p) for p in pts)


@pytest.mark.parametrize("seed", range(10))
def test_report_matches_brute_force_with_buffered_updates(seed: int) -> None:
    rng = random.Random(seed)
    cfg = _cfg(16)
    store = BlockStore(16, cfg.memory)
    points = _random_points(rng, rng.randint(1, cfg.child_capacity - 32))
    cs = ChildStructure.build(store, cfg, points)
    live = {x_key(p): p for p in points}

    for _ in range(rng.randint(0, 3)):
        doomed = rng.sample(sorted(live.values(), key=x_key), min(len(live), rng.randint(1, 16)))
        cs.delete_batch(doomed)
        for p in doomed:
            live.pop(x_key(p))
        fresh = [Point(rng.randrange(100_000, 200_000), rng.randrange(100_000)) for _ in range(8)]
        fresh = list({x_key(p): p for p in fresh}.values())
        cs.insert_batch(fresh)
        live.update({x_key(p): p for p in fresh})

    current = list(live.values())
    assert sorted(p.as_pair() for p in cs.live_points()) == sorted(p.as_pair() for p in current)
    assert cs.check() == []
    for _ in range(25):
        x1, x2 = sorted(rng.randrange(200_000) for _ in range(2))
        bounds = ThreeSidedQuery(x1, x2, rng.randrange(100_000)).bounds()
        assert sorted(p.as_pair() for p in cs.report(bounds)) == _brute(current, bounds)


def test_insert_overrides_pending_delete_and_vice_versa() -> None:
    cfg = _cfg(16)
    store = BlockStore(16, cfg.memory)
    points = [Point(x, x) for x in range(1, 33)]
    cs = ChildStructure.build(store, cfg, points)

    cs.delete_batch([Point(5, 5)])
    cs.insert_batch([Point(5, 5, b"back")])
    cs.insert_batch([Point(100, 1)])
    cs.delete_batch([Point(100, 1)])

    live = list(cs.live_points())
    assert [p.as_pair() for p in live] == [(x, x) for x in range(1, 33)]
    assert next(p for p in live if p.x == 5).payload == b"back"


def test_buffer_overflow_triggers_rebuild() -> None:
    cfg = _cfg(16)
    store = BlockStore(16, cfg.memory)
    cs = ChildStructure.build(store, cfg, [Point(x, x) for x in range(64)])

    cs.insert_batch([Point(1000 + i, i) for i in range(16)])
    assert cs.rebuilds == 0
    cs.insert_batch([Point(2000, 0)])

    assert cs.rebuilds == 1
    assert cs.inserts.load() == []
    assert cs.base_count() == 6
    assert cs.check() == []


def test_batch_and_capacity_limits() -> None:
    cfg = _cfg(4)
    store = BlockStore(4, cfg.memory)
    with pytest.raises(CapacityExceeded):
        ChildStructure.build(store, cfg, [Point(x, 0) for x in range(cfg.child_capacity + 1)])
    with pytest.raises(ValueError):
        ChildStructure.build(store, cfg, [Point(2, 0), Point(1, 0)])

    cs = ChildStructure.build(store, cfg, [Point(x, 0) for x in range(8)])
    with pytest.raises(BatchTooLarge):
        cs.insert_batch([Point(100 + i, 0) for i in range(5)])
    cs.insert_batch([])
    assert cs.inserts.load() == []


def test_sample_costs_constant_io() -> None:
    cfg = _cfg(16)
    rng = random.Random(3)
    for count in (64, 128, cfg.child_capacity):
        store = BlockStore(16, cfg.memory)
        cs = ChildStructure.build(store, cfg, _random_points(rng, count))
        store.flush_all()
        store.evict_all()
        before = store.stats()
        bounds = x_range_bounds(0, 100_000)

        cs.sample(bounds.lo, bounds.hi)

        assert (store.stats() - before).reads <= len(cs.catalog.ids) + len(cs.samples.ids)


def test_sample_counts_are_bracketed() -> None:
    cfg = _cfg(16)
    rng = random.Random(11)
    block_size = cfg.block_size
    for _ in range(200):
        points = _random_points(rng, rng.randint(64, cfg.child_capacity))
        store = BlockStore(16, cfg.memory)
        cs = ChildStructure.build(store, cfg, points)
        live = {x_key(p): p for p in points}
        if rng.random() < 0.5:
            doomed = rng.sample(points, block_size)
            cs.delete_batch(doomed)
            for p in doomed:
                live.pop(x_key(p))
            fresh = [Point(rng.randrange(100_000), 100_000 + i) for i in range(block_size)]
            fresh = [p for p in fresh if x_key(p) not in live]
            cs.insert_batch(fresh)
            live.update({x_key(p): p for p in fresh})

        x1, x2 = sorted(rng.randrange(100_000) for _ in range(2))
        bounds = x_range_bounds(x1, x2)
        in_range = [y_key(p) for p in live.values() if bounds.contains_x(x_key(p))]
        alpha = cs.sample_alpha(bounds.lo, bounds.hi)
        for s, value in enumerate(cs.sample(bounds.lo, bounds.hi), start=1):
            above = sum(1 for key in in_range if key >= value)
            assert s * block_size <= above <= (s + alpha) * block_size


def test_sample_slack_follows_the_counting_bound() -> None:
    cfg = _cfg(4)
    cs = ChildStructure.build(BlockStore(4, 256), cfg, _sweep_points())

    # x in [10, 26] spans base blocks 2..6; ceil((4 * 2 + 3 * 4) / 4) = 5.
    narrow = x_range_bounds(10, 26)
    assert cs.sample_alpha(narrow.lo, narrow.hi) == 5
    # The whole range spans blocks -1..8; ceil((9 * 2 + 12) / 4) = 8.
    wide = x_range_bounds(0, 40)
    assert cs.sample_alpha(wide.lo, wide.hi) == 8
