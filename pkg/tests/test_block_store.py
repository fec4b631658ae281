from __future__ import annotations

import pytest

from buffered_pst.block_store import BlockRun, BlockStore, IOStats, RunWriter
from buffered_pst.errors import CachePressure, InvalidConfig, Overfull, UnknownBlock


def test_read_miss_costs_one_io_and_hit_costs_none() -> None:
    store = BlockStore(block_size=4, memory=16)
    block = store.alloc()
    store.write(block, (1, 2))
    store.flush_all()
    store.evict_all()
    before = store.stats()

    assert store.read(block) == (1, 2)
    assert store.read(block) == (1, 2)
    assert (store.stats() - before).reads == 1


def test_write_rejects_more_than_a_block() -> None:
    store = BlockStore(block_size=4, memory=16)
    block = store.alloc()

    with pytest.raises(Overfull):
        store.write(block, range(5))


def test_lru_eviction_writes_back_dirty_blocks() -> None:
    store = BlockStore(block_size=4, memory=8)
    a, b, c = store.alloc(), store.alloc(), store.alloc()
    store.write(a, ("a",))
    store.write(b, ("b",))
    assert store.stats().writes == 0

    store.write(c, ("c",))
    assert store.stats().writes == 1
    assert store.read(a) == ("a",)
    assert store.stats().reads == 1
    assert store.stats().writes == 2
    assert store.resident == 2


def test_freed_and_unknown_blocks_raise() -> None:
    store = BlockStore(block_size=4, memory=16)
    block = store.alloc()
    store.free(block)

    with pytest.raises(UnknownBlock) as excinfo:
        store.read(block)
    assert isinstance(excinfo.value, KeyError)
    assert excinfo.value.block_id == block
    with pytest.raises(UnknownBlock):
        store.write(99, ())


def test_pinning_leaves_one_frame_free() -> None:
    store = BlockStore(block_size=4, memory=12)
    a, b, c = store.alloc(), store.alloc(), store.alloc()
    store.pin(a)
    store.pin(b)

    with pytest.raises(CachePressure):
        store.pin(c)
    store.write(c, (1,))
    assert store.pinned == {a, b}
    store.unpin_all()
    store.pin(c)


def test_pinned_blocks_survive_eviction() -> None:
    store = BlockStore(block_size=4, memory=12)
    ids = [store.alloc() for _ in range(5)]
    for block in ids:
        store.write(block, (block,))
    store.flush_all()
    store.evict_all()
    store.pin(ids[0])
    for block in ids[1:]:
        store.read(block)
    before = store.stats()

    store.read(ids[0])
    assert (store.stats() - before).reads == 0


def test_audit_reads_are_free() -> None:
    store = BlockStore(block_size=4, memory=16)
    block = store.alloc()
    store.write(block, (7,))
    store.flush_all()
    store.evict_all()
    before = store.stats()

    with store.audit():
        assert store.read(block) == (7,)
    assert store.stats() == before
    assert store.resident == 0


def test_flush_counts_each_dirty_block_once() -> None:
    store = BlockStore(block_size=4, memory=64)
    ids = [store.alloc() for _ in range(3)]
    for block in ids:
        store.write(block, (1,))
        store.write(block, (2,))

    assert store.flush_all().writes == 3
    assert store.flush_all().writes == 3


def test_store_rejects_tiny_memory() -> None:
    with pytest.raises(InvalidConfig):
        BlockStore(block_size=8, memory=15)


def test_block_run_rechunks_and_frees_surplus() -> None:
    store = BlockStore(block_size=4, memory=64)
    run = BlockRun(store)
    run.save(list(range(10)))
    assert len(run.ids) == 3
    first_ids = list(run.ids)

    run.save([1, 2, 3])
    assert run.ids == first_ids[:1]
    assert not store.is_live(first_ids[1])
    assert not store.is_live(first_ids[2])
    assert run.load() == [1, 2, 3]
    assert len(run) == 3

    run.free()
    assert not run
    assert store.stats().allocated_blocks == 0


def test_block_run_keeps_minimum_blocks() -> None:
    store = BlockStore(block_size=4, memory=64)
    run = BlockRun(store, min_blocks=1)
    assert len(run.ids) == 1
    assert store.flush_all().writes == 0
    assert store.read(run.ids[0]) == ()

    run.save([])
    assert len(run.ids) == 1
    assert run.load() == []


def test_run_writer_spills_full_blocks() -> None:
    store = BlockStore(block_size=4, memory=64)
    writer = RunWriter(store)
    writer.extend(range(9))
    assert len(writer) == 9

    run = writer.close()
    assert len(run.ids) == 3
    assert [len(store.read(i)) for i in run.ids] == [4, 4, 1]
    assert list(run.iter_records()) == list(range(9))


def test_iostats_difference_keeps_block_counts() -> None:
    later = IOStats(reads=10, writes=7, allocated_blocks=5, peak_blocks=9)
    earlier = IOStats(reads=4, writes=2, allocated_blocks=1, peak_blocks=3)

    delta = later - earlier
    assert (delta.reads, delta.writes, delta.total) == (6, 5, 11)
    assert delta.as_dict()["peak_blocks"] == 9


def test_restore_replaces_disk_contents() -> None:
    store = BlockStore(block_size=4, memory=16)
    store.alloc()
    store.restore(10, [(3, (1, 2)), (5, ())])

    assert store.read(3) == (1, 2)
    assert store.next_id == 10
    assert [block for block, _ in store.iter_blocks()] == [3, 5]
    assert store.alloc() == 10
