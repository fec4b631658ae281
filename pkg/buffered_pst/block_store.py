"""Two-level memory simulator.

``BlockStore`` keeps an unbounded array of blocks (each at most ``B``
records) on a simulated disk and an LRU cache of ``M // B`` frames in front
of it. Every other module reads and writes blocks through the store, so the
``reads``/``writes`` counters are the only cost measure the package reports.

``BlockRun`` and ``RunWriter`` are the two ways the rest of the package
handles sequences longer than one block.
"""

from __future__ import annotations

import logging
from collections import OrderedDict
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Any, Iterable, Iterator, Sequence

from .errors import CachePressure, InvalidConfig, Overfull, UnknownBlock

logger = logging.getLogger(__name__)

Block = tuple[Any, ...]


@dataclass(frozen=True)
class IOStats:
    reads: int = 0
    writes: int = 0
    allocated_blocks: int = 0
    peak_blocks: int = 0

    @property
    def total(self) -> int:
        return self.reads + self.writes

    def __sub__(self, other: IOStats) -> IOStats:
        return IOStats(
            reads=self.reads - other.reads,
            writes=self.writes - other.writes,
            allocated_blocks=self.allocated_blocks,
            peak_blocks=self.peak_blocks,
        )

    def as_dict(self) -> dict[str, int]:
        return {
            "reads": self.reads,
            "writes": self.writes,
            "allocated_blocks": self.allocated_blocks,
            "peak_blocks": self.peak_blocks,
        }


class BlockStore:
    def __init__(self, block_size: int, memory: int) -> None:
        if block_size < 1:
            raise InvalidConfig(f"block_size must be positive, got {block_size}")
        if memory < 2 * block_size:
            raise InvalidConfig(f"memory {memory} is below two blocks of {block_size}")
        self.block_size = block_size
        self.memory = memory
        self.frames = memory // block_size
        self._disk: dict[int, Block] = {}
        self._cache: OrderedDict[int, Block] = OrderedDict()
        self._dirty: set[int] = set()
        self._pinned: set[int] = set()
        self._live: set[int] = set()
        self._freed: set[int] = set()
        self._next_id = 0
        self._reads = 0
        self._writes = 0
        self._peak = 0
        self._peeking = 0

    # -- accounting -------------------------------------------------------

    def stats(self) -> IOStats:
        return IOStats(
            reads=self._reads,
            writes=self._writes,
            allocated_blocks=len(self._live),
            peak_blocks=self._peak,
        )

    @property
    def next_id(self) -> int:
        return self._next_id

    @property
    def resident(self) -> int:
        return len(self._cache)

    @property
    def pinned(self) -> frozenset[int]:
        return frozenset(self._pinned)

    def is_live(self, block_id: int) -> bool:
        return block_id in self._live

    @contextmanager
    def audit(self) -> Iterator[BlockStore]:
        """Reads inside the block are uncounted peeks that leave the cache untouched."""
        self._peeking += 1
        try:
            yield self
        finally:
            self._peeking -= 1

    # -- block lifecycle --------------------------------------------------

    def alloc(self) -> int:
        """Fresh blocks read back empty, so allocating one costs no IO."""
        block_id = self._next_id
        self._next_id += 1
        self._live.add(block_id)
        self._disk[block_id] = ()
        self._peak = max(self._peak, len(self._live))
        return block_id

    def free(self, block_id: int) -> None:
        self._require(block_id)
        self._live.discard(block_id)
        self._freed.add(block_id)
        self._cache.pop(block_id, None)
        self._dirty.discard(block_id)
        self._pinned.discard(block_id)
        self._disk.pop(block_id, None)

    def read(self, block_id: int) -> Block:
        self._require(block_id)
        if self._peeking:
            cached = self._cache.get(block_id)
            return cached if cached is not None else self._disk[block_id]
        if block_id in self._cache:
            self._cache.move_to_end(block_id)
            return self._cache[block_id]
        self._make_room()
        self._reads += 1
        block = self._disk[block_id]
        self._cache[block_id] = block
        return block

    def write(self, block_id: int, records: Sequence[Any]) -> None:
        self._require(block_id)
        if len(records) > self.block_size:
            raise Overfull(
                f"block {block_id}: {len(records)} records exceed block size {self.block_size}"
            )
        if block_id not in self._cache:
            self._make_room()
        self._cache[block_id] = tuple(records)
        self._cache.move_to_end(block_id)
        self._dirty.add(block_id)

    def pin(self, block_id: int) -> None:
        if block_id in self._pinned:
            return
        if (len(self._pinned) + 1) * self.block_size > self.memory - self.block_size:
            raise CachePressure(
                f"pinning block {block_id} would leave no frame for further reads "
                f"({len(self._pinned)} pinned, memory {self.memory})"
            )
        self.read(block_id)
        self._pinned.add(block_id)

    def unpin(self, block_id: int) -> None:
        self._pinned.discard(block_id)

    def unpin_all(self) -> None:
        self._pinned.clear()

    def flush_all(self) -> IOStats:
        for block_id in sorted(self._dirty):
            self._disk[block_id] = self._cache[block_id]
            self._writes += 1
        self._dirty.clear()
        return self.stats()

    def evict_all(self) -> IOStats:
        """Flush and drop every unpinned frame, leaving a cold cache."""
        stats = self.flush_all()
        for block_id in [b for b in self._cache if b not in self._pinned]:
            del self._cache[block_id]
        return stats

    # -- persistence hooks ------------------------------------------------

    def iter_blocks(self) -> Iterator[tuple[int, Block]]:
        for block_id in sorted(self._live):
            cached = self._cache.get(block_id)
            yield block_id, cached if cached is not None else self._disk[block_id]

    def restore(self, next_id: int, blocks: Iterable[tuple[int, Block]]) -> None:
        self._disk = {block_id: tuple(records) for block_id, records in blocks}
        self._live = set(self._disk)
        self._freed = set()
        self._cache.clear()
        self._dirty.clear()
        self._pinned.clear()
        self._next_id = max([next_id, *[b + 1 for b in self._live]])
        self._peak = max(self._peak, len(self._live))

    # -- internals --------------------------------------------------------

    def _require(self, block_id: int) -> None:
        if block_id not in self._live:
            raise UnknownBlock(block_id)

    def _make_room(self) -> None:
        while len(self._cache) >= self.frames:
            victim = next((b for b in self._cache if b not in self._pinned), None)
            if victim is None:
                raise CachePressure(f"all {self.frames} cache frames are pinned")
            self._evict(victim)

    def _evict(self, block_id: int) -> None:
        if block_id in self._dirty:
            self._disk[block_id] = self._cache[block_id]
            self._dirty.discard(block_id)
            self._writes += 1
        del self._cache[block_id]


class BlockRun:
    """A record sequence spread over an ordered list of blocks."""

    def __init__(
        self,
        store: BlockStore,
        ids: Sequence[int] = (),
        length: int = 0,
        min_blocks: int = 0,
    ) -> None:
        self.store = store
        self.ids: list[int] = list(ids)
        self.length = length
        self.min_blocks = min_blocks
        while len(self.ids) < min_blocks:
            self.ids.append(store.alloc())

    @classmethod
    def write_new(cls, store: BlockStore, records: Iterable[Any]) -> BlockRun:
        writer = RunWriter(store)
        writer.extend(records)
        return writer.close()

    def __len__(self) -> int:
        return self.length

    def __bool__(self) -> bool:
        return self.length > 0

    def iter_records(self) -> Iterator[Any]:
        for block_id in self.ids:
            yield from self.store.read(block_id)

    def load(self) -> list[Any]:
        return list(self.iter_records())

    def save(self, records: Sequence[Any]) -> None:
        b = self.store.block_size
        chunks = [records[i : i + b] for i in range(0, len(records), b)]
        while len(chunks) < self.min_blocks:
            chunks.append(())
        for surplus in self.ids[len(chunks) :]:
            self.store.free(surplus)
        del self.ids[len(chunks) :]
        while len(self.ids) < len(chunks):
            self.ids.append(self.store.alloc())
        for block_id, chunk in zip(self.ids, chunks):
            self.store.write(block_id, chunk)
        self.length = len(records)

    def free(self) -> None:
        for block_id in self.ids:
            self.store.free(block_id)
        self.ids = []
        self.length = 0

    def pin(self) -> None:
        for block_id in self.ids:
            self.store.pin(block_id)

    def unpin(self) -> None:
        for block_id in self.ids:
            self.store.unpin(block_id)


class RunWriter:
    """Append-only writer that emits a block each time ``B`` records accumulate."""

    def __init__(self, store: BlockStore) -> None:
        self.store = store
        self._ids: list[int] = []
        self._buffer: list[Any] = []
        self._count = 0

    def append(self, record: Any) -> None:
        self._buffer.append(record)
        self._count += 1
        if len(self._buffer) == self.store.block_size:
            self._spill()

    def extend(self, records: Iterable[Any]) -> None:
        for record in records:
            self.append(record)

    def __len__(self) -> int:
        return self._count

    def close(self) -> BlockRun:
        if self._buffer:
            self._spill()
        return BlockRun(self.store, self._ids, self._count)

    def _spill(self) -> None:
        block_id = self.store.alloc()
        self.store.write(block_id, self._buffer)
        self._ids.append(block_id)
        self._buffer = []
