"""Child structure: static blocks plus two small update buffers.

The structure stores a set ``L`` of at most ``4 * B * delta`` points. ``L`` is
cut in x order into base blocks of ``B`` points. A horizontal sweep line then
moves upward; whenever two neighbouring groups hold exactly ``B`` points on or
above the line, they are fused into a new block holding just those points.
Every base block and every fused block is written once, and the catalog
lists them in creation order, so for any query floor the blocks that
partition the region just below the query are found from the catalog alone.

Updates are buffered in ``inserts``/``deletes`` (at most ``B`` each) and only
folded into ``L`` by a full rebuild when a buffer overflows.
"""

from __future__ import annotations

import heapq
import logging
from bisect import bisect_left, bisect_right
from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence

from .block_store import BlockRun, BlockStore
from .config import Config
from .errors import BatchTooLarge, CapacityExceeded
from .models import LOW, Point, QueryBounds, XKey, YKey, x_key, y_key
from .records import CatalogEntry, SampleEntry

logger = logging.getLogger(__name__)


@dataclass
class _Group:
    first: int
    last: int
    points: list[Point]


def fusion_sweep(
    bases: Sequence[Sequence[Point]], block_size: int
) -> list[tuple[int, int, YKey, list[Point]]]:
    """Fuse neighbouring groups bottom-up until a single group remains.

    Returns ``(first, last, level, points)`` per fused block in creation
    order. ``level`` is the lowest point of the fused block, which is the
    sweep height at which the two groups jointly hold exactly ``block_size``
    points.
    """
    groups = {
        gid: _Group(gid, gid, list(chunk)) for gid, chunk in enumerate(bases)
    }
    left: dict[int, int | None] = {gid: gid - 1 if gid else None for gid in groups}
    right: dict[int, int | None] = {
        gid: gid + 1 if gid + 1 < len(bases) else None for gid in groups
    }
    heap: list[tuple[YKey, int, int, int]] = []

    def schedule(a: int, b: int, floor: YKey) -> None:
        keys = sorted(
            y_key(p) for p in (*groups[a].points, *groups[b].points) if y_key(p) >= floor
        )
        level = keys[max(0, len(keys) - block_size)]
        heapq.heappush(heap, (level, groups[a].first, a, b))

    for gid in range(len(bases) - 1):
        schedule(gid, gid + 1, LOW)

    fused: list[tuple[int, int, YKey, list[Point]]] = []
    next_gid = len(bases)
    while heap:
        level, _, a, b = heapq.heappop(heap)
        if a not in groups or b not in groups or right[a] != b:
            continue
        ga, gb = groups.pop(a), groups.pop(b)
        points = [p for p in (*ga.points, *gb.points) if y_key(p) >= level]
        points.sort(key=x_key)
        gid = next_gid
        next_gid += 1
        groups[gid] = _Group(ga.first, gb.last, points)
        left[gid], right[gid] = left.pop(a), right.pop(b)
        del right[a], left[b]
        if left[gid] is not None:
            right[left[gid]] = gid
            schedule(left[gid], gid, level)
        if right[gid] is not None:
            left[right[gid]] = gid
            schedule(gid, right[gid], level)
        fused.append((ga.first, gb.last, level, points))
    return fused


class ChildStructure:
    def __init__(
        self,
        store: BlockStore,
        cfg: Config,
        catalog: BlockRun | None = None,
        samples: BlockRun | None = None,
        inserts: BlockRun | None = None,
        deletes: BlockRun | None = None,
    ) -> None:
        self.store = store
        self.cfg = cfg
        self.catalog = catalog if catalog is not None else BlockRun(store)
        self.samples = samples if samples is not None else BlockRun(store)
        self.inserts = inserts if inserts is not None else BlockRun(store)
        self.deletes = deletes if deletes is not None else BlockRun(store)
        self.rebuilds = 0

    @classmethod
    def build(cls, store: BlockStore, cfg: Config, points: Iterable[Point]) -> ChildStructure:
        structure = cls(store, cfg)
        structure._rebuild(points)
        return structure

    # -- construction -----------------------------------------------------

    def _rebuild(self, points: Iterable[Point]) -> None:
        pts = list(points)
        capacity = self.cfg.child_capacity
        if len(pts) > capacity:
            raise CapacityExceeded(f"{len(pts)} points exceed child capacity {capacity}")
        for a, b in zip(pts, pts[1:]):
            if x_key(a) >= x_key(b):
                raise ValueError(f"points must be strictly increasing in x order at {a!r}")

        self._free_layout()
        b = self.cfg.block_size
        bases = [pts[i : i + b] for i in range(0, len(pts), b)]
        entries: list[CatalogEntry] = []
        for t, chunk in enumerate(bases):
            block = self.store.alloc()
            self.store.write(block, chunk)
            entries.append(
                CatalogEntry(
                    block=block,
                    first=t,
                    last=t,
                    min_x=x_key(chunk[0]),
                    max_x=x_key(chunk[-1]),
                    min_y=min(y_key(p) for p in chunk),
                    count=len(chunk),
                    fused=False,
                )
            )
        for first, last, level, fused_points in fusion_sweep(bases, b):
            block = self.store.alloc()
            self.store.write(block, fused_points)
            entries.append(
                CatalogEntry(
                    block=block,
                    first=first,
                    last=last,
                    min_x=entries[first].min_x,
                    max_x=entries[last].max_x,
                    min_y=level,
                    count=len(fused_points),
                    fused=True,
                )
            )
        self.catalog.save(entries)
        self.samples.save(self._sample_entries(bases))
        self.inserts.save([])
        self.deletes.save([])

    def _sample_entries(self, bases: Sequence[Sequence[Point]]) -> list[SampleEntry]:
        out: list[SampleEntry] = []
        for t, chunk in enumerate(bases):
            desc = sorted((y_key(p) for p in chunk), reverse=True)
            for i in range(1, self.cfg.samples_per_block + 1):
                rank = self.cfg.stride_times(i)
                if rank > len(desc):
                    break
                out.append(SampleEntry(t, desc[rank - 1]))
        return out

    def _free_layout(self) -> None:
        for entry in self.catalog.load():
            self.store.free(entry.block)
        self.catalog.save([])
        self.samples.save([])

    def free(self) -> None:
        for entry in self.catalog.load():
            self.store.free(entry.block)
        for run in (self.catalog, self.samples, self.inserts, self.deletes):
            run.free()

    # -- updates ----------------------------------------------------------

    def insert_batch(self, points: Iterable[Point]) -> None:
        self._apply(points, insert=True)

    def delete_batch(self, points: Iterable[Point]) -> None:
        self._apply(points, insert=False)

    def _apply(self, points: Iterable[Point], insert: bool) -> None:
        batch = list(points)
        if len(batch) > self.cfg.block_size:
            raise BatchTooLarge(
                f"batch of {len(batch)} exceeds block size {self.cfg.block_size}"
            )
        if not batch:
            return
        ins = {x_key(p): p for p in self.inserts.load()}
        dels = {x_key(p): p for p in self.deletes.load()}
        target = ins if insert else dels
        for p in batch:
            key = x_key(p)
            ins.pop(key, None)
            dels.pop(key, None)
            target[key] = p
        if len(ins) > self.cfg.block_size or len(dels) > self.cfg.block_size:
            self._rebuild(self._live_stream(ins, dels))
            self.rebuilds += 1
            logger.debug("child structure rebuilt (rebuild #%d)", self.rebuilds)
            return
        self.inserts.save(sorted(ins.values(), key=x_key))
        self.deletes.save(sorted(dels.values(), key=x_key))

    # -- queries ----------------------------------------------------------

    def live_points(self) -> Iterator[Point]:
        ins = {x_key(p): p for p in self.inserts.load()}
        dels = {x_key(p): p for p in self.deletes.load()}
        return self._live_stream(ins, dels)

    def _live_stream(
        self, ins: dict[XKey, Point], dels: dict[XKey, Point]
    ) -> Iterator[Point]:
        drop = ins.keys() | dels.keys()
        bases = [e for e in self.catalog.load() if not e.fused]
        stream = (
            p for e in bases for p in self.store.read(e.block) if x_key(p) not in drop
        )
        return heapq.merge(stream, sorted(ins.values(), key=x_key), key=x_key)

    def covering_entries(
        self, bounds: QueryBounds, entries: Sequence[CatalogEntry] | None = None
    ) -> list[CatalogEntry]:
        """Blocks partitioning the sweep state at ``bounds.floor`` that meet the x-range."""
        if entries is None:
            entries = self.catalog.load()
        bases = [e for e in entries if not e.fused]
        if not bases:
            return []
        segments = list(bases)
        for entry in entries:
            if entry.fused and entry.min_y <= bounds.floor:
                segments = [
                    s for s in segments if s.last < entry.first or s.first > entry.last
                ]
                segments.append(entry)
        segments.sort(key=lambda s: s.first)
        i_lo = bisect_left([e.max_x for e in bases], bounds.lo)
        i_hi = bisect_right([e.min_x for e in bases], bounds.hi) - 1
        if i_lo > i_hi:
            return []
        return [s for s in segments if s.last >= i_lo and s.first <= i_hi]

    def report(self, bounds: QueryBounds) -> list[Point]:
        found: dict[XKey, Point] = {}
        for entry in self.covering_entries(bounds):
            for p in self.store.read(entry.block):
                if bounds.contains(p):
                    found[x_key(p)] = p
        for p in self.deletes.load():
            found.pop(x_key(p), None)
        for p in self.inserts.load():
            if bounds.contains(p):
                found[x_key(p)] = p
        return list(found.values())

    def _span(self, bases: Sequence[CatalogEntry], lo: XKey, hi: XKey) -> tuple[int, int]:
        i = bisect_right([e.min_x for e in bases], lo) - 1
        j = bisect_left([e.max_x for e in bases], hi)
        return i, j

    def sample(self, lo: XKey, hi: XKey) -> list[YKey]:
        """Decreasing y-values; the s-th has between sB and (s+alpha)B live points above it."""
        bases = [e for e in self.catalog.load() if not e.fused]
        i, j = self._span(bases, lo, hi)
        if j - i < 2:
            return []
        keys = sorted(
            (s.key for s in self.samples.load() if i < s.block_index < j), reverse=True
        )
        out: list[YKey] = []
        s = 1
        while (rank := self.cfg.rank_step(s + 1)) <= len(keys):
            out.append(keys[rank - 1])
            s += 1
        return out

    def sample_alpha(self, lo: XKey, hi: XKey) -> int:
        bases = [e for e in self.catalog.load() if not e.fused]
        i, j = self._span(bases, lo, hi)
        b = self.cfg.block_size
        slack = -(-(self.cfg.stride_times(j - i) + 3 * b) // b)
        return max(self.cfg.alpha, slack)

    # -- introspection ----------------------------------------------------

    def base_count(self) -> int:
        return sum(1 for e in self.catalog.load() if not e.fused)

    def fused_ranges(self) -> list[tuple[int, int]]:
        return [(e.first, e.last) for e in self.catalog.load() if e.fused]

    def layout(self) -> tuple[list[list[Point]], list[tuple[CatalogEntry, list[Point]]]]:
        entries = self.catalog.load()
        bases = [list(self.store.read(e.block)) for e in entries if not e.fused]
        fused = [(e, list(self.store.read(e.block))) for e in entries if e.fused]
        return bases, fused

    def bookkeeping_blocks(self) -> int:
        return sum(
            len(run.ids) for run in (self.catalog, self.samples, self.inserts, self.deletes)
        )

    def check(self) -> list[str]:
        problems: list[str] = []
        b = self.cfg.block_size
        entries = self.catalog.load()
        bases, fused = self.layout()
        flat = [p for chunk in bases for p in chunk]
        if any(x_key(p) >= x_key(q) for p, q in zip(flat, flat[1:])):
            problems.append("base blocks are not strictly increasing in x order")
        for t, chunk in enumerate(bases):
            if not chunk or len(chunk) > b or (t < len(bases) - 1 and len(chunk) != b):
                problems.append(f"base block {t} holds {len(chunk)} points")
        if len(fused) > max(0, len(bases) - 1):
            problems.append(f"{len(fused)} fused blocks for {len(bases)} base blocks")
        for entry, points in fused:
            if len(points) != min(b, len(flat)) or entry.count != len(points):
                problems.append(f"fused block {entry.first}..{entry.last} holds {len(points)}")
        for entry in entries:
            if entry.fused:
                continue
            chunk = bases[entry.first]
            if chunk and (entry.min_x, entry.max_x) != (x_key(chunk[0]), x_key(chunk[-1])):
                problems.append(f"catalog x-range of base block {entry.first} is stale")
        if self.samples.load() != self._sample_entries(bases):
            problems.append("sample entries do not match base blocks")
        ins = {x_key(p) for p in self.inserts.load()}
        dels = {x_key(p) for p in self.deletes.load()}
        if len(ins) > b or len(dels) > b:
            problems.append(f"update buffers hold {len(ins)}/{len(dels)} points")
        if ins & dels:
            problems.append("a point is buffered as both insertion and deletion")
        return problems
