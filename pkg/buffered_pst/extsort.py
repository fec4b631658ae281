from __future__ import annotations

import heapq
import logging
from typing import Any, Callable, Iterable

from .block_store import BlockRun, BlockStore, RunWriter

logger = logging.getLogger(__name__)


def merge_fan_in(store: BlockStore, memory: int) -> int:
    """One input frame per run plus one output frame."""
    return max(2, memory // store.block_size - 1)


def external_sort(
    store: BlockStore,
    records: Iterable[Any],
    key: Callable[[Any], Any],
    memory: int,
) -> BlockRun:
    """Multiway merge sort: M-record sorted runs, then (M/B - 1)-way merge passes."""
    runs: list[BlockRun] = []
    chunk: list[Any] = []
    for record in records:
        chunk.append(record)
        if len(chunk) == memory:
            chunk.sort(key=key)
            runs.append(BlockRun.write_new(store, chunk))
            chunk = []
    if chunk:
        chunk.sort(key=key)
        runs.append(BlockRun.write_new(store, chunk))
    if not runs:
        return BlockRun(store)

    fan_in = merge_fan_in(store, memory)
    passes = 0
    while len(runs) > 1:
        merged: list[BlockRun] = []
        for start in range(0, len(runs), fan_in):
            group = runs[start : start + fan_in]
            if len(group) == 1:
                merged.append(group[0])
                continue
            writer = RunWriter(store)
            writer.extend(heapq.merge(*(run.iter_records() for run in group), key=key))
            for run in group:
                run.free()
            merged.append(writer.close())
        runs = merged
        passes += 1
    logger.debug("external sort finished after %d merge pass(es)", passes)
    return runs[0]
