"""EMPST1 block files.

Layout, little endian::

    header   magic "EMPST1" | u32 B | u32 record_size | u64 next_id | u64 block_count
    block    u64 id | u32 len | B record slots of record_size bytes
    record   u8 tag | u8 flags | u16 pad | 12 x i64 | payload_size bytes

The first block in the file is the superblock holding ``TreeMeta`` and
``ConfigRecord``. Directory blocks (one ``DirEntry`` per node block) get ids
from ``next_id`` upward and only exist inside the file.
"""

from __future__ import annotations

import logging
import struct
from fractions import Fraction
from pathlib import Path
from typing import Any, Iterator

from .block_store import BlockRun, BlockStore
from .child_structure import ChildStructure
from .config import Config, validate_config
from .errors import InvalidConfig, PersistenceError
from .models import HIGH, Point
from .nodes import PstNode
from .pst import Epoch, PrioritySearchTree
from .records import (
    CatalogEntry,
    ChildSlot,
    ConfigRecord,
    DirEntry,
    PendingUpdate,
    Role,
    SampleEntry,
    TreeMeta,
)

logger = logging.getLogger(__name__)

MAGIC = b"EMPST1"
FILE_HEADER = struct.Struct("<6sIIQQ")
BLOCK_HEADER = struct.Struct("<QI")
RECORD_HEAD = struct.Struct("<BBH")
RECORD_BODY = struct.Struct("<12q")

TAG_POINT = 1
TAG_SLOT = 2
TAG_CATALOG = 3
TAG_SAMPLE = 4
TAG_DIR = 5
TAG_META = 6
TAG_CONFIG = 7
TAG_PENDING = 8

FLAG_UPPER_INFINITE = 1
FLAG_NO_MIN_Y = 2
FLAG_FUSED = 4
FLAG_INSERT = 8


def record_size(payload_size: int) -> int:
    return RECORD_HEAD.size + RECORD_BODY.size + payload_size


class RecordCodec:
    def __init__(self, payload_size: int) -> None:
        self.payload_size = payload_size
        self.size = record_size(payload_size)

    def _pack(self, tag: int, flags: int, fields: list[int], payload: bytes = b"") -> bytes:
        body = fields + [0] * (12 - len(fields))
        try:
            packed = RECORD_HEAD.pack(tag, flags, 0) + RECORD_BODY.pack(*body)
        except struct.error as exc:
            raise PersistenceError(f"record field out of int64 range: {fields}") from exc
        return packed + payload.ljust(self.payload_size, b"\0")

    def _point_fields(self, p: Point) -> tuple[list[int], bytes]:
        if len(p.payload) > self.payload_size:
            raise PersistenceError(
                f"payload of ({p.x}, {p.y}) is {len(p.payload)} bytes, limit {self.payload_size}"
            )
        return [p.x, p.y, len(p.payload)], p.payload

    def encode(self, record: Any) -> bytes:
        if isinstance(record, Point):
            fields, payload = self._point_fields(record)
            return self._pack(TAG_POINT, 0, fields, payload)
        if isinstance(record, PendingUpdate):
            fields, payload = self._point_fields(record.point)
            return self._pack(TAG_PENDING, FLAG_INSERT if record.insert else 0, fields, payload)
        if isinstance(record, ChildSlot):
            flags = 0
            upper = [0, 0]
            if record.upper == HIGH:
                flags |= FLAG_UPPER_INFINITE
            else:
                upper = list(record.upper)
            min_y = [0, 0]
            if record.min_y is None:
                flags |= FLAG_NO_MIN_Y
            else:
                min_y = list(record.min_y)
            return self._pack(TAG_SLOT, flags, [record.child, *upper, *min_y, record.size])
        if isinstance(record, CatalogEntry):
            return self._pack(
                TAG_CATALOG,
                FLAG_FUSED if record.fused else 0,
                [
                    record.block,
                    record.first,
                    record.last,
                    *record.min_x,
                    *record.max_x,
                    *record.min_y,
                    record.count,
                ],
            )
        if isinstance(record, SampleEntry):
            return self._pack(TAG_SAMPLE, 0, [record.block_index, *record.key])
        if isinstance(record, DirEntry):
            return self._pack(
                TAG_DIR, 0, [record.owner, int(record.role), record.block, record.ordinal]
            )
        if isinstance(record, TreeMeta):
            return self._pack(
                TAG_META,
                0,
                [
                    record.root,
                    record.directory_first,
                    record.directory_blocks,
                    record.n_bar,
                    record.updates_in_epoch,
                ],
            )
        if isinstance(record, ConfigRecord):
            return self._pack(
                TAG_CONFIG,
                0,
                [
                    record.block_size,
                    record.epsilon_num,
                    record.epsilon_den,
                    record.memory,
                    record.alpha,
                    record.payload_size,
                ],
            )
        raise PersistenceError(f"cannot encode {type(record).__name__}")

    def decode(self, raw: bytes) -> Any:
        tag, flags, _ = RECORD_HEAD.unpack_from(raw, 0)
        f = RECORD_BODY.unpack_from(raw, RECORD_HEAD.size)
        payload_at = RECORD_HEAD.size + RECORD_BODY.size
        if tag in (TAG_POINT, TAG_PENDING):
            if f[2] > self.payload_size:
                raise PersistenceError(f"point payload length {f[2]} exceeds {self.payload_size}")
            point = Point(f[0], f[1], bytes(raw[payload_at : payload_at + f[2]]))
            if tag == TAG_POINT:
                return point
            return PendingUpdate(point, bool(flags & FLAG_INSERT))
        if tag == TAG_SLOT:
            upper = HIGH if flags & FLAG_UPPER_INFINITE else (f[1], f[2])
            min_y = None if flags & FLAG_NO_MIN_Y else (f[3], f[4])
            return ChildSlot(child=f[0], upper=upper, min_y=min_y, size=f[5])
        if tag == TAG_CATALOG:
            return CatalogEntry(
                block=f[0],
                first=f[1],
                last=f[2],
                min_x=(f[3], f[4]),
                max_x=(f[5], f[6]),
                min_y=(f[7], f[8]),
                count=f[9],
                fused=bool(flags & FLAG_FUSED),
            )
        if tag == TAG_SAMPLE:
            return SampleEntry(block_index=f[0], key=(f[1], f[2]))
        if tag == TAG_DIR:
            return DirEntry(owner=f[0], role=Role(f[1]), block=f[2], ordinal=f[3])
        if tag == TAG_META:
            return TreeMeta(*f[:5])
        if tag == TAG_CONFIG:
            return ConfigRecord(*f[:6])
        raise PersistenceError(f"unknown record tag {tag}")


def write_block_file(
    path: Path,
    block_size: int,
    payload_size: int,
    next_id: int,
    blocks: list[tuple[int, tuple[Any, ...]]],
) -> None:
    codec = RecordCodec(payload_size)
    empty = b"\0" * codec.size
    with path.open("wb") as fh:
        fh.write(FILE_HEADER.pack(MAGIC, block_size, codec.size, next_id, len(blocks)))
        for block_id, records in blocks:
            fh.write(BLOCK_HEADER.pack(block_id, len(records)))
            for record in records:
                fh.write(codec.encode(record))
            fh.write(empty * (block_size - len(records)))


def read_block_file(path: Path) -> tuple[int, int, int, list[tuple[int, tuple[Any, ...]]]]:
    """Returns (block_size, payload_size, next_id, blocks)."""
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise PersistenceError(f"cannot read {path}: {exc}") from exc
    if len(data) < FILE_HEADER.size:
        raise PersistenceError(f"{path}: truncated header")
    magic, block_size, rec_size, next_id, count = FILE_HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise PersistenceError(f"{path}: bad magic {magic!r}")
    payload_size = rec_size - record_size(0)
    if payload_size < 0 or block_size < 1:
        raise PersistenceError(f"{path}: bad record size {rec_size} or block size {block_size}")
    codec = RecordCodec(payload_size)
    stride = BLOCK_HEADER.size + block_size * rec_size
    if len(data) != FILE_HEADER.size + count * stride:
        raise PersistenceError(f"{path}: expected {count} blocks, file size disagrees")

    def blocks() -> Iterator[tuple[int, tuple[Any, ...]]]:
        offset = FILE_HEADER.size
        for _ in range(count):
            block_id, length = BLOCK_HEADER.unpack_from(data, offset)
            if length > block_size:
                raise PersistenceError(f"{path}: block {block_id} claims {length} records")
            start = offset + BLOCK_HEADER.size
            yield block_id, tuple(
                codec.decode(data[start + i * rec_size : start + (i + 1) * rec_size])
                for i in range(length)
            )
            offset += stride

    return block_size, payload_size, next_id, list(blocks())


def _directory(tree: PrioritySearchTree) -> list[DirEntry]:
    entries: list[DirEntry] = []
    for node_id in sorted(tree.nodes):
        node = tree.nodes[node_id]
        entries.append(DirEntry(node_id, Role.NODE, node_id, int(node.is_leaf)))
        runs = [
            (Role.HEADER, node.header),
            (Role.POINTS, node.points),
            (Role.INSERTS, node.inserts),
            (Role.DELETES, node.deletes),
        ]
        if node.cstruct is not None:
            cs = node.cstruct
            runs += [
                (Role.CATALOG, cs.catalog),
                (Role.SAMPLES, cs.samples),
                (Role.CS_INSERTS, cs.inserts),
                (Role.CS_DELETES, cs.deletes),
            ]
        for role, run in runs:
            entries.extend(DirEntry(node_id, role, block, i) for i, block in enumerate(run.ids))
    return entries


def save_tree(tree: PrioritySearchTree, path: Path) -> None:
    store, cfg = tree.store, tree.cfg
    store.flush_all()
    directory = _directory(tree)
    b = cfg.block_size
    first = store.next_id
    dir_blocks = [
        (first + i, tuple(directory[start : start + b]))
        for i, start in enumerate(range(0, len(directory), b))
    ]
    meta = TreeMeta(
        root=tree.root_id,
        directory_first=first,
        directory_blocks=len(dir_blocks),
        n_bar=tree.epoch.n_bar,
        updates_in_epoch=tree.epoch.updates,
    )
    config = ConfigRecord(
        block_size=b,
        epsilon_num=cfg.epsilon.numerator,
        epsilon_den=cfg.epsilon.denominator,
        memory=cfg.memory,
        alpha=cfg.alpha,
        payload_size=cfg.payload_size,
    )
    blocks = [(tree.superblock, (meta, config))]
    blocks += [(i, records) for i, records in store.iter_blocks() if i != tree.superblock]
    write_block_file(path, b, cfg.payload_size, first + len(dir_blocks), blocks + dir_blocks)
    logger.debug("saved %d blocks (%d directory) to %s", len(blocks), len(dir_blocks), path)


def load_tree(
    path: Path, cfg: Config | None = None, *, memory: int | None = None
) -> PrioritySearchTree:
    """Read a tree back; ``memory`` (or ``cfg.memory``) replaces the saved M."""
    block_size, payload_size, next_id, blocks = read_block_file(path)
    if not blocks:
        raise PersistenceError(f"{path}: no blocks")
    by_id = dict(blocks)
    superblock = blocks[0][0]
    head = by_id[superblock]
    if len(head) != 2 or not isinstance(head[0], TreeMeta) or not isinstance(head[1], ConfigRecord):
        raise PersistenceError(f"{path}: block {superblock} is not a superblock")
    meta, stored = head
    if cfg is not None and cfg.block_size != stored.block_size:
        raise InvalidConfig(
            f"{path} was written with block size {stored.block_size}, not {cfg.block_size}"
        )
    if stored.block_size != block_size or stored.payload_size != payload_size:
        raise PersistenceError(f"{path}: superblock disagrees with file header")
    config = validate_config(
        Config(
            block_size=stored.block_size,
            epsilon=Fraction(stored.epsilon_num, stored.epsilon_den),
            memory=memory or (cfg.memory if cfg is not None else stored.memory),
            alpha=stored.alpha,
            payload_size=stored.payload_size,
        )
    )

    dir_ids = range(meta.directory_first, meta.directory_first + meta.directory_blocks)
    directory = [entry for block_id in dir_ids for entry in by_id.get(block_id, ())]
    if len(directory) == 0 or not all(isinstance(e, DirEntry) for e in directory):
        raise PersistenceError(f"{path}: directory blocks are missing or damaged")

    store = BlockStore(config.block_size, config.memory)
    store.restore(
        next_id,
        ((i, () if i == superblock else r) for i, r in blocks if i not in dir_ids),
    )

    owned: dict[int, dict[Role, list[DirEntry]]] = {}
    for entry in directory:
        owned.setdefault(entry.owner, {}).setdefault(entry.role, []).append(entry)

    def run(entries: dict[Role, list[DirEntry]], role: Role, min_blocks: int = 0) -> BlockRun:
        ids = [e.block for e in sorted(entries.get(role, []), key=lambda e: e.ordinal)]
        length = sum(len(by_id[i]) for i in ids)
        return BlockRun(store, ids, length, min_blocks=min_blocks)

    nodes: dict[int, PstNode] = {}
    for owner, entries in owned.items():
        is_leaf = bool(entries[Role.NODE][0].ordinal)
        node = PstNode(
            node_id=owner,
            is_leaf=is_leaf,
            header=run(entries, Role.HEADER, min_blocks=1),
            points=run(entries, Role.POINTS),
            inserts=run(entries, Role.INSERTS),
            deletes=run(entries, Role.DELETES),
        )
        if not is_leaf:
            node.cstruct = ChildStructure(
                store,
                config,
                catalog=run(entries, Role.CATALOG),
                samples=run(entries, Role.SAMPLES),
                inserts=run(entries, Role.CS_INSERTS),
                deletes=run(entries, Role.CS_DELETES),
            )
        nodes[owner] = node
    if meta.root not in nodes:
        raise PersistenceError(f"{path}: root node {meta.root} missing from directory")
    epoch = Epoch(meta.n_bar, meta.updates_in_epoch)
    return PrioritySearchTree.attach(config, store, superblock, nodes, meta.root, epoch)
