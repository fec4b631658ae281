"""Fixed-size records that share blocks with points.

A block holds records of exactly one kind. Node header blocks hold
``ChildSlot`` records, child-structure catalogs hold ``CatalogEntry``
records, and sample runs hold ``SampleEntry`` records. ``DirEntry``,
``TreeMeta`` and ``ConfigRecord`` only exist inside saved block files.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum

from .models import Point, XKey, YKey


@dataclass(frozen=True)
class ChildSlot:
    child: int
    upper: XKey
    min_y: YKey | None
    size: int


@dataclass(frozen=True)
class CatalogEntry:
    block: int
    first: int
    last: int
    min_x: XKey
    max_x: XKey
    min_y: YKey
    count: int
    fused: bool


@dataclass(frozen=True)
class SampleEntry:
    block_index: int
    key: YKey


class Role(IntEnum):
    NODE = 0
    HEADER = 1
    POINTS = 2
    INSERTS = 3
    DELETES = 4
    CATALOG = 5
    SAMPLES = 6
    CS_INSERTS = 7
    CS_DELETES = 8


@dataclass(frozen=True)
class DirEntry:
    owner: int
    role: Role
    block: int
    ordinal: int


@dataclass(frozen=True)
class TreeMeta:
    root: int
    directory_first: int
    directory_blocks: int
    n_bar: int
    updates_in_epoch: int


@dataclass(frozen=True)
class ConfigRecord:
    block_size: int
    epsilon_num: int
    epsilon_den: int
    memory: int
    alpha: int
    payload_size: int


@dataclass(frozen=True)
class PendingUpdate:
    """A buffered update travelling down during a global rebuild."""

    point: Point
    insert: bool
