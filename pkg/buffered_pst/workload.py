"""Line-oriented workload files.

One operation per line::

    I x y          insert
    D x y          delete
    R x1 x2 y      report [x1, x2] x [y, inf)
    T x1 x2 k      k highest points with x in [x1, x2]
    CHECK          run the invariant walker
    STATS          snapshot the IO counters

Blank lines and ``#`` comments are ignored. Coordinates are signed 64-bit
integers.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .errors import ParseError
from .models import INT64_MAX, INT64_MIN, Point, ThreeSidedQuery, TopKQuery

OP_ARITY = {"I": 2, "D": 2, "R": 3, "T": 3, "CHECK": 0, "STATS": 0}
DEFAULT_MIX = {"I": 0.50, "D": 0.25, "R": 0.15, "T": 0.10}


@dataclass(frozen=True)
class WorkloadOp:
    kind: str
    args: tuple[int, ...] = ()
    line_no: int = 0

    @property
    def point(self) -> Point:
        return Point(self.args[0], self.args[1])

    def three_sided(self) -> ThreeSidedQuery:
        return ThreeSidedQuery(*self.args)

    def top_k(self) -> TopKQuery:
        return TopKQuery(*self.args)

    def render(self) -> str:
        return " ".join([self.kind, *map(str, self.args)])


def _parse_int(token: str, line_no: int) -> int:
    try:
        value = int(token)
    except ValueError:
        raise ParseError(line_no, f"expected an integer, got {token!r}") from None
    if not (INT64_MIN <= value <= INT64_MAX):
        raise ParseError(line_no, f"{value} does not fit in a signed 64-bit integer")
    return value


def parse_line(line: str, line_no: int) -> WorkloadOp | None:
    text = line.split("#", 1)[0].strip()
    if not text:
        return None
    kind, *tokens = text.split()
    kind = kind.upper()
    arity = OP_ARITY.get(kind)
    if arity is None:
        raise ParseError(line_no, f"unknown operation {kind!r}")
    if len(tokens) != arity:
        raise ParseError(line_no, f"{kind} takes {arity} arguments, got {len(tokens)}")
    args = tuple(_parse_int(t, line_no) for t in tokens)
    if kind in ("R", "T") and args[0] > args[1]:
        raise ParseError(line_no, f"x1={args[0]} exceeds x2={args[1]}")
    if kind == "T" and args[2] < 0:
        raise ParseError(line_no, f"k must be non-negative, got {args[2]}")
    return WorkloadOp(kind, args, line_no)


def iter_workload(lines: Iterable[str]) -> Iterator[WorkloadOp]:
    for line_no, line in enumerate(lines, start=1):
        op = parse_line(line, line_no)
        if op is not None:
            yield op


def parse_workload(text: str) -> list[WorkloadOp]:
    return list(iter_workload(text.splitlines()))


def read_workload(path: Path) -> list[WorkloadOp]:
    return parse_workload(path.read_text(encoding="ascii"))


def render_workload(ops: Iterable[WorkloadOp]) -> str:
    return "".join(op.render() + "\n" for op in ops)


def generate_workload(
    ops: int,
    seed: int = 0,
    coord_range: int = 1 << 20,
    check_every: int = 0,
    stats_every: int = 0,
    mix: dict[str, float] | None = None,
    delete_hit_rate: float = 0.9,
) -> list[WorkloadOp]:
    """Seeded random trace over a bounded coordinate square.

    Deletions target a live point with probability ``delete_hit_rate``;
    the rest name a random (probably absent) point. Query ranges and k are
    drawn so answers are neither always empty nor the whole set.
    """
    rng = np.random.default_rng(seed)
    weights = mix or DEFAULT_MIX
    kinds = list(weights)
    probs = np.array([weights[k] for k in kinds], dtype=float)
    probs /= probs.sum()
    live: list[tuple[int, int]] = []
    slot: dict[tuple[int, int], int] = {}
    out: list[WorkloadOp] = []

    def forget(key: tuple[int, int]) -> None:
        idx = slot.pop(key, None)
        if idx is None:
            return
        last = live.pop()
        if idx < len(live):
            live[idx] = last
            slot[last] = idx

    def coord() -> int:
        return int(rng.integers(0, coord_range))

    def x_range() -> tuple[int, int]:
        width = int(rng.integers(0, coord_range)) // max(1, int(rng.integers(1, 64)))
        x1 = int(rng.integers(0, coord_range))
        return x1, x1 + width

    for index, choice in enumerate(rng.choice(len(kinds), size=ops, p=probs), start=1):
        kind = kinds[int(choice)]
        if kind == "I":
            x, y = coord(), coord()
            if (x, y) not in slot:
                slot[x, y] = len(live)
                live.append((x, y))
            out.append(WorkloadOp("I", (x, y)))
        elif kind == "D":
            if live and rng.random() < delete_hit_rate:
                x, y = live[int(rng.integers(0, len(live)))]
            else:
                x, y = coord(), coord()
            forget((x, y))
            out.append(WorkloadOp("D", (x, y)))
        elif kind == "R":
            x1, x2 = x_range()
            y = int(coord_range - rng.integers(0, coord_range) // int(rng.integers(1, 32)))
            out.append(WorkloadOp("R", (x1, x2, y)))
        else:
            x1, x2 = x_range()
            k = int(rng.integers(0, 4 * int(rng.integers(1, 64))))
            out.append(WorkloadOp("T", (x1, x2, k)))
        if check_every and index % check_every == 0:
            out.append(WorkloadOp("CHECK"))
        if stats_every and index % stats_every == 0:
            out.append(WorkloadOp("STATS"))
    return [WorkloadOp(op.kind, op.args, n) for n, op in enumerate(out, start=1)]
