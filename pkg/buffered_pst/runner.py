"""Workload execution with per-operation IO attribution.

In lockstep mode every operation is mirrored on an ``OracleSet`` and query
answers are compared as multisets. The first divergence is shrunk to the
shortest diverging prefix of the trace by binary search, and chunks of that
prefix are then dropped while the rest still diverges. Every candidate is
replayed against a fresh structure.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from datetime import UTC, datetime
from pathlib import Path
from typing import Any, Callable, Sequence
from uuid import uuid4

from .block_store import IOStats
from .config import Config
from .errors import DivergenceError, InvariantViolation
from .invariants import check_tree
from .models import Point
from .oracle import OracleSet
from .pst import PrioritySearchTree
from .workload import WorkloadOp

logger = logging.getLogger(__name__)

LOG_ROLL_BYTES = 1_000_000
MAX_REDUCE_OPS = 2_000

TreeFactory = Callable[[], PrioritySearchTree]


def utc_now_iso() -> str:
    return datetime.now(tz=UTC).isoformat()


def _roll_if_needed(path: Path, max_bytes: int = LOG_ROLL_BYTES) -> None:
    if not path.exists():
        return
    if path.stat().st_size <= max_bytes:
        return
    stamp = datetime.now(tz=UTC).strftime("%Y%m%dT%H%M%SZ")
    path.rename(path.with_suffix(f"{path.suffix}.{stamp}"))


def _append_jsonl(path: Path, record: dict[str, Any]) -> None:
    _roll_if_needed(path)
    with path.open("a", encoding="utf-8") as f:
        f.write(json.dumps(record, ensure_ascii=True, default=str) + "\n")


class EventLog:
    """Structured run events, one JSON object per line. A log without a path drops events."""

    def __init__(self, path: Path | None = None, run_id: str | None = None) -> None:
        self.path = path
        self.run_id = run_id or uuid4().hex
        if path is not None:
            path.parent.mkdir(parents=True, exist_ok=True)

    def log_event(self, record_type: str, **payload: Any) -> None:
        if self.path is None:
            return
        record = {
            "timestamp": utc_now_iso(),
            "type": record_type,
            "run_id": self.run_id,
            **payload,
        }
        _append_jsonl(self.path, record)


def _pairs(points: Sequence[Point]) -> list[tuple[int, int]]:
    return sorted(p.as_pair() for p in points)


@dataclass
class OpOutcome:
    index: int
    line_no: int
    op: str
    reads: int = 0
    writes: int = 0
    count: int | None = None
    points: list[tuple[int, int]] | None = None
    problems: list[str] | None = None
    stats: dict[str, int] | None = None

    def as_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "index": self.index,
            "line": self.line_no,
            "op": self.op,
            "reads": self.reads,
            "writes": self.writes,
        }
        for name in ("count", "points", "problems", "stats"):
            value = getattr(self, name)
            if value is not None:
                out[name] = value
        return out


@dataclass
class RunReport:
    config: dict[str, Any]
    outcomes: list[OpOutcome] = field(default_factory=list)
    totals: IOStats = field(default_factory=IOStats)
    checks: int = 0
    final_size: int = 0
    rebuilds: int = 0
    oracle: bool = False
    wall_time: float = 0.0

    def to_dict(self, include_timing: bool = False) -> dict[str, Any]:
        out: dict[str, Any] = {
            "config": self.config,
            "oracle": self.oracle,
            "ops": [o.as_dict() for o in self.outcomes],
            "totals": self.totals.as_dict(),
            "checks": self.checks,
            "final_size": self.final_size,
            "rebuilds": self.rebuilds,
        }
        if include_timing:
            out["wall_time_s"] = round(self.wall_time, 6)
        return out

    def to_json(self, include_timing: bool = False) -> str:
        return json.dumps(self.to_dict(include_timing), indent=2, sort_keys=True) + "\n"


class _Divergence(Exception):
    def __init__(self, index: int, expected: Any, actual: Any) -> None:
        super().__init__(index)
        self.index = index
        self.expected = expected
        self.actual = actual


class WorkloadRunner:
    def __init__(
        self,
        make_tree: TreeFactory,
        *,
        oracle: bool = False,
        check_every: int = 0,
        list_points: bool = False,
        events: EventLog | None = None,
    ) -> None:
        self.make_tree = make_tree
        self.use_oracle = oracle
        self.check_every = check_every
        self.list_points = list_points
        self.events = events or EventLog()
        self.tree: PrioritySearchTree | None = None

    def run(self, ops: Sequence[WorkloadOp]) -> RunReport:
        started = time.perf_counter()
        tree = self.tree = self.make_tree()
        oracle = OracleSet(tree.live_points()) if self.use_oracle else None
        report = RunReport(config=tree.cfg.as_dict(), oracle=self.use_oracle)
        self.events.log_event(
            "run_started", ops=len(ops), oracle=self.use_oracle, config=report.config
        )
        base = tree.stats()
        for index, op in enumerate(ops):
            try:
                outcome = self._apply(tree, oracle, index, op)
            except _Divergence as div:
                raise self._shrink(ops, div) from None
            except Exception as exc:
                self.events.log_event("op_failed", index=index, line=op.line_no, error=str(exc))
                raise
            if outcome.problems is not None:
                report.checks += 1
            report.outcomes.append(outcome)
            if self.check_every and (index + 1) % self.check_every == 0 and op.kind != "CHECK":
                self._check(tree, index, op)
                report.checks += 1
        report.totals = tree.stats() - base
        report.final_size = len(tree.live_points())
        report.rebuilds = tree.rebuilds
        report.wall_time = time.perf_counter() - started
        self.events.log_event(
            "run_completed",
            ops=len(ops),
            checks=report.checks,
            final_size=report.final_size,
            **report.totals.as_dict(),
        )
        return report

    def _check(self, tree: PrioritySearchTree, index: int, op: WorkloadOp) -> list[str]:
        problems = check_tree(tree)
        self.events.log_event("check_completed", index=index, line=op.line_no, problems=problems)
        if problems:
            where = f"after op {index} (line {op.line_no})"
            raise InvariantViolation([f"{where}: {p}" for p in problems])
        return problems

    def _apply(
        self,
        tree: PrioritySearchTree,
        oracle: OracleSet | None,
        index: int,
        op: WorkloadOp,
    ) -> OpOutcome:
        before = tree.stats()
        outcome = OpOutcome(index=index, line_no=op.line_no, op=op.render())
        if op.kind == "I":
            tree.insert(op.point)
            if oracle is not None:
                oracle.o_insert(op.point)
        elif op.kind == "D":
            tree.delete(op.point)
            if oracle is not None:
                oracle.o_delete(op.point)
        elif op.kind in ("R", "T"):
            expected: list[tuple[int, int]] | None = None
            if op.kind == "R":
                actual = _pairs(tree.report_3sided(op.three_sided()))
                if oracle is not None:
                    expected = _pairs(oracle.o_report(op.three_sided()))
            else:
                actual = _pairs(tree.top_k(op.top_k()))
                if oracle is not None:
                    expected = _pairs(oracle.o_topk(op.top_k()))
            if expected is not None and actual != expected:
                raise _Divergence(index, expected, actual)
            outcome.count = len(actual)
            if self.list_points:
                outcome.points = actual
        elif op.kind == "CHECK":
            outcome.problems = self._check(tree, index, op)
        elif op.kind == "STATS":
            outcome.stats = tree.stats().as_dict()
        delta = tree.stats() - before
        outcome.reads, outcome.writes = delta.reads, delta.writes
        return outcome

    def _diverges(self, ops: Sequence[WorkloadOp]) -> _Divergence | None:
        tree = self.make_tree()
        oracle = OracleSet(tree.live_points())
        for index, op in enumerate(ops):
            if op.kind in ("CHECK", "STATS"):
                continue
            try:
                self._apply(tree, oracle, index, op)
            except _Divergence as div:
                return div
        return None

    def _shrink(self, ops: Sequence[WorkloadOp], first: _Divergence) -> DivergenceError:
        """Cut the trace to the shortest diverging prefix, then drop chunks that don't matter.

        Chunk removal only runs on prefixes of at most ``MAX_REDUCE_OPS``
        operations since every attempt replays the candidate from scratch.
        """
        trace = [op for op in ops[: first.index + 1] if op.kind not in ("CHECK", "STATS")]
        lo, hi = 1, len(trace)
        while lo < hi:
            mid = (lo + hi) // 2
            if self._diverges(trace[:mid]) is not None:
                hi = mid
            else:
                lo = mid + 1
        trace = trace[:hi]
        if len(trace) <= MAX_REDUCE_OPS:
            trace = self._reduce(trace)
        lines = [op.render() for op in trace]
        self.events.log_event(
            "divergence",
            index=first.index,
            expected=first.expected,
            actual=first.actual,
            trace=lines,
        )
        logger.debug("shrunk divergence at op %d to %d ops", first.index, len(lines))
        return DivergenceError(first.index, first.expected, first.actual, lines)

    def _reduce(self, trace: list[WorkloadOp]) -> list[WorkloadOp]:
        chunk = len(trace) // 2
        while chunk >= 1:
            start = 0
            while start < len(trace):
                candidate = trace[:start] + trace[start + chunk :]
                div = self._diverges(candidate) if candidate else None
                if div is not None:
                    trace = candidate[: div.index + 1]
                else:
                    start += chunk
            chunk //= 2
        return trace


def run_workload(
    ops: Sequence[WorkloadOp],
    cfg: Config | None = None,
    *,
    oracle: bool = False,
    check_every: int = 0,
    list_points: bool = False,
    events: EventLog | None = None,
    make_tree: TreeFactory | None = None,
) -> RunReport:
    factory = make_tree or (lambda: PrioritySearchTree(cfg))
    runner = WorkloadRunner(
        factory,
        oracle=oracle,
        check_every=check_every,
        list_points=list_points,
        events=events,
    )
    return runner.run(ops)
