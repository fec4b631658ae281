from __future__ import annotations

import json
from fractions import Fraction
from pathlib import Path

import pytest

import buffered_pst.runner as runner_mod
from buffered_pst.config import Config, validate_config
from buffered_pst.errors import DivergenceError, InvariantViolation
from buffered_pst.models import Point, ThreeSidedQuery
from buffered_pst.pst import PrioritySearchTree
from buffered_pst.runner import EventLog, WorkloadRunner, run_workload
from buffered_pst.workload import generate_workload, parse_workload

CFG = validate_config(Config(block_size=8, epsilon=Fraction(1, 2), memory=512))


class DropsRightmost(PrioritySearchTree):
    """Loses the rightmost point of any report with two or more answers."""

    def report_3sided(self, q: ThreeSidedQuery) -> list[Point]:
        found = super().report_3sided(q)
        if len(found) >= 2:
            found.remove(max(found, key=lambda p: (p.x, p.y)))
        return found


def test_report_lists_points_and_counts() -> None:
    report = run_workload(parse_workload("I 1 2\nR 0 5 0\n"), CFG, list_points=True)

    query = report.outcomes[1]
    assert query.count == 1
    assert query.points == [(1, 2)]
    assert report.final_size == 1


def test_deleted_point_is_not_in_top_k() -> None:
    report = run_workload(parse_workload("I 1 2\nD 1 2\nT 0 5 3\n"), CFG)

    assert report.outcomes[2].count == 0
    assert report.final_size == 0
    assert "points" not in report.outcomes[2].as_dict()


def test_lockstep_run_with_periodic_checks() -> None:
    ops = generate_workload(2000, seed=5, coord_range=5000)

    report = run_workload(ops, CFG, oracle=True, check_every=100)

    assert report.oracle
    assert report.checks == 20
    assert report.totals.total == sum(o.reads + o.writes for o in report.outcomes)
    assert report.rebuilds >= 1


def test_check_and_stats_ops_fill_their_fields() -> None:
    report = run_workload(parse_workload("I 1 1\nCHECK\nSTATS\n"), CFG)

    check, stats = report.outcomes[1], report.outcomes[2]
    assert check.problems == []
    assert stats.stats is not None and "reads" in stats.stats
    assert report.checks == 1


def test_divergence_is_shrunk_to_a_minimal_trace() -> None:
    ops = parse_workload(
        "I 1 1\nI 2 2\nI 3 3\nD 3 3\nR 0 0 0\nCHECK\nI 4 4\nR 0 10 0\n"
    )
    runner = WorkloadRunner(lambda: DropsRightmost(CFG), oracle=True)

    with pytest.raises(DivergenceError) as excinfo:
        runner.run(ops)

    err = excinfo.value
    assert err.op_index == 7
    assert err.expected == [(1, 1), (2, 2), (4, 4)]
    assert err.actual == [(1, 1), (2, 2)]
    assert err.trace == ["I 2 2", "I 3 3", "R 0 10 0"]


def test_failed_check_raises_invariant_violation(monkeypatch: pytest.MonkeyPatch) -> None:
    monkeypatch.setattr(runner_mod, "check_tree", lambda tree: ["broken on purpose"])

    with pytest.raises(InvariantViolation, match="broken on purpose") as excinfo:
        run_workload(parse_workload("I 1 1\nI 2 2\nI 3 3\n"), CFG, check_every=2)
    assert excinfo.value.problems == ["after op 1 (line 2): broken on purpose"]


def test_events_are_written_as_jsonl(tmp_path: Path) -> None:
    path = tmp_path / "logs" / "events.jsonl"
    events = EventLog(path, run_id="fixed")

    run_workload(parse_workload("I 1 1\nCHECK\n"), CFG, events=events)

    records = [json.loads(line) for line in path.read_text(encoding="utf-8").splitlines()]
    assert [r["type"] for r in records] == ["run_started", "check_completed", "run_completed"]
    assert all(r["run_id"] == "fixed" for r in records)
    assert records[-1]["final_size"] == 1
    assert "timestamp" in records[0]


def test_event_log_without_path_is_silent(tmp_path: Path) -> None:
    EventLog().log_event("anything", value=1)

    assert list(tmp_path.iterdir()) == []


def test_reports_are_reproducible_without_timing() -> None:
    ops = generate_workload(300, seed=3, coord_range=2000)

    first = run_workload(ops, CFG).to_json()
    second = run_workload(ops, CFG).to_json()

    assert first == second
    assert "wall_time_s" not in json.loads(first)
    assert "wall_time_s" in run_workload(ops, CFG).to_dict(include_timing=True)
