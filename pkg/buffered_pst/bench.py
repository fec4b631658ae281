"""Scaling experiments and their least-squares fits.

Each mode sweeps N over powers of two (and every requested B and epsilon)
and emits one CSV row per point of the sweep. The fit regresses the total
IO count of a row against ``ops * predictor`` where the predictor is the
per-operation bound the structure is designed to meet.

Update rows keep going past ``ops`` until the current epoch closes, so every
row pays for exactly the global rebuilds its updates caused.
"""

from __future__ import annotations

import csv
import io
import itertools
import logging
import math
from dataclasses import dataclass, replace
from fractions import Fraction
from typing import Iterable, Iterator, Sequence

import numpy as np

from .config import Config, validate_config
from .models import Point, ThreeSidedQuery, TopKQuery
from .pst import PrioritySearchTree

logger = logging.getLogger(__name__)

MODES = ("update-scaling", "query-scaling", "topk-scaling", "construction-scaling")
CSV_HEADER = ("mode", "B", "epsilon", "N", "ops", "reads", "writes", "ios_per_op")
COORD_RANGE = 1 << 40


@dataclass(frozen=True)
class BenchRow:
    mode: str
    block_size: int
    epsilon: Fraction
    n: int
    ops: int
    reads: int
    writes: int
    memory: int = 0
    output_size: int = 0

    @property
    def ios(self) -> int:
        return self.reads + self.writes

    @property
    def ios_per_op(self) -> float:
        return self.ios / self.ops if self.ops else 0.0

    def as_csv(self) -> list[str]:
        return [
            self.mode,
            str(self.block_size),
            f"{self.epsilon.numerator}/{self.epsilon.denominator}",
            str(self.n),
            str(self.ops),
            str(self.reads),
            str(self.writes),
            f"{self.ios_per_op:.6f}",
        ]


@dataclass(frozen=True)
class Fit:
    slope: float
    intercept: float
    r2: float
    samples: int

    def describe(self) -> str:
        return (
            f"ios ~= {self.slope:.4f} * predictor + {self.intercept:.4f} "
            f"(R^2={self.r2:.4f}, n={self.samples})"
        )


def fit_linear(xs: Sequence[float], ys: Sequence[float]) -> Fit:
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    if len(x) < 2:
        raise ValueError("a fit needs at least two samples")
    design = np.column_stack([x, np.ones_like(x)])
    (slope, intercept), *_ = np.linalg.lstsq(design, y, rcond=None)
    residual = y - (slope * x + intercept)
    ss_res = float(residual @ residual)
    ss_tot = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else (1.0 if ss_res < 1e-9 else 0.0)
    return Fit(float(slope), float(intercept), r2, len(x))


def predictor(row: BenchRow, unsorted: bool = False) -> float:
    """Per-operation IO bound for the row's mode, constants dropped."""
    memory = max(row.memory, 2 * row.block_size)
    cfg = validate_config(Config(block_size=row.block_size, epsilon=row.epsilon, memory=memory))
    b, delta, n = cfg.block_size, cfg.delta, max(row.n, 2)
    if row.mode == "update-scaling":
        return (delta / b) * math.log(max(n / b, 2.0), delta)
    if row.mode in ("query-scaling", "topk-scaling"):
        eps = float(row.epsilon)
        return (1.0 / eps) * math.log(n, b) + row.output_size / b
    if row.mode == "construction-scaling":
        if not unsorted:
            return 1.0 / b
        fan_in = max(2, cfg.cache_frames - 1)
        return (1.0 / b) * max(1.0, math.log(max(n / b, 2.0), fan_in))
    raise ValueError(f"unknown bench mode {row.mode!r}")


def fit_rows(rows: Sequence[BenchRow], unsorted: bool = False) -> Fit:
    return fit_linear(
        [row.ops * predictor(row, unsorted) for row in rows],
        [row.ios for row in rows],
    )


def _point_stream(rng: np.random.Generator, batch: int = 1024) -> Iterator[Point]:
    """Endless distinct random points, drawn in numpy batches."""
    seen: set[tuple[int, int]] = set()
    while True:
        xs = rng.integers(0, COORD_RANGE, size=batch)
        ys = rng.integers(0, COORD_RANGE, size=batch)
        for x, y in zip(xs.tolist(), ys.tolist()):
            if (x, y) not in seen:
                seen.add((x, y))
                yield Point(x, y)


def _distinct_points(rng: np.random.Generator, count: int) -> list[Point]:
    return list(itertools.islice(_point_stream(rng, max(count, 1)), count))


def _update_row(cfg: Config, n: int, ops: int, rng: np.random.Generator) -> BenchRow:
    """Runs at least ``ops`` updates and stops on an epoch boundary, rebuild included."""
    stream = _point_stream(rng)
    live = list(itertools.islice(stream, n))
    tree = PrioritySearchTree.from_points(live, cfg)
    tree.store.evict_all()
    before = tree.stats()
    done = 0
    while done < ops or tree.epoch.updates:
        if rng.random() < 2 / 3 or not live:
            p = next(stream)
            tree.insert(p)
            live.append(p)
        else:
            idx = int(rng.integers(0, len(live)))
            live[idx], live[-1] = live[-1], live[idx]
            tree.delete(live.pop())
        done += 1
    tree.store.flush_all()
    delta = tree.stats() - before
    return BenchRow(
        "update-scaling",
        cfg.block_size,
        cfg.epsilon,
        n,
        done,
        delta.reads,
        delta.writes,
        memory=cfg.memory,
    )


def _query_row(
    cfg: Config, n: int, ops: int, output_size: int, rng: np.random.Generator, mode: str
) -> BenchRow:
    """Queries reporting ``output_size`` points; top-k spans up to 8x that many in x."""
    points = _distinct_points(rng, n)
    tree = PrioritySearchTree.from_points(points, cfg)
    xs = sorted(p.x for p in points)
    k = max(1, min(output_size, n))
    span = k if mode == "query-scaling" else min(n, 8 * k)
    tree.store.evict_all()
    before = tree.stats()
    for start in rng.integers(0, n - span + 1, size=ops).tolist():
        x1, x2 = xs[start], xs[start + span - 1]
        if mode == "query-scaling":
            tree.report_3sided(ThreeSidedQuery(x1, x2, -COORD_RANGE))
        else:
            tree.top_k(TopKQuery(x1, x2, k))
    tree.store.flush_all()
    delta = tree.stats() - before
    return BenchRow(
        mode,
        cfg.block_size,
        cfg.epsilon,
        n,
        ops,
        delta.reads,
        delta.writes,
        memory=cfg.memory,
        output_size=k,
    )


def _construction_row(
    cfg: Config, n: int, unsorted: bool, rng: np.random.Generator
) -> BenchRow:
    points = _distinct_points(rng, n)
    if not unsorted:
        points.sort(key=lambda p: (p.x, p.y))
    tree = PrioritySearchTree.from_points(points, cfg)
    stats = tree.store.flush_all()
    return BenchRow(
        "construction-scaling",
        cfg.block_size,
        cfg.epsilon,
        n,
        n,
        stats.reads,
        stats.writes,
        memory=cfg.memory,
    )


def run_bench(
    mode: str,
    block_sizes: Sequence[int],
    epsilons: Sequence[Fraction],
    sizes: Sequence[int],
    *,
    ops: int = 1000,
    memory: int | None = None,
    output_size: int | None = None,
    unsorted: bool = False,
    seed: int = 0,
) -> Iterator[BenchRow]:
    if mode not in MODES:
        raise ValueError(f"unknown bench mode {mode!r}; expected one of {', '.join(MODES)}")
    for b in block_sizes:
        for eps in epsilons:
            cfg = validate_config(
                replace(Config(), block_size=b, epsilon=eps, memory=memory or 64 * b)
            )
            for n in sizes:
                rng = np.random.default_rng([seed, b, eps.numerator, eps.denominator, n])
                if mode == "update-scaling":
                    row = _update_row(cfg, n, ops, rng)
                elif mode in ("query-scaling", "topk-scaling"):
                    row = _query_row(cfg, n, ops, output_size or b, rng, mode)
                else:
                    row = _construction_row(cfg, n, unsorted, rng)
                logger.debug(
                    "bench %s B=%d eps=%s N=%d: %.3f ios/op", mode, b, eps, n, row.ios_per_op
                )
                yield row


def power_sizes(log_min: int, log_max: int) -> list[int]:
    return [1 << e for e in range(log_min, log_max + 1)]


def render_csv(rows: Iterable[BenchRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for row in rows:
        writer.writerow(row.as_csv())
    return buf.getvalue()
