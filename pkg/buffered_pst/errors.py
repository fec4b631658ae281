from __future__ import annotations

from typing import Any, Sequence


class PstError(Exception):
    """Base class for everything this package raises on purpose."""


class InvalidConfig(PstError, ValueError):
    pass


class UnknownBlock(PstError, KeyError):
    def __init__(self, block_id: int) -> None:
        super().__init__(block_id)
        self.block_id = block_id

    def __str__(self) -> str:
        return f"unknown or freed block id {self.block_id}"


class Overfull(PstError, ValueError):
    pass


class CachePressure(PstError, RuntimeError):
    pass


class CapacityExceeded(PstError, ValueError):
    pass


class BatchTooLarge(PstError, ValueError):
    pass


class DuplicatePoint(PstError, ValueError):
    pass


class PersistenceError(PstError, ValueError):
    pass


class ParseError(PstError, ValueError):
    def __init__(self, line_no: int, message: str) -> None:
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no
        self.message = message


class InvariantViolation(PstError, AssertionError):
    def __init__(self, problems: Sequence[str]) -> None:
        self.problems = list(problems)
        head = "; ".join(self.problems[:5])
        more = f" (+{len(self.problems) - 5} more)" if len(self.problems) > 5 else ""
        super().__init__(f"{len(self.problems)} invariant violation(s): {head}{more}")


class DivergenceError(PstError, AssertionError):
    def __init__(
        self,
        op_index: int,
        expected: Any,
        actual: Any,
        trace: Sequence[str] = (),
    ) -> None:
        self.op_index = op_index
        self.expected = expected
        self.actual = actual
        self.trace = list(trace)
        super().__init__(
            f"divergence at op {op_index}: expected {expected!r}, got {actual!r}"
            f" (minimized trace has {len(self.trace)} ops)"
        )
