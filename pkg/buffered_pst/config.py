from __future__ import annotations

import os
from dataclasses import dataclass, replace
from fractions import Fraction
from functools import lru_cache
from pathlib import Path
from typing import Any, Mapping

import yaml
from dotenv import load_dotenv

from .errors import InvalidConfig

DEFAULT_BLOCK_SIZE = 16
DEFAULT_EPSILON = Fraction(1, 2)
DEFAULT_MEMORY_BLOCKS = 64
DEFAULT_ALPHA = 1
DEFAULT_PAYLOAD_SIZE = 0
ENV_PREFIX = "BUFFERED_PST_"
CONFIG_KEYS = ("block_size", "epsilon", "memory", "alpha", "payload_size")


@lru_cache(maxsize=4096)
def _iroot_ceil(value: int, k: int) -> int:
    """Smallest r >= 0 with r**k >= value."""
    if value <= 1:
        return max(value, 0)
    lo = 1
    hi = 1 << ((value.bit_length() + k - 1) // k)
    while lo < hi:
        mid = (lo + hi) // 2
        if mid**k >= value:
            hi = mid
        else:
            lo = mid + 1
    return lo


def ceil_power(base: int, num: int, den: int, scale: int = 1) -> int:
    """Exact ceil(scale * base ** (num / den)) for positive integers."""
    if num == 0:
        return scale
    return _iroot_ceil(scale**den * base**num, den)


@dataclass(frozen=True)
class Config:
    block_size: int = DEFAULT_BLOCK_SIZE
    epsilon: Fraction = DEFAULT_EPSILON
    memory: int = DEFAULT_BLOCK_SIZE * DEFAULT_MEMORY_BLOCKS
    alpha: int = DEFAULT_ALPHA
    payload_size: int = DEFAULT_PAYLOAD_SIZE
    delta: int = 0
    sample_stride: int = 0
    samples_per_block: int = 0

    @property
    def half_block(self) -> int:
        return -(-self.block_size // 2)

    @property
    def child_capacity(self) -> int:
        return 4 * self.block_size * self.delta

    @property
    def cache_frames(self) -> int:
        return self.memory // self.block_size

    @property
    def min_degree(self) -> int:
        return -(-self.delta // 2)

    def stride_times(self, scale: int) -> int:
        """ceil(scale * B**epsilon)."""
        return ceil_power(self.block_size, self.epsilon.numerator, self.epsilon.denominator, scale)

    def rank_step(self, scale: int) -> int:
        """ceil(scale * B**(1 - epsilon))."""
        eps = self.epsilon
        return ceil_power(self.block_size, eps.denominator - eps.numerator, eps.denominator, scale)

    def epsilon_text(self) -> str:
        return f"{self.epsilon.numerator}/{self.epsilon.denominator}"

    def as_dict(self) -> dict[str, Any]:
        return {
            "block_size": self.block_size,
            "epsilon": self.epsilon_text(),
            "memory": self.memory,
            "alpha": self.alpha,
            "payload_size": self.payload_size,
            "delta": self.delta,
            "sample_stride": self.sample_stride,
            "samples_per_block": self.samples_per_block,
        }


def validate_config(c: Config) -> Config:
    b = c.block_size
    if not isinstance(b, int) or b < 4:
        raise InvalidConfig(f"block_size must be an integer >= 4, got {b!r}")
    eps = Fraction(c.epsilon)
    if not (0 < eps <= Fraction(1, 2)):
        raise InvalidConfig(f"epsilon must lie in (0, 1/2], got {eps}")
    if c.memory < 2 * b:
        raise InvalidConfig(f"memory must be at least 2*block_size={2 * b}, got {c.memory}")
    if c.alpha < 1:
        raise InvalidConfig(f"alpha must be >= 1, got {c.alpha}")
    if c.payload_size < 0:
        raise InvalidConfig(f"payload_size must be >= 0, got {c.payload_size}")
    delta = ceil_power(b, eps.numerator, eps.denominator)
    if delta < 2:
        raise InvalidConfig(f"derived fan-out {delta} is below 2")
    if b < 2 * delta:
        raise InvalidConfig(f"block_size {b} is smaller than twice the fan-out {delta}")
    return replace(
        c,
        epsilon=eps,
        delta=delta,
        sample_stride=delta,
        samples_per_block=ceil_power(b, eps.denominator - eps.numerator, eps.denominator),
    )


def parse_epsilon(value: Any) -> Fraction:
    if isinstance(value, Fraction):
        return value
    if isinstance(value, bool):
        raise InvalidConfig(f"epsilon must be a rational, got {value!r}")
    if isinstance(value, int):
        return Fraction(value)
    try:
        return Fraction(str(value).strip())
    except (ValueError, ZeroDivisionError) as exc:
        raise InvalidConfig(f"epsilon must look like p/q or a decimal, got {value!r}") from exc


def _as_positive_int(value: Any, name: str) -> int:
    if isinstance(value, bool):
        raise InvalidConfig(f"{name} must be an integer, got {value!r}")
    try:
        parsed = int(str(value).strip()) if not isinstance(value, int) else value
    except ValueError as exc:
        raise InvalidConfig(f"{name} must be an integer, got {value!r}") from exc
    if parsed <= 0:
        raise InvalidConfig(f"{name} must be positive, got {parsed}")
    return parsed


def _as_non_negative_int(value: Any, name: str) -> int:
    if value in (0, "0"):
        return 0
    return _as_positive_int(value, name)


def _env_values() -> dict[str, str]:
    found: dict[str, str] = {}
    for key in CONFIG_KEYS:
        raw = os.environ.get(ENV_PREFIX + key.upper())
        if raw is not None and raw.strip():
            found[key] = raw
    return found


def _yaml_values(path: Path) -> dict[str, Any]:
    try:
        loaded = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    except yaml.YAMLError as exc:
        raise InvalidConfig(f"{path}: {exc}") from exc
    if not isinstance(loaded, dict):
        raise InvalidConfig(f"{path}: expected a mapping at the top level")
    unknown = sorted(set(loaded) - set(CONFIG_KEYS))
    if unknown:
        raise InvalidConfig(f"{path}: unknown keys {', '.join(map(str, unknown))}")
    return dict(loaded)


def load_config(
    path: Path | None = None,
    overrides: Mapping[str, Any] | None = None,
    env_file: Path | None = None,
) -> Config:
    """Layer defaults, environment, YAML file, then explicit overrides."""
    if env_file is not None and env_file.exists():
        load_dotenv(dotenv_path=env_file, override=False)

    raw: dict[str, Any] = {}
    raw.update(_env_values())
    if path is not None:
        if not path.exists():
            raise InvalidConfig(f"config file not found: {path}")
        raw.update(_yaml_values(path))
    if overrides:
        raw.update({k: v for k, v in overrides.items() if v is not None})

    block_size = _as_positive_int(raw.get("block_size", DEFAULT_BLOCK_SIZE), "block_size")
    memory_raw = raw.get("memory")
    memory = (
        block_size * DEFAULT_MEMORY_BLOCKS
        if memory_raw is None
        else _as_positive_int(memory_raw, "memory")
    )
    return validate_config(
        Config(
            block_size=block_size,
            epsilon=parse_epsilon(raw.get("epsilon", DEFAULT_EPSILON)),
            memory=memory,
            alpha=_as_positive_int(raw.get("alpha", DEFAULT_ALPHA), "alpha"),
            payload_size=_as_non_negative_int(
                raw.get("payload_size", DEFAULT_PAYLOAD_SIZE), "payload_size"
            ),
        )
    )
