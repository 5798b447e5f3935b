"""Dense float64 tensors, a portable seeded RNG, and weight initialization.

Tensors are plain ``numpy.ndarray`` values in C (row-major) order with
dtype float64.  All randomness in the package flows through
:class:`SplitMix64`, which is bit-exact across platforms for a given
seed; vectorized draws match the scalar stream element for element.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import ShapeError

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB
_INV_2_53 = 2.0 ** -53


class SplitMix64:
    """SplitMix64 pseudo-random stream (Steele/Lea/Flood mixing constants).

    ``next_raw`` advances the state by the golden-ratio increment and
    returns the mixed 64-bit word; ``next_uniform`` maps the top 53 bits
    onto [0, 1).  ``uniform(n)`` produces the same values the scalar
    calls would, in order.
    """

    __slots__ = ("state",)

    def __init__(self, seed: int):
        self.state = int(seed) & _MASK64

    def next_raw(self) -> int:
        self.state = (self.state + _GOLDEN) & _MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * _MIX1) & _MASK64
        z = ((z ^ (z >> 27)) * _MIX2) & _MASK64
        return z ^ (z >> 31)

    def next_uniform(self) -> float:
        return (self.next_raw() >> 11) * _INV_2_53

    def raw_array(self, n: int) -> np.ndarray:
        """Next ``n`` raw words as uint64, advancing the state past them."""
        inc = np.arange(1, n + 1, dtype=np.uint64) * np.uint64(_GOLDEN)
        z = np.uint64(self.state) + inc
        z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
        z = z ^ (z >> np.uint64(31))
        self.state = (self.state + n * _GOLDEN) & _MASK64
        return z

    def uniform(self, n: int) -> np.ndarray:
        """Next ``n`` uniforms on [0, 1) as a float64 vector."""
        return (self.raw_array(n) >> np.uint64(11)).astype(np.float64) * _INV_2_53

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates shuffle driven by this stream."""
        for i in range(len(items) - 1, 0, -1):
            j = int(self.next_uniform() * (i + 1))
            items[i], items[j] = items[j], items[i]

    def split(self) -> "SplitMix64":
        """A decorrelated child stream; advances this stream by one draw."""
        return SplitMix64(self.next_raw())

    def copy(self) -> "SplitMix64":
        other = SplitMix64(0)
        other.state = self.state
        return other


def glorot_uniform(fan_in: int, fan_out: int, shape, rng: SplitMix64) -> np.ndarray:
    """Glorot/Xavier uniform sample on [-limit, limit), limit = sqrt(6/(fan_in+fan_out)).

    Consumes one stream draw per element in row-major order.
    """
    if fan_in < 1 or fan_out < 1:
        raise ValueError(f"glorot fans must be >= 1, got ({fan_in}, {fan_out})")
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    n = int(np.prod(shape)) if len(shape) else 1
    u = rng.uniform(n)
    return ((2.0 * u - 1.0) * limit).reshape(shape)


def _require_same_shape(a: np.ndarray, b: np.ndarray, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not match")


def add(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    _require_same_shape(a, b, "add")
    return a + b


def sub(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    _require_same_shape(a, b, "sub")
    return a - b


def mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    _require_same_shape(a, b, "mul")
    return a * b


def scale(a: np.ndarray, s: float) -> np.ndarray:
    return a * float(s)


def shift(a: np.ndarray, s: float) -> np.ndarray:
    return a + float(s)


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} do not conform")
    return a @ b


def sum_over_axis(a: np.ndarray, axis: int) -> np.ndarray:
    if not -a.ndim <= axis < a.ndim:
        raise ShapeError(f"sum_over_axis: axis {axis} out of range for shape {a.shape}")
    return a.sum(axis=axis)


def max_over_axis(a: np.ndarray, axis: int) -> np.ndarray:
    if not -a.ndim <= axis < a.ndim:
        raise ShapeError(f"max_over_axis: axis {axis} out of range for shape {a.shape}")
    return a.max(axis=axis)
