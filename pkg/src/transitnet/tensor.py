"""Dense tensor values, shape arithmetic, and seeded random sampling.

Every value exchanged between layers is a 64-bit float numpy array in
row-major NCHW order (batch, channel, height, width).  This module owns
construction/validation of those arrays, the 2D matrix product used by
dense layers and im2col convolution, and the reproducible random number
generator that backs parameter init, dropout masks, shuffling, and the
synthetic benchmark.
"""

from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np

from .errors import ParameterError, ShapeError


class Shape4(NamedTuple):
    """NCHW dimensions of a 4D tensor."""

    n: int
    c: int
    h: int
    w: int

    def numel(self) -> int:
        return self.n * self.c * self.h * self.w

    def validate(self) -> "Shape4":
        for name, dim in zip("nchw", self):
            if not isinstance(dim, (int, np.integer)) or dim < 1:
                raise ShapeError(f"shape dim {name}={dim!r} must be a positive integer")
        return self


# A Tensor is a float64 ndarray with ndim == 4 (NCHW).  2D float64 arrays
# appear only as matmul operands (dense weights, im2col matrices).
Tensor = np.ndarray


def make_tensor(shape: Shape4, fill) -> Tensor:
    """Build an NCHW float64 tensor from a scalar fill or a flat value list.

    `fill` is either a single number (broadcast) or a sequence whose length
    equals the element count, laid out in row-major n -> c -> h -> w order.
    """
    shape = Shape4(*shape).validate()
    if np.isscalar(fill):
        return np.full(shape, float(fill), dtype=np.float64)
    values = np.asarray(fill, dtype=np.float64).reshape(-1)
    if values.size != shape.numel():
        raise ShapeError(f"expected {shape.numel()} values, got {values.size}")
    return values.reshape(shape).copy()


def tensor_shape(x: Tensor) -> Shape4:
    if x.ndim != 4:
        raise ShapeError(f"expected a 4D tensor, got ndim={x.ndim}")
    return Shape4(*x.shape)


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """2D matrix product with explicit inner-dimension checking."""
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2D operands, got ndim {a.ndim} and {b.ndim}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dims disagree: {a.shape[1]} vs {b.shape[0]}")
    return a @ b


# PCG32 (XSH-RR 64/32) constants, from the reference implementation.
_PCG_MULT = 0x5851F42D4C957F2D
_PCG_INC = 0x14057B7EF767814F  # fixed odd stream increment
_MASK64 = (1 << 64) - 1


class Rng:
    """Deterministic PCG32 stream with Box-Muller normal sampling.

    The generator is the PCG XSH-RR 64/32 variant with a fixed stream
    increment, so a given seed yields the same sample sequence on every
    platform and build.  Uniform doubles take 53 bits from two consecutive
    32-bit outputs; normals are produced pairwise by the Box-Muller
    transform.  Not thread-safe; each training run owns one instance.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & _MASK64
        self._state = 0
        self._step()
        self._state = (self._state + self.seed) & _MASK64
        self._step()

    def _step(self) -> None:
        self._state = (self._state * _PCG_MULT + _PCG_INC) & _MASK64

    @staticmethod
    def _output(state: np.ndarray) -> np.ndarray:
        # XSH-RR permutation of the pre-advance state.
        xorshifted = (((state >> np.uint64(18)) ^ state) >> np.uint64(27)).astype(np.uint32)
        rot = (state >> np.uint64(59)).astype(np.uint32)
        return (xorshifted >> rot) | (xorshifted << ((np.uint32(32) - rot) & np.uint32(31)))

    def next_u32(self) -> int:
        state = self._state
        self._step()
        xorshifted = ((state >> 18) ^ state) >> 27 & 0xFFFFFFFF
        rot = state >> 59
        return ((xorshifted >> rot) | (xorshifted << ((32 - rot) & 31))) & 0xFFFFFFFF

    def u32_block(self, count: int) -> np.ndarray:
        """Vectorized draw of `count` consecutive 32-bit outputs."""
        if count <= 0:
            return np.empty(0, dtype=np.uint32)
        states = np.empty(count, dtype=np.uint64)
        states[0] = self._state
        filled = 1
        # m-step LCG composition: s_{i+m} = mult_m * s_i + inc_m, doubled each pass
        mult_m, inc_m = _PCG_MULT, _PCG_INC
        while filled < count:
            take = min(filled, count - filled)
            states[filled:filled + take] = (
                states[:take] * np.uint64(mult_m) + np.uint64(inc_m)
            )
            inc_m = (mult_m * inc_m + inc_m) & _MASK64
            mult_m = (mult_m * mult_m) & _MASK64
            filled += take
        self._state = (int(states[-1]) * _PCG_MULT + _PCG_INC) & _MASK64
        return self._output(states)

    def uniform(self, count: int) -> np.ndarray:
        """float64 samples in [0, 1) with 53-bit resolution."""
        raw = self.u32_block(2 * count).astype(np.uint64)
        bits53 = ((raw[0::2] << np.uint64(32)) | raw[1::2]) >> np.uint64(11)
        return bits53 * (1.0 / (1 << 53))

    def normal(self, count: int, mean: float = 0.0, stdev: float = 1.0) -> np.ndarray:
        """Box-Muller normal samples; stdev 0 degenerates to the mean."""
        if stdev < 0:
            raise ParameterError(f"stdev must be >= 0, got {stdev}")
        pairs = (count + 1) // 2
        raw = self.u32_block(4 * pairs).astype(np.uint64)
        bits53 = ((raw[0::2] << np.uint64(32)) | raw[1::2]) >> np.uint64(11)
        u = bits53 * (1.0 / (1 << 53))
        u1 = (bits53[:pairs] + np.uint64(1)) * (1.0 / (1 << 53))  # (0, 1], keeps log finite
        u2 = u[pairs:]
        radius = np.sqrt(-2.0 * np.log(u1))
        angle = 2.0 * math.pi * u2
        z = np.concatenate([radius * np.cos(angle), radius * np.sin(angle)])[:count]
        return mean + stdev * z

    def randbelow(self, bound: int) -> int:
        """Unbiased integer in [0, bound) by rejection sampling."""
        if bound <= 0:
            raise ParameterError(f"bound must be positive, got {bound}")
        limit = (1 << 32) - ((1 << 32) % bound)
        while True:
            value = self.next_u32()
            if value < limit:
                return value % bound

    def permutation(self, count: int) -> np.ndarray:
        """Fisher-Yates shuffle of range(count)."""
        order = np.arange(count, dtype=np.int64)
        for i in range(count - 1, 0, -1):
            j = self.randbelow(i + 1)
            order[i], order[j] = order[j], order[i]
        return order


def derive_seed(seed: int, label: int) -> int:
    """Stable sub-seed for independent streams (one per fold, per stage).

    SplitMix64 finalizer over the (seed, label) pair; documented so derived
    streams are reproducible across machines.
    """
    z = (int(seed) + (int(label) + 1) * 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


def sample_normal(rng: Rng, shape: Shape4, mean: float = 0.0, stdev: float = 1.0) -> Tensor:
    """Seeded normal tensor; identical seed gives a bit-identical result."""
    shape = Shape4(*shape).validate()
    return rng.normal(shape.numel(), mean, stdev).reshape(shape)
