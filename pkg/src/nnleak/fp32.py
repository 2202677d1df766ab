"""IEEE-754 single-precision codec and the coarse hypothesis grid.

Everything here works on the "usual case": normalized values with an
exponent field in [1, 254], plus exact zero.  Subnormals, infinities and
NaN are rejected rather than silently flushed.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import EmptyGridError, OutOfModelError

EXP_BIAS = 127
MANTISSA_BITS = 23
MANTISSA_MASK = (1 << MANTISSA_BITS) - 1

STEP1_GRID = "step1-grid"
STEP2_REFINEMENT = "step2-refinement"


def float_to_bits(v: float) -> int:
    """32-bit pattern of v after rounding to single precision."""
    return struct.unpack("<I", struct.pack("<f", v))[0]


def bits_to_float(u: int) -> float:
    return struct.unpack("<f", struct.pack("<I", u & 0xFFFFFFFF))[0]


@dataclass(frozen=True)
class Float32Parts:
    """Sign bit, biased exponent and mantissa field of a float32."""

    sign: int
    exponent: int
    mantissa: int

    def __post_init__(self):
        if self.sign not in (0, 1):
            raise ValueError(f"sign bit must be 0 or 1, got {self.sign}")
        if not 0 <= self.exponent <= 255:
            raise ValueError(f"exponent field out of [0,255]: {self.exponent}")
        if not 0 <= self.mantissa <= MANTISSA_MASK:
            raise ValueError(f"mantissa field out of range: {self.mantissa}")

    @property
    def bits(self) -> int:
        return (self.sign << 31) | (self.exponent << MANTISSA_BITS) | self.mantissa


def decompose(v: float) -> Float32Parts:
    """Split a finite float32 into its bit-pattern fields.

    Accepts normalized values and exact zero; subnormal, inf and NaN inputs
    raise OutOfModelError.
    """
    u = float_to_bits(v)
    exponent = (u >> MANTISSA_BITS) & 0xFF
    mantissa = u & MANTISSA_MASK
    if exponent == 255:
        raise OutOfModelError(f"inf/NaN out of model scope: {v!r}")
    if exponent == 0 and mantissa != 0:
        raise OutOfModelError(f"subnormal out of model scope: {v!r}")
    return Float32Parts(sign=u >> 31, exponent=exponent, mantissa=mantissa)


def recompose(parts: Float32Parts) -> float:
    """Inverse of decompose; bit-exact."""
    if parts.exponent == 255:
        raise OutOfModelError("exponent field 255 is out of model scope")
    if parts.exponent == 0 and parts.mantissa != 0:
        raise OutOfModelError("subnormal patterns are out of model scope")
    return bits_to_float(parts.bits)


def hamming_weight(v: float) -> int:
    """Number of set bits in the float32 pattern of v."""
    f = float(v)
    if f != f or f in (float("inf"), float("-inf")):
        raise OutOfModelError(f"non-finite value: {v!r}")
    return float_to_bits(f).bit_count()


def hw32(u: np.ndarray) -> np.ndarray:
    """Vectorized popcount of a uint32 array (SWAR), returned as uint8.

    Pass float32 data through .view(np.uint32) first.
    """
    if u.dtype != np.uint32:
        raise TypeError(f"expected uint32 view, got {u.dtype}")
    v = u - ((u >> 1) & np.uint32(0x55555555))
    v = (v & np.uint32(0x33333333)) + ((v >> 2) & np.uint32(0x33333333))
    v = (v + (v >> 4)) & np.uint32(0x0F0F0F0F)
    return ((v * np.uint32(0x01010101)) >> np.uint32(24)).astype(np.uint8)


@dataclass(frozen=True)
class PreNormProduct:
    """Sign/exponent/mantissa triple of a product before realignment.

    The mantissa field is kept as an exact rational, so it may exceed the
    23-bit range until realign() is applied.
    """

    sign: int
    exponent: int
    mantissa: Fraction


def product_parts(a: Float32Parts, b: Float32Parts) -> PreNormProduct:
    """Pre-normalization field arithmetic of a float32 multiplication.

    sign = XOR of signs, exponent = sum minus bias, mantissa combines the
    operand mantissas exactly (no rounding).  Use realign() to fold the
    result back into a representable float32.
    """
    for p in (a, b):
        if not 1 <= p.exponent <= 254:
            raise OutOfModelError(
                f"operand exponent {p.exponent} outside the usual case [1,254]"
            )
    m_a, m_b = a.mantissa, b.mantissa
    mantissa = Fraction(m_a) + m_b + Fraction(m_a * m_b, 1 << MANTISSA_BITS)
    return PreNormProduct(
        sign=a.sign ^ b.sign,
        exponent=a.exponent + b.exponent - EXP_BIAS,
        mantissa=mantissa,
    )


def _round_half_even(x: Fraction) -> int:
    floor = x.numerator // x.denominator
    rem = x - floor
    if rem > Fraction(1, 2):
        return floor + 1
    if rem < Fraction(1, 2):
        return floor
    return floor + (floor & 1)


def realign(product: PreNormProduct) -> Float32Parts:
    """Normalize a PreNormProduct into float32 fields (round-to-nearest-even).

    Raises OutOfModelError when the realigned exponent leaves [1,254].
    """
    exponent = product.exponent
    significand = 1 + product.mantissa / (1 << MANTISSA_BITS)  # in [1, 4)
    if significand >= 2:
        significand /= 2
        exponent += 1
    mantissa = _round_half_even((significand - 1) * (1 << MANTISSA_BITS))
    if mantissa > MANTISSA_MASK:  # rounding carried into the hidden bit
        mantissa = 0
        exponent += 1
    if not 1 <= exponent <= 254:
        raise OutOfModelError(
            f"product exponent {exponent} overflows/underflows the usual case"
        )
    return Float32Parts(sign=product.sign, exponent=exponent, mantissa=mantissa)


@dataclass(frozen=True)
class HypothesisGrid:
    """Ordered, duplicate-free set of positive candidate weight values."""

    values: np.ndarray  # float32, strictly increasing
    origin: str  # STEP1_GRID or STEP2_REFINEMENT

    def __post_init__(self):
        v = self.values
        if v.dtype != np.float32:
            raise TypeError("grid values must be float32")
        if v.ndim != 1:
            raise ValueError("grid values must be a 1-d array")
        if v.size > 1 and not np.all(np.diff(v.astype(np.float64)) > 0):
            raise ValueError("grid values must be strictly increasing")

    def __len__(self):
        return int(self.values.size)


def step1_grid(C: float, d0: float) -> HypothesisGrid:
    """Coarse grid: every exponent field in [1,254] crossed with the 8 most
    significant mantissa bits (lower 15 bits zero), filtered to the interval
    [max(C - d0/2, 0), C + d0/2] with inclusive bounds.

    Candidates are unsigned; the sign is recovered separately.
    """
    if d0 < 0:
        raise ValueError(f"d0 must be non-negative, got {d0}")
    exponents = np.arange(1, 255)
    significands = 1.0 + np.arange(256) / 256.0
    values = np.ldexp(significands[None, :], (exponents - EXP_BIAS)[:, None])
    values = values.ravel()  # exact: 8 mantissa MSBs only, no rounding
    lo = max(C - d0 / 2.0, 0.0)
    hi = C + d0 / 2.0
    kept = values[(values >= lo) & (values <= hi)]
    if kept.size == 0:
        raise EmptyGridError(f"no grid point lies in [{lo}, {hi}]")
    kept = np.unique(kept).astype(np.float32)
    return HypothesisGrid(values=kept, origin=STEP1_GRID)
