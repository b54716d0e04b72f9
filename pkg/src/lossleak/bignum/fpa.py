"""Finite floating-point formats and round-to-nearest-even emulation.

Three format flavours are supported: the symmetric phi-bit split (1 sign
bit, (phi-1)/2 exponent bits, (phi-1)/2 mantissa bits, no subnormals,
underflow flushes to zero with a flag), explicit (exp_bits, mant_bits)
formats with the same semantics, and an ieee754-double preset with
gradual underflow that matches the host's native doubles bit for bit.

Rounding rule is round-to-nearest, ties-to-even throughout; the source
papers never fix one, so this is a recorded choice, not an inference.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

from ..errors import AmbiguousRounding
from .real import BigReal, _as_fraction, _pow2

__all__ = [
    "FpaFormat",
    "FpaValue",
    "round_to_fpa",
    "fpa_separability_bound",
    "fixed_point_round",
    "fixed_point_grid",
]


@dataclass(frozen=True)
class FpaFormat:
    """A binary floating-point format: 1 sign bit, `exp_bits` exponent bits
    (bias 2^(e-1)-1), `mant_bits` fraction bits."""

    exp_bits: int
    mant_bits: int
    subnormals: bool = False
    name: str = "explicit"

    def __post_init__(self):
        if self.exp_bits < 1 or self.mant_bits < 1:
            raise ValueError("exp_bits and mant_bits must be positive")

    @staticmethod
    def paper_symmetric(phi: int) -> "FpaFormat":
        """The symmetric phi-bit split: exp_bits = mant_bits = (phi-1)/2."""
        if phi < 3 or phi % 2 == 0:
            raise ValueError("symmetric format needs an odd phi >= 3")
        half = (phi - 1) // 2
        return FpaFormat(half, half, name=f"fpa({phi})")

    @staticmethod
    def ieee754_double() -> "FpaFormat":
        return FpaFormat(11, 52, subnormals=True, name="ieee754-double")

    @property
    def is_double(self) -> bool:
        return self.exp_bits == 11 and self.mant_bits == 52 and self.subnormals

    @property
    def bias(self) -> int:
        # ieee preset follows the standard; paper/explicit formats use the
        # symmetric two's-complement-style exponent range [-2^(e-1), 2^(e-1)-1]
        if self.subnormals:
            return (1 << (self.exp_bits - 1)) - 1
        return 1 << (self.exp_bits - 1)

    @property
    def e_min(self) -> int:
        # smallest normal exponent; the ieee preset reserves e_field = 0
        return (1 - self.bias) if self.subnormals else -self.bias

    @property
    def e_max(self) -> int:
        # the ieee preset reserves the top e_field for inf/nan
        top = (1 << self.exp_bits) - 1 - self.bias
        return top - 1 if self.subnormals else top

    @property
    def min_normal(self) -> Fraction:
        return _pow2(self.e_min)

    @property
    def max_value(self) -> Fraction:
        m = (1 << (self.mant_bits + 1)) - 1
        return Fraction(m) * _pow2(self.e_max - self.mant_bits)

    def ulp(self, e: int) -> Fraction:
        """Grid spacing for magnitudes in [2^e, 2^(e+1))."""
        return _pow2(max(e, self.e_min) - self.mant_bits)


@dataclass(frozen=True)
class FpaValue:
    """One value of an FpaFormat: sign * (lead + mantissa/2^m) * 2^exponent,
    where lead is 1 for normals and 0 for zero/subnormals.  A value with a
    flag set carries no numeric payload."""

    fmt: FpaFormat
    sign: int = 1
    exponent: int = 0
    mantissa: int = 0
    zero: bool = True
    subnormal: bool = False
    overflow: bool = False
    underflow: bool = False

    @property
    def flagged(self) -> bool:
        return self.overflow or self.underflow

    def to_fraction(self) -> Fraction:
        if self.overflow:
            raise OverflowError("flagged overflow value has no numeric payload")
        if self.zero:
            return Fraction(0)
        lead = 0 if self.subnormal else 1
        mag = Fraction((lead << self.fmt.mant_bits) + self.mantissa)
        return self.sign * mag * _pow2(self.exponent - self.fmt.mant_bits)

    def to_float(self) -> float:
        if self.overflow:
            return math.inf * self.sign
        return float(self.to_fraction())


def _round_half_even(num: int, den: int) -> int:
    """Nearest integer to num/den (den > 0), ties to even."""
    q, r = divmod(num, den)
    if 2 * r > den or (2 * r == den and q % 2):
        q += 1
    return q


def round_to_fpa(x: BigReal | Fraction | int, fmt: FpaFormat) -> FpaValue:
    """Round-to-nearest-even of x into fmt, setting overflow/underflow flags.

    For BigReal input the error bound must be strictly below half the ULP
    at x's magnitude (AmbiguousRounding otherwise).
    """
    if isinstance(x, BigReal):
        err = x.err
        v = x.value
    else:
        err = Fraction(0)
        v = _as_fraction(x)
    if v == 0:
        if err != 0 and err >= fmt.ulp(fmt.e_min) / 2:
            raise AmbiguousRounding("error bound exceeds half an ULP at zero")
        return FpaValue(fmt)
    sign = 1 if v > 0 else -1
    a = abs(v)
    # e = floor(log2 a)
    e = a.numerator.bit_length() - a.denominator.bit_length()
    if _pow2(e) > a:
        e -= 1
    elif _pow2(e + 1) <= a:
        e += 1
    if err != 0 and 2 * err >= fmt.ulp(e):
        raise AmbiguousRounding(
            f"error bound {err} is not below half the ULP {fmt.ulp(e)} of the target format")
    if e < fmt.e_min:
        if fmt.subnormals:
            step = _pow2(fmt.e_min - fmt.mant_bits)
            m = _round_half_even((a / step).numerator, (a / step).denominator)
            if m == 0:
                return FpaValue(fmt, sign=sign, underflow=True)
            if m >= (1 << fmt.mant_bits):
                return FpaValue(fmt, sign=sign, exponent=fmt.e_min, mantissa=0, zero=False)
            return FpaValue(fmt, sign=sign, exponent=fmt.e_min, mantissa=m,
                            zero=False, subnormal=True)
        # flush-to-zero semantics: nearest of {0, min_normal}; the tie at
        # min_normal/2 goes to the even candidate, zero
        if a <= fmt.min_normal / 2:
            return FpaValue(fmt, sign=sign, underflow=True)
        return FpaValue(fmt, sign=sign, exponent=fmt.e_min, mantissa=0, zero=False)
    # normal range: significand in [2^m, 2^(m+1))
    scaled = a * _pow2(fmt.mant_bits - e)
    sig = _round_half_even(scaled.numerator, scaled.denominator)
    if sig == (1 << (fmt.mant_bits + 1)):
        sig >>= 1
        e += 1
    if e > fmt.e_max:
        return FpaValue(fmt, sign=sign, overflow=True, zero=False)
    return FpaValue(fmt, sign=sign, exponent=e, mantissa=sig - (1 << fmt.mant_bits),
                    zero=False)


def fpa_separability_bound(tau: Fraction) -> int:
    """Smallest integer phi with phi >= max(2 log2 tau + 5, -2 log2 tau - 1)."""
    tau = _as_fraction(tau)
    if tau <= 0:
        raise ValueError("tau must be positive")

    def ceil_expr(a: int, b: int) -> int:
        # smallest integer phi with 2^(phi - b) >= tau^a, i.e.
        # phi >= a*log2(tau) + b, decided by exact rational comparisons
        phi = b
        goal = tau ** a
        while _pow2(phi - b) < goal:
            phi += 1
        while _pow2(phi - 1 - b) >= goal:
            phi -= 1
        return phi

    return max(ceil_expr(2, 5), ceil_expr(-2, -1))


# ---------------------------------------------------------------------------
# the fixed-point reading used by the phi-bit separability proposition
# ---------------------------------------------------------------------------

def fixed_point_grid(phi: int) -> Fraction:
    """Grid step 2^-((phi-1)/2) of the phi-bit fixed-point representation
    b_{(phi-3)/2} ... b_0 . b_{-1} ... b_{-(phi-1)/2}."""
    if phi < 3 or phi % 2 == 0:
        raise ValueError("phi must be odd and >= 3")
    return _pow2(-((phi - 1) // 2))


def fixed_point_round(x: Fraction, phi: int) -> Fraction:
    """Round x onto the phi-bit fixed-point grid (ties to even), saturating
    at +-2^((phi-1)/2), the format's dynamic range."""
    x = _as_fraction(x)
    step = fixed_point_grid(phi)
    limit = _pow2((phi - 1) // 2)
    scaled = x / step
    q = _round_half_even(scaled.numerator, scaled.denominator)
    v = q * step
    if v > limit:
        return limit
    if v < -limit:
        return -limit
    return v
