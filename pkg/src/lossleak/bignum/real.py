"""Error-bounded real arithmetic on exact rationals.

A :class:`BigReal` is a pair (value, err) of rationals with the contract
``|value - true| <= err``.  Field operations propagate the bound soundly;
``ln``/``exp`` evaluate to a caller-chosen absolute error via argument
reduction plus integer fixed-point series whose truncation and rounding
errors are tracked as explicit integer ulp counts.  Nothing here is
correctly rounded -- only the bound is normative.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

from ..errors import NonPositiveArgument, OverflowBudget

__all__ = [
    "BigReal",
    "ln",
    "exp",
    "pow_of",
    "ln1p_pow",
    "sigmoid_pair",
    "ln2_interval",
    "ln3_interval",
    "decimal_str",
    "parse_rational",
    "EXP_BITS_BUDGET",
]

#: Largest magnitude exp() will produce, as a power of two.  Exceeding it
#: raises OverflowBudget instead of grinding through million-digit results.
EXP_BITS_BUDGET = 1 << 20

_ZERO = Fraction(0)
_ONE = Fraction(1)


def _bits_for(target: Fraction) -> int:
    """Smallest b with 2**-b < target (target must be > 0)."""
    if target <= 0:
        raise ValueError("error target must be positive")
    return max(1, (target.denominator // target.numerator).bit_length() + 1)


# ---------------------------------------------------------------------------
# fixed-point interval kernel: (v, e) means |v*2^-w - true| <= e*2^-w
# ---------------------------------------------------------------------------

def _fmul(a: int, ea: int, b: int, eb: int, w: int) -> tuple[int, int]:
    v = (a * b) >> w
    e = ((abs(a) * eb + abs(b) * ea + ea * eb) >> w) + 2
    return v, e


def _fdivn(a: int, ea: int, n: int) -> tuple[int, int]:
    # n is an exact positive integer
    return a // n, ea // n + 2


def _atanh_fix(zn: int, zd: int, w: int) -> tuple[int, int]:
    """atanh(zn/zd) at scale 2^-w; requires |zn/zd| <= 1/3."""
    z = (zn << w) // zd
    ez = 1
    z2, e2 = _fmul(z, ez, z, ez, w)
    acc_v, acc_e = z, ez
    term_v, term_e = z, ez
    j = 1
    while abs(term_v) > term_e + 2:
        term_v, term_e = _fmul(term_v, term_e, z2, e2, w)
        cv, ce = _fdivn(term_v, term_e, 2 * j + 1)
        acc_v += cv
        acc_e += ce
        j += 1
    # tail: ratio z^2 <= 1/9, so remainder <= (|t|+e)/8 plus slack
    acc_e += (abs(term_v) + term_e) // 8 + 2
    return acc_v, acc_e


_LN2_CACHE: dict[int, tuple[int, int]] = {}
_LN3_CACHE: dict[int, tuple[int, int]] = {}


def _ln2_fix(w: int) -> tuple[int, int]:
    if w not in _LN2_CACHE:
        a, e = _atanh_fix(1, 3, w)  # ln 2 = 2 atanh(1/3)
        _LN2_CACHE[w] = (2 * a, 2 * e)
    return _LN2_CACHE[w]


def _ln3_fix(w: int) -> tuple[int, int]:
    if w not in _LN3_CACHE:
        l2v, l2e = _ln2_fix(w)
        a, e = _atanh_fix(1, 5, w)  # ln(3/2) = 2 atanh(1/5)
        _LN3_CACHE[w] = (l2v + 2 * a, l2e + 2 * e)
    return _LN3_CACHE[w]


def _ln_fix(num: int, den: int, w: int) -> tuple[int, int]:
    """ln(num/den) at scale 2^-w for exact positive integers num, den."""
    s = num.bit_length() - den.bit_length()
    yn, yd = num, den
    if s >= 0:
        yd <<= s
    else:
        yn <<= -s
    # y in [1/2, 2); renormalize into [2/3, 4/3)
    while 3 * yn >= 4 * yd:
        yd <<= 1
        s += 1
    while 3 * yn < 2 * yd:
        yn <<= 1
        s -= 1
    a, ea = _atanh_fix(yn - yd, yn + yd, w)
    v, e = 2 * a, 2 * ea
    if s:
        l2v, l2e = _ln2_fix(w)
        v += s * l2v
        e += abs(s) * l2e + 1
    return v, e


def _exp_fixed(x_fix: int, ex: int, w: int) -> tuple[int, int, int]:
    """exp of a fixed-point argument: returns (v, e, k) with
    e^x = (v +- e) * 2^(k-w).  Caller must size w so that ex and
    |k|*ulp(ln2) stay far below 2^w."""
    l2v, l2e = _ln2_fix(w)
    k = (2 * x_fix + l2v) // (2 * l2v)
    r = x_fix - k * l2v
    er = ex + abs(k) * l2e + 1
    halvings = 3
    r >>= halvings
    er = (er >> halvings) + 2
    acc_v, acc_e = 1 << w, 0
    term_v, term_e = 1 << w, 0
    j = 1
    while abs(term_v) > term_e + 2:
        tv, te = _fmul(term_v, term_e, r, er, w)
        term_v, term_e = _fdivn(tv, te, j)
        acc_v += term_v
        acc_e += term_e
        j += 1
    acc_e += abs(term_v) + term_e + 2
    for _ in range(halvings):
        acc_v, acc_e = _fmul(acc_v, acc_e, acc_v, acc_e, w)
    return acc_v, acc_e, k


def _pow2(k: int) -> Fraction:
    return Fraction(1 << k) if k >= 0 else Fraction(1, 1 << -k)


def _tiny_bound(k: int, target: Fraction) -> Fraction:
    """A sound error bound for a value known to be <= 2^k (k very negative),
    capped so its denominator stays small."""
    return min(target, _pow2(max(k, -65536)))


def ln2_interval(bits: int = 96) -> tuple[Fraction, Fraction]:
    """Rational (lo, hi) with lo < ln 2 < hi and hi - lo <= 2^(1-bits)."""
    v, e = _ln2_fix(bits + 8)
    u = _pow2(-(bits + 8))
    return (v - e) * u, (v + e) * u


def ln3_interval(bits: int = 96) -> tuple[Fraction, Fraction]:
    """Rational (lo, hi) bracketing ln 3."""
    v, e = _ln3_fix(bits + 8)
    u = _pow2(-(bits + 8))
    return (v - e) * u, (v + e) * u


# ---------------------------------------------------------------------------
# BigReal
# ---------------------------------------------------------------------------

def _as_fraction(x) -> Fraction:
    if isinstance(x, Fraction):
        return x
    if isinstance(x, int):
        return Fraction(x)
    raise TypeError(f"cannot coerce {type(x).__name__} into an exact rational")


@dataclass(frozen=True)
class BigReal:
    """An exact rational approximation plus a non-negative absolute error
    bound: the represented real lies in [value - err, value + err]."""

    value: Fraction
    err: Fraction = _ZERO

    def __post_init__(self):
        object.__setattr__(self, "value", _as_fraction(self.value))
        object.__setattr__(self, "err", _as_fraction(self.err))
        if self.err < 0:
            raise ValueError("error bound must be non-negative")

    # -- constructors ------------------------------------------------------

    @staticmethod
    def exact(x) -> "BigReal":
        return BigReal(_as_fraction(x), _ZERO)

    @property
    def is_exact(self) -> bool:
        return self.err == 0

    @property
    def lower(self) -> Fraction:
        return self.value - self.err

    @property
    def upper(self) -> Fraction:
        return self.value + self.err

    # -- arithmetic ----------------------------------------------------------

    def _coerce(self, other) -> "BigReal":
        if isinstance(other, BigReal):
            return other
        return BigReal(_as_fraction(other), _ZERO)

    def __add__(self, other) -> "BigReal":
        o = self._coerce(other)
        return BigReal(self.value + o.value, self.err + o.err)

    __radd__ = __add__

    def __sub__(self, other) -> "BigReal":
        o = self._coerce(other)
        return BigReal(self.value - o.value, self.err + o.err)

    def __rsub__(self, other) -> "BigReal":
        return self._coerce(other).__sub__(self)

    def __neg__(self) -> "BigReal":
        return BigReal(-self.value, self.err)

    def __mul__(self, other) -> "BigReal":
        o = self._coerce(other)
        err = abs(self.value) * o.err + abs(o.value) * self.err + self.err * o.err
        return BigReal(self.value * o.value, err)

    __rmul__ = __mul__

    def __truediv__(self, other) -> "BigReal":
        o = self._coerce(other)
        mag = abs(o.value)
        if mag <= o.err:
            raise ZeroDivisionError("divisor is not certifiably nonzero")
        err = (self.err * mag + abs(self.value) * o.err) / (mag * (mag - o.err))
        return BigReal(self.value / o.value, err)

    def __rtruediv__(self, other) -> "BigReal":
        return self._coerce(other).__truediv__(self)

    def __abs__(self) -> "BigReal":
        return BigReal(abs(self.value), self.err)

    # -- certified predicates -------------------------------------------------

    def certainly_gt(self, other) -> bool:
        o = self._coerce(other)
        return self.lower > o.upper

    def certainly_lt(self, other) -> bool:
        o = self._coerce(other)
        return self.upper < o.lower

    def certainly_positive(self) -> bool:
        return self.lower > 0

    def encloses(self, true_value) -> bool:
        t = _as_fraction(true_value)
        return self.lower <= t <= self.upper

    def compress(self, bits: int = 128) -> "BigReal":
        """Round the value onto the 2^-bits grid, folding the shift into err.
        Keeps Fraction sizes bounded inside long accumulations."""
        scaled = self.value * (1 << bits)
        v = Fraction(round(scaled), 1 << bits)
        return BigReal(v, self.err + Fraction(1, 1 << bits))

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        return f"BigReal({float(self.value)!r} ± {float(self.err)!r})"


# ---------------------------------------------------------------------------
# transcendental operations with absolute-error targets
# ---------------------------------------------------------------------------

def ln(x: BigReal, target_abs_err: Fraction) -> BigReal:
    """Natural logarithm with ``result.err <= target + x.err / lower(x)``.

    Raises NonPositiveArgument unless x is certifiably positive.
    """
    target = _as_fraction(target_abs_err)
    lower = x.lower
    if lower <= 0:
        raise NonPositiveArgument("ln argument is not certifiably positive")
    prop = x.err / lower
    num, den = x.value.numerator, x.value.denominator
    w = _bits_for(target) + 48
    while True:
        v, e = _ln_fix(num, den, w)
        series_err = Fraction(e, 1 << w)
        if 2 * series_err <= target:
            return BigReal(Fraction(v, 1 << w), series_err + prop)
        w += _bits_for(target) + 32  # pathological only; loop is sound


def _exp_magnitude_bits(upper: Fraction) -> int:
    """k with e^upper <= 2^k (cheap, sound for either sign)."""
    if upper >= 0:
        # 1/ln2 < 1.4427
        return int((upper * Fraction(14427, 10000)).__ceil__()) + 1
    # for negative u, scaling by a *lower* bound of 1/ln2 keeps 2^(u*c) >= e^u
    return int((upper * Fraction(14426, 10000)).__ceil__()) + 1


def exp(x: BigReal, target_abs_err: Fraction, bits_budget: int | None = None) -> BigReal:
    """e**x with ``result.err <= target + 2^k * x.err`` (k bounding the
    result magnitude).  Raises OverflowBudget past the digit budget."""
    target = _as_fraction(target_abs_err)
    budget = EXP_BITS_BUDGET if bits_budget is None else bits_budget
    k_up = _exp_magnitude_bits(x.upper)
    if k_up > budget:
        raise OverflowBudget(f"exp magnitude ~2^{k_up} exceeds budget 2^{budget}")
    if k_up < 0 and _pow2(max(k_up, -65536)) <= target:
        # certifiably below the target: 0 is an adequate answer
        return BigReal(_ZERO, _tiny_bound(k_up, target))
    prop = _pow2(k_up) * x.err
    w = _bits_for(target) + k_up + 48
    num, den = x.value.numerator, x.value.denominator
    while True:
        x_fix = (num << w) // den
        v, e, k = _exp_fixed(x_fix, 1, w)
        series_err = Fraction(e) * _pow2(k - w)
        if 2 * series_err <= target:
            return BigReal(Fraction(v) * _pow2(k - w), series_err + prop)
        w += _bits_for(target) + 32


def pow_of(base: int, exponent: Fraction, target_abs_err: Fraction,
           bits_budget: int | None = None) -> BigReal:
    """base**exponent for an integer base >= 2 and rational exponent,
    via exp(exponent * ln base) with the ln error folded in."""
    if base < 2:
        raise ValueError("pow_of expects an integer base >= 2")
    exponent = _as_fraction(exponent)
    if exponent == 0:
        return BigReal.exact(1)
    target = _as_fraction(target_abs_err)
    budget = EXP_BITS_BUDGET if bits_budget is None else bits_budget
    if exponent.denominator == 1:
        # integer exponents are exact rationals
        e = exponent.numerator
        if e * base.bit_length() > budget:
            raise OverflowBudget(f"{base}^{e} exceeds the bit budget")
        return BigReal.exact(Fraction(base) ** e)
    if exponent < 0:
        # result <= 2^(exponent * floor(log2 base)); shortcut when far below target
        k_res = int((exponent * (base.bit_length() - 1)).__ceil__()) + 1
        if k_res < 0 and _pow2(max(k_res, -65536)) <= target:
            return BigReal(_ZERO, _tiny_bound(k_res, target))
        k_up = 1
    else:
        # base^e <= 2^(e * ceil(log2 base)) <= 2^(e * bitlen)
        k_up = int((exponent * base.bit_length()).__ceil__()) + 1
        if k_up > budget:
            raise OverflowBudget(f"{base}^{exponent} exceeds the bit budget")
    w = _bits_for(target) + k_up + 48
    while True:
        lb_v, lb_e = _ln_fix(base, 1, w)
        en, ed = exponent.numerator, exponent.denominator
        x_fix = (en * lb_v) // ed
        ex = (abs(en) * lb_e) // ed + 2
        v, e, k = _exp_fixed(x_fix, ex, w)
        err = Fraction(e) * _pow2(k - w)
        if 2 * err <= target:
            return BigReal(Fraction(v) * _pow2(k - w), err)
        w += _bits_for(target) + 32


def ln1p_pow(base: int, exponent: Fraction, target_abs_err: Fraction) -> BigReal:
    """ln(1 + base**exponent), stable for exponents of either sign.

    For exponent <= 0 the power is in (0, 1] and ln1p is evaluated directly;
    for exponent > 0 it reduces to exponent*ln(base) + ln(1+base**-exponent).
    """
    exponent = _as_fraction(exponent)
    target = _as_fraction(target_abs_err)
    if exponent > 0:
        tail = ln1p_pow(base, -exponent, target / 2)
        exp_bits = (exponent.numerator // exponent.denominator + 1).bit_length()
        w = _bits_for(target) + exp_bits + 48
        while True:
            lb_v, lb_e = _ln_fix(base, 1, w)
            lnb = BigReal(Fraction(lb_v, 1 << w), Fraction(lb_e, 1 << w))
            out = lnb * exponent + tail
            if out.err <= target:
                return out
            w += _bits_for(target) + 32
    # base**exponent <= 1; a half-target split between power and log suffices
    u = pow_of(base, exponent, target / 4)
    if u.upper <= target / 2:
        # ln(1+u) in [0, u]: midpoint u/2 with err u/2 is inside the target
        half = u.upper / 2
        return BigReal(half, half)
    return ln(BigReal.exact(1) + u, target / 2)


def sigmoid_pair(z: BigReal, rel_bits: int = 96) -> tuple[BigReal, BigReal]:
    """(sigmoid(z), 1 - sigmoid(z)) with ~2^-rel_bits relative error on the
    small side; the two values sum to exactly 1."""
    # u = e^-z; target its magnitude so the small side keeps relative bits
    k_up = _exp_magnitude_bits((-z.value) + z.err)
    target = _pow2(k_up - rel_bits - 4)
    u = exp(-z, target)
    one_plus = BigReal.exact(1) + u
    p = BigReal.exact(1) / one_plus
    q = u / one_plus
    return p, q


# ---------------------------------------------------------------------------
# formatting / parsing
# ---------------------------------------------------------------------------

def decimal_str(x: Fraction | BigReal, digits: int) -> str:
    """Fixed-point decimal rendering with exactly `digits` fractional digits
    (round half to even).  Rendering error <= 10^-digits / 2."""
    v = x.value if isinstance(x, BigReal) else _as_fraction(x)
    scale = 10 ** digits
    scaled = v * scale
    n, d = scaled.numerator, scaled.denominator
    q, r = divmod(n, d)
    if 2 * r > d or (2 * r == d and q % 2):
        q += 1
    sign = "-" if q < 0 else ""
    q = abs(q)
    whole, frac = divmod(q, scale)
    if digits == 0:
        return f"{sign}{whole}"
    return f"{sign}{whole}.{frac:0{digits}d}"


def parse_rational(text: str) -> Fraction:
    """Parse 'p/q', integers, plain decimals, or scientific notation into an
    exact Fraction.  Raises ValueError for anything non-rational."""
    s = text.strip()
    if "/" in s:
        num, den = s.split("/", 1)
        return Fraction(int(num), int(den))
    return Fraction(s)  # Fraction parses decimal and exponent notation
