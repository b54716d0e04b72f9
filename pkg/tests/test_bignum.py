"""Error-contract tests for the arbitrary-precision layer.

The ln soundness check uses an independently coded oracle: a different
range reduction (into [3/4, 3/2) by powers of two), a different series
(Mercator on y-1 instead of atanh), and four times the precision.
"""

import random
from fractions import Fraction as F

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lossleak.bignum import (
    BigReal,
    FpaFormat,
    decimal_str,
    exp,
    fixed_point_round,
    fpa_separability_bound,
    ln,
    ln1p_pow,
    parse_rational,
    pow_of,
    round_to_fpa,
    sigmoid_pair,
)
from lossleak.errors import AmbiguousRounding, NonPositiveArgument, OverflowBudget

# --------------------------------------------------------------------------
# independent ln oracle (Mercator series at 4x precision, dyadic arithmetic)
# --------------------------------------------------------------------------

def _mercator(t: int, w: int) -> int:
    """sum_{j>=1} (-1)^(j+1) (t*2^-w)^j / j at scale 2^-w, |t*2^-w| <= 1/2."""
    term = t  # t^j at scale 2^-w, sign carried naturally
    acc = t
    j = 2
    while abs(term) > 1:
        term = (term * t) >> w
        acc += -(term // j) if j % 2 == 0 else (term // j)
        j += 1
    return acc


def _oracle_ln2(w: int) -> int:
    # ln 2 = -ln(1 - 1/2), Mercator at t = -1/2
    return -_mercator(-(1 << (w - 1)), w)


def oracle_ln(x: F, bits: int) -> F:
    """Independent ln to ~2^-bits, for cross-checking the main path."""
    w = bits + 48
    num, den = x.numerator, x.denominator
    s = num.bit_length() - den.bit_length()
    yn, yd = (num, den << s) if s >= 0 else (num << -s, den)
    while 2 * yn >= 3 * yd:   # y >= 3/2
        yd <<= 1
        s += 1
    while 4 * yn < 3 * yd:    # y < 3/4
        yn <<= 1
        s -= 1
    t = ((yn - yd) << w) // yd     # t = y - 1 in [-1/4, 1/2)
    return F(_mercator(t, w) + s * _oracle_ln2(w), 1 << w)


@pytest.mark.parametrize("seed", [0, 1])
def test_ln_soundness_against_independent_series(seed):
    rng = random.Random(seed)
    target = F(1, 2 ** 64)
    for _ in range(5000):  # 2 seeds x 5000 = the 10^4 random inputs
        num = rng.randint(1, 10 ** 9)
        den = rng.randint(1, 10 ** 9)
        x = F(num, den)
        got = ln(BigReal.exact(x), target)
        ref = oracle_ln(x, 4 * 64)
        assert abs(got.value - ref) <= got.err + F(1, 2 ** 250)
        assert got.err <= target


def test_ln_spec_examples():
    one = ln(BigReal.exact(1), F(1, 2 ** 64))
    assert one.value == 0 and one.err <= F(1, 2 ** 64)
    l3 = ln(BigReal.exact(3), F(1, 2 ** 20))
    assert abs(l3.value - oracle_ln(F(3), 120)) <= l3.err
    # metamorphic: ln(1/4) = -2 ln 2
    e = F(1, 2 ** 40)
    lq = ln(BigReal.exact(F(1, 4)), e)
    l2 = ln(BigReal.exact(2), e / 2)
    assert abs(lq.value + 2 * l2.value) <= lq.err + 2 * l2.err


def test_ln_rejects_uncertain_positivity():
    with pytest.raises(NonPositiveArgument):
        ln(BigReal(F(1, 10), F(1, 5)), F(1, 100))
    with pytest.raises(NonPositiveArgument):
        ln(BigReal.exact(0), F(1, 100))


def test_exp_examples_and_budget():
    assert exp(BigReal.exact(0), F(1, 2 ** 64)).encloses(1)
    e = F(1, 2 ** 64)
    for p in (2, 3, 5):
        rt = exp(ln(BigReal.exact(p), e), e)
        assert abs(rt.value - p) <= rt.err
    s = ln(BigReal.exact(2), e / 2) + ln(BigReal.exact(3), e / 2)
    six = exp(s, e)
    assert abs(six.value - 6) <= six.err
    with pytest.raises(OverflowBudget):
        exp(BigReal.exact(10 ** 9), F(1, 2), bits_budget=1000)


@given(st.integers(1, 10 ** 6), st.integers(1, 10 ** 6))
@settings(max_examples=60, deadline=None)
def test_exp_ln_roundtrip_property(num, den):
    x = F(num, den)
    e = F(1, 2 ** 80)
    rt = exp(ln(BigReal.exact(x), e), e)
    assert abs(rt.value - x) <= rt.err


def test_pow_and_ln1p():
    assert pow_of(3, F(7), F(1)).value == 3 ** 7
    p = pow_of(3, F(-5, 2), F(1, 2 ** 70))
    assert abs(p.value - F(1) / exp(ln(BigReal.exact(3), F(1, 2 ** 90)) * F(5, 2),
                                    F(1, 2 ** 80)).value) <= 2 * p.err + F(1, 2 ** 60)
    a = ln1p_pow(3, F(-3), F(1, 2 ** 70))
    ref = ln(BigReal.exact(F(28, 27)), F(1, 2 ** 80))
    assert abs(a.value - ref.value) <= a.err + ref.err


def test_sigmoid_pair_sums_to_one():
    p, q = sigmoid_pair(BigReal.exact(F(3, 2)), rel_bits=80)
    assert p.value + q.value == 1
    assert q.err < q.value / 2 ** 70


# --------------------------------------------------------------------------
# FPA formats and rounding
# --------------------------------------------------------------------------

def test_round_to_fpa_spec_examples():
    f7 = FpaFormat.paper_symmetric(7)
    assert f7.exp_bits == f7.mant_bits == 3
    assert round_to_fpa(F(13, 10), f7).to_fraction() == F(5, 4)
    z = round_to_fpa(0, f7)
    assert z.zero and not z.flagged and z.sign == 1
    assert round_to_fpa(F(2) ** (2 ** (f7.exp_bits - 1)), f7).overflow


def test_round_to_fpa_idempotent_and_ambiguous():
    f7 = FpaFormat.paper_symmetric(7)
    rng = random.Random(3)
    for _ in range(300):
        x = F(rng.randint(-10 ** 6, 10 ** 6), rng.randint(1, 10 ** 6))
        v = round_to_fpa(x, f7)
        if v.flagged:
            continue
        again = round_to_fpa(v.to_fraction(), f7)
        assert again.to_fraction() == v.to_fraction()
    with pytest.raises(AmbiguousRounding):
        round_to_fpa(BigReal(F(1), F(1, 4)), f7)


def test_double_preset_matches_native_floats():
    dbl = FpaFormat.ieee754_double()
    rng = random.Random(11)
    for _ in range(2000):
        x = F(rng.randint(1, 2 ** 70) * rng.choice([1, -1]), 1) * F(2) ** rng.randint(-1100, 1000)
        v = round_to_fpa(x, dbl)
        try:
            ref = float(x)
        except OverflowError:
            assert v.overflow
            continue
        if not v.overflow:
            assert v.to_float() == ref


def test_underflow_flush_semantics():
    f7 = FpaFormat.paper_symmetric(7)
    tiny = f7.min_normal / 3
    v = round_to_fpa(tiny, f7)
    assert v.zero and v.underflow
    near = f7.min_normal * F(3, 4)
    assert round_to_fpa(near, f7).to_fraction() == f7.min_normal


def test_fpa_separability_bound_examples():
    assert fpa_separability_bound(F(1)) == 5
    assert fpa_separability_bound(F(1, 4)) == 3
    assert fpa_separability_bound(F(8)) == 11


def test_monotone_fpa_embedding_on_representable_sets():
    # Prop A.1 regime: V already representable in fmt1; rounding into any
    # wider format is then the identity and min-gaps are preserved exactly.
    fmt1 = FpaFormat.paper_symmetric(9)
    fmt2 = FpaFormat(fmt1.exp_bits + 2, fmt1.mant_bits + 3)
    rng = random.Random(5)
    for _ in range(200):
        vals = set()
        while len(vals) < 6:
            x = F(rng.randint(-2 ** 12, 2 ** 12), 2 ** 8)
            v = round_to_fpa(x, fmt1)
            if not v.flagged and not v.zero:
                vals.add(v.to_fraction())
        vs = sorted(vals)
        gap1 = min(b - a for a, b in zip(vs, vs[1:]))
        r2 = sorted(round_to_fpa(v, fmt2).to_fraction() for v in vs)
        assert r2 == vs
        gap2 = min(b - a for a, b in zip(r2, r2[1:]))
        assert gap2 >= gap1


def test_fixed_point_round_grid():
    assert fixed_point_round(F(33, 16), 5) == 2
    assert fixed_point_round(F(1000), 5) == 4  # saturates at 2^((phi-1)/2)
    assert fixed_point_round(F(-1000), 5) == -4


def test_decimal_and_parse_helpers():
    assert decimal_str(F(-314159, 100000), 3) == "-3.142"
    assert decimal_str(BigReal.exact(F(1, 3)), 5) == "0.33333"
    assert parse_rational("1/8") == F(1, 8)
    assert parse_rational("1e-4") == F(1, 10000)
    with pytest.raises(ValueError):
        parse_rational("pi")
