"""A two-layer ReLU-then-Sigmoid network that outputs a fixed target vector
for every input.

The first layer's weights are all negative, so for a non-negative input v
the pre-activation v^T M1 is certifiably non-positive and ReLU collapses it
to the exact zero vector; the sigmoid layer then sees only its bias, which
is the logit of the target.  Submitting this network is therefore
equivalent to submitting the attack payload itself.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass
from fractions import Fraction

from .bignum import BigReal, decimal_str, ln, parse_rational, sigmoid_pair
from .bignum.real import _as_fraction, _pow2
from .errors import DomainError, DomainViolation

__all__ = ["MutNet", "build", "forward", "export_json", "load_json"]

_GRID = 1 << 16  # weights live on a 2^-16 grid so seeding is reproducible


@dataclass(frozen=True)
class MutNet:
    """m1: d1 x d1, strictly negative entries; m2: d1 x d2 (arbitrary);
    bias: the target's logits, with sigmoid(bias) = target elementwise
    (within the construction's stated error)."""

    m1: tuple[tuple[Fraction, ...], ...]
    m2: tuple[tuple[Fraction, ...], ...]
    bias: tuple[BigReal, ...]
    target: tuple[BigReal, ...]

    @property
    def d1(self) -> int:
        return len(self.m1)

    @property
    def d2(self) -> int:
        return len(self.bias)


def build(target, d1: int, seed: int, *, logit_bits: int = 128) -> MutNet:
    """Generate the network for a target vector in (0,1)^d2.

    m1 is seeded uniform on (-2,-1), m2 on (-1,1); bias_i = ln(t_i/(1-t_i))
    carried to ~2^-logit_bits (relative on the small side).
    """
    tgt = tuple(t if isinstance(t, BigReal) else BigReal.exact(_as_fraction(t))
                for t in target)
    for t in tgt:
        if not (t.lower > 0 and t.upper < 1):
            raise DomainError("target entries must be certifiably inside (0,1)")
    rng = random.Random(seed)
    d2 = len(tgt)

    def neg() -> Fraction:
        return Fraction(-rng.randrange(_GRID, 2 * _GRID), _GRID)

    def any_w() -> Fraction:
        return Fraction(rng.randrange(-_GRID, _GRID), _GRID)

    m1 = tuple(tuple(neg() for _ in range(d1)) for _ in range(d1))
    m2 = tuple(tuple(any_w() for _ in range(d2)) for _ in range(d1))
    bias = []
    for t in tgt:
        eps = min(t.lower, BigReal.exact(1).value - t.upper) * _pow2(-logit_bits)
        num = ln(t, eps)
        den = ln(BigReal.exact(1) - t, eps)
        bias.append((num - den).compress(logit_bits * 4))
    return MutNet(m1, m2, tuple(bias), tgt)


_SIGMOID_CACHE: dict[tuple, tuple[BigReal, ...]] = {}


def forward(net: MutNet, v, nonneg_domain: bool = True) -> tuple[BigReal, ...]:
    """ReLU(v^T M1) -> 0, then sigmoid(0^T M2 + bias): the target, for every
    admissible v.  The output is cached per pre-activation value, so equal
    inputs to the sigmoid layer produce identical outputs (the constancy the
    construction promises)."""
    vin = tuple(x if isinstance(x, BigReal) else BigReal.exact(_as_fraction(x))
                for x in v)
    if len(vin) != net.d1:
        raise DomainViolation(f"input length {len(vin)} != d1 {net.d1}")
    if nonneg_domain:
        for x in vin:
            if x.lower < 0:
                raise DomainViolation("nonneg_domain requires v >= 0 elementwise")
    u2 = []
    for col in range(net.d1):
        acc = BigReal.exact(0)
        for row in range(net.d1):
            acc = acc + vin[row] * net.m1[row][col]
        if acc.upper <= 0:
            u2.append(BigReal.exact(0))  # ReLU of a certified non-positive
        else:
            u2.append(acc if acc.lower > 0 else BigReal(max(acc.value, Fraction(0)),
                                                        acc.err))
    z = []
    for j in range(net.d2):
        acc = net.bias[j]
        for i in range(net.d1):
            if u2[i].value != 0 or u2[i].err != 0:
                acc = acc + u2[i] * net.m2[i][j]
        z.append(acc)
    key = tuple((t.value, t.err) for t in z)
    hit = _SIGMOID_CACHE.get(key)
    if hit is not None:
        return hit
    out = tuple(sigmoid_pair(zj, rel_bits=96)[0] for zj in z)
    if len(_SIGMOID_CACHE) > 64:
        _SIGMOID_CACHE.clear()
    _SIGMOID_CACHE[key] = out
    return out


def export_json(net: MutNet, digits: int = 60) -> dict:
    """Weights as decimal strings, loadable by an external runtime."""
    return {
        "d1": net.d1,
        "d2": net.d2,
        "digits": digits,
        "m1": [[decimal_str(w, digits) for w in row] for row in net.m1],
        "m2": [[decimal_str(w, digits) for w in row] for row in net.m2],
        "bias": [decimal_str(b, digits) for b in net.bias],
    }


def load_json(d: dict) -> MutNet:
    """Reload an exported network; bias entries carry the decimal rounding
    error, targets are recomputed as sigmoid(bias)."""
    digits = d["digits"]
    err = Fraction(1, 2 * 10 ** digits)
    m1 = tuple(tuple(parse_rational(w) for w in row) for row in d["m1"])
    m2 = tuple(tuple(parse_rational(w) for w in row) for row in d["m2"])
    for row in m1:
        for w in row:
            if w >= 0:
                raise DomainError("layer-1 weights must be strictly negative")
    bias = tuple(BigReal(parse_rational(b), err) for b in d["bias"])
    target = tuple(sigmoid_pair(b, rel_bits=96)[0] for b in bias)
    return MutNet(m1, m2, bias, target)


def serialize(net: MutNet, digits: int = 60) -> str:
    return json.dumps(export_json(net, digits))
