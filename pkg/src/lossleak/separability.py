"""Brute-force separability verification and executable negative results.

``lambda_bruteforce`` measures the minimum pairwise gap of a loss over all
labelings at a fixed payload, refining the evaluation precision until the
gap is certified (or a collision is certified exactly through the payload's
rational / power-of-three structure -- a fixed epsilon can never tell
"zero" from "tiny").  The negative results are bound calculators, not
proofs: the discrete L_p collision, and the monotone / bounded set-function
ceilings on tau.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from math import prod
from typing import Callable, Sequence

from .attack import ConstructedPayload
from .bignum import BigReal
from .bignum.real import _as_fraction
from .codes import first_primes
from .errors import NotMonotone, TooLarge
from .losses import (
    LossSpec,
    Pow3LogitMatrix,
    Pow3LogitVector,
    Pow3Matrix,
    Pow3OddsVector,
    ProbabilityMatrix,
    ProbabilityVector,
    enumerate_labelings,
    labeling_rank,
    loss_table,
)

__all__ = [
    "SeparabilityReport",
    "lambda_bruteforce",
    "ambiguity_witness",
    "discrete_lp_check",
    "monotone_bound",
]

LAMBDA_CAP = 6561
_REFINE_ROUNDS = 6


@dataclass(frozen=True)
class SeparabilityReport:
    """Certified bracket on Lambda plus its achieving pair and the verdict
    against the claimed tau (if any)."""

    lambda_low: Fraction
    lambda_high: Fraction
    argmin_pair: tuple[tuple[int, ...], tuple[int, ...]]
    tau_claimed: Fraction | None
    verdict: str  # separable | not-separable | zero-plus-only | zero

    @property
    def lambda_value(self) -> BigReal:
        mid = (self.lambda_low + self.lambda_high) / 2
        return BigReal(mid, (self.lambda_high - self.lambda_low) / 2)

    def to_json(self) -> dict:
        return {
            "lambda_low": str(self.lambda_low),
            "lambda_high": str(self.lambda_high),
            "lambda_float": float((self.lambda_low + self.lambda_high) / 2),
            "argmin_pair": [list(self.argmin_pair[0]), list(self.argmin_pair[1])],
            "tau_claimed": str(self.tau_claimed) if self.tau_claimed is not None else None,
            "verdict": self.verdict,
        }


# --- exact collision certificates ------------------------------------------

def _exact_diff_is_zero(spec: LossSpec, payload, s1: tuple[int, ...],
                        s2: tuple[int, ...]) -> bool | None:
    """True/False when f(s1)-f(s2) == 0 is exactly decidable, None otherwise.

    Decidability rests on unique factorization / Lindemann: a difference of
    the form R + ln(Q) with rational R and positive rational Q is zero iff
    Q == 1 and R == 0.
    """
    fam = spec.family
    if isinstance(payload, (Pow3Matrix, Pow3LogitMatrix)):
        grid = (payload.exponents if isinstance(payload, Pow3Matrix)
                else payload.ln3_multiples)
        d = sum(grid[i][c1] - grid[i][c2] for i, (c1, c2) in enumerate(zip(s1, s2)))
        return d == 0
    if isinstance(payload, Pow3LogitVector) and fam == "sigmoid-ce":
        d = sum(c * (b1 - b2) for c, b1, b2 in zip(payload.ln3_multiples, s1, s2))
        return d == 0
    if isinstance(payload, Pow3OddsVector):
        if fam in ("binary-ce", "kl"):
            d = sum(a * (b1 - b2) for a, b1, b2 in zip(payload.exponents, s1, s2))
            return d == 0
        if fam == "itakura-saito":
            # per-index gap is (3^a - 3^-a) - a*ln3; rational and log parts
            # must vanish independently (ln of a rational != a nonzero rational)
            rat = Fraction(0)
            log_mult = Fraction(0)
            for a, b1, b2 in zip(payload.exponents, s1, s2):
                if a.denominator != 1:
                    return None
                rat += (Fraction(3) ** a.numerator
                        - Fraction(3) ** (-a.numerator)) * (b1 - b2)
                log_mult += -a * (b1 - b2)
            return rat == 0 and log_mult == 0
        return None
    if isinstance(payload, ProbabilityVector):
        if not all(e.is_exact for e in payload.entries):
            return None
        th = [e.value for e in payload.entries]
        if fam in ("binary-ce", "kl"):
            q = Fraction(1)
            for t, b1, b2 in zip(th, s1, s2):
                if b1 != b2:
                    ratio = t / (1 - t)
                    q *= ratio if b1 == 1 else 1 / ratio
            return q == 1
        if fam in ("squared-euclidean", "mahalanobis"):
            scale = spec.alpha_m if fam == "mahalanobis" else Fraction(1)
            d = sum(((b1 - t) ** 2 - (b2 - t) ** 2) * scale
                    for t, b1, b2 in zip(th, s1, s2))
            return d == 0
        if fam == "norm-like" and spec.alpha.denominator == 1:
            a = spec.alpha

            def g(x: Fraction) -> Fraction:
                return 1 + (a - 1) * x ** a.numerator \
                    - a * x ** (a.numerator - 1) + (a - 1) * (1 - x) ** a.numerator

            d = sum((g(t) - g(1 - t)) * (b1 - b2) for t, b1, b2 in zip(th, s1, s2))
            return d == 0
        if fam == "itakura-saito":
            rat = Fraction(0)
            q = Fraction(1)
            for t, b1, b2 in zip(th, s1, s2):
                if b1 != b2:
                    sgn = b1 - b2
                    rat += (1 / t - 1 / (1 - t)) * sgn
                    q *= (t / (1 - t)) ** sgn
            return rat == 0 and q == 1
    if isinstance(payload, ProbabilityMatrix):
        if not all(e.is_exact for r in payload.rows for e in r):
            return None
        q = Fraction(1)
        for i, (c1, c2) in enumerate(zip(s1, s2)):
            if c1 != c2:
                q *= payload.rows[i][c1].value / payload.rows[i][c2].value
        return q == 1
    return None


def _payload_parts(target) -> tuple[LossSpec, object, int, int, Fraction | None]:
    if isinstance(target, ConstructedPayload):
        return (target.plan.loss, target.payload, target.n, target.k,
                target.plan.tau)
    raise TypeError("expected a ConstructedPayload (or use the explicit form)")


def lambda_bruteforce(target, *, tau_claimed: Fraction | None = None,
                      spec: LossSpec | None = None, payload=None,
                      n: int | None = None, k: int | None = None,
                      cap: int = LAMBDA_CAP) -> SeparabilityReport:
    """Exhaustive Lambda over all C(K^N, 2) labeling pairs.

    Accepts a ConstructedPayload, or spec/payload/n/k passed explicitly with
    target=None.  The evaluation budget tightens adaptively until the
    minimum gap is certified positive (or certified zero exactly).
    """
    if target is not None:
        spec, payload, n, k, tau_default = _payload_parts(target)
        if tau_claimed is None:
            tau_claimed = None if tau_default is None else 2 * tau_default
    if spec is None or payload is None or n is None or k is None:
        raise ValueError("need a payload and its shape")
    total = k ** n
    if total > cap:
        raise TooLarge(f"{k}^{n} labelings exceed the cap {cap}")
    sigmas = list(enumerate_labelings(n, k))
    eps = (tau_claimed / 16) if tau_claimed else Fraction(1, 1 << 40)
    zero_pair = None
    for _ in range(_REFINE_ROUNDS):
        table = loss_table(spec, payload, n, k, eps)
        order = sorted(range(total), key=lambda r: table[r].value)
        best_gap = None
        undecided = []
        for a, b in zip(order, order[1:]):
            gap = table[b].value - table[a].value
            slack = table[a].err + table[b].err
            if best_gap is None or gap < best_gap[0]:
                best_gap = (gap, slack, a, b)
            if gap <= 2 * slack:
                undecided.append((a, b))
        gap, slack, ia, ib = best_gap
        pair = (sigmas[ia], sigmas[ib])
        if not undecided:
            low, high = gap - slack, gap + slack
            return _verdict(low, high, pair, tau_claimed)
        # try to settle the undecided adjacents exactly
        all_known = True
        for a, b in undecided:
            z = _exact_diff_is_zero(spec, payload, sigmas[a], sigmas[b])
            if z is True:
                zero_pair = (sigmas[a], sigmas[b])
                return _verdict(Fraction(0), Fraction(0), zero_pair, tau_claimed)
            if z is None:
                all_known = False
        if all_known:
            # every tight adjacent pair is certified nonzero, but the gap is
            # below numeric resolution: refine to bracket it
            eps /= 1 << 16
            continue
        eps /= 1 << 16
    raise RuntimeError(
        "lambda_bruteforce could not certify the minimum gap; "
        "payload needs an exact-structure certificate or a smaller claim")


def _verdict(low: Fraction, high: Fraction, pair, tau_claimed) -> SeparabilityReport:
    if low < 0:
        low = Fraction(0)
    if high == 0:
        verdict = "zero"
    elif tau_claimed is None:
        verdict = "zero-plus-only"
    elif low >= tau_claimed:
        verdict = "separable"
    else:
        verdict = "not-separable"
    return SeparabilityReport(low, high, pair, tau_claimed, verdict)


def ambiguity_witness(target, tau: Fraction, *, cap: int = LAMBDA_CAP):
    """If Lambda < 2*tau, the midpoint of the two closest loss values: a
    value consistent with both labelings under noise < tau.  None when the
    payload is certified 2*tau-separable."""
    tau = _as_fraction(tau)
    spec, payload, n, k, _ = _payload_parts(target)
    report = lambda_bruteforce(target, tau_claimed=2 * tau, cap=cap)
    if report.lambda_low >= 2 * tau:
        return None
    if report.lambda_high >= 2 * tau > report.lambda_low:
        raise RuntimeError("Lambda is numerically indistinguishable from 2*tau")
    s1, s2 = report.argmin_pair
    eps = tau / 64 if tau > 0 else Fraction(1, 1 << 40)
    table = loss_table(spec, payload, n, k, eps)
    f1 = table[labeling_rank(s1, k)]
    f2 = table[labeling_rank(s2, k)]
    ell = (f1 + f2) / 2
    return ell, (s1, s2)


def discrete_lp_check(p: Fraction | int, n: int, *, cap_n: int = 10,
                      ) -> SeparabilityReport:
    """Exhaustively confirm Lambda = 0 for f(sigma, theta) = ||theta-sigma||_p
    on the discrete domain theta in {0,1}^N, for every theta.

    f depends on sigma only through the Hamming distance h = |I(sigma,theta)|
    via the strictly monotone map h^(1/p), so equal outputs are decided
    exactly on the integers h.
    """
    if n > cap_n:
        raise TooLarge(f"N={n} exceeds the exhaustive cap {cap_n}")
    if n < 2:
        raise ValueError("the collision argument needs N >= 2")
    if _as_fraction(p) <= 0:
        raise ValueError("p must be positive")
    witness = None
    for theta in range(1 << n):
        seen: dict[int, int] = {}
        found = None
        for sigma in range(1 << n):
            h = bin(sigma ^ theta).count("1")
            if h in seen:
                found = (seen[h], sigma)
                break
            seen[h] = sigma
        if found is None:
            raise AssertionError("no collision found; the theorem is violated")
        if witness is None:
            s1 = tuple((found[0] >> i) & 1 for i in range(n))
            s2 = tuple((found[1] >> i) & 1 for i in range(n))
            witness = (s1, s2)
    return SeparabilityReport(Fraction(0), Fraction(0), witness, None, "zero")


def monotone_bound(f_oracle: Callable, n: int, *, theta=None,
                   beta: Fraction | None = None, cap_n: int = 20) -> Fraction:
    """Largest tau not excluded for a monotone set function: half the minimum
    marginal gain min_{B, j not in B} (f(B+{j}) - f(B)) / 2, further capped by
    beta/N when an upper bound beta on f is supplied.

    The oracle receives a frozenset of 1-based indices (and theta when
    given).  A negative marginal raises NotMonotone.
    """
    if n > cap_n:
        raise TooLarge(f"N={n} exceeds the cap {cap_n}")

    def call(mask: int) -> Fraction:
        subset = frozenset(i + 1 for i in range(n) if mask >> i & 1)
        v = f_oracle(subset, theta) if theta is not None else f_oracle(subset)
        return _as_fraction(v)

    values = [call(m) for m in range(1 << n)]
    best: Fraction | None = None
    for m in range(1 << n):
        for j in range(n):
            if m >> j & 1:
                continue
            marginal = values[m | (1 << j)] - values[m]
            if marginal < 0:
                raise NotMonotone(
                    f"f decreases when adding {j + 1} to mask {m:b}")
            if best is None or marginal < best:
                best = marginal
    bound = best / 2
    if beta is not None:
        bound = min(bound, _as_fraction(beta) / n)
    return bound
