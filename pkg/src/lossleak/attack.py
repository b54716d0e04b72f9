"""Payload construction and decoding for label inference from loss values.

Each construction returns a :class:`ConstructedPayload` whose entries are
carried exactly (powers of three with rational exponents, or exact
rationals), a label-independent constant C, and a decoder tag.  Loss
differences then collapse onto an integer lattice scaled by tau*ln3 (or
onto prime products / superincreasing gaps), so decoding is a snap plus a
bit extraction instead of a K^N search.  ``decode_bruteforce`` is the
literal argmin used as the test oracle for the fast paths.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from fractions import Fraction
from math import prod
from typing import Callable, Sequence

from .bignum import BigReal, FpaFormat, decimal_str, ln, ln3_interval, parse_rational
from .bignum import exp as bigexp
from .bignum import round_to_fpa
from .bignum.real import _as_fraction, _pow2
from .codes import (
    decode_codeword,
    encode_codeword,
    factor_over_primes,
    first_primes,
    snap_to_codeword,
    snap_to_subset,
)
from .errors import (
    BudgetExceeded,
    DecodingFailed,
    Infeasible,
    IrrationalTau,
    NoValidCodeword,
    NotSquarefreeProduct,
    TooLarge,
    UnsupportedLoss,
)
from .losses import (
    LabelVector,
    LogitMatrix,
    LogitVector,
    LossSpec,
    Pow3LogitMatrix,
    Pow3LogitVector,
    Pow3Matrix,
    Pow3OddsVector,
    ProbabilityMatrix,
    ProbabilityVector,
    enumerate_labelings,
    g_value,
    labeling_rank,
    loss_table,
    loss_value,
    materialize,
)

__all__ = [
    "AttackPlan",
    "ConstructedPayload",
    "MultiQueryPlan",
    "as_tau",
    "construct",
    "construct_kce",
    "construct_softmax",
    "construct_sigmoid",
    "construct_binary_baseline",
    "construct_linear_decomposable",
    "construct_unnoised",
    "construct_mahalanobis",
    "construct_bregman_general",
    "bisection_solver",
    "decode",
    "decode_bruteforce",
    "plan_multiquery",
    "decode_multiquery",
    "payload_to_json",
    "payload_from_json",
]

BRUTEFORCE_CAP = 3 ** 8
#: cap on the base-3 exponent magnitude a construction may require
MAX_EXPONENT = Fraction(1 << 26)

_LN3_LO, _LN3_HI = ln3_interval(96)


def as_tau(tau) -> Fraction:
    """Coerce a noise bound into an exact positive rational.

    Floats are rejected rather than silently reinterpreted; strings must
    parse as rationals ('1/8', '0.25', '1e-4').
    """
    if isinstance(tau, bool) or isinstance(tau, float):
        raise IrrationalTau(
            "tau must be an exact rational (int, Fraction, or a string like '1/8')")
    if isinstance(tau, str):
        try:
            tau = parse_rational(tau)
        except (ValueError, ZeroDivisionError) as e:
            raise IrrationalTau(f"cannot read {tau!r} as a rational noise bound") from e
    tau = _as_fraction(tau)
    if tau <= 0:
        raise IrrationalTau("tau must be positive")
    return tau


@dataclass(frozen=True)
class AttackPlan:
    """Everything the attacker fixed before querying: the loss, the shape,
    the noise bound, the block size, and the two error budgets."""

    loss: LossSpec
    n: int
    k: int
    tau: Fraction | None            # None marks an unnoised 0+ construction
    block: int
    oracle_err: Fraction
    attacker_err: Fraction

    def __post_init__(self):
        if self.n < 1 or not 1 <= self.block <= self.n:
            raise ValueError("need 1 <= block <= n")
        if self.tau is not None:
            object.__setattr__(self, "tau", as_tau(self.tau))
        object.__setattr__(self, "oracle_err", _as_fraction(self.oracle_err))
        object.__setattr__(self, "attacker_err", _as_fraction(self.attacker_err))
        if self.oracle_err < 0 or self.attacker_err < 0:
            raise ValueError("budgets must be non-negative")

    def check_codeword_budget(self):
        # decoding rule: (tau + oracle_err + attacker_err) / (tau ln 3) < 1
        assert self.tau is not None
        if self.tau + self.oracle_err + self.attacker_err >= self.tau * _LN3_LO:
            raise BudgetExceeded(
                "budgets violate (tau + oracle_err + attacker_err) < tau ln 3")


def _default_budgets(tau: Fraction) -> tuple[Fraction, Fraction]:
    return tau / 32, tau / 32


@dataclass
class ConstructedPayload:
    """A ready-to-submit prediction payload plus everything needed to decode.

    constant is the label-independent part C of the loss on this payload,
    precomputed with err <= plan.attacker_err.  decoder selects the fast
    path; scale is the lattice unit (tau for the ln3 lattices, 2*tau for the
    Mahalanobis bit lattice).  live_block marks the slice of a longer hidden
    vector this payload targets (multi-query); entries outside it are
    neutral in the full-length view.
    """

    plan: AttackPlan
    payload: object
    constant: BigReal
    scale: Fraction
    decoder: str
    orientation: str = "zero"           # bit value that sets a lattice bit
    primes: tuple[int, ...] | None = None
    gaps: tuple[BigReal, ...] | None = None   # superincreasing decode
    live_block: tuple[int, int] | None = None
    total_n: int | None = None          # full hidden-vector length (multi-query)
    _table: list | None = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return self.plan.n

    @property
    def k(self) -> int:
        return self.plan.k

    def full_payload(self):
        """Full-length view with neutral entries outside the live block."""
        if self.live_block is None:
            return self.payload
        lo, hi = self.live_block
        total = self.total_n
        pad_lo, pad_hi = lo, total - hi
        p = self.payload
        if isinstance(p, Pow3OddsVector):
            z = (Fraction(0),)
            return Pow3OddsVector(z * pad_lo + p.exponents + z * pad_hi)
        if isinstance(p, Pow3LogitVector):
            z = (Fraction(0),)
            return Pow3LogitVector(z * pad_lo + p.ln3_multiples + z * pad_hi)
        if isinstance(p, Pow3Matrix):
            uniform = (tuple(Fraction(0) for _ in range(self.k)),)
            return Pow3Matrix(uniform * pad_lo + p.exponents + uniform * pad_hi)
        if isinstance(p, Pow3LogitMatrix):
            uniform = (tuple(Fraction(0) for _ in range(self.k)),)
            return Pow3LogitMatrix(uniform * pad_lo + p.ln3_multiples + uniform * pad_hi)
        if isinstance(p, ProbabilityVector):
            h = (BigReal.exact(Fraction(1, 2)),)
            return ProbabilityVector(h * pad_lo + p.entries + h * pad_hi)
        raise UnsupportedLoss("no neutral element for this payload type")


# ---------------------------------------------------------------------------
# constructions
# ---------------------------------------------------------------------------

def _ref_constant(spec: LossSpec, payload, plan: AttackPlan, decoder: str,
                  orientation: str, scale: Fraction) -> BigReal:
    """C from one reference evaluation: the labeling whose lattice point is 0."""
    n, k = plan.n, plan.k
    eps = plan.attacker_err / 2 if plan.attacker_err > 0 else Fraction(1, 1 << 96)
    if decoder == "block_codeword":
        ref = (0,) * n
        f0 = loss_value(spec, ref, payload, eps)
        m0 = encode_codeword(ref, k).value
        lo, hi = ln3_interval(max(96, (m0.bit_length() + 96)))
        ln3 = BigReal((lo + hi) / 2, (hi - lo) / 2)
        return f0 + ln3 * (scale * m0)
    if decoder == "bit_subset":
        ref = (1,) * n if orientation == "one" else (0,) * n
        return loss_value(spec, ref, payload, eps)
    # bit_lattice, prime_product, superincreasing, bruteforce: C = f(all zeros)
    return loss_value(spec, (0,) * n, payload, eps)


def _check_exponent_budget(e: Fraction):
    if abs(e) > MAX_EXPONENT:
        raise BudgetExceeded(
            f"construction needs base-3 exponent {e}, beyond the 2^26 budget")


def construct_kce(n: int, k: int, tau, *, budgets: tuple[Fraction, Fraction] | None = None,
                  ) -> ConstructedPayload:
    """Multiclass cross-entropy payload: theta[i][k] proportional to
    3^(2^((i-1)K + k + 1) * N * tau); the loss lands on the block-codeword
    lattice with gap 2*tau*ln3."""
    tau = as_tau(tau)
    _check_exponent_budget(Fraction(1 << (n * k)) * n * tau)
    oe, ae = budgets or _default_budgets(tau)
    spec = LossSpec("kary-ce", k_classes=k)
    plan = AttackPlan(spec, n, k, tau, n, oe, ae)
    plan.check_codeword_budget()
    exps = tuple(
        tuple(Fraction(1 << ((i - 1) * k + c + 1)) * n * tau for c in range(k))
        for i in range(1, n + 1))
    payload = Pow3Matrix(exps)
    c = _ref_constant(spec, payload, plan, "block_codeword", "zero", tau)
    return ConstructedPayload(plan, payload, c, tau, "block_codeword")


def construct_softmax(n: int, k: int, tau, *, budgets=None) -> ConstructedPayload:
    """Softmax logits whose rowwise softmax equals the kce matrix; gauge
    fixed by zeroing class K-1, so logits are c * ln3 with integer-like c."""
    tau = as_tau(tau)
    _check_exponent_budget(Fraction(1 << (n * k)) * n * tau)
    oe, ae = budgets or _default_budgets(tau)
    spec = LossSpec("softmax-ce", k_classes=k)
    plan = AttackPlan(spec, n, k, tau, n, oe, ae)
    plan.check_codeword_budget()
    coefs = tuple(
        tuple((Fraction(1 << ((i - 1) * k + c + 1)) - Fraction(1 << (i * k))) * n * tau
              for c in range(k))
        for i in range(1, n + 1))
    payload = Pow3LogitMatrix(coefs)
    c = _ref_constant(spec, payload, plan, "block_codeword", "zero", tau)
    return ConstructedPayload(plan, payload, c, tau, "block_codeword")


def construct_sigmoid(n: int, tau, *, budgets=None) -> ConstructedPayload:
    """Sigmoid logits theta'_i = ln(theta_{i,1}/(1-theta_{i,1})) of the K=2
    kce matrix, i.e. 2^(2i-1) * N * tau multiples of ln3."""
    tau = as_tau(tau)
    _check_exponent_budget(Fraction(1 << (2 * n)) * n * tau)
    oe, ae = budgets or _default_budgets(tau)
    spec = LossSpec("sigmoid-ce")
    plan = AttackPlan(spec, n, 2, tau, n, oe, ae)
    plan.check_codeword_budget()
    coefs = tuple(Fraction(1 << (2 * i - 1)) * n * tau for i in range(1, n + 1))
    payload = Pow3LogitVector(coefs)
    c = _ref_constant(spec, payload, plan, "block_codeword", "zero", tau)
    return ConstructedPayload(plan, payload, c, tau, "block_codeword")


def construct_binary_baseline(n: int, tau, *, orientation: str = "one",
                              budgets=None) -> ConstructedPayload:
    """Binary cross-entropy baseline with log-odds 2^i * N * tau * ln3.

    orientation "one" is the literal theta_i = 3^(2^i N tau)/(1+3^(2^i N tau))
    (probabilities near 1); "zero" is the mirrored theta_i = (1+3^(2^i N tau))^-1,
    which matches the bit-cost comparison min_i(-ln theta_i) = Omega(2^N N tau)
    and survives far longer under finite precision.  Separability is identical.
    """
    tau = as_tau(tau)
    if orientation not in ("one", "zero"):
        raise ValueError("orientation must be 'one' or 'zero'")
    _check_exponent_budget(Fraction(1 << n) * n * tau)
    oe, ae = budgets or _default_budgets(tau)
    spec = LossSpec("binary-ce")
    plan = AttackPlan(spec, n, 2, tau, n, oe, ae)
    plan.check_codeword_budget()
    sign = 1 if orientation == "one" else -1
    payload = Pow3OddsVector(tuple(sign * Fraction(1 << i) * n * tau
                                   for i in range(1, n + 1)))
    c = _ref_constant(spec, payload, plan, "bit_subset", orientation, tau)
    return ConstructedPayload(plan, payload, c, tau, "bit_subset", orientation)


def construct_linear_decomposable(spec: LossSpec, n: int, tau, *, budgets=None,
                                  ) -> ConstructedPayload:
    """Itakura-Saito payload theta_i = (1 + 3^(2^i N tau))^-1, satisfying the
    g-gap condition g(theta_i) - g(1-theta_i) > 2^i N tau."""
    if spec.family != "itakura-saito":
        raise UnsupportedLoss(
            "only the Itakura-Saito loss has a closed-form noised construction here")
    tau = as_tau(tau)
    _check_exponent_budget(Fraction(1 << n) * n * tau)
    oe, ae = budgets or _default_budgets(tau)
    plan = AttackPlan(spec, n, 2, tau, n, oe, ae)
    plan.check_codeword_budget()
    payload = Pow3OddsVector(tuple(-Fraction(1 << i) * n * tau for i in range(1, n + 1)))
    c = _ref_constant(spec, payload, plan, "superincreasing", "zero", tau)
    eps = plan.attacker_err / (4 * n)
    gaps = []
    for i in range(n):
        t1 = g_value(spec, _odds_entry(payload, i), eps)
        t0 = g_value(spec, BigReal.exact(1) - _odds_entry(payload, i), eps)
        gaps.append((t1 - t0).compress(256))
    return ConstructedPayload(plan, payload, c, tau, "superincreasing",
                              gaps=tuple(gaps))


def _odds_entry(payload: Pow3OddsVector, i: int) -> BigReal:
    return materialize(payload).entries[i]


def construct_unnoised(spec: LossSpec, n: int, *, bisection_bits: int | None = None,
                       ) -> ConstructedPayload:
    """0+-separable payloads for the squared-Euclidean / norm-like losses via
    log-prime subset sums; decoding is exact prime factorization."""
    if spec.family not in ("squared-euclidean", "norm-like"):
        raise UnsupportedLoss("unnoised construction covers squared-euclidean/norm-like")
    primes = tuple(first_primes(n))
    pi = prod(primes)
    # error budgets sized so the recovered product lands within 1/2 of an integer
    oe = Fraction(1, 32 * n * n * pi)
    ae = Fraction(1, 64 * n * n * pi)
    plan = AttackPlan(spec, n, 2, None, n, oe, ae)
    delta = Fraction(1, 128 * n * n * pi)
    if spec.family == "squared-euclidean":
        lnp_n = ln(BigReal.exact(primes[-1]), delta)
        if not lnp_n.certainly_lt(n):
            raise Infeasible(f"squared-euclidean needs ln p_N < N; fails at N={n}")
        entries = []
        for p in primes:
            lnp = ln(BigReal.exact(p), delta)
            entries.append(((BigReal.exact(1) - lnp / n) / 2).compress(256 + n * n))
        payload = ProbabilityVector(tuple(entries))
    else:
        alpha = spec.alpha
        lnp_n = ln(BigReal.exact(primes[-1]), delta)
        if not lnp_n.certainly_lt(n * alpha):
            raise Infeasible("norm-like needs ln p_N <= N*alpha")
        bits = bisection_bits or (8 + (128 * n * n * pi * (1 + alpha * alpha)
                                       ).numerator.bit_length())
        entries = tuple(_normlike_root(p, n, alpha, bits) for p in primes)
        payload = ProbabilityVector(entries)
    c = _ref_constant(spec, payload, plan, "prime_product", "zero", Fraction(1))
    return ConstructedPayload(plan, payload, c, Fraction(1), "prime_product",
                              primes=primes)


def _normlike_root(p: int, n: int, alpha: Fraction, bits: int) -> BigReal:
    """Root of (1-x)^(alpha-1) - x^(alpha-1) = ln(p)/(N*alpha) on [0, 1/2],
    to absolute error ~2^-bits, certified a posteriori via a slope bound."""
    from .losses import _bigreal_pow

    target = ln(BigReal.exact(p), _pow2(-(bits + 16))) / (n * alpha)

    def phi(x: Fraction) -> BigReal:
        xb = BigReal.exact(x)
        sub = _pow2(-(bits + 24))
        return (_bigreal_pow(BigReal.exact(1) - xb, alpha - 1, sub)
                - _bigreal_pow(xb, alpha - 1, sub))

    lo, hi = Fraction(0), Fraction(1, 2)
    for _ in range(bits + 4):
        mid = (lo + hi) / 2
        if phi(mid).value > target.value:
            lo = mid          # phi decreasing: still above the target
        else:
            hi = mid
    root = (lo + hi) / 2
    # |phi'(x)| >= (alpha-1) * (1-x)^(alpha-2) >= (alpha-1) * 2^(2-alpha)
    slope_lo = (alpha - 1) * _bigreal_pow(BigReal.exact(Fraction(1, 2)), alpha - 2,
                                          _pow2(-64)).lower
    residual = phi(root) - target
    err = (abs(residual.value) + residual.err) / slope_lo + _pow2(-(bits + 2))
    return BigReal(root, err)


def construct_mahalanobis(n: int, tau, matrix, *, mode: str = "corrected",
                          budgets=None) -> ConstructedPayload:
    """Mahalanobis payload.

    mode="corrected" (default) spaces 1-2*theta_i on the distinct-subset-sum
    lattice (2N*tau/alpha)*2^(i-1), giving gap exactly 2*tau and a bit
    decoder.  mode="paper" is the uniform theta of the source theorem,
    retained because it is *not* separable once two labelings share a
    Hamming weight; decode falls back to brute force there.
    """
    tau = as_tau(tau)
    spec = LossSpec("mahalanobis", matrix=tuple(_as_fraction(v) for v in matrix))
    alpha = spec.alpha_m
    oe, ae = budgets or _default_budgets(tau)
    plan = AttackPlan(spec, n, 2, tau, n, oe, ae)
    if mode == "corrected":
        if not tau < alpha / (n * (1 << n)):
            raise Infeasible("corrected mode needs tau < alpha_M / (N * 2^N)")
        unit = 2 * n * tau / alpha
        entries = tuple(BigReal.exact((1 - unit * (1 << (i - 1))) / 2)
                        for i in range(1, n + 1))
        payload = ProbabilityVector(entries)
        c = _ref_constant(spec, payload, plan, "bit_lattice", "zero", 2 * tau)
        return ConstructedPayload(plan, payload, c, 2 * tau, "bit_lattice")
    if mode == "paper":
        if not tau < alpha / n:
            raise Infeasible("paper mode needs tau < alpha_M / N")
        theta = (1 - n * tau / alpha) / 2
        payload = ProbabilityVector(tuple(BigReal.exact(theta) for _ in range(n)))
        c = _ref_constant(spec, payload, plan, "bruteforce", "zero", tau)
        return ConstructedPayload(plan, payload, c, tau, "bruteforce")
    raise ValueError("mode must be 'corrected' or 'paper'")


def bisection_solver(lo: Fraction = Fraction(1, 1 << 40),
                     hi: Fraction = Fraction(1, 2), steps: int = 200) -> Callable:
    """Default equation solver for construct_bregman_general.

    Solves h'(x) + h'(1-x) = target * ln3 on [lo, hi] by bisection (the ln3
    inflation mirrors the closed-form constructions and is what makes the
    resulting payload decodable, not merely above the bound) and returns the
    strictly-greater side of the root.  Returns None when no bracket exists,
    e.g. when the derivative sum cannot reach the scaled target at all.
    """

    def solve(h_prime: Callable[[Fraction], Fraction], target: Fraction):
        goal = _as_fraction(target) * _LN3_HI

        def psi(x: Fraction) -> Fraction:
            return _as_fraction(h_prime(x)) + _as_fraction(h_prime(1 - x)) - goal

        a, b = lo, hi
        pa, pb = psi(a), psi(b)
        if (pa > 0) == (pb > 0):
            return None
        if pa <= 0:  # keep a on the strictly-positive side
            a, b, pa, pb = b, a, pb, pa
        for _ in range(steps):
            mid = (a + b) / 2
            pm = psi(mid)
            if pm > 0:
                a, pa = mid, pm
            else:
                b, pb = mid, pm
        return a  # strictly above the scaled target by construction

    return solve


def construct_bregman_general(h_prime: Callable[[Fraction], Fraction],
                              equation_solver: Callable, n: int, tau,
                              *, spec: LossSpec | None = None) -> ConstructedPayload:
    """Generic additive-Bregman payload: for each i the solver must produce
    theta_i in (0,1) with h'(theta_i) + h'(1-theta_i) > 2^i * N * tau,
    checked against the supplied derivative handle; Infeasible otherwise.
    Decoding is the brute-force argmin (no lattice is guaranteed here)."""
    tau = as_tau(tau)
    spec = spec or LossSpec("binary-ce")
    oe, ae = _default_budgets(tau)
    plan = AttackPlan(spec, n, 2, tau, n, oe, ae)
    entries = []
    for i in range(1, n + 1):
        target = Fraction(1 << i) * n * tau
        theta = equation_solver(h_prime, target)
        if theta is None:
            raise Infeasible(f"no admissible theta for index {i} (target {target})")
        theta = _as_fraction(theta)
        if not 0 < theta < 1:
            raise Infeasible(f"solver returned theta={theta} outside (0,1)")
        if not _as_fraction(h_prime(theta)) + _as_fraction(h_prime(1 - theta)) > target:
            raise Infeasible(
                f"solver's theta violates h'(theta)+h'(1-theta) > {target} at index {i}")
        entries.append(BigReal.exact(theta))
    payload = ProbabilityVector(tuple(entries))
    c = _ref_constant(spec, payload, plan, "bruteforce", "zero", tau)
    return ConstructedPayload(plan, payload, c, tau, "bruteforce")


def construct(spec: LossSpec, n: int, tau=None, **kw) -> ConstructedPayload:
    """Family dispatcher used by the CLI and the multi-query planner."""
    fam = spec.family
    if fam == "kary-ce":
        return construct_kce(n, spec.k_classes, tau, **kw)
    if fam == "softmax-ce":
        return construct_softmax(n, spec.k_classes, tau, **kw)
    if fam == "sigmoid-ce":
        return construct_sigmoid(n, tau, **kw)
    if fam in ("binary-ce", "kl"):
        return construct_binary_baseline(n, tau, **kw)
    if fam == "itakura-saito":
        return construct_linear_decomposable(spec, n, tau, **kw)
    if fam in ("squared-euclidean", "norm-like"):
        return construct_unnoised(spec, n, **kw)
    if fam == "mahalanobis":
        return construct_mahalanobis(n, tau, spec.matrix, **kw)
    raise UnsupportedLoss(fam)


# ---------------------------------------------------------------------------
# decoding
# ---------------------------------------------------------------------------

def _as_bigreal(ell) -> BigReal:
    if isinstance(ell, BigReal):
        return ell
    return BigReal.exact(_as_fraction(ell))


def _ln3_unit(scale: Fraction, bits: int = 192) -> BigReal:
    lo, hi = ln3_interval(bits)
    return BigReal((lo + hi) / 2, (hi - lo) / 2) * scale


def decode(cp: ConstructedPayload, ell) -> LabelVector:
    """Recover the hidden labeling from one (noisy) loss value.

    Caller guarantees |ell - f(sigma*, payload)| < tau; violated budgets
    surface as DecodingFailed.
    """
    ell = _as_bigreal(ell)
    n, k = cp.n, cp.k
    try:
        if cp.decoder == "block_codeword":
            x = (cp.constant - ell) / _ln3_unit(cp.scale)
            cw = snap_to_codeword(x.value, n, k)
            if abs(x.value - cw.value) > 1:
                raise DecodingFailed("codeword displacement exceeds 1")
            return LabelVector(decode_codeword(cw, n, k), k)
        if cp.decoder == "bit_subset":
            x = (ell - cp.constant) / _ln3_unit(cp.scale)
            m = snap_to_subset(x.value, n, lowest_bit=1)
            bits = [(m >> i) & 1 for i in range(1, n + 1)]
            if cp.orientation == "one":
                bits = [1 - b for b in bits]
            return LabelVector(tuple(bits), 2)
        if cp.decoder == "bit_lattice":
            x = (ell - cp.constant) / cp.scale
            m = round(x.value)
            if not (0 <= m < (1 << n)) or abs(x.value - m) >= Fraction(1, 2):
                raise DecodingFailed("bit-lattice displacement reached 1/2")
            return LabelVector(tuple((m >> i) & 1 for i in range(n)), 2)
        if cp.decoder == "superincreasing":
            y = (ell - cp.constant) * n
            bits = [0] * n
            for i in reversed(range(n)):
                d = cp.gaps[i]
                if y.value >= d.value / 2:
                    bits[i] = 1
                    y = y - d
            slack = n * ((cp.plan.tau or 0) + cp.plan.oracle_err + cp.plan.attacker_err)
            if abs(y.value) > slack + y.err + sum(g.err for g in cp.gaps):
                raise DecodingFailed("superincreasing residual exceeds the noise budget")
            return LabelVector(tuple(bits), 2)
        if cp.decoder == "prime_product":
            u = (ell - cp.constant) * (n * n)
            prod_hat = bigexp(u, Fraction(1, 8))
            target = round(prod_hat.value)
            if target < 1 or abs(prod_hat.value - target) >= Fraction(1, 2):
                raise DecodingFailed("recovered prime product is not near an integer")
            idx = factor_over_primes(target, cp.primes)
            return LabelVector(tuple(1 if (i + 1) in idx else 0 for i in range(n)), 2)
        if cp.decoder == "bruteforce":
            return decode_bruteforce(cp, ell)
        raise DecodingFailed(f"unknown decoder {cp.decoder!r}")
    except (NoValidCodeword, NotSquarefreeProduct) as e:
        raise DecodingFailed(str(e)) from e


def _value_table(cp: ConstructedPayload, eps: Fraction) -> list[BigReal]:
    if cp._table is None or cp._table[0] > eps:
        cp._table = (eps, loss_table(cp.plan.loss, cp.payload, cp.n, cp.k, eps))
    return cp._table[1]


def decode_bruteforce(cp: ConstructedPayload, ell, cap: int = BRUTEFORCE_CAP,
                      ) -> LabelVector:
    """Literal argmin over all labelings; the test oracle for decode."""
    n, k = cp.n, cp.k
    if k ** n > cap:
        raise TooLarge(f"{k}^{n} labelings exceed the brute-force cap {cap}")
    ell = _as_bigreal(ell)
    eps = (cp.plan.tau or Fraction(1)) / 64
    for _ in range(4):
        table = _value_table(cp, eps)
        ranked = sorted(range(len(table)), key=lambda r: abs(table[r].value - ell.value))
        best, second = ranked[0], (ranked[1] if len(ranked) > 1 else None)
        d_best = abs(table[best].value - ell.value)
        if second is None:
            break
        d_second = abs(table[second].value - ell.value)
        resolved = d_second - d_best > 2 * (table[best].err + table[second].err + ell.err)
        if resolved or d_best == d_second:
            break
        eps /= 1 << 16
    sig = _rank_to_labels(best, n, k)
    if second is not None and d_best == d_second:
        sig = min(sig, _rank_to_labels(second, n, k))
    return LabelVector(sig, k)


def _rank_to_labels(rank: int, n: int, k: int) -> tuple[int, ...]:
    out = []
    for _ in range(n):
        out.append(rank % k)
        rank //= k
    return tuple(reversed(out))


# ---------------------------------------------------------------------------
# multi-query
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MultiQueryPlan:
    """ceil(N/M) block queries; each is a standalone construction on its
    block, evaluated by the curator over just those datapoints (the paper's
    'LabelInf on M datapoints at a time')."""

    spec: LossSpec
    n: int
    tau: Fraction | None
    block_size: int
    queries: tuple[ConstructedPayload, ...]

    @property
    def query_count(self) -> int:
        return len(self.queries)


_NEUTRAL_FAMILIES = frozenset({
    "binary-ce", "kl", "sigmoid-ce", "itakura-saito",
    "squared-euclidean", "norm-like", "kary-ce", "softmax-ce",
})


def plan_multiquery(spec: LossSpec, n: int, tau, m: int) -> MultiQueryPlan:
    """Split the N hidden labels into ceil(N/M) blocks and build one payload
    per block.  Entries outside a query's block are the loss's neutral
    element (theta = 1/2, logit 0, or the uniform row), so the full-length
    submission is well-formed; the loss itself is evaluated per block."""
    if spec.family == "mahalanobis":
        raise UnsupportedLoss("multi-query is not defined for the Mahalanobis loss")
    if spec.family not in _NEUTRAL_FAMILIES:
        raise UnsupportedLoss(spec.family)
    if not 1 <= m <= n:
        raise ValueError("need 1 <= M <= N")
    queries = []
    for lo in range(0, n, m):
        hi = min(lo + m, n)
        size = hi - lo
        if spec.family in ("squared-euclidean", "norm-like"):
            cp = construct_unnoised(spec, size)
        else:
            cp = construct(spec, size, tau)
        cp = replace(cp, live_block=(lo, hi), total_n=n, _table=None)
        queries.append(cp)
    tau_f = None if spec.family in ("squared-euclidean", "norm-like") else as_tau(tau)
    return MultiQueryPlan(spec, n, tau_f, m, tuple(queries))


def decode_multiquery(plan: MultiQueryPlan, values: Sequence) -> LabelVector:
    """Merge the per-block decodes of the observed loss values."""
    if len(values) != plan.query_count:
        raise DecodingFailed(
            f"expected {plan.query_count} loss values, got {len(values)}")
    labels: list[int] = []
    for cp, ell in zip(plan.queries, values):
        labels.extend(decode(cp, ell).labels)
    k = plan.queries[0].k
    return LabelVector(tuple(labels), k)


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

_CONTAINER_TAGS = {
    Pow3Matrix: "pow3-matrix",
    Pow3OddsVector: "pow3-odds-vector",
    Pow3LogitMatrix: "pow3-logit-matrix",
    Pow3LogitVector: "pow3-logit-vector",
    ProbabilityMatrix: "prob-matrix",
    ProbabilityVector: "prob-vector",
    LogitMatrix: "logit-matrix",
    LogitVector: "logit-vector",
}


def _frac_str(f: Fraction) -> str:
    return f"{f.numerator}/{f.denominator}" if f.denominator != 1 else str(f.numerator)


def _spec_to_json(spec: LossSpec) -> dict:
    d = {"family": spec.family, "k_classes": spec.k_classes}
    if spec.alpha is not None:
        d["alpha"] = _frac_str(spec.alpha)
    if spec.matrix is not None:
        d["matrix"] = [_frac_str(v) for v in spec.matrix]
    return d


def _spec_from_json(d: dict) -> LossSpec:
    return LossSpec(
        d["family"], d.get("k_classes", 2),
        alpha=parse_rational(d["alpha"]) if "alpha" in d else None,
        matrix=tuple(parse_rational(v) for v in d["matrix"]) if "matrix" in d else None)


def _exponent_grid(payload):
    if isinstance(payload, (Pow3Matrix, Pow3LogitMatrix)):
        rows = payload.exponents if isinstance(payload, Pow3Matrix) else payload.ln3_multiples
        return [[_frac_str(e) for e in row] for row in rows]
    if isinstance(payload, Pow3OddsVector):
        return [_frac_str(e) for e in payload.exponents]
    return [_frac_str(e) for e in payload.ln3_multiples]


def payload_to_json(cp: ConstructedPayload, encoding: str = "pow3", *,
                    digits: int = 40, fmt: FpaFormat | None = None) -> dict:
    """Serialize a payload (and its decode metadata) to a JSON-ready dict.

    encodings: "pow3" (exact exponent form), "rational" (exact
    numerator/denominator decimal strings; exact-rational payloads only),
    "decimal" (fixed-digit strings), "fpa" (sign/exponent/mantissa triples).
    """
    plan = cp.plan
    head = {
        "loss": _spec_to_json(plan.loss),
        "n": plan.n,
        "k": plan.k,
        "tau": _frac_str(plan.tau) if plan.tau is not None else None,
        "oracle_err": _frac_str(plan.oracle_err),
        "attacker_err": _frac_str(plan.attacker_err),
        "decoder": cp.decoder,
        "orientation": cp.orientation,
        "scale": _frac_str(cp.scale),
        "primes": list(cp.primes) if cp.primes else None,
        "live_block": list(cp.live_block) if cp.live_block else None,
        "total_n": cp.total_n,
        "encoding": encoding,
        "kind": _CONTAINER_TAGS[type(cp.payload)],
    }
    p = cp.payload
    if encoding == "pow3":
        if not isinstance(p, (Pow3Matrix, Pow3OddsVector, Pow3LogitMatrix, Pow3LogitVector)):
            raise ValueError("pow3 encoding needs a power-of-three payload")
        head["entries"] = _exponent_grid(p)
        return head

    conc = materialize(p)
    if isinstance(conc, (ProbabilityMatrix, LogitMatrix)):
        grids = [list(r) for r in conc.rows]
        head["kind"] = ("prob-matrix" if isinstance(conc, ProbabilityMatrix)
                        else "logit-matrix")
    else:
        grids = [list(conc.entries)]
        head["kind"] = ("prob-vector" if isinstance(conc, ProbabilityVector)
                        else "logit-vector")

    def enc(x: BigReal):
        if encoding == "rational":
            if not x.is_exact:
                raise ValueError(
                    "rational encoding needs exact entries; use 'decimal' instead")
            return {"num": str(x.value.numerator), "den": str(x.value.denominator)}
        if encoding == "decimal":
            return decimal_str(x, digits)
        if encoding == "fpa":
            v = round_to_fpa(x, fmt or FpaFormat.ieee754_double())
            return {"sign": v.sign, "exponent": v.exponent, "mantissa": v.mantissa,
                    "zero": v.zero, "subnormal": v.subnormal}
        raise ValueError(f"unknown encoding {encoding!r}")

    head["entries"] = [[enc(x) for x in row] for row in grids]
    if encoding == "decimal":
        head["digits"] = digits
    if encoding == "fpa":
        f = fmt or FpaFormat.ieee754_double()
        head["format"] = {"exp_bits": f.exp_bits, "mant_bits": f.mant_bits,
                          "subnormals": f.subnormals}
    return head


def payload_from_json(d: dict) -> ConstructedPayload:
    """Reconstruct a payload; pow3/rational round-trip exactly, decimal/fpa
    reconstruct entries with the encoding's error bound attached."""
    spec = _spec_from_json(d["loss"])
    tau = parse_rational(d["tau"]) if d.get("tau") else None
    plan = AttackPlan(spec, d["n"], d["k"], tau, d["n"],
                      parse_rational(d["oracle_err"]), parse_rational(d["attacker_err"]))
    kind, enc = d["kind"], d["encoding"]
    entries = d["entries"]
    if enc == "pow3":
        if kind == "pow3-matrix":
            payload = Pow3Matrix(tuple(tuple(parse_rational(e) for e in row)
                                       for row in entries))
        elif kind == "pow3-logit-matrix":
            payload = Pow3LogitMatrix(tuple(tuple(parse_rational(e) for e in row)
                                            for row in entries))
        elif kind == "pow3-odds-vector":
            payload = Pow3OddsVector(tuple(parse_rational(e) for e in entries))
        elif kind == "pow3-logit-vector":
            payload = Pow3LogitVector(tuple(parse_rational(e) for e in entries))
        else:
            raise ValueError(f"bad pow3 kind {kind}")
    else:
        if enc == "rational":
            dec = lambda e: BigReal.exact(Fraction(int(e["num"]), int(e["den"])))
        elif enc == "decimal":
            err = Fraction(1, 2 * 10 ** d["digits"])
            dec = lambda e: BigReal(parse_rational(e), err)
        elif enc == "fpa":
            f = FpaFormat(**d["format"])

            def dec(e):
                from .bignum.fpa import FpaValue
                v = FpaValue(f, sign=e["sign"], exponent=e["exponent"],
                             mantissa=e["mantissa"], zero=e["zero"],
                             subnormal=e.get("subnormal", False))
                return BigReal.exact(v.to_fraction())
        else:
            raise ValueError(f"unknown encoding {enc!r}")
        grids = [[dec(e) for e in row] for row in entries]
        if kind == "prob-matrix":
            payload = ProbabilityMatrix(tuple(tuple(r) for r in grids))
        elif kind == "logit-matrix":
            payload = LogitMatrix(tuple(tuple(r) for r in grids))
        elif kind == "prob-vector":
            payload = ProbabilityVector(tuple(grids[0]))
        elif kind == "logit-vector":
            payload = LogitVector(tuple(grids[0]))
        else:
            raise ValueError(f"bad kind {kind}")
    cp = ConstructedPayload(
        plan, payload,
        constant=BigReal.exact(0), scale=parse_rational(d["scale"]),
        decoder=d["decoder"], orientation=d.get("orientation", "zero"),
        primes=tuple(d["primes"]) if d.get("primes") else None,
        live_block=tuple(d["live_block"]) if d.get("live_block") else None,
        total_n=d.get("total_n"))
    cp.constant = _ref_constant(spec, payload, plan, cp.decoder, cp.orientation, cp.scale)
    if cp.decoder == "superincreasing":
        eps = plan.attacker_err / (4 * plan.n)
        conc = materialize(payload)
        gaps = []
        for i in range(plan.n):
            t1 = g_value(spec, conc.entries[i], eps)
            t0 = g_value(spec, BigReal.exact(1) - conc.entries[i], eps)
            gaps.append((t1 - t0).compress(256))
        cp.gaps = tuple(gaps)
    return cp


def payload_json_dumps(cp: ConstructedPayload, **kw) -> str:
    return json.dumps(payload_to_json(cp, **kw))
