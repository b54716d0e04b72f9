"""Loss evaluation on (labeling, prediction) pairs with explicit error budgets.

Two payload representations are supported everywhere it matters:

* generic containers of BigReal entries (probabilities or logits), and
* exact power-of-three containers produced by the attack constructions,
  whose entries are 3**e for rational e.  These never materialize the
  doubly-exponential numbers; row normalizers are handled by factoring out
  the dominant term, so evaluation stays cheap at any exponent scale.

Every evaluator takes an explicit absolute error budget; there is no
silent default.  ``eval_in_fpa`` reruns the same computations with every
intermediate rounded into a finite floating-point format.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Iterator, Sequence

from .bignum import BigReal, FpaFormat, FpaValue, ln, ln1p_pow, pow_of, round_to_fpa
from .bignum import exp as bigexp
from .bignum.real import _as_fraction, _bits_for, _exp_magnitude_bits, _ln3_fix, _pow2
from .errors import DomainError, UnsupportedLoss

__all__ = [
    "LabelVector",
    "LossSpec",
    "ProbabilityVector",
    "ProbabilityMatrix",
    "LogitVector",
    "LogitMatrix",
    "Pow3Matrix",
    "Pow3OddsVector",
    "Pow3LogitMatrix",
    "Pow3LogitVector",
    "loss_value",
    "loss_table",
    "enumerate_labelings",
    "labeling_rank",
    "g_value",
    "materialize",
    "eval_in_fpa",
]

FAMILIES = (
    "binary-ce",
    "kary-ce",
    "softmax-ce",
    "sigmoid-ce",
    "kl",
    "itakura-saito",
    "squared-euclidean",
    "norm-like",
    "mahalanobis",
)

BINARY_FAMILIES = frozenset(FAMILIES) - {"kary-ce", "softmax-ce"}


# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LabelVector:
    """A labeling sigma in Z_K^N."""

    labels: tuple[int, ...]
    k_classes: int = 2

    def __post_init__(self):
        object.__setattr__(self, "labels", tuple(int(c) for c in self.labels))
        if len(self.labels) < 1:
            raise ValueError("a labeling needs at least one entry")
        if self.k_classes < 2:
            raise ValueError("K must be >= 2")
        for c in self.labels:
            if not 0 <= c < self.k_classes:
                raise ValueError(f"label {c} outside Z_{self.k_classes}")

    @property
    def n(self) -> int:
        return len(self.labels)

    def __iter__(self):
        return iter(self.labels)

    def __getitem__(self, i):
        return self.labels[i]


@dataclass(frozen=True)
class LossSpec:
    """Which loss to evaluate, plus its family-specific parameters."""

    family: str
    k_classes: int = 2
    alpha: Fraction | None = None            # norm-like only, >= 2
    matrix: tuple[Fraction, Fraction, Fraction, Fraction] | None = None  # mahalanobis (a,b,c,d)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown loss family {self.family!r}")
        if self.family in BINARY_FAMILIES and self.k_classes != 2:
            raise ValueError(f"{self.family} is a binary loss (K=2)")
        if self.family == "norm-like":
            if self.alpha is None or _as_fraction(self.alpha) < 2:
                raise ValueError("norm-like divergence needs rational alpha >= 2")
            object.__setattr__(self, "alpha", _as_fraction(self.alpha))
        if self.family == "mahalanobis":
            if self.matrix is None:
                raise ValueError("mahalanobis needs a 2x2 matrix (a, b, c, d)")
            a, b, c, d = (_as_fraction(v) for v in self.matrix)
            # positive definite (symmetric part) with a+d > b+c
            if not (a > 0 and d > 0 and a * d - ((b + c) / 2) ** 2 > 0):
                raise ValueError("mahalanobis matrix must be positive definite")
            if not a + d > b + c:
                raise ValueError("mahalanobis needs a + d > b + c")
            object.__setattr__(self, "matrix", (a, b, c, d))

    @property
    def alpha_m(self) -> Fraction:
        """a + d - (b + c) of the Mahalanobis matrix."""
        if self.matrix is None:
            raise UnsupportedLoss("alpha_m is only defined for mahalanobis")
        a, b, c, d = self.matrix
        return a + d - b - c


# ---------------------------------------------------------------------------
# payload containers
# ---------------------------------------------------------------------------

def _to_bigreal_tuple(entries) -> tuple[BigReal, ...]:
    return tuple(e if isinstance(e, BigReal) else BigReal.exact(e) for e in entries)


@dataclass(frozen=True)
class ProbabilityVector:
    """Per-datapoint probabilities of class 1, for the binary losses."""

    entries: tuple[BigReal, ...]

    def __post_init__(self):
        object.__setattr__(self, "entries", _to_bigreal_tuple(self.entries))

    @property
    def n(self) -> int:
        return len(self.entries)


@dataclass(frozen=True)
class ProbabilityMatrix:
    """N x K class probabilities; rows should sum to 1 within their errors."""

    rows: tuple[tuple[BigReal, ...], ...]

    def __post_init__(self):
        object.__setattr__(self, "rows", tuple(_to_bigreal_tuple(r) for r in self.rows))

    @property
    def n(self) -> int:
        return len(self.rows)

    @property
    def k(self) -> int:
        return len(self.rows[0])


@dataclass(frozen=True)
class LogitVector:
    entries: tuple[BigReal, ...]

    def __post_init__(self):
        object.__setattr__(self, "entries", _to_bigreal_tuple(self.entries))

    @property
    def n(self) -> int:
        return len(self.entries)


@dataclass(frozen=True)
class LogitMatrix:
    rows: tuple[tuple[BigReal, ...], ...]

    def __post_init__(self):
        object.__setattr__(self, "rows", tuple(_to_bigreal_tuple(r) for r in self.rows))

    @property
    def n(self) -> int:
        return len(self.rows)

    @property
    def k(self) -> int:
        return len(self.rows[0])


@dataclass(frozen=True)
class Pow3Matrix:
    """theta[i][k] = 3^e[i][k] / sum_k 3^e[i][k], carried exactly by the
    rational exponents e."""

    exponents: tuple[tuple[Fraction, ...], ...]

    def __post_init__(self):
        object.__setattr__(
            self, "exponents",
            tuple(tuple(_as_fraction(e) for e in row) for row in self.exponents))

    @property
    def n(self) -> int:
        return len(self.exponents)

    @property
    def k(self) -> int:
        return len(self.exponents[0])


@dataclass(frozen=True)
class Pow3OddsVector:
    """theta_i = 3^a_i / (1 + 3^a_i); a_i > 0 puts the i-th probability near
    one, a_i < 0 near zero, a_i = 0 is the neutral 1/2."""

    exponents: tuple[Fraction, ...]

    def __post_init__(self):
        object.__setattr__(self, "exponents",
                           tuple(_as_fraction(e) for e in self.exponents))

    @property
    def n(self) -> int:
        return len(self.exponents)


@dataclass(frozen=True)
class Pow3LogitMatrix:
    """Softmax logits theta'[i][k] = c[i][k] * ln 3 for rational c."""

    ln3_multiples: tuple[tuple[Fraction, ...], ...]

    def __post_init__(self):
        object.__setattr__(
            self, "ln3_multiples",
            tuple(tuple(_as_fraction(e) for e in row) for row in self.ln3_multiples))

    @property
    def n(self) -> int:
        return len(self.ln3_multiples)

    @property
    def k(self) -> int:
        return len(self.ln3_multiples[0])


@dataclass(frozen=True)
class Pow3LogitVector:
    """Sigmoid logits theta'_i = c_i * ln 3."""

    ln3_multiples: tuple[Fraction, ...]

    def __post_init__(self):
        object.__setattr__(self, "ln3_multiples",
                           tuple(_as_fraction(e) for e in self.ln3_multiples))

    @property
    def n(self) -> int:
        return len(self.ln3_multiples)


MATRIX_PAYLOADS = (ProbabilityMatrix, Pow3Matrix)
LOGIT_MATRIX_PAYLOADS = (LogitMatrix, Pow3LogitMatrix)


def payload_length(payload) -> int:
    return payload.n


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def _ln3(target: Fraction) -> BigReal:
    w = _bits_for(target) + 16
    v, e = _ln3_fix(w)
    return BigReal(Fraction(v, 1 << w), Fraction(e, 1 << w))


def _check_open_unit(x: BigReal, what: str = "probability"):
    if not (x.lower > 0 and x.upper < 1):
        raise DomainError(f"{what} {x!r} is not certifiably inside (0, 1)")


def _check_positive(x: BigReal, what: str = "probability"):
    if not x.lower > 0:
        raise DomainError(f"{what} {x!r} is not certifiably positive")


def enumerate_labelings(n: int, k: int) -> Iterator[tuple[int, ...]]:
    """All of Z_K^N, last coordinate fastest (rank = big-endian base-K)."""
    sigma = [0] * n
    while True:
        yield tuple(sigma)
        i = n - 1
        while i >= 0:
            sigma[i] += 1
            if sigma[i] < k:
                break
            sigma[i] = 0
            i -= 1
        if i < 0:
            return


def labeling_rank(labels: Sequence[int], k: int) -> int:
    r = 0
    for c in labels:
        r = r * k + c
    return r


# ---------------------------------------------------------------------------
# per-family term builders: label-dependent per-datapoint terms
#
# every binary family is reduced to per-index terms t(i, bit); K-ary families
# to t(i, class).  the loss is then (1/N) * sum_i t(i, sigma_i) -- with the
# sign convention folded into the terms themselves.
# ---------------------------------------------------------------------------

def _terms_binary_ce_prob(theta: ProbabilityVector, per_term: Fraction):
    out = []
    for x in theta.entries:
        _check_open_unit(x)
        l1 = ln(x, per_term)
        l0 = ln(BigReal.exact(1) - x, per_term)
        out.append((-l0, -l1))  # (bit 0 term, bit 1 term), already negated
    return out


def _terms_binary_ce_odds(theta: Pow3OddsVector, per_term: Fraction):
    out = []
    for a in theta.exponents:
        # ln theta = -ln(1+3^-a); ln(1-theta) = -ln(1+3^a)
        t1 = ln1p_pow(3, -a, per_term)
        t0 = ln1p_pow(3, a, per_term)
        out.append((t0, t1))
    return out


def _terms_kl_prob(theta: ProbabilityVector, per_term: Fraction):
    # D_KL([p,1-p],[q,1-q]) with p in {0,1}: sum of p*ln(p/q) (0 ln 0 := 0)
    # minus sum(p - q), which cancels across the two components.
    out = []
    for x in theta.entries:
        _check_open_unit(x)
        comp1 = -ln(x, per_term)                      # p=[1,0] vs q=[x,1-x]
        comp0 = -ln(BigReal.exact(1) - x, per_term)   # p=[0,1]
        out.append((comp0, comp1))
    return out


def _terms_is_prob(theta: ProbabilityVector, per_term: Fraction):
    out = []
    for x in theta.entries:
        _check_open_unit(x)
        one_minus = BigReal.exact(1) - x
        g1 = BigReal.exact(1) / x + ln(x, per_term) - 1
        g0 = BigReal.exact(1) / one_minus + ln(one_minus, per_term) - 1
        out.append((g0, g1))
    return out


def _terms_is_odds(theta: Pow3OddsVector, per_term: Fraction):
    # g(3^e/(1+3^e)-side) = 3^-e - ln(1+3^-e) evaluated at e and -e
    out = []
    for a in theta.exponents:
        g1 = pow_of(3, -a, per_term / 2) - ln1p_pow(3, -a, per_term / 2)
        g0 = pow_of(3, a, per_term / 2) - ln1p_pow(3, a, per_term / 2)
        out.append((g0, g1))
    return out


def _terms_sqeuclid_prob(theta: ProbabilityVector, per_term: Fraction):
    out = []
    for x in theta.entries:
        _check_open_unit(x)
        d = BigReal.exact(1) - x
        out.append((x * x, d * d))
    return out


def _bigreal_pow(x: BigReal, alpha: Fraction, target: Fraction) -> BigReal:
    if alpha.denominator == 1:
        acc = BigReal.exact(1)
        for _ in range(alpha.numerator):
            acc = acc * x
        return acc
    _check_positive(x, "power base")
    lx = ln(x, target / (4 * (1 + abs(alpha))))
    return bigexp(lx * alpha, target / 2)


def _terms_normlike_prob(theta: ProbabilityVector, alpha: Fraction, per_term: Fraction):
    a = alpha
    sub = per_term / 8

    def g(x: BigReal) -> BigReal:
        xa = _bigreal_pow(x, a, sub)
        xam1 = _bigreal_pow(x, a - 1, sub)
        ca = _bigreal_pow(BigReal.exact(1) - x, a, sub)
        return BigReal.exact(1) + (a - 1) * xa - a * xam1 + (a - 1) * ca

    out = []
    for x in theta.entries:
        _check_open_unit(x)
        out.append((g(BigReal.exact(1) - x), g(x)))
    return out


def _terms_mahalanobis_prob(theta: ProbabilityVector, spec: LossSpec):
    a, b, c, d = spec.matrix
    out = []
    for x in theta.entries:
        terms = []
        for sigma_i in (0, 1):
            u1 = BigReal.exact(sigma_i) - x
            u2 = BigReal.exact(1 - sigma_i) - (BigReal.exact(1) - x)
            quad = (u1 * a + u2 * c) * u1 + (u1 * b + u2 * d) * u2
            terms.append(quad)
        out.append(tuple(terms))
    return out


def _terms_sigmoid(theta: LogitVector | Pow3LogitVector, per_term: Fraction):
    out = []
    if isinstance(theta, Pow3LogitVector):
        ln3 = _ln3(per_term / (4 * _max_abs_int(theta.ln3_multiples)))
        for c in theta.ln3_multiples:
            tail = ln1p_pow(3, -c, per_term / 2)   # ln(1+e^-l) with l = c ln3
            t1 = tail                              # -ln sigmoid(l)
            t0 = ln3 * c + tail                    # -ln(1 - sigmoid(l))
            out.append((t0, t1))
        return out
    for z in theta.entries:
        # u = e^-z to enough relative precision for both logs
        k_up = _exp_magnitude_bits((-z.value) + z.err)
        u = bigexp(-z, min(per_term / 4, _pow2(k_up) * per_term / 4))
        lp = ln(BigReal.exact(1) + u, per_term / 2)  # ln(1+e^-z)
        out.append((z + lp, lp))
    return out


def _kary_row_terms(payload: ProbabilityMatrix | Pow3Matrix, per_row: Fraction):
    """Per-row tuples of -ln theta_{i,k} (the per-class loss contributions)."""
    rows_out = []
    if isinstance(payload, Pow3Matrix):
        for row in payload.exponents:
            top = max(row)
            rel = [e - top for e in row]
            # row normalizer: ln sum_k 3^rel = ln(1 + sum of the non-top terms)
            s = BigReal.exact(0)
            for r in rel:
                if r == 0:
                    continue
                s = s + pow_of(3, r, per_row / (4 * len(row)))
            if s.upper <= per_row / 4:
                half = s.upper / 2
                rowlog = BigReal(half, half)
            else:
                rowlog = ln(BigReal.exact(1) + s, per_row / 4)
            ln3 = _ln3(per_row / (4 * max(1, _max_abs_int(rel))))
            rows_out.append(tuple((rowlog - ln3 * r).compress() for r in rel))
    else:
        for row in payload.rows:
            terms = []
            for x in row:
                _check_positive(x)
                if x.upper > 1:
                    raise DomainError("class probability exceeds 1")
                terms.append(-ln(x, per_row / 2))
            rows_out.append(tuple(terms))
    return rows_out


def _max_abs_int(vals) -> int:
    m = 1
    for v in vals:
        m = max(m, abs(int(v)) + 1)
    return m


def _softmax_row_terms(payload: LogitMatrix | Pow3LogitMatrix, per_row: Fraction):
    """-ln softmax(theta')_{i,k} per row; the pow3 form shares the kary math."""
    if isinstance(payload, Pow3LogitMatrix):
        return _kary_row_terms(Pow3Matrix(payload.ln3_multiples), per_row)
    rows_out = []
    for row in payload.rows:
        top = max(range(len(row)), key=lambda j: row[j].value)
        shifted = [z - row[top] for z in row]
        s = BigReal.exact(0)
        for j, z in enumerate(shifted):
            if j == top:
                continue
            k_up = _exp_magnitude_bits(z.upper)
            s = s + bigexp(z, min(per_row / (8 * len(row)),
                                  _pow2(k_up) / (1 << 40)))
        rowlog = ln(BigReal.exact(1) + s, per_row / 4)
        rows_out.append(tuple((rowlog - z).compress() for z in shifted))
    return rows_out


# ---------------------------------------------------------------------------
# public evaluation API
# ---------------------------------------------------------------------------

def _binary_terms(spec: LossSpec, payload, per_term: Fraction):
    fam = spec.family
    if fam in ("binary-ce", "kl"):
        if isinstance(payload, Pow3OddsVector):
            return _terms_binary_ce_odds(payload, per_term)
        if fam == "kl":
            return _terms_kl_prob(payload, per_term)
        return _terms_binary_ce_prob(payload, per_term)
    if fam == "sigmoid-ce":
        return _terms_sigmoid(payload, per_term)
    if fam == "itakura-saito":
        if isinstance(payload, Pow3OddsVector):
            return _terms_is_odds(payload, per_term)
        return _terms_is_prob(payload, per_term)
    if fam == "squared-euclidean":
        return _terms_sqeuclid_prob(payload, per_term)
    if fam == "norm-like":
        return _terms_normlike_prob(payload, spec.alpha, per_term)
    if fam == "mahalanobis":
        return _terms_mahalanobis_prob(payload, spec)
    raise UnsupportedLoss(fam)


def _per_index_terms(spec: LossSpec, payload, err_budget: Fraction):
    """(terms, n) where terms[i][c] is datapoint i's contribution under
    label c, such that loss = (1/n) * sum_i terms[i][sigma_i]."""
    err_budget = _as_fraction(err_budget)
    if err_budget <= 0:
        raise ValueError("error budget must be positive")
    n = payload_length(payload)
    per = err_budget / 2  # each term within per/1; sum/N stays within budget
    fam = spec.family
    if fam == "kary-ce":
        if not isinstance(payload, MATRIX_PAYLOADS):
            raise DomainError("kary-ce expects an N x K probability matrix")
        return _kary_row_terms(payload, per), n
    if fam == "softmax-ce":
        if not isinstance(payload, LOGIT_MATRIX_PAYLOADS):
            raise DomainError("softmax-ce expects an N x K logit matrix")
        return _softmax_row_terms(payload, per), n
    if isinstance(payload, (ProbabilityMatrix, Pow3Matrix, LogitMatrix, Pow3LogitMatrix)):
        raise DomainError(f"{fam} expects a length-N vector payload")
    return _binary_terms(spec, payload, per), n


def loss_value(spec: LossSpec, sigma: LabelVector | Sequence[int], payload,
               err_budget: Fraction) -> BigReal:
    """Evaluate the loss within the given absolute error budget."""
    labels = tuple(sigma)
    terms, n = _per_index_terms(spec, payload, err_budget)
    if len(labels) != n:
        raise DomainError(f"labeling length {len(labels)} != payload length {n}")
    k = len(terms[0])
    acc = BigReal.exact(0)
    for i, c in enumerate(labels):
        if not 0 <= c < k:
            raise DomainError(f"label {c} outside the payload's class range")
        acc = acc + terms[i][c]
        if i % 8 == 7:
            acc = acc.compress(_bits_for(err_budget) + 64)
    return acc / n


def loss_table(spec: LossSpec, payload, n: int, k: int,
               err_budget: Fraction) -> list[BigReal]:
    """All K^N loss values, indexed by labeling rank (see labeling_rank).

    Shares the per-row work across labelings, so the cost is O(N*K) big
    evaluations plus K^N bounded-precision additions.
    """
    terms, n_payload = _per_index_terms(spec, payload, err_budget)
    if n_payload != n or len(terms[0]) < k:
        raise DomainError("table shape does not match the payload")
    bits = _bits_for(err_budget) + 64
    scale = 1 << bits

    def fix(x: BigReal) -> tuple[int, int]:
        v = round(x.value * scale)
        e = int(x.err * scale) + 2
        return v, e

    fixed = [[fix(terms[i][c]) for c in range(k)] for i in range(n)]
    sums: list[tuple[int, int]] = [(0, 0)]
    for i in range(n):
        row = fixed[i]
        sums = [(s + v, se + e) for (s, se) in sums for (v, e) in row]
    inv_n = Fraction(1, n)
    return [BigReal(Fraction(v, scale) * inv_n, Fraction(e, scale) * inv_n)
            for v, e in sums]


# Eq.-4 style g functions of the linearly-decomposable binary losses.
def g_value(spec: LossSpec, x: BigReal, err_budget: Fraction) -> BigReal:
    """g(x) with f(sigma,theta) = (1/N)(sum_{sigma_i=1} g(theta_i)
    + sum_{sigma_i=0} g(1-theta_i)) for the binary families."""
    err_budget = _as_fraction(err_budget)
    fam = spec.family
    if fam in ("binary-ce", "kl"):
        return -ln(x, err_budget)
    if fam == "itakura-saito":
        return BigReal.exact(1) / x + ln(x, err_budget) - 1
    if fam == "squared-euclidean":
        d = BigReal.exact(1) - x
        return d * d
    if fam == "norm-like":
        a = spec.alpha
        sub = err_budget / 8
        xa = _bigreal_pow(x, a, sub)
        xam1 = _bigreal_pow(x, a - 1, sub)
        ca = _bigreal_pow(BigReal.exact(1) - x, a, sub)
        return BigReal.exact(1) + (a - 1) * xa - a * xam1 + (a - 1) * ca
    raise UnsupportedLoss(f"{fam} is not linearly decomposable over bits")


# ---------------------------------------------------------------------------
# finite floating-point evaluation
# ---------------------------------------------------------------------------

class _EmulatedCtx:
    """Per-operation rounding into an arbitrary FpaFormat.  Values are exact
    rationals that are always members of the format's grid; ln/exp round the
    error-bounded BigReal result (resolved to an eighth of an ULP, so only
    half-ULP ties could in principle diverge from correct rounding)."""

    def __init__(self, fmt: FpaFormat):
        self.fmt = fmt
        self.flags: set[str] = set()
        self.fatal = False

    def _round(self, x: Fraction | BigReal):
        v = round_to_fpa(x, self.fmt)
        if v.overflow:
            self.flags.add("overflow")
            self.fatal = True
            return None
        if v.underflow:
            self.flags.add("underflow")
        return v.to_fraction()

    def const(self, x):
        return self._round(x if isinstance(x, (BigReal, Fraction)) else _as_fraction(x))

    def add(self, a, b):
        if a is None or b is None:
            return None
        return self._round(a + b)

    def sub(self, a, b):
        if a is None or b is None:
            return None
        return self._round(a - b)

    def mul(self, a, b):
        if a is None or b is None:
            return None
        return self._round(a * b)

    def div(self, a, b):
        if a is None or b is None:
            return None
        if b == 0:
            self.flags.add("overflow")
            self.fatal = True
            return None
        return self._round(a / b)

    def neg(self, a):
        return None if a is None else -a

    def ln(self, a):
        if a is None:
            return None
        if a == 0:
            self.flags.add("underflow")
            self.fatal = True
            return None
        if a < 0:
            raise DomainError("ln of a negative intermediate")
        coarse = ln(BigReal.exact(a), Fraction(1, 4))
        mag = abs(coarse.value) + Fraction(1, 2)
        e = mag.numerator.bit_length() - mag.denominator.bit_length() + 1
        fine = ln(BigReal.exact(a), self.fmt.ulp(e) / 8)
        return self._round(fine)

    def exp(self, a):
        if a is None:
            return None
        k = _exp_magnitude_bits(_as_fraction(a))
        if k > self.fmt.e_max + 2:
            self.flags.add("overflow")
            self.fatal = True
            return None
        fine = bigexp(BigReal.exact(a), self.fmt.ulp(min(k, self.fmt.e_max)) / 8)
        return self._round(fine)

    def result(self, a) -> FpaValue:
        if self.fatal or a is None:
            return FpaValue(self.fmt, overflow="overflow" in self.flags,
                            underflow="underflow" in self.flags, zero=False)
        v = round_to_fpa(a, self.fmt)
        if "underflow" in self.flags and not v.flagged:
            v = FpaValue(self.fmt, sign=v.sign, exponent=v.exponent,
                         mantissa=v.mantissa, zero=v.zero,
                         subnormal=v.subnormal, underflow=True)
        return v


class _NativeDoubleCtx:
    """ieee754-double via the host's floats: hardware arithmetic and the
    platform libm, i.e. exactly the environment the degradation experiments
    model."""

    fmt = FpaFormat.ieee754_double()

    def __init__(self):
        self.flags: set[str] = set()
        self.fatal = False

    def _chk(self, v: float):
        if math.isinf(v) or math.isnan(v):
            self.flags.add("overflow")
            self.fatal = True
            return None
        return v

    def const(self, x):
        if isinstance(x, BigReal):
            x = x.value
        v = round_to_fpa(x, self.fmt)
        if v.overflow:
            self.flags.add("overflow")
            self.fatal = True
            return None
        if v.underflow:
            self.flags.add("underflow")
        return v.to_float()

    def add(self, a, b):
        return None if a is None or b is None else self._chk(a + b)

    def sub(self, a, b):
        return None if a is None or b is None else self._chk(a - b)

    def mul(self, a, b):
        if a is None or b is None:
            return None
        v = a * b
        if v == 0.0 and a != 0.0 and b != 0.0:
            self.flags.add("underflow")
        return self._chk(v)

    def div(self, a, b):
        if a is None or b is None:
            return None
        if b == 0.0:
            self.flags.add("overflow")
            self.fatal = True
            return None
        v = a / b
        if v == 0.0 and a != 0.0:
            self.flags.add("underflow")
        return self._chk(v)

    def neg(self, a):
        return None if a is None else -a

    def ln(self, a):
        if a is None:
            return None
        if a == 0.0:
            self.flags.add("underflow")
            self.fatal = True
            return None
        if a < 0:
            raise DomainError("ln of a negative intermediate")
        return self._chk(math.log(a))

    def exp(self, a):
        if a is None:
            return None
        try:
            v = math.exp(a)
        except OverflowError:
            self.flags.add("overflow")
            self.fatal = True
            return None
        if v == 0.0 and a != 0.0:
            self.flags.add("underflow")
        return self._chk(v)

    def result(self, a) -> FpaValue:
        if self.fatal or a is None:
            return FpaValue(self.fmt, overflow="overflow" in self.flags,
                            underflow="underflow" in self.flags, zero=False)
        v = round_to_fpa(Fraction(a), self.fmt)
        if "underflow" in self.flags and not v.flagged:
            v = FpaValue(self.fmt, sign=v.sign, exponent=v.exponent,
                         mantissa=v.mantissa, zero=v.zero,
                         subnormal=v.subnormal, underflow=True)
        return v


def _pow3_mag_bits(e: Fraction) -> int:
    """k with 3^e <= 2^k, via rational brackets of log2(3)."""
    factor = Fraction(1584963, 10**6) if e >= 0 else Fraction(1584962, 10**6)
    return int((e * factor).__ceil__()) + 1


def _materialize_entry_targets(payload):
    """Yield exact entry values as BigReals tight enough for any rounding:
    relative precision ~2^-96 at each entry's own magnitude.  Entries whose
    magnitude is below 2^-8192 (far under any emulated format's range) are
    reported as 0 with that bound."""
    rel = 96

    def pow3_rel(e: Fraction) -> BigReal:
        k = _pow3_mag_bits(e)
        if k < -8192:
            return BigReal(Fraction(0), _pow2(-8192))
        return pow_of(3, e, _pow2(k - rel))

    if isinstance(payload, Pow3Matrix):
        rows = []
        for row in payload.exponents:
            top = max(row)
            us = [pow3_rel(e - top) for e in row]
            s = BigReal.exact(0)
            for u in us:
                s = s + u
            rows.append(tuple(u / s for u in us))
        return ProbabilityMatrix(tuple(rows))
    if isinstance(payload, Pow3OddsVector):
        entries = []
        for a in payload.exponents:
            u = pow3_rel(-abs(a))
            small = u / (BigReal.exact(1) + u)
            entries.append(BigReal.exact(1) - small if a > 0 else
                           (small if a < 0 else BigReal.exact(Fraction(1, 2))))
        return ProbabilityVector(tuple(entries))
    if isinstance(payload, Pow3LogitMatrix):
        ln3 = _ln3(_pow2(-rel - 16))
        return LogitMatrix(tuple(tuple((ln3 * c).compress(rel + 32) for c in row)
                                 for row in payload.ln3_multiples))
    if isinstance(payload, Pow3LogitVector):
        ln3 = _ln3(_pow2(-rel - 16))
        return LogitVector(tuple((ln3 * c).compress(rel + 32)
                                 for c in payload.ln3_multiples))
    return payload


_MATERIALIZE_CACHE: dict[int, tuple[object, object]] = {}


def materialize(payload):
    """Exact-side view of a payload as BigReal containers (pow3 payloads are
    resolved to ~96 relative bits; generic payloads pass through).  Cached
    per payload object: the repeated-query paths hit the same payload."""
    key = id(payload)
    hit = _MATERIALIZE_CACHE.get(key)
    if hit is not None and hit[0] is payload:
        return hit[1]
    out = _materialize_entry_targets(payload)
    if len(_MATERIALIZE_CACHE) > 256:
        _MATERIALIZE_CACHE.clear()
    _MATERIALIZE_CACHE[key] = (payload, out)
    return out


def eval_in_fpa(spec: LossSpec, sigma: LabelVector | Sequence[int], payload,
                fmt: FpaFormat, rounding: str = "per_op") -> FpaValue:
    """Evaluate the loss with every intermediate rounded into fmt.

    rounding="final" instead computes in APA (error budget far below the
    format's resolution) and rounds once at the end.
    """
    labels = tuple(sigma)
    if rounding == "final":
        concrete = materialize(payload)
        tight = _pow2(-(fmt.mant_bits + 64))
        v = loss_value(spec, labels, concrete, tight)
        return round_to_fpa(v, fmt)
    if rounding != "per_op":
        raise ValueError("rounding must be 'per_op' or 'final'")
    ctx = _NativeDoubleCtx() if fmt.is_double else _EmulatedCtx(fmt)
    concrete = materialize(payload)
    val = _eval_ctx(spec, labels, concrete, ctx)
    return ctx.result(val)


def _eval_ctx(spec: LossSpec, labels: tuple[int, ...], payload, ctx):
    fam = spec.family
    n = payload_length(payload)
    if len(labels) != n:
        raise DomainError("labeling length does not match the payload")
    acc = ctx.const(0)

    if fam == "kary-ce":
        rows = [[ctx.const(x) for x in row] for row in payload.rows]
        for i, c in enumerate(labels):
            acc = ctx.add(acc, ctx.ln(rows[i][c]))
        return ctx.div(ctx.neg(acc), ctx.const(n))

    if fam == "softmax-ce":
        for i, c in enumerate(labels):
            row = [ctx.const(z) for z in payload.rows[i]]
            exps = [ctx.exp(z) for z in row]
            s = exps[0]
            for e in exps[1:]:
                s = ctx.add(s, e)
            p = ctx.div(exps[c], s)
            acc = ctx.add(acc, ctx.ln(p))
        return ctx.div(ctx.neg(acc), ctx.const(n))

    if fam == "sigmoid-ce":
        for i, c in enumerate(labels):
            z = ctx.const(payload.entries[i])
            u = ctx.exp(ctx.neg(z))
            p = ctx.div(ctx.const(1), ctx.add(ctx.const(1), u))
            t = ctx.ln(p) if c == 1 else ctx.ln(ctx.sub(ctx.const(1), p))
            acc = ctx.add(acc, t)
        return ctx.div(ctx.neg(acc), ctx.const(n))

    if fam in ("binary-ce", "kl"):
        for i, c in enumerate(labels):
            x = ctx.const(payload.entries[i])
            t = ctx.ln(x) if c == 1 else ctx.ln(ctx.sub(ctx.const(1), x))
            acc = ctx.add(acc, t)
        return ctx.div(ctx.neg(acc), ctx.const(n))

    if fam == "itakura-saito":
        one = ctx.const(1)
        for i, c in enumerate(labels):
            x = ctx.const(payload.entries[i])
            y = x if c == 1 else ctx.sub(one, x)
            t = ctx.sub(ctx.add(ctx.div(one, y), ctx.ln(y)), one)
            acc = ctx.add(acc, t)
        return ctx.div(acc, ctx.const(n))

    if fam == "squared-euclidean":
        one = ctx.const(1)
        for i, c in enumerate(labels):
            x = ctx.const(payload.entries[i])
            d = ctx.sub(one, x) if c == 1 else x
            acc = ctx.add(acc, ctx.mul(d, d))
        return ctx.div(acc, ctx.const(n))

    if fam == "norm-like":
        alpha = spec.alpha
        if alpha.denominator != 1:
            raise UnsupportedLoss("fpa norm-like evaluation needs integer alpha")
        a_int = alpha.numerator
        one = ctx.const(1)
        ca = ctx.const(alpha)
        cam1 = ctx.const(alpha - 1)

        def powi(v, p):
            r = one
            for _ in range(p):
                r = ctx.mul(r, v)
            return r

        for i, c in enumerate(labels):
            x = ctx.const(payload.entries[i])
            y = x if c == 1 else ctx.sub(one, x)
            comp = ctx.sub(one, y) if c == 1 else x
            # g(y) with the complement comp = 1 - y
            t = ctx.add(ctx.sub(ctx.add(one, ctx.mul(cam1, powi(y, a_int))),
                                ctx.mul(ca, powi(y, a_int - 1))),
                        ctx.mul(cam1, powi(comp, a_int)))
            acc = ctx.add(acc, t)
        return ctx.div(acc, ctx.const(n))

    if fam == "mahalanobis":
        a, b, c_, d = (ctx.const(v) for v in spec.matrix)
        one = ctx.const(1)
        for i, s_i in enumerate(labels):
            x = ctx.const(payload.entries[i])
            u1 = ctx.sub(ctx.const(s_i), x)
            u2 = ctx.sub(ctx.sub(one, ctx.const(s_i)), ctx.sub(one, x))
            quad = ctx.add(ctx.mul(ctx.add(ctx.mul(u1, a), ctx.mul(u2, c_)), u1),
                           ctx.mul(ctx.add(ctx.mul(u1, b), ctx.mul(u2, d)), u2))
            acc = ctx.add(acc, quad)
        return ctx.div(acc, ctx.const(n))

    raise UnsupportedLoss(fam)
