"""Distinct-subset-sum machinery: block codewords, the subset-sum gap mu,
prime tables, and nearest-codeword snapping.

A labeling sigma in Z_K^N is encoded as the integer
m(sigma) = sum_i 2^((i-1)K + sigma_i + 1); distinct labelings give distinct
even integers, so the codeword lattice has minimum spacing 2 and anything
within distance < 1 of a codeword snaps back uniquely.
"""

from __future__ import annotations

from fractions import Fraction
from typing import Iterable, Sequence

from .bignum import BigReal
from .errors import NoValidCodeword, NotSquarefreeProduct, TooLarge

__all__ = [
    "BlockCodeword",
    "SubsetSumSet",
    "mu",
    "encode_codeword",
    "decode_codeword",
    "snap_to_codeword",
    "snap_to_subset",
    "first_primes",
    "factor_over_primes",
]

MU_EXHAUSTIVE_CAP = 24


class SubsetSumSet:
    """A finite multiset of reals whose subset-sum gap mu is of interest."""

    def __init__(self, elements: Iterable[BigReal | Fraction | int]):
        self.elements = tuple(
            e if isinstance(e, BigReal) else BigReal.exact(e) for e in elements
        )

    def __len__(self) -> int:
        return len(self.elements)


def mu(s: SubsetSumSet | Iterable) -> BigReal:
    """Exhaustive minimum |sum(S1) - sum(S2)| over distinct subset pairs.

    Exact up to the elements' own error bounds; the result's err is the
    worst-case accumulated bound of the two closest subset sums.
    Raises TooLarge beyond 2^24 subsets.
    """
    if not isinstance(s, SubsetSumSet):
        s = SubsetSumSet(s)
    n = len(s)
    if n > MU_EXHAUSTIVE_CAP:
        raise TooLarge(f"mu is exhaustive only; {n} > {MU_EXHAUSTIVE_CAP} elements")
    if n == 0:
        raise ValueError("mu of an empty set is undefined")
    values = [e.value for e in s.elements]
    errors = [e.err for e in s.elements]
    sums: list[tuple[Fraction, Fraction]] = [(Fraction(0), Fraction(0))]
    for v, er in zip(values, errors):
        sums += [(sv + v, se + er) for sv, se in sums]
    sums.sort(key=lambda t: t[0])
    best = None
    for (a, ea), (b, eb) in zip(sums, sums[1:]):
        gap = b - a
        if best is None or gap < best[0]:
            best = (gap, ea + eb)
    return BigReal(best[0], best[1])


class BlockCodeword:
    """Integer codeword of a labeling: one set bit per K-wide block."""

    __slots__ = ("n", "k", "value")

    def __init__(self, n: int, k: int, value: int):
        self.n = n
        self.k = k
        self.value = value
        if not _is_block_valid(value, n, k):
            raise ValueError(f"{value} is not a valid (N={n}, K={k}) block codeword")

    def labels(self) -> tuple[int, ...]:
        return decode_codeword(self, self.n, self.k)

    def __eq__(self, other):
        return (isinstance(other, BlockCodeword)
                and (self.n, self.k, self.value) == (other.n, other.k, other.value))

    def __hash__(self):
        return hash((self.n, self.k, self.value))

    def __repr__(self):
        return f"BlockCodeword(n={self.n}, k={self.k}, value={self.value})"


def _is_block_valid(m: int, n: int, k: int) -> bool:
    if m < 0 or m & 1:
        return False
    for i in range(n):
        window = (m >> (i * k + 1)) & ((1 << k) - 1)
        if window == 0 or window & (window - 1):
            return False  # exactly one bit per block
    return m < (1 << (n * k + 1))


def encode_codeword(labels: Sequence[int], k: int) -> BlockCodeword:
    """m(sigma) = sum_i 2^((i-1)K + sigma_i + 1); bijective on Z_K^N."""
    n = len(labels)
    m = 0
    for i, c in enumerate(labels):
        if not 0 <= c < k:
            raise ValueError(f"label {c} outside Z_{k}")
        m |= 1 << (i * k + c + 1)
    return BlockCodeword(n, k, m)


def decode_codeword(m: BlockCodeword | int, n: int, k: int) -> tuple[int, ...]:
    value = m.value if isinstance(m, BlockCodeword) else m
    labels = []
    for i in range(n):
        window = (value >> (i * k + 1)) & ((1 << k) - 1)
        if window == 0 or window & (window - 1):
            raise ValueError(f"block {i} of {value} does not hold exactly one bit")
        labels.append(window.bit_length() - 1)
    return tuple(labels)


def _snap(x: Fraction, candidates: Iterable[int]) -> int:
    """Nearest candidate to x within distance <= 1; the exact midpoint
    between two candidates resolves to the numerically smaller one.
    Raises NoValidCodeword when nothing is in range."""
    best: int | None = None
    best_d: Fraction | None = None
    for c in sorted(candidates):
        d = abs(x - c)
        if d > 1:
            continue
        if best_d is None or d < best_d:
            best, best_d = c, d
    if best is None:
        raise NoValidCodeword(f"no valid codeword within distance 1 of {float(x)}")
    return best


def snap_to_codeword(x: BigReal | Fraction, n: int, k: int) -> BlockCodeword:
    """Snap a real to the unique block codeword within distance < 1.

    Rounds to the nearest integer and tests the <= 3 integer candidates for
    block validity; the error budget of the attack guarantees uniqueness.
    """
    v = x.value if isinstance(x, BigReal) else Fraction(x)
    m_hat = round(v)
    cands = [c for c in (m_hat - 1, m_hat, m_hat + 1) if _is_block_valid(c, n, k)]
    return BlockCodeword(n, k, _snap(v, cands))


def snap_to_subset(x: BigReal | Fraction, n: int, lowest_bit: int = 1) -> int:
    """Snap to the nearest integer whose set bits lie in
    {lowest_bit, ..., lowest_bit + n - 1} (the subset lattice of the binary
    constructions; spacing 2^lowest_bit)."""
    v = x.value if isinstance(x, BigReal) else Fraction(x)
    m_hat = round(v)
    mask = ((1 << n) - 1) << lowest_bit
    cands = [c for c in (m_hat - 1, m_hat, m_hat + 1) if c >= 0 and (c & ~mask) == 0]
    return _snap(v, cands)


def first_primes(n: int) -> list[int]:
    """The first n primes, by a plain sieve sized via the p_n upper bound."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if n < 6:
        return [2, 3, 5, 7, 11][:n]
    import math

    limit = int(n * (math.log(n) + math.log(math.log(n)))) + 10
    sieve = bytearray([1]) * (limit + 1)
    sieve[0] = sieve[1] = 0
    for p in range(2, int(limit ** 0.5) + 1):
        if sieve[p]:
            sieve[p * p:: p] = bytearray(len(sieve[p * p:: p]))
    primes = [i for i, b in enumerate(sieve) if b]
    if len(primes) < n:  # bound slack; extend rather than fail
        return first_primes_extend(primes, n)
    return primes[:n]


def first_primes_extend(primes: list[int], n: int) -> list[int]:
    c = primes[-1]
    while len(primes) < n:
        c += 2
        if all(c % p for p in primes if p * p <= c):
            primes.append(c)
    return primes


def factor_over_primes(m: int, primes: Sequence[int]) -> frozenset[int]:
    """Index set I (1-based) with m = prod_{i in I} primes[i-1].

    Raises NotSquarefreeProduct if m is not a product of distinct listed
    primes (a remainder survives, or some prime divides twice).
    """
    if m < 1:
        raise ValueError("m must be a positive integer")
    idx = set()
    rest = m
    for i, p in enumerate(primes, start=1):
        if rest % p == 0:
            rest //= p
            if rest % p == 0:
                raise NotSquarefreeProduct(f"{p} divides {m} twice")
            idx.add(i)
    if rest != 1:
        raise NotSquarefreeProduct(f"{m} leaves non-prime-product remainder {rest}")
    return frozenset(idx)
