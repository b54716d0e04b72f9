"""Degradation experiments under finite floating-point precision.

The Fig-1-style sweep finds, per (loss, dataset, tau), the largest N at
which single-query inference recovers every trial's labels at the accuracy
target when both the curator and the attacker compute in IEEE-754 doubles
(native floats: hardware arithmetic plus the platform libm -- the same
environment the original measurements describe).  The Fig-2-style sweep
reconstructs a whole dataset with ceil(N/M) block queries.

Absolute max_N values are machine/libm-dependent by nature; only the
orderings and monotonicities are meaningful, and only those are asserted
anywhere.
"""

from __future__ import annotations

import csv
import math
import random
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Sequence

from .attack import ConstructedPayload, construct, construct_binary_baseline
from .bignum import parse_rational
from .bignum.real import _as_fraction
from .losses import LabelVector, LossSpec, materialize
from .oracle import dataset_labels, synthetic_labels

__all__ = [
    "ExperimentConfig",
    "FIG1_LOSSES",
    "run_fig1",
    "run_fig2",
    "fig1_cell",
    "fig2_cell",
    "write_csv",
    "write_svg",
]

#: the Fig-1 loss rows; "binary-baseline" is the K=2 log-odds construction in
#: its small-theta orientation (the bit-cost-favourable form)
FIG1_LOSSES = ("kary-ce", "softmax-ce", "sigmoid-ce", "binary-baseline")


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: str = "titanic"                      # titanic|iris|satellite|synthetic
    synthetic: tuple[int, int, int] | None = None  # (N, K, seed)
    losses: tuple[str, ...] = FIG1_LOSSES
    tau_grid: tuple[Fraction, ...] = (Fraction(1, 10000), Fraction(1, 100), Fraction(1))
    trials: int = 100
    accuracy_target: Fraction = Fraction(1)
    block_grid: tuple[int, ...] | None = None
    noise_margin: Fraction = Fraction(1, 100)
    seed: int = 0
    max_n: int = 48

    def __post_init__(self):
        taus = tuple(_as_fraction(t) for t in self.tau_grid)
        if any(t <= 0 for t in taus) or list(taus) != sorted(taus):
            raise ValueError("tau_grid must be positive ascending")
        object.__setattr__(self, "tau_grid", taus)
        object.__setattr__(self, "accuracy_target", _as_fraction(self.accuracy_target))
        if self.trials < 1:
            raise ValueError("trials >= 1")

    def labels_pool(self) -> LabelVector:
        if self.dataset == "synthetic":
            n, k, seed = self.synthetic or (256, 2, 0)
            return synthetic_labels(seed, n, k)
        return dataset_labels(self.dataset)


# ---------------------------------------------------------------------------
# double-precision payload views and curator/attacker arithmetic
# ---------------------------------------------------------------------------

class _DoubleAttack:
    """One constructed payload lowered to doubles: the transmitted entries,
    the curator's loss routine, and the attacker's lattice decoder."""

    def __init__(self, family: str, n: int, k: int, tau: Fraction):
        self.family = family
        self.n, self.k = n, k
        if family == "binary-baseline":
            self.cp = construct_binary_baseline(n, tau, orientation="zero")
        else:
            self.cp = construct(LossSpec(family, k_classes=k), n, tau)
        conc = materialize(self.cp.payload)
        if family in ("kary-ce", "softmax-ce"):
            self.entries = [[x.value for x in row] for row in conc.rows]
            self.floats = [[float(v) for v in row] for row in self.entries]
        else:
            self.entries = [x.value for x in conc.entries]
            self.floats = [float(v) for v in self.entries]
        self.c_dbl = float(self.cp.constant.value)
        self.unit = float(self.cp.scale) * math.log(3)

    # -- curator side ---------------------------------------------------------

    def curator_loss(self, sigma: Sequence[int]) -> float | None:
        """The loss a double-precision curator computes; None when the
        arithmetic degenerates (log of a flushed zero, overflow)."""
        fam, n = self.family, self.n
        try:
            acc = 0.0
            if fam == "kary-ce":
                for i, c in enumerate(sigma):
                    acc += math.log(self.floats[i][c])
                return -acc / n
            if fam == "softmax-ce":
                for i, c in enumerate(sigma):
                    row = self.floats[i]
                    exps = [math.exp(z) for z in row]
                    p = exps[c] / sum(exps)
                    acc += math.log(p)
                return -acc / n
            if fam == "sigmoid-ce":
                for i, c in enumerate(sigma):
                    u = math.exp(-self.floats[i])
                    p = 1.0 / (1.0 + u)
                    acc += math.log(p) if c == 1 else math.log(1.0 - p)
                return -acc / n
            # binary-baseline: plain binary cross-entropy
            for i, c in enumerate(sigma):
                t = self.floats[i]
                acc += math.log(t) if c == 1 else math.log(1.0 - t)
            return -acc / n
        except (ValueError, OverflowError, ZeroDivisionError):
            return None

    # -- attacker side ---------------------------------------------------------

    def decode(self, ell: float) -> tuple[int, ...] | None:
        """Best-effort lattice decode in double arithmetic: snap to the
        nearest valid codeword among the three integer candidates (the
        lattice spacing is 2), then read the bits; per-position fallbacks
        when no candidate is clean, None when the observation is unusable."""
        if ell is None or math.isinf(ell) or math.isnan(ell):
            return None
        n, k = self.n, self.k
        if self.family == "binary-baseline":
            x = (ell - self.c_dbl) / self.unit
            m = self._snap(x, self._subset_valid)
            return tuple((m >> i) & 1 if m >= 0 else 0 for i in range(1, n + 1))
        x = (self.c_dbl - ell) / self.unit
        m = self._snap(x, self._block_valid)
        labels = []
        for i in range(n):
            window = (m >> (i * k + 1)) & ((1 << k) - 1)
            if window and not window & (window - 1):
                labels.append(window.bit_length() - 1)
            else:
                labels.append(0)  # corrupted block: deterministic wrong guess
        return tuple(labels)

    def _snap(self, x: float, valid: Callable[[int], bool]) -> int:
        if math.isinf(x) or math.isnan(x):
            return 0
        m_hat = round(x)
        best, best_d = None, None
        for c in (m_hat - 1, m_hat, m_hat + 1):
            if c < 0 or not valid(c):
                continue
            d = abs(x - c)
            if best_d is None or d < best_d:
                best, best_d = c, d
        return max(m_hat, 0) if best is None else best

    def _subset_valid(self, m: int) -> bool:
        mask = ((1 << self.n) - 1) << 1
        return (m & ~mask) == 0

    def _block_valid(self, m: int) -> bool:
        if m & 1:
            return False
        for i in range(self.n):
            w = (m >> (i * self.k + 1)) & ((1 << self.k) - 1)
            if w == 0 or w & (w - 1):
                return False
        return m < (1 << (self.n * self.k + 1))


_ATTACK_CACHE: dict = {}


def _double_attack(family: str, n: int, k: int, tau: Fraction) -> _DoubleAttack:
    key = (family, n, k, tau)
    if key not in _ATTACK_CACHE:
        if len(_ATTACK_CACHE) > 512:
            _ATTACK_CACHE.clear()
        _ATTACK_CACHE[key] = _DoubleAttack(family, n, k, tau)
    return _ATTACK_CACHE[key]


def _trial_accuracy(atk: _DoubleAttack, sigma: tuple[int, ...], noise: float) -> float:
    f = atk.curator_loss(sigma)
    if f is None:
        return 0.0
    got = atk.decode(f + noise)
    if got is None:
        return 0.0
    hits = sum(1 for a, b in zip(got, sigma) if a == b)
    return hits / len(sigma)


def fig1_cell(family: str, pool: LabelVector, tau: Fraction, n: int, trials: int,
              seed: int, target: Fraction, margin: Fraction) -> bool:
    """True when all `trials` random length-n label sets from the pool are
    recovered at the accuracy target under worst-case sign-random noise."""
    k = pool.k_classes
    atk = _double_attack(family, n, k, tau)
    rng = random.Random((seed, family, str(tau), n))
    mag = float(tau * (1 - margin))
    for _ in range(trials):
        sigma = tuple(rng.choice(pool.labels) for _ in range(n))
        noise = mag if rng.getrandbits(1) else -mag
        if _trial_accuracy(atk, sigma, noise) < target:
            return False
    return True


def _max_n(family: str, pool: LabelVector, tau: Fraction, cfg: ExperimentConfig) -> int:
    n = 0
    while n < cfg.max_n and fig1_cell(family, pool, tau, n + 1, cfg.trials,
                                      cfg.seed, cfg.accuracy_target,
                                      cfg.noise_margin):
        n += 1
    return n


def run_fig1(cfg: ExperimentConfig, datasets: Sequence[str] | None = None) -> list[dict]:
    """Rows: loss, dataset, tau, max_N, accuracy_target.  The K=2-only
    losses are skipped on multiclass datasets."""
    rows = []
    for ds in (datasets or [cfg.dataset]):
        sub = cfg if ds == cfg.dataset else _with_dataset(cfg, ds)
        pool = sub.labels_pool()
        for family in cfg.losses:
            if pool.k_classes != 2 and family in ("sigmoid-ce", "binary-baseline"):
                continue
            for tau in cfg.tau_grid:
                rows.append({
                    "loss": family,
                    "dataset": ds,
                    "tau": str(tau),
                    "max_N": _max_n(family, pool, tau, sub),
                    "accuracy_target": str(cfg.accuracy_target),
                })
    return rows


def _with_dataset(cfg: ExperimentConfig, ds: str) -> ExperimentConfig:
    from dataclasses import replace

    return replace(cfg, dataset=ds)


# ---------------------------------------------------------------------------
# fig 2: block attacks over a whole dataset
# ---------------------------------------------------------------------------

def fig2_cell(family: str, labels: LabelVector, tau: Fraction, block: int,
              trials: int, seed: int, margin: Fraction) -> tuple[float, float, int]:
    """(mean accuracy, min accuracy, query count) for reconstructing the full
    label vector with ceil(N/block) block queries per trial."""
    n, k = labels.n, labels.k_classes
    blocks = [(lo, min(lo + block, n)) for lo in range(0, n, block)]
    attacks = {hi - lo: _double_attack(family, hi - lo, k, tau)
               for lo, hi in blocks}
    mag = float(tau * (1 - margin))
    accs = []
    for trial in range(trials):
        rng = random.Random((seed, family, str(tau), block, trial))
        hits = 0
        for lo, hi in blocks:
            atk = attacks[hi - lo]
            sigma = labels.labels[lo:hi]
            noise = mag if rng.getrandbits(1) else -mag
            f = atk.curator_loss(sigma)
            got = atk.decode(f + noise) if f is not None else None
            if got is not None:
                hits += sum(1 for a, b in zip(got, sigma) if a == b)
        accs.append(hits / n)
    return sum(accs) / len(accs), min(accs), len(blocks)


def run_fig2(cfg: ExperimentConfig) -> list[dict]:
    labels = cfg.labels_pool()
    blocks = cfg.block_grid or (1, 2, 4, 8, 12, 16)
    rows = []
    for family in cfg.losses:
        if labels.k_classes != 2 and family in ("sigmoid-ce", "binary-baseline"):
            continue
        for tau in cfg.tau_grid:
            for block in blocks:
                mean_acc, min_acc, queries = fig2_cell(
                    family, labels, tau, block, cfg.trials, cfg.seed,
                    cfg.noise_margin)
                rows.append({
                    "loss": family,
                    "dataset": cfg.dataset,
                    "tau": str(tau),
                    "block_size": block,
                    "queries": queries,
                    "accuracy": f"{mean_acc:.6f}",
                    "accuracy_min": f"{min_acc:.6f}",
                    "trials": cfg.trials,
                })
    return rows


# ---------------------------------------------------------------------------
# output
# ---------------------------------------------------------------------------

def write_csv(rows: list[dict], path: str):
    if not rows:
        raise ValueError("nothing to write")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        w.writeheader()
        w.writerows(rows)


def write_svg(rows: list[dict], path: str, x_key: str, y_key: str,
              series_keys: tuple[str, ...] = ("loss", "dataset")):
    """A dependency-free line chart: one polyline per series."""
    series: dict[tuple, list[tuple[float, float]]] = {}
    for r in rows:
        key = tuple(r[k] for k in series_keys)
        x = float(parse_rational(str(r[x_key])))
        y = float(r[y_key])
        series.setdefault(key, []).append((x, y))
    w, h, pad = 640, 400, 48
    xs = [p[0] for pts in series.values() for p in pts]
    ys = [p[1] for pts in series.values() for p in pts]
    x_lo, x_hi = min(xs), max(xs)
    y_lo, y_hi = 0.0, max(ys) * 1.1 + 1e-9

    def sx(x: float) -> float:
        if x_hi == x_lo:
            return w / 2
        return pad + (x - x_lo) / (x_hi - x_lo) * (w - 2 * pad)

    def sy(y: float) -> float:
        return h - pad - (y - y_lo) / (y_hi - y_lo) * (h - 2 * pad)

    palette = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}">',
             f'<rect width="{w}" height="{h}" fill="white"/>',
             f'<line x1="{pad}" y1="{h-pad}" x2="{w-pad}" y2="{h-pad}" stroke="black"/>',
             f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{h-pad}" stroke="black"/>',
             f'<text x="{w//2}" y="{h-12}" font-size="12">{x_key}</text>',
             f'<text x="8" y="{pad-8}" font-size="12">{y_key}</text>']
    for idx, (key, pts) in enumerate(sorted(series.items())):
        pts.sort()
        color = palette[idx % len(palette)]
        path_d = " ".join(f"{sx(x):.1f},{sy(y):.1f}" for x, y in pts)
        parts.append(f'<polyline points="{path_d}" fill="none" stroke="{color}"/>')
        parts.append(f'<text x="{w-pad+4}" y="{pad+14*idx}" font-size="10" '
                     f'fill="{color}">{"/".join(key)}</text>')
    parts.append("</svg>")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(parts))
