"""Arbitrary-precision reals with explicit error bounds, plus emulation of
finite floating-point formats."""

from .real import (
    EXP_BITS_BUDGET,
    BigReal,
    decimal_str,
    exp,
    ln,
    ln1p_pow,
    ln2_interval,
    ln3_interval,
    parse_rational,
    pow_of,
    sigmoid_pair,
)
from .fpa import (
    FpaFormat,
    FpaValue,
    fixed_point_grid,
    fixed_point_round,
    fpa_separability_bound,
    round_to_fpa,
)

__all__ = [
    "BigReal",
    "EXP_BITS_BUDGET",
    "FpaFormat",
    "FpaValue",
    "decimal_str",
    "exp",
    "fixed_point_grid",
    "fixed_point_round",
    "fpa_separability_bound",
    "ln",
    "ln1p_pow",
    "ln2_interval",
    "ln3_interval",
    "parse_rational",
    "pow_of",
    "round_to_fpa",
    "sigmoid_pair",
]
