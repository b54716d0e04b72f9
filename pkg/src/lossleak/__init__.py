"""lossleak: label inference attacks on (noisy) loss-score oracles.

Construct codomain-separable prediction payloads for the common ML losses,
simulate a loss-scoring curator under arbitrary-precision or finite
floating-point arithmetic, and recover hidden ground-truth labels exactly
from one (or a few) noisy loss values.
"""

from .bignum import (
    BigReal,
    FpaFormat,
    FpaValue,
    fpa_separability_bound,
    parse_rational,
    round_to_fpa,
)
from .losses import (
    LabelVector,
    LossSpec,
    eval_in_fpa,
    loss_value,
)
from .codes import encode_codeword, factor_over_primes, first_primes, mu, snap_to_codeword
from .attack import (
    AttackPlan,
    ConstructedPayload,
    construct,
    construct_binary_baseline,
    construct_kce,
    construct_sigmoid,
    construct_softmax,
    decode,
    decode_bruteforce,
    decode_multiquery,
    payload_from_json,
    payload_to_json,
    plan_multiquery,
)
from .oracle import (
    NoiseSpec,
    Oracle,
    OracleConfig,
    PrecisionSpec,
    dataset_labels,
    load_labels,
    serve,
    synthetic_labels,
)
from .separability import (
    SeparabilityReport,
    ambiguity_witness,
    discrete_lp_check,
    lambda_bruteforce,
    monotone_bound,
)
from .mutnet import MutNet, build as build_mutnet, forward as mutnet_forward

__version__ = "0.1.0"
