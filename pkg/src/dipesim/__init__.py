"""Simulator and verification workbench for distributed inner-product and
purity estimation under bounded quantum communication and memory."""

from .ensembles import (
    InducedStateParams,
    MixtureParams,
    conjugated,
    convex_mixture,
    haar_state,
    haar_unitary,
    induced_state,
    lemma41_pair,
)
from .linalg import (
    DensityMatrix,
    DimCapExceeded,
    InvariantViolation,
    PermutationOp,
    UnitaryMatrix,
    kron,
    measure_rotated_basis,
    measure_suffix_keep_prefix,
    partial_trace,
    permutation_operator,
    swap_operator,
    sym_projector,
)
from .oracles import fidelity, inner_product, partial_ip, purity, trace_distance
from .protocols import (
    Estimate,
    ProtocolConfig,
    Transcript,
    alg1_batch,
    alg1_run,
    alg2_batch,
    alg2_fk_phase,
    alg2_run,
    choose_params,
    purity_estimate,
    swap_test_sample,
)

__version__ = "0.1.0"

__all__ = [
    "DensityMatrix",
    "UnitaryMatrix",
    "PermutationOp",
    "InvariantViolation",
    "DimCapExceeded",
    "kron",
    "partial_trace",
    "swap_operator",
    "permutation_operator",
    "sym_projector",
    "measure_rotated_basis",
    "measure_suffix_keep_prefix",
    "InducedStateParams",
    "MixtureParams",
    "haar_unitary",
    "haar_state",
    "induced_state",
    "convex_mixture",
    "conjugated",
    "lemma41_pair",
    "inner_product",
    "purity",
    "partial_ip",
    "trace_distance",
    "fidelity",
    "ProtocolConfig",
    "Estimate",
    "Transcript",
    "swap_test_sample",
    "alg1_batch",
    "alg1_run",
    "alg2_fk_phase",
    "alg2_batch",
    "alg2_run",
    "purity_estimate",
    "choose_params",
]
