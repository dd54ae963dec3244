"""Bayesian low-rank CP tensor regression with rank inference.

Gibbs sampling of CP factor matrices, birth/death moves on the rank,
rejection-filtered posterior means, computable rate bounds and a
synthetic-experiment harness. The inner loops run in a compiled extension
when it is available and in numpy otherwise (see :mod:`bayestensor.kernels`).
"""

from .errors import (
    BayesTensorError,
    ConfigurationError,
    DegenerateProfileError,
    DomainError,
    EstimationFailure,
    NumericalError,
    StructuralError,
    UnsupportedOperationError,
    ValidationError,
)
from .tensor import (
    CPFactors,
    DenseTensor,
    Infinity,
    Lp,
    Max2UpperBound,
    Shape,
    cp_compose,
    cp_element,
    empirical_sq_norm,
    inner_product,
    max2_upper_bound,
    norm,
    population_sq_norm_uniform,
    read_dense,
    read_factors,
    write_dense,
    write_factors,
)
from .designs import (
    DesignKind,
    DesignSet,
    GatePolicy,
    NoiseSpec,
    Observation,
    SparseMeasurement,
    completion_data,
    generate_responses,
    make_completion_design,
    make_multitask_design,
    normalize_l1_gate,
    read_observations,
    write_observations,
)
from .sampler import (
    ChainConfig,
    Hyperparams,
    InfinityNorm,
    MaxNorm,
    NoRejection,
    PosteriorSummary,
    SamplerState,
    gibbs_update_mode,
    init_state,
    log_likelihood,
    log_prior,
    merge_summaries,
    mode_conditional,
    passes_rejection,
    rank_move,
    run_chain,
)
from .bounds import BoundReport, ProblemProfile, rate_bounds, xi_upper_bound
from .kernels import BACKEND

__version__ = "0.1.0"
