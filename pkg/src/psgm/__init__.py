"""Constrained and preconditioned stochastic gradient approximation of sampled functions."""

from .basis import (
    Monomial,
    MemoryTapped,
    OrthogonalPoly,
    PiecewiseConstant,
    build_orthogonal_polys,
    constraint_points,
    derivative_rows,
    eval_design_matrix,
    eval_function,
)
from .engine import (
    BatchStatistics,
    Constant,
    EvaluationSet,
    InverseDecay,
    IterationState,
    RunConfig,
    RunTrace,
    SwitchAt,
    batch_least_squares,
    batch_statistics,
    psgm_step,
    run,
    run_replicas,
    schedule_value,
)
from .errors import (
    ConfigError,
    DegenerateSamples,
    DimensionMismatch,
    EmptyBatch,
    NoConvergence,
    NonFiniteUpdate,
    NotAdmissible,
    NotPositiveDefinite,
    PSGMError,
    SingularB,
    UnsupportedFamily,
    WrongProcessTag,
    ZeroOracle,
)
from .numerics import (
    condition_number,
    factorize_spd,
    frobenius_norm,
    solve_factored,
    spectral_estimate,
    spectral_norm,
)
from .regularization import (
    ConstraintOperator,
    PreconditionerSpec,
    assemble_preconditioner,
    check_relative_pd,
    constraint_gram,
    derivative_constraint,
    first_difference,
    first_difference_operator,
    lemma1_params,
    no_constraint,
)
from .sampling import (
    CorrelatedStream,
    Discrete,
    FixedDesign,
    GammaCRF,
    GaussianMixture,
    SampleBatch,
    Uniform,
    UserFunction,
    draw_batch,
    mixture_pdf,
    synthetic_channel,
)
from .analysis import (
    CovarianceDiagnostics,
    LemmaReport,
    OracleSolution,
    error_metrics,
    estimate_covariances,
    oracle_best_approx,
    quadrature_best_approx,
    verify_lemma1,
    verify_lemma3,
    verify_theorem1_mean,
    variance_bound_check,
)

__version__ = "0.1.0"
