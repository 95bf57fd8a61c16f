"""Stochastic safety kit: barrier-certificate QP controllers for
control-affine SDEs, with worst-case safety bounds and Monte Carlo
verification."""

from .bounds import (
    BoundReport,
    HypothesisViolationError,
    SupEstimate,
    estimate_sup,
    ho_scbf_bound,
    kushner_supermartingale_bound,
    scbf_bound,
    szcbf_bound,
)
from .certificates import (
    AffineConstraint,
    BoundaryError,
    CertificateSpec,
    ClassKFunction,
    DegenerateConstraintError,
    InfeasibleRowError,
    clf_row,
    ho_scbf_row,
    ho_szcbf_row,
    scbf_row,
    srcbf_row,
    szcbf_row,
)
from .generator import (
    BarrierChain,
    ChainConstructionError,
    GeneratorDecomposition,
    SmoothFunction,
    apply_generator,
    build_chain,
    decompose,
    finite_difference_check,
)
from .harness import (
    ConfigError,
    SafetyReport,
    ScenarioConfig,
    emit_trajectory_csv,
    register_model,
    run_ensemble,
    sweep_noise,
    wilson_interval,
)
from .qp import QpProblem, QpSolution, saturate, solve
from .sde import (
    ControllerStepError,
    IntegrationOverflowError,
    NoiseStream,
    SdeModel,
    State,
    Trajectory,
    euler_maruyama_step,
    gaussian_increment_block,
    gaussian_increments,
    simulate,
)

__version__ = "0.1.0"
