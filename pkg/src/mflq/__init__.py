"""Linear-quadratic control of mean-field jump diffusions.

Solves coupled backward matrix Riccati pairs, rewrites indefinite costs by
equivalent shifts, synthesizes mean-field feedback laws, and certifies
optimality by jump-diffusion Monte Carlo.
"""

from .problem import (
    AsymmetricWeight,
    CostWeights,
    GridMismatch,
    JumpAtom,
    JumpMeasure,
    MatrixPath,
    ProblemSpec,
    ShapeMismatch,
    SReport,
    TimeGrid,
    check_assumption_S,
    jump_bilinear,
    make_problem,
    validate_spec,
    with_weights,
)
from .riccati import (
    CoefficientBundle,
    NonFiniteState,
    RiccatiSolution,
    SigmaPair,
    SigmaSingular,
    centered_bundle,
    g_function,
    mean_bundle,
    riccati_residual,
    riccati_rhs,
    sigma_pair,
    solve_riccati,
)
from .equivalence import (
    FunctionalShift,
    RSingular,
    canonical_shift,
    nc_reduce,
    pullback_hamiltonian,
    pullback_riccati,
    shift_weights,
    transform_pair,
)
from .synthesis import (
    AdjointTriple,
    FeedbackLaw,
    adjoint_representation,
    evaluate_adjoint,
    open_loop_control,
    optimal_value,
    stationarity_residual,
    synthesize_feedback,
    zero_control,
)
from .simulation import (
    CostEstimate,
    MeanTrajectory,
    NonFinitePath,
    PathEnsemble,
    PerturbationReport,
    estimate_cost,
    perturbation_test,
    simulate_cost,
    simulate_paths,
    solve_mean_ode,
)
from .registry import (
    BUILTIN_EXAMPLES,
    asset_liability,
    build_example,
    fbsde_pair,
    scalar_jump,
    shifted_cubic,
)
from .problem_io import ParseError, load_problem, save_problem
from .verify import RunConfig, VerificationReport, run_example
from .reports import emit_report

__version__ = "0.1.0"
