"""Constructive machinery for doubly nonlinear diffusion.

Implicit time stepping for d/dt beta(u) - div alpha(x, grad u) = F(beta(u)) + f
on a box with zero boundary values: each step minimizes a convex energy, the
source is truncated at a level chosen from the initial datum, and monitors
certify the discrete sup, energy, chain-rule, dissipation, and comparison
inequalities the construction guarantees.  The cli module wraps it all behind
scenario documents.
"""

from .graphs import (
    GraphDomainError,
    GraphSpecError,
    OutOfRangeError,
    MonotoneGraph,
    SourceLaw,
    FluxLaw,
    power_graph,
    identity_graph,
    tan_graph,
    log1p_graph,
    rational_graph,
    custom_graph,
    construct_graph,
    graph_conjugate_eval,
    zero_source,
    linear_source,
    power_source,
    sine_source,
    quadratic_source,
    custom_source,
    truncate_source,
    lipschitz_on_interval,
    psi_truncated_primitive,
    p_laplacian,
    sum_p_laplacian,
    flux_eval,
    potential_eval,
)
from .grid import (
    Grid,
    GridError,
    GridField,
    FaceField,
    discrete_gradient,
    discrete_divergence,
    norm,
    inner,
    integral,
    positive_part_integral,
    restrict_to,
    first_eigenmode,
    eigenmode_eigenvalue,
)
from .elliptic_step import (
    StepProblem,
    StepSolution,
    StepSolveError,
    OracleError,
    DEFAULT_STEP_TOL,
    potential_integral,
    elliptic_operator,
    step_energy,
    step_residual,
    solve_step,
    oracle_scalar_solve,
)
from .evolution import (
    MODE_INVERSE_LIPSCHITZ,
    MODE_LIPSCHITZ,
    MODE_MONOTONE_SOURCE,
    MODES,
    ConfigurationError,
    TimeRangeError,
    EvolutionError,
    EvolutionConfig,
    DiscreteState,
    StepRecord,
    Termination,
    Trajectory,
    CheckResult,
    MonitorReport,
    select_truncation_level,
    average_forcing,
    run_evolution,
    interpolant_pc,
    interpolant_pl,
    interpolant_gap,
    pl_l2_distance,
    monitor_linf_chain,
    monitor_energy_chain,
    monitor_fenchel_chain,
    monitor_dissipation,
    monitor_lyapunov_psi,
    monitor_lipschitz_gradient,
    standard_monitors,
)
from .comparison import (
    ComparisonRun,
    DistanceRow,
    run_pair,
    check_gronwall_l1,
    check_positive_part,
    check_l1_contraction,
)
from .config import (
    ConfigError,
    ScenarioConfig,
    GraphSpec,
    FluxSpec,
    SourceSpec,
    ForcingSpec,
    InitialSpec,
    MonitorSpec,
    OutputSpec,
    parse_scenario,
    load_scenario,
    serialize_scenario,
    build_grid,
    build_evolution,
    build_comparison,
    monitor_tolerances,
    preset_names,
    preset_description,
    preset_text,
)
from .study import (
    StudyRow,
    StudyResult,
    scenario_monitors,
    analytic_heat_error,
    refinement_study,
)
from .report import (
    RunArtifacts,
    emit_report,
    format_value,
)

__version__ = "0.1.0"
