"""Steady-state analysis, synthesis and simulation of diffusively
coupled multi-agent networks built from cyclically monotone components."""

from .errors import (
    AlgebraicLoop,
    ConfigInvalid,
    CoupledNetError,
    DimensionMismatch,
    Disconnected,
    EmptyInverse,
    EmptyList,
    EmptySelection,
    IndexOutOfRange,
    Infeasible,
    InfiniteValue,
    InvalidModel,
    LeastSquaresFailure,
    NoConvergence,
    NonFiniteState,
    NotForcible,
    OutsideDomain,
    RadiusNotFound,
    RelationNotEvaluable,
    SelfLoop,
    SingularMatrix,
    SolverFailure,
    StepUnderflow,
    Unbounded,
    UnsupportedKind,
)
from .netgraph import (
    DirectedGraph,
    IncidenceOperator,
    build_graph,
    in_cut_space,
    incidence,
    project_agreement,
)
from .relations import (
    CmResult,
    FunctionKind,
    IntegralFunction,
    RelationKind,
    Sampler,
    SetDescriptor,
    VectorRelation,
    affine_relation,
    as_quadratic,
    check_cm,
    conjugate_function,
    conjugate_value,
    cyclic_sum,
    forward,
    function_sum,
    grad_of,
    gradient_relation,
    indicator_zero,
    integrator_relation,
    inverse,
    pair_residual,
    prox,
    quadratic,
    scalar_separable,
    shifted,
    shifted_relation,
    stacked,
    stacked_relation,
    subgradient,
    value,
)
from .plants import (
    AgentKind,
    AgentModel,
    EquilibriumResult,
    MeicmpResult,
    convex_gradient_agent,
    custom_agent,
    damped_oscillator_agent,
    has_feedthrough,
    is_meicmp_linear,
    is_meicmp_oscillator,
    linear_agent,
    linear_ss_relation,
    oscillator_ss_relation,
    output,
    rhs,
    solve_equilibrium,
    ss_relation,
)
from .couplers import (
    PSI_RANGE,
    ControllerKind,
    ControllerModel,
    controller_output,
    controller_rhs,
    controller_ss_relation,
    custom_controller,
    linear_synthesis,
    nonlinear_integrator,
    paper_psi,
    reconfigured,
)
from .netopt import (
    NetworkProblem,
    SolveOptions,
    SolveTrace,
    SteadyStateCertificate,
    VerifyReport,
    assemble,
    duality_gap,
    flow_residual,
    inclusion_residual,
    ofp_objective,
    opp_objective,
    problem_from_relations,
    recover_certificate,
    solve_ofp,
    solve_opp,
    verify_steady_state,
)
from .synthesis import (
    ForcibilityReport,
    SynthesisResult,
    UniquenessReport,
    apply_leader,
    check_forcible,
    check_uniqueness_conditions,
    g_map,
    leader_input,
    reconfiguration_offsets,
    synthesize_linear,
    wrap_reconfigured,
)
from .simulate import (
    ClosedLoopSystem,
    ConvergenceResult,
    IntegrateOptions,
    PredictionReport,
    Trajectory,
    closed_loop,
    compare_prediction,
    default_initial_state,
    detect_convergence,
    export_csv,
    integrate,
    integrate_schedule,
    run_summary,
    step_rhs,
    storage_candidate,
)

__version__ = "0.1.0"
