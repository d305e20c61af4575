"""opinionlab: opinion-dynamics simulation and robustness auditing."""

from .graphs import (
    Graph,
    GraphError,
    GraphSpec,
    GrowthProfile,
    generate,
    polynomial_profile,
    stretched_exp_profile,
)
from .dynamics import (
    DeGroot,
    DistortionModel,
    DynamicsError,
    EpsilonDeGroot,
    GranularDeGroot,
    InitialDistribution,
    OpinionState,
    SimConfig,
    Simulation,
    Trajectory,
    degroot_value,
    eps_degroot_value,
    granular_project,
    granular_value,
    perceive,
    project_to_levels,
    run,
    sample_initial,
    step,
)
from .audit import (
    AuditError,
    AuditReport,
    GranularParams,
    LyapunovConfig,
    RobustnessParams,
    audit_a2_trajectory,
    audit_a3_trajectory,
    beta_reduction,
    check_A1_coupling,
    check_A2,
    check_A3,
    check_variation_bound,
    eps_degroot_params,
    granular_params,
    j_minus,
    j_plus,
    lyapunov,
    lyapunov_series,
    tv_weight_gap,
    variation,
)
from .oracles import (
    DecayFit,
    HorizonParams,
    LearningCriterion,
    LearningEstimate,
    LimitEstimate,
    OracleError,
    WalkDistribution,
    absorbing_walk_distribution,
    audited_nodes,
    default_exempt_radius,
    degroot_closed_form,
    hoeffding_tail_bound,
    horizon_and_rho1,
    learning_estimate,
    limit_estimate,
    p_t_decay_fit,
    walk_distribution,
    wilson_half_width,
    wilson_interval,
)

__version__ = "0.1.0"
