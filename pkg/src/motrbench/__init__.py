"""Adversarial disturbance generation for linear-quadratic control.

Generates maximally adversarial disturbance sequences for blackbox
controllers of linear systems with quadratic costs: an online
trust-region learner with memory (MOTR) plus equilibrium, gradient,
sinusoid and noise baselines, baseline controllers to attack, and a
reproducible benchmark harness.
"""

from .lds import (
    CostWeights,
    LinearSystem,
    StabilityReport,
    TrajectoryLog,
    analyze_stability,
    complexity_measure,
    random_system,
    stabilize,
    stage_cost,
    step,
    truncation_horizon,
)
from .trust_region import (
    TrustRegionProblem,
    TrustRegionSolution,
    brute_force,
    condition_number,
    solve,
)
from .online import (
    CollapsedQuadratic,
    FplLearner,
    MemoryQuadratic,
    OtrState,
    collapse,
    default_perturbation_rate,
    play_sequence,
    regret_audit,
    sample_perturbation,
)
from .cdg import (
    CdgPolicy,
    RolloutQuadratic,
    TransferStack,
    approx_cost,
    approx_state,
    hessian_gradient_at_zero,
    project_frobenius,
    rollout_cost_quadratic,
    transfer_stack,
    unrolled_state,
)
from .controllers import (
    GpcController,
    HinfSolution,
    LinearFeedback,
    gpc_controller,
    hinf_bisection,
    hinf_controller,
    lqr_controller,
    solve_dare,
    solve_hinf_game,
)
from .generators import (
    AdaptiveCdgGenerator,
    MotrConfig,
    gaussian_generator,
    hinf_generator,
    motr_generator,
    normalize_budget,
    oga_generator,
    random_direction_generator,
    scale_to_budget,
    sinusoid_generator,
    transform_residual,
)
from .bench import (
    AggregateTable,
    ExperimentConfig,
    RunRecord,
    build_bundle,
    normalize_scores,
    regret_curve,
    run_episode,
    run_grid,
)

__version__ = "0.1.0"
