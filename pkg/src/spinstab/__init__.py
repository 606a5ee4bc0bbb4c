"""Measurement-driven trajectories of N-level spin systems under feedback.

The package simulates the diffusive quantum trajectories of a continuously
monitored angular momentum, applies the stabilizing feedback families built
around a chosen measurement eigenstate, and provides the Lyapunov analysis,
Monte Carlo ensembles, and audit tooling used to check the exponential
convergence guarantees numerically.
"""

from .spin import (
    ModelParams,
    ProjectionPolicy,
    SpinOperators,
    build_operators,
    bures_distance,
    bures_to_set,
    eigenstate_set,
    expectation,
    hermitize,
    is_valid_state,
    project_to_state_space,
    pure_state,
    random_density,
    validate_state,
)
from .dynamics import (
    EdgeTarget,
    FeedbackLaw,
    GeneralTarget,
    Zero,
    delta_bar,
    diffusion,
    drift_ito,
    drift_stratonovich,
    feedback_value,
    normalize,
    p_bar,
    rotation_gain,
    sample_plateau,
    signed_power,
    validate_law,
    variance_jz,
    zakai_fields,
)
from .integrate import (
    PiecewiseControl,
    SdeConfig,
    TrajectoryRecord,
    noise_increments,
    simulate_batch,
    simulate_ode,
    simulate_sme,
    simulate_zakai_pair,
    sme_step,
    step_count,
)
from .analysis import (
    ConditionCheck,
    ConditionReport,
    ExponentEstimate,
    audit_conditions,
    bures_from_population,
    classify_convergence,
    dynkin_estimate,
    estimate_exponent,
    generator_edge,
    generator_general,
    generator_qsr,
    lyapunov_edge,
    lyapunov_general,
    lyapunov_qsr,
    qsr_bound_constants,
    qsr_generator_bound_check,
    sample_near_target,
)
from .ensemble import (
    EnsembleConfig,
    EnsembleStats,
    OBSERVABLES,
    PRESET_NAMES,
    csv_header,
    default_observables,
    meta_path_for,
    preset,
    read_csv,
    run_ensemble,
    write_csv,
)

__version__ = "0.1.0"
