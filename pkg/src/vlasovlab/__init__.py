"""Particle-method laboratory for mean-field dynamics with singular pair forces.

A small numpy/scipy library that simulates N identical particles coupled by
a central force bounded by 1/|x|^alpha (alpha < 1), computes the discrete
diagnostics that control the mean-field limit (support radii, minimal
phase-space separation, windowed force averages, discrete sup-norm brackets),
and turns the limit argument's combinatorial devices (dyadic shells, backward
phase-space parallelepipeds, lattice coverings) into executable verifiers.
A 1D-1V grid transport solver serves as the continuum reference for
weak-convergence experiments.
"""

__version__ = "0.1.0"

from .ensemble import (
    DENSITY_KINDS,
    InitialDensitySpec,
    ParticleEnsemble,
    epsilon_scale,
    quiet_start_init,
)
from .forces import (
    CollisionDetected,
    ForceKernel,
    field_at,
    field_exact,
    field_regularized,
    fields_all,
    grad_field_regularized,
    pair_force,
)
from .integrate import NonFiniteState, Trajectory, run, total_energy, verlet_step
from .diagnostics import (
    DiagnosticsRecord,
    check_mlinf,
    compute_diagnostics,
    default_beta,
    discrete_linf,
    min_phase_separation,
    support_radii,
    windowed_force_avg,
    windowed_force_diff_avg,
)
from .shells import (
    ShellPartition,
    TwoScalePartition,
    position_shells,
    q0_split,
    shell_count_bound_check,
    shell_force_statistic,
    shell_stability_check,
    two_scale_shells,
    velocity_shells,
)
from .parallelepiped import (
    NormConditionsViolated,
    PhaseParallelepiped,
    TrackingReport,
    backward_step,
    boundary_extent,
    containment_check,
    contains,
    count_in,
    estimate_growth_const,
    lattice_cover,
    linf_preservation_report,
    norm_conditions,
    track_back,
)
from .oracle import (
    GridDensity,
    OracleRun,
    SupportOverflow,
    field_from_density,
    force_convergence_stat,
    grid_from_spec,
    solve,
    weak_distance,
)
from .harness import (
    ConfigError,
    ExperimentConfig,
    convergence_study,
    parse_config,
    print_schema,
    run_experiment,
    verify_bundle,
)
