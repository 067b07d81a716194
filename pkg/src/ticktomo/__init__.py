"""Reconstruct clock waiting-time statistics from tick records against a Poisson reference."""
from .combinatorics import (
    CapacityError,
    StirlingTable,
    falling_factorial,
    forward_stirling_transform,
    inverse_stirling_transform,
    poisson_raw_moment,
    stirling1_unsigned,
    stirling2,
    stirling_table,
)
from .clock_models import (
    ClockValidationError,
    DivergenceWarning,
    Erlang,
    Exponential,
    Gamma,
    LindbladClock,
    LindbladDerived,
    Mixture,
    NonTerminatingSampleError,
    NotTickingError,
    UniformShifted,
    analytic_moment,
    build_reduced_generator,
    certify_envelope,
    mgf_quadrature,
    sample_waiting_time,
    spectral_analysis,
    survival_probability,
    waiting_time_density,
)
from .simulator import (
    AtRefTick,
    AtTime,
    RateMatrixClock,
    TickSample,
    gillespie_trajectory,
    sample_nonreset_counts,
    sample_nonreset_table,
    sample_perfect_reference_counts,
    sample_poisson_ticks,
    sample_reset_counts,
    simulate_registers,
)
from .specs import load_clock_spec, parse_clock_spec
from .tomography import (
    FcsReport,
    MomentReport,
    chebyshev_fractional_bound,
    estimate_clock_moment,
    estimator_variance_exact,
    estimator_variance_first_order,
    fcs_error_bound,
    fcs_estimate,
    fit_alpha_coefficients,
    moment_report,
    precision_k,
    reconstruct_cf,
    reconstruct_clock_moments,
    reconstruct_mgf,
    relative_moments,
    sub_poisson_bounds,
    sub_poisson_relative_moment_bounds,
)

__version__ = "0.1.0"
