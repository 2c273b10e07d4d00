"""Multilevel Monte Carlo library: Python interface to the C++ core."""

from ._core import (
    KalmanResult,
    RngStream,
    ScalarLinearGaussian,
    canonical_config,
    coupling_probability,
    kalman_filter,
    maximal_coupling_resample,
    ou_euler_transition,
    ou_exact_transition,
    poisson_l2_error,
    run_experiment,
    set_thread_count,
    thread_count,
    validate_config,
)

__all__ = [
    "KalmanResult",
    "RngStream",
    "ScalarLinearGaussian",
    "canonical_config",
    "coupling_probability",
    "kalman_filter",
    "maximal_coupling_resample",
    "ou_euler_transition",
    "ou_exact_transition",
    "poisson_l2_error",
    "run_experiment",
    "set_thread_count",
    "thread_count",
    "validate_config",
]
