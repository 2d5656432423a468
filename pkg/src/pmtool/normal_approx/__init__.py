"""Birkhoff sums, covariance series, Stein and Kantorovich rate experiments."""

from .birkhoff import (BirkhoffBatch, BirkhoffOrbit, BirkhoffSample, CovarianceEstimate, covariance_operator,
                       covariance_series, gap_window, invariant_sampler, sample_birkhoff)
from .distances import (DistanceResult, Estimate, directions, gaussian_expectation, kantorovich_distance,
                        smooth_distance)
from .observables import ObservableSpec, from_coefficients, preset
from .screens import B2Index, Probe, bump_probe, check_B2, coboundary_screen, tanh_probe
from .stein import (GaussianBump, HNorms, LinearTest, SteinBudget, check_A1, check_A2_tilde_tau, default_K,
                    stein_bound, stein_constant)

CSV_HEADER = ["N", "K", "M", "beta", "d", "metric", "value", "std_error", "seed"]

__all__ = [
    "BirkhoffBatch", "BirkhoffOrbit", "BirkhoffSample", "CovarianceEstimate", "covariance_operator",
    "covariance_series", "gap_window", "invariant_sampler", "sample_birkhoff", "DistanceResult", "Estimate",
    "directions", "gaussian_expectation", "kantorovich_distance", "smooth_distance", "ObservableSpec",
    "from_coefficients", "preset", "B2Index", "Probe", "bump_probe", "check_B2", "coboundary_screen",
    "tanh_probe", "GaussianBump", "HNorms", "LinearTest", "SteinBudget", "check_A1", "check_A2_tilde_tau",
    "default_K", "stein_bound", "stein_constant", "CSV_HEADER",
]
