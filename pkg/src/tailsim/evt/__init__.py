"""Extreme-value statistics: GEV/GPD laws, sample extraction and fitting."""
from .distributions import (
    GevParams,
    GpdParams,
    UndefinedMomentError,
    gev_cdf,
    gev_logpdf,
    gev_quantile,
    gpd_ccdf,
    gpd_cdf,
    gpd_moments,
    gpd_pdf,
    gpd_quantile,
    gpd_sample,
)
from .estimators import GEVEstimator, GPDEstimator, PeaksOverThreshold
from .extraction import ExceedanceSample, block_maxima, default_threshold, peaks_over_threshold
from .mle import GpdFit, ascent_step, fit_gev_mle, fit_gpd_mle, gpd_gradient, gpd_loglik, moment_init
from .von_mises import ConvergenceError, von_mises_params

__all__ = [
    "GevParams", "GpdParams", "UndefinedMomentError", "ExceedanceSample", "GpdFit",
    "gev_cdf", "gev_logpdf", "gev_quantile", "gpd_ccdf", "gpd_cdf", "gpd_pdf", "gpd_quantile",
    "gpd_sample", "gpd_moments", "block_maxima", "peaks_over_threshold", "default_threshold",
    "fit_gpd_mle", "fit_gev_mle", "gpd_loglik", "gpd_gradient", "ascent_step", "moment_init",
    "von_mises_params", "ConvergenceError", "GPDEstimator", "GEVEstimator", "PeaksOverThreshold",
]
