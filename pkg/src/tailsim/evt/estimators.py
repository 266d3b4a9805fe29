"""scikit-learn compatible wrappers around the EVT fitting routines."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .distributions import GpdParams, gev_cdf, gpd_ccdf, gpd_moments, gpd_quantile
from .extraction import block_maxima, default_threshold, peaks_over_threshold
from .mle import fit_gev_mle, fit_gpd_mle, gpd_loglik


def _as_samples(X) -> np.ndarray:
    X = check_array(X, ensure_2d=False, dtype=np.float64)
    if X.ndim == 2:
        if X.shape[1] != 1:
            raise ValueError(f"expected a single column of samples, got {X.shape[1]} columns")
        X = X[:, 0]
    return X


class PeaksOverThreshold(TransformerMixin, BaseEstimator):
    """Learns a threshold and maps samples to their exceedances.

    ``threshold=None`` uses the empirical ``quantile`` of the training data.
    """

    def __init__(self, threshold=None, quantile=0.99):
        self.threshold = threshold
        self.quantile = quantile

    def fit(self, X, y=None):
        x = _as_samples(X)
        self.threshold_ = float(self.threshold) if self.threshold is not None else default_threshold(x, self.quantile)
        self.n_features_in_ = 1
        return self

    def transform(self, X):
        check_is_fitted(self, "threshold_")
        return peaks_over_threshold(_as_samples(X), self.threshold_).values


class GPDEstimator(BaseEstimator):
    """Peaks-over-threshold GPD fit by projected gradient-ascent MLE.

    Parameters
    ----------
    threshold : float or None
        Exceedance level ``d``. ``None`` picks the empirical ``quantile``.
    quantile : float
        Quantile used when ``threshold`` is None.
    steps, lr : int, float
        Iteration budget and learning rate of the ascent.
    init : GpdParams or None
        Starting point; method of moments when None.

    Attributes
    ----------
    threshold_, sigma_tilde_, xi_ : float
    n_exceedances_, n_samples_ : int
    loglik_ : float
    gradient_ : ndarray of shape (2,)
    params_ : GpdParams
    """

    def __init__(self, threshold=None, quantile=0.99, steps=2000, lr=1.0, init=None):
        self.threshold = threshold
        self.quantile = quantile
        self.steps = steps
        self.lr = lr
        self.init = init

    def fit(self, X, y=None):
        x = _as_samples(X)
        d = float(self.threshold) if self.threshold is not None else default_threshold(x, self.quantile)
        exc = peaks_over_threshold(x, d)
        fit = fit_gpd_mle(exc, init=self.init, steps=self.steps, lr=self.lr)
        self.params_ = fit.params
        self.threshold_ = d
        self.sigma_tilde_ = fit.params.sigma_tilde
        self.xi_ = fit.params.xi
        self.loglik_ = fit.loglik
        self.gradient_ = fit.gradient
        self.n_exceedances_ = len(exc)
        self.n_samples_ = int(x.size)
        self.exceedance_rate_ = exc.rate
        self.converged_ = fit.converged
        self.n_features_in_ = 1
        return self

    def tail_probability(self, x):
        """Model estimate of Pr(X > x) for levels at or above the threshold."""
        check_is_fitted(self, "params_")
        x = np.asarray(x, dtype=float)
        return self.exceedance_rate_ * gpd_ccdf(self.params_, x - self.threshold_)

    def return_level(self, tail_prob):
        """Level exceeded with probability ``tail_prob`` (must be below the exceedance rate)."""
        check_is_fitted(self, "params_")
        ratio = np.asarray(tail_prob, dtype=float) / self.exceedance_rate_
        return self.threshold_ + gpd_quantile(self.params_, ratio)

    def moments(self):
        check_is_fitted(self, "params_")
        return gpd_moments(self.params_)

    def score(self, X, y=None):
        """Mean log-likelihood of the exceedances in ``X`` under the fit."""
        check_is_fitted(self, "params_")
        exc = peaks_over_threshold(_as_samples(X), self.threshold_)
        if len(exc) == 0:
            return 0.0
        return gpd_loglik(exc.values, self.sigma_tilde_, self.xi_) / len(exc)


class GEVEstimator(BaseEstimator):
    """Block-maxima GEV fit (Nelder-Mead MLE)."""

    def __init__(self, block_size=100):
        self.block_size = block_size

    def fit(self, X, y=None):
        x = _as_samples(X)
        z = block_maxima(x, self.block_size)
        self.params_ = fit_gev_mle(z)
        self.mu_, self.sigma_, self.xi_ = self.params_.mu, self.params_.sigma, self.params_.xi
        self.n_blocks_ = int(z.size)
        self.n_features_in_ = 1
        return self

    def cdf(self, z):
        check_is_fitted(self, "params_")
        return gev_cdf(self.params_, z)

    def to_gpd(self, d: float) -> GpdParams:
        check_is_fitted(self, "params_")
        return self.params_.to_gpd(d)
