"""Maximum-likelihood estimation for the GPD (gradient ascent) and GEV.

The GPD log-likelihood of excesses ``y_1..y_k`` is

    l(s, xi) = -k ln s - (1 + 1/xi) sum ln(1 + xi y_i / s)

with the exponential limit ``-k ln s - sum y_i / s`` near ``xi = 0``. Its
gradient is what federated learners exchange, so it is written out
analytically rather than left to a generic optimiser.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
from scipy import optimize

from .distributions import GevParams, GpdParams, gev_logpdf
from .extraction import ExceedanceSample

XI_BRANCH = 1e-6
SIGMA_FLOOR = 1e-8
XI_MIN, XI_MAX = -0.99, 0.99


def _values(e) -> np.ndarray:
    return np.asarray(e.values if isinstance(e, ExceedanceSample) else e, dtype=float)


def in_support(y: np.ndarray, sigma: float, xi: float) -> bool:
    if sigma <= 0:
        return False
    if xi >= 0 or y.size == 0:
        return True
    return bool(1.0 + xi * y.max() / sigma > 0)


def gpd_loglik(y, sigma: float, xi: float) -> float:
    y = _values(y)
    k = y.size
    if not in_support(y, sigma, xi):
        return -math.inf
    if abs(xi) < XI_BRANCH:
        return -k * math.log(sigma) - y.sum() / sigma
    return -k * math.log(sigma) - (1.0 + 1.0 / xi) * np.log1p(xi * y / sigma).sum()


def gpd_gradient(y, sigma: float, xi: float) -> np.ndarray:
    """``(dl/dsigma, dl/dxi)`` of the total log-likelihood."""
    y = _values(y)
    k = y.size
    z = y / sigma
    if abs(xi) < XI_BRANCH:
        return np.array([-k / sigma + z.sum() / sigma, (0.5 * z * z - z).sum()])
    w = 1.0 + xi * z
    d_sigma = -k / sigma + (1.0 + xi) / sigma * (z / w).sum()
    d_xi = np.log1p(xi * z).sum() / (xi * xi) - (1.0 + 1.0 / xi) * (z / w).sum()
    return np.array([d_sigma, d_xi])


def moment_init(y) -> GpdParams:
    """Method-of-moments starting point, shape clipped to (-0.45, 0.45)."""
    y = _values(y)
    m = float(y.mean())
    v = float(y.var()) if y.size > 1 else m * m
    if v <= 0:
        return GpdParams(max(m, SIGMA_FLOOR), 0.0)
    xi = float(np.clip(0.5 * (1.0 - m * m / v), -0.45, 0.45))
    sigma = max(m * (1.0 - xi), SIGMA_FLOOR)
    if not in_support(y, sigma, xi):
        xi = 0.0
        sigma = max(m, SIGMA_FLOOR)
    return GpdParams(sigma, xi)


def project(sigma: float, xi: float) -> Tuple[float, float]:
    return max(sigma, SIGMA_FLOOR), min(max(xi, XI_MIN), XI_MAX)


def ascent_step(y: np.ndarray, sigma: float, xi: float, lr: float,
                grad: Optional[np.ndarray] = None, max_halvings: int = 60):
    """One projected, preconditioned gradient-ascent step with backtracking.

    The direction is the per-sample gradient scaled by ``diag(sigma^2, 1)``,
    i.e. a step in ``(log sigma, xi)`` units, which keeps one learning rate
    usable whatever the unit of the data. A step that leaves the support or
    lowers the likelihood is retried with half the rate.

    Returns ``(sigma, xi, loglik, accepted_lr)``; ``accepted_lr`` is 0 when no
    improving step was found.
    """
    k = y.size
    if grad is None:
        grad = gpd_gradient(y, sigma, xi)
    base = gpd_loglik(y, sigma, xi)
    direction = np.array([sigma * sigma * grad[0], grad[1]]) / k
    step = lr
    for _ in range(max_halvings):
        s_new, x_new = project(sigma + step * direction[0], xi + step * direction[1])
        ll = gpd_loglik(y, s_new, x_new)
        if math.isfinite(ll) and ll >= base:
            return s_new, x_new, ll, step
        step *= 0.5
    return sigma, xi, base, 0.0


@dataclass
class GpdFit:
    params: GpdParams
    gradient: np.ndarray
    loglik: float
    n_iter: int
    trace: List[float] = field(default_factory=list)
    converged: bool = False


def fit_gpd_mle(e, init: Optional[GpdParams] = None, steps: int = 2000, lr: float = 1.0,
                tol: float = 1e-12) -> GpdFit:
    """Fit a GPD to exceedances by projected gradient ascent.

    ``trace`` holds the log-likelihood after every accepted step and is
    nondecreasing. ``gradient`` is the raw total-likelihood gradient at the
    returned parameters.
    """
    y = _values(e)
    if y.size < 2:
        raise ValueError("need at least two exceedances to fit a GPD")
    if lr <= 0:
        raise ValueError("lr must be > 0")
    threshold = e.threshold if isinstance(e, ExceedanceSample) else 0.0
    if init is None:
        init = moment_init(y)
    sigma, xi = project(init.sigma_tilde, init.xi)
    if not in_support(y, sigma, xi):
        # pull the shape back towards zero until every sample is admissible
        xi = max(xi, -0.999 * sigma / y.max())
    ll = gpd_loglik(y, sigma, xi)
    trace = [ll]
    cur_lr = lr
    converged = False
    n = 0
    for n in range(1, steps + 1):
        s_new, x_new, ll_new, used = ascent_step(y, sigma, xi, cur_lr)
        if used == 0.0:
            converged = True
            break
        moved = abs(s_new - sigma) / sigma + abs(x_new - xi)
        sigma, xi, ll = s_new, x_new, ll_new
        trace.append(ll)
        # grow back towards lr after successful steps
        cur_lr = min(lr, used * 2.0)
        if moved < tol:
            converged = True
            break
    sigma, xi = float(sigma), float(xi)
    return GpdFit(GpdParams(sigma, xi, threshold), gpd_gradient(y, sigma, xi), float(ll), n, trace, converged)


def fit_gev_mle(maxima, init: Optional[GevParams] = None) -> GevParams:
    """GEV maximum likelihood via Nelder-Mead on ``(mu, log sigma, xi)``."""
    z = np.asarray(maxima, dtype=float).ravel()
    if z.size < 3:
        raise ValueError("need at least three block maxima")
    if init is None:
        # Gumbel moment estimates
        s0 = max(float(z.std()) * math.sqrt(6) / math.pi, 1e-12)
        init = GevParams(float(z.mean()) - 0.5772156649 * s0, s0, 0.1)

    def nll(theta):
        mu, log_s, xi = theta
        if not -0.99 <= xi <= 0.99:
            return np.inf
        ll = gev_logpdf(GevParams(mu, math.exp(log_s), xi), z)
        total = float(np.sum(ll))
        return -total if math.isfinite(total) else np.inf

    x0 = np.array([init.mu, math.log(init.sigma), init.xi])
    res = optimize.minimize(nll, x0, method="Nelder-Mead",
                            options={"xatol": 1e-8, "fatol": 1e-10, "maxiter": 20000, "maxfev": 40000})
    mu, log_s, xi = res.x
    return GevParams(float(mu), float(math.exp(log_s)), float(xi))
