"""GEV and GPD parameter sets with their distribution functions."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# |xi| below this uses the exponential / Gumbel limit
XI_ZERO = 1e-9


class UndefinedMomentError(ArithmeticError):
    """Requested GPD moment does not exist for this shape."""


@dataclass(frozen=True)
class GevParams:
    mu: float
    sigma: float
    xi: float

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("GEV scale sigma must be > 0")

    @property
    def upper_endpoint(self) -> float:
        """Finite right end of the support when xi < 0, else +inf."""
        if self.xi < 0:
            return self.mu - self.sigma / self.xi
        return math.inf

    def to_gpd(self, d: float) -> "GpdParams":
        """GPD of exceedances over ``d`` sharing this shape."""
        return GpdParams(self.sigma + self.xi * (d - self.mu), self.xi, d)


@dataclass(frozen=True)
class GpdParams:
    sigma_tilde: float
    xi: float
    threshold: float = 0.0

    def __post_init__(self):
        if not self.sigma_tilde > 0:
            raise ValueError("GPD scale sigma_tilde must be > 0")

    @property
    def upper_endpoint(self) -> float:
        """Largest admissible excess (not absolute level)."""
        if self.xi < 0:
            return -self.sigma_tilde / self.xi
        return math.inf

    def gev_scale(self, mu: float) -> float:
        """Scale of the GEV with location ``mu`` that shares this shape."""
        return self.sigma_tilde + self.xi * (mu - self.threshold)


def gpd_ccdf(p: GpdParams, y):
    """Pr(Y > y) for the excess Y; zero beyond the upper endpoint."""
    y = np.asarray(y, dtype=float)
    s, xi = p.sigma_tilde, p.xi
    z = np.maximum(y, 0.0) / s
    if abs(xi) < XI_ZERO:
        out = np.exp(-z)
    else:
        base = 1.0 + xi * z
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.where(base > 0, np.power(np.maximum(base, 1e-300), -1.0 / xi), 0.0)
    out = np.where(y <= 0, 1.0, out)
    return out if out.ndim else float(out)


def gpd_cdf(p: GpdParams, y):
    return 1.0 - gpd_ccdf(p, y)


def gpd_pdf(p: GpdParams, y):
    y = np.asarray(y, dtype=float)
    s, xi = p.sigma_tilde, p.xi
    z = y / s
    if abs(xi) < XI_ZERO:
        out = np.exp(-z) / s
    else:
        base = 1.0 + xi * z
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.where(base > 0, np.power(np.maximum(base, 1e-300), -1.0 / xi - 1.0) / s, 0.0)
    out = np.where(y < 0, 0.0, out)
    return out if out.ndim else float(out)


def gpd_quantile(p: GpdParams, tail_prob):
    """Excess ``y`` with ``gpd_ccdf(p, y) == tail_prob`` (inverse CCDF)."""
    q = np.asarray(tail_prob, dtype=float)
    s, xi = p.sigma_tilde, p.xi
    with np.errstate(divide="ignore"):
        if abs(xi) < XI_ZERO:
            out = -s * np.log(q)
        else:
            out = s * np.expm1(-xi * np.log(q)) / xi
    return out if out.ndim else float(out)


def gpd_sample(p: GpdParams, size, rng: np.random.Generator) -> np.ndarray:
    """Inverse-CCDF sampling of excesses."""
    u = 1.0 - rng.random(size)  # (0, 1]
    return gpd_quantile(p, u)


def gpd_moments(p: GpdParams, strict: bool = False):
    """Mean ``sigma/(1-xi)`` and variance ``sigma^2/((1-xi)^2 (1-2xi))``.

    Undefined moments come back as ``None``; with ``strict=True`` they raise
    :class:`UndefinedMomentError` instead.
    """
    s, xi = p.sigma_tilde, p.xi
    if xi >= 1:
        if strict:
            raise UndefinedMomentError("GPD mean undefined for xi >= 1")
        return None, None
    mean = s / (1.0 - xi)
    if xi >= 0.5:
        if strict:
            raise UndefinedMomentError("GPD variance undefined for xi >= 1/2")
        return mean, None
    var = s * s / ((1.0 - xi) ** 2 * (1.0 - 2.0 * xi))
    return mean, var


def gev_cdf(p: GevParams, z):
    """GEV CDF, clamped to 0/1 outside the support."""
    z = np.asarray(z, dtype=float)
    t = (z - p.mu) / p.sigma
    if abs(p.xi) < XI_ZERO:
        with np.errstate(over="ignore"):
            out = np.exp(-np.exp(-t))
    else:
        base = 1.0 + p.xi * t
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            inner = np.power(np.where(base > 0, base, 1.0), -1.0 / p.xi)
            out = np.exp(-inner)
        # off-support: below the lower end for xi > 0, above the upper end for xi < 0
        out = np.where(base > 0, out, 0.0 if p.xi > 0 else 1.0)
    out = np.where(np.isposinf(z), 1.0, out)
    return out if out.ndim else float(out)


def gev_logpdf(p: GevParams, z):
    z = np.asarray(z, dtype=float)
    t = (z - p.mu) / p.sigma
    if abs(p.xi) < XI_ZERO:
        return -math.log(p.sigma) - t - np.exp(-t)
    base = 1.0 + p.xi * t
    with np.errstate(divide="ignore", invalid="ignore"):
        lb = np.log(np.where(base > 0, base, 1.0))
        out = -math.log(p.sigma) - (1.0 + 1.0 / p.xi) * lb - np.exp(-lb / p.xi)
    return np.where(base > 0, out, -np.inf)


def gev_quantile(p: GevParams, prob):
    q = np.asarray(prob, dtype=float)
    with np.errstate(divide="ignore"):
        y = -np.log(q)
        if abs(p.xi) < XI_ZERO:
            out = p.mu - p.sigma * np.log(y)
        else:
            out = p.mu + p.sigma * np.expm1(-p.xi * np.log(y)) / p.xi
    return out if out.ndim else float(out)
