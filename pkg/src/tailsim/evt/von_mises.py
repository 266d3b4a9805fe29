from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .distributions import GevParams


class ConvergenceError(ArithmeticError):
    """The shape sequence did not settle near the upper endpoint."""

    def __init__(self, message: str, estimate: GevParams | None = None, sequence=None):
        super().__init__(message)
        self.estimate = estimate
        self.sequence = sequence


DEFAULT_TAILS = tuple(10.0 ** -k for k in range(2, 11))


def _aitken(a: np.ndarray) -> float:
    if a.size < 3:
        return float(a[-1])
    x0, x1, x2 = a[-3:]
    den = x2 - 2.0 * x1 + x0
    if abs(den) < 1e-14 * max(1.0, abs(x2)):
        return float(x2)
    return float(x2 - (x2 - x1) ** 2 / den)


def shape_sequence(quantile_fn: Callable[[float], float], pdf_fn: Callable[[float], float],
                   pdf_derivative_fn: Callable[[float], float],
                   tails: Sequence[float] = DEFAULT_TAILS) -> np.ndarray:
    """``-1 - (1-F(x)) f'(x) / f(x)^2`` at ``x = F^-1(1 - p)`` for shrinking ``p``."""
    out = []
    for p in tails:
        q = 1.0 - p
        p_eff = 1.0 - q  # exact tail mass of the representable level
        x = quantile_fn(q)
        f = pdf_fn(x)
        out.append(-1.0 - p_eff * pdf_derivative_fn(x) / (f * f))
    return np.asarray(out, dtype=float)


def von_mises_params(quantile_fn, pdf_fn, pdf_derivative_fn, n: int,
                     tails: Sequence[float] = DEFAULT_TAILS, rtol: float = 1e-3) -> GevParams:
    """GEV parameters of the ``n``-block maximum from the distribution's functions.

    Location is ``F^-1(1 - 1/n)`` and scale ``1 / (n f(location))``. The shape
    limit is taken along ``tails`` towards the upper endpoint and
    Aitken-extrapolated; if the extrapolated values of the last two prefixes
    differ by more than ``rtol`` (relative), :class:`ConvergenceError` is raised
    carrying the estimate.
    """
    if n < 2:
        raise ValueError("n must be >= 2")
    mu = float(quantile_fn(1.0 - 1.0 / n))
    sigma = 1.0 / (n * float(pdf_fn(mu)))
    seq = shape_sequence(quantile_fn, pdf_fn, pdf_derivative_fn, tails)
    xi_prev = _aitken(seq[:-1])
    xi = _aitken(seq)
    estimate = GevParams(mu, sigma, xi)
    if abs(xi - xi_prev) > rtol * max(abs(xi), 1.0):
        raise ConvergenceError(f"shape sequence not converged ({xi_prev:.6g} -> {xi:.6g})", estimate, seq)
    return estimate
