from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class ExceedanceSample:
    """Excesses ``X - d`` of the samples that exceeded ``d``, in order."""

    values: np.ndarray = field(default_factory=lambda: np.zeros(0))
    source_count: int = 0
    threshold: float = 0.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.size and not np.all(self.values > 0):
            raise ValueError("exceedances must be strictly positive")

    def __len__(self):
        return int(self.values.size)

    @property
    def rate(self) -> float:
        """Empirical Pr(X > d)."""
        return len(self) / self.source_count if self.source_count else 0.0


def block_maxima(samples, n: int) -> np.ndarray:
    """Per-block maxima of consecutive blocks of ``n``; a trailing partial block is dropped."""
    x = np.asarray(samples, dtype=float).ravel()
    if x.size == 0:
        raise ValueError("block_maxima needs at least one sample")
    if n < 1:
        raise ValueError("block size must be >= 1")
    if x.size < n:
        raise ValueError("fewer samples than one block")
    m = x.size // n
    return x[: m * n].reshape(m, n).max(axis=1)


def peaks_over_threshold(samples, d: float) -> ExceedanceSample:
    x = np.asarray(samples, dtype=float).ravel()
    exc = x[x > d] - d
    return ExceedanceSample(exc, int(x.size), float(d))


def default_threshold(samples, quantile: float = 0.99) -> float:
    """Empirical ``quantile`` of the samples (99th percentile by default)."""
    return float(np.quantile(np.asarray(samples, dtype=float), quantile))
