"""Federated estimation of queue-tail parameters (extFL) versus centralized fitting.

Vehicles (VUEs) watch their own transmit queues. Under extFL each one keeps
its exceedances locally, takes a gradient-ascent step on the GPD likelihood,
and ships only the two parameters to the roadside server, which averages
them. Under CEN every raw queue sample is uploaded and the server fits the
pooled data. Both schemes feed the resulting tail model into the same
queue-aware power control, so the comparison is payload versus reliability.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .evt import GpdParams, fit_gpd_mle, gpd_gradient, gpd_sample, peaks_over_threshold
from .evt.mle import ascent_step, in_support, project
from .simcore import ConfigurationError, QueueState, make_rng, shannon_rate, step_queue

MODEL_SIZE = 2  # scalars in a tail model: (sigma_tilde, xi)
FED_SCHEMES = ("extFL", "CEN")


@dataclass
class PayloadLedger:
    """Scalars exchanged between vehicles and the server."""

    uplink_units: int = 0
    downlink_units: int = 0

    def charge(self, uplink: int = 0, downlink: int = 0) -> None:
        if uplink < 0 or downlink < 0:
            raise ValueError("payload charges must be non-negative")
        self.uplink_units += int(uplink)
        self.downlink_units += int(downlink)


@dataclass
class LocalModel:
    """What a vehicle knows: its current estimate plus its private exceedances."""

    params: GpdParams
    gradient: np.ndarray = field(default_factory=lambda: np.zeros(2))
    sample_count: int = 0
    exceedances: np.ndarray = field(default_factory=lambda: np.empty(0))

    def __post_init__(self):
        self.gradient = np.asarray(self.gradient, dtype=float)
        if not np.all(np.isfinite(self.gradient)):
            raise ValueError("local gradient must be finite")
        if self.sample_count < 0:
            raise ValueError("sample_count must be >= 0")

    def synced(self, global_params: GpdParams) -> "LocalModel":
        """Adopt the global estimate and start a new counting period."""
        return LocalModel(global_params, self.gradient, 0, self.exceedances)


@dataclass(frozen=True)
class GlobalModel:
    params: GpdParams
    round: int = 0
    contributors: int = 0


def local_update(model: LocalModel, new_samples, d: float, lr: float = 1.0) -> LocalModel:
    """Fold new queue samples into the local data and take one ascent step.

    Nothing is transmitted here. When none of the samples exceed ``d`` the
    model is returned unchanged.
    """
    if lr <= 0:
        raise ValueError("lr must be > 0")
    exc = peaks_over_threshold(np.asarray(new_samples, dtype=float), d).values
    if exc.size == 0:
        return model
    y = np.concatenate([model.exceedances, exc])
    sigma, xi = project(model.params.sigma_tilde, model.params.xi)
    if not in_support(y, sigma, xi):
        xi = max(xi, -0.999 * sigma / y.max())
    grad = gpd_gradient(y, sigma, xi)
    if y.size >= 2:
        sigma, xi, _, _ = ascent_step(y, sigma, xi, lr, grad)
    return LocalModel(GpdParams(float(sigma), float(xi), d), grad, model.sample_count + exc.size, y)


def federate(models: Sequence[LocalModel], previous: Optional[GlobalModel] = None,
             ledger: Optional[PayloadLedger] = None, n_vehicles: Optional[int] = None) -> GlobalModel:
    """Average local parameters, weighting each by its new exceedance count.

    If no model saw an exceedance, all are weighted equally. The ledger is
    charged two scalars up per contributor and two down per vehicle.
    """
    if not models:
        raise ValueError("federate needs at least one model")
    w = np.array([m.sample_count for m in models], dtype=float)
    if w.sum() == 0:
        w = np.ones(len(models))
    w /= w.sum()
    sigma = float(np.dot(w, [m.params.sigma_tilde for m in models]))
    xi = float(np.dot(w, [m.params.xi for m in models]))
    if ledger is not None:
        ledger.charge(uplink=MODEL_SIZE * len(models),
                      downlink=MODEL_SIZE * (n_vehicles if n_vehicles is not None else len(models)))
    rnd = previous.round + 1 if previous is not None else 1
    return GlobalModel(GpdParams(sigma, xi, models[0].params.threshold), rnd, len(models))


class CentralEstimator:
    """Server-side pooled fit for the CEN baseline.

    Raw samples accumulate across rounds; every round refits the pooled
    exceedances, warm-started from the previous fit.
    """

    def __init__(self, d: float, init: GpdParams, ledger: Optional[PayloadLedger] = None):
        self.d = d
        self.model = GlobalModel(init)
        self.ledger = ledger if ledger is not None else PayloadLedger()
        self._chunks: List[np.ndarray] = []
        self._pooled = np.empty(0)

    def update(self, all_samples: Sequence[Sequence[float]]) -> GlobalModel:
        n_raw = 0
        for s in all_samples:
            s = np.asarray(s, dtype=float)
            n_raw += s.size
            exc = peaks_over_threshold(s, self.d).values
            if exc.size:
                self._chunks.append(exc)
        self.ledger.charge(uplink=n_raw, downlink=MODEL_SIZE * len(all_samples))
        if self._chunks:
            self._pooled = np.concatenate([self._pooled, *self._chunks])
            self._chunks = []
        params = self.model.params
        if self._pooled.size >= 2:
            init = params if in_support(self._pooled, params.sigma_tilde, params.xi) else None
            fit = fit_gpd_mle(self._pooled, init=init)
            params = GpdParams(fit.params.sigma_tilde, fit.params.xi, self.d)
        self.model = GlobalModel(params, self.model.round + 1, len(all_samples))
        return self.model


def cen_update(all_samples: Sequence[Sequence[float]], d: float,
               previous: Optional[GlobalModel] = None,
               ledger: Optional[PayloadLedger] = None) -> GlobalModel:
    """One-shot pooled fit of the given samples (no memory of earlier rounds)."""
    init = previous.params if previous is not None else GpdParams(1.0, 0.0, d)
    est = CentralEstimator(d, init, ledger)
    est.model = previous if previous is not None else GlobalModel(init)
    return est.update(all_samples)


def power_control(queue: QueueState | float, model: GlobalModel | GpdParams, d: float, p_max: float,
                  p_min: Optional[float] = None) -> float:
    """Transmit power from backlog and the learned tail shape.

    Full power once the backlog is past ``d``; below it the power ramps
    from ``p_min`` as ``(Q/d)^(1 + xi)``.
    """
    if p_max <= 0:
        raise ConfigurationError("p_max must be > 0")
    if p_min is None:
        p_min = 0.1 * p_max
    Q = queue.backlog if isinstance(queue, QueueState) else float(queue)
    if Q > d:
        return p_max
    xi = (model.params if isinstance(model, GlobalModel) else model).xi
    return p_min + (p_max - p_min) * (max(Q, 0.0) / d) ** (1.0 + xi)


# ----------------------------------------------------------------------------- scenario

@dataclass
class FedConfig:
    n_vues: int = 10
    arrival_prob: float = 0.5
    packet_bits: int = 1000
    d: float = 4000.0
    round_slots: int = 100
    lr: float = 1.0
    p_max: float = 0.1
    p_min: Optional[float] = None
    bandwidth: float = 2e5
    slot_duration: float = 1e-3
    snr_per_watt: float = 200.0
    init_sigma: float = 1000.0
    horizon: int = 20000
    seed: int = 0

    def __post_init__(self):
        if self.n_vues < 1:
            raise ConfigurationError("n_vues must be >= 1")
        if not 0 <= self.arrival_prob <= 1:
            raise ConfigurationError("arrival_prob must lie in [0,1]")
        if self.d <= 0:
            raise ConfigurationError("d must be > 0")
        if self.round_slots < 1:
            raise ConfigurationError("round_slots must be >= 1")
        if self.p_max <= 0:
            raise ConfigurationError("p_max must be > 0")
        if self.lr <= 0:
            raise ConfigurationError("lr must be > 0")
        if self.p_min is None:
            self.p_min = 0.1 * self.p_max
        if not 0 <= self.p_min <= self.p_max:
            raise ConfigurationError("p_min must lie in [0, p_max]")
        if self.horizon < 0 or self.packet_bits <= 0:
            raise ConfigurationError("horizon must be >= 0 and packet_bits > 0")


@dataclass
class FedResult:
    scheme: str
    rows: List[Dict[str, object]]
    model: GlobalModel
    ledger: PayloadLedger
    histories: np.ndarray  # (n_vues, horizon)

    @property
    def reliability(self) -> float:
        return self.rows[-1]["reliability"] if self.rows else 1.0


def _excess_stats(hist: np.ndarray, d: float):
    e = hist[hist > d] - d
    if e.size == 0:
        return 0.0, 0.0
    return float(e.mean()), float(e.var())


def simulate_fed(cfg: FedConfig, scheme: str = "extFL") -> FedResult:
    """Run the vehicular queues with power control driven by ``scheme``'s tail model.

    Arrivals and fading come from the seed alone, so both schemes see the
    same traffic and channels.
    """
    if scheme not in FED_SCHEMES:
        raise ConfigurationError(f"scheme must be one of {FED_SCHEMES}")
    V, H, R = cfg.n_vues, cfg.horizon, cfg.round_slots
    arrivals = (make_rng(cfg.seed, "arrivals").random((V, H)) < cfg.arrival_prob) * cfg.packet_bits
    fading = make_rng(cfg.seed, "channel").exponential(1.0, (V, H))
    init = GpdParams(cfg.init_sigma, 0.0, cfg.d)
    ledger = PayloadLedger()
    glob = GlobalModel(init)
    locals_ = [LocalModel(init) for _ in range(V)]
    central = CentralEstimator(cfg.d, init, ledger)
    queues = [QueueState(record=False) for _ in range(V)]
    hist = np.zeros((V, H))
    rows = []
    start = 0
    for t in range(H):
        for v in range(V):
            q = queues[v]
            p = power_control(q, glob, cfg.d, cfg.p_max, cfg.p_min)
            served = int(shannon_rate(p * cfg.snr_per_watt * fading[v, t], cfg.bandwidth, cfg.slot_duration))
            step_queue(q, int(arrivals[v, t]), served)
            hist[v, t] = q.backlog
        if (t + 1) % R == 0 or t == H - 1:
            window = hist[:, start:t + 1]
            if scheme == "extFL":
                locals_ = [local_update(m.synced(glob.params), window[v], cfg.d, cfg.lr)
                           for v, m in enumerate(locals_)]
                glob = federate(locals_, glob, ledger, V)
            else:
                glob = central.update(list(window))
            seen = hist[:, :t + 1]
            emean, evar = _excess_stats(seen, cfg.d)
            rows.append({
                "round": glob.round,
                "scheme": scheme,
                "uplink_units": ledger.uplink_units,
                "downlink_units": ledger.downlink_units,
                "sigma_tilde": glob.params.sigma_tilde,
                "xi": glob.params.xi,
                "reliability": float((seen <= cfg.d).mean()),
                "excess_mean": emean,
                "excess_var": evar,
            })
            start = t + 1
    return FedResult(scheme, rows, glob, ledger, hist)


def synthetic_agreement(true: GpdParams, n_vues: int = 10, samples_per_round: int = 50,
                        rounds: int = 200, seed: int = 0, lr: float = 1.0):
    """extFL and CEN on i.i.d. GPD draws shared by both schemes.

    Returns ``(extfl_model, cen_model, extfl_ledger, cen_ledger)``.
    """
    rng = make_rng(seed, "arrivals")
    start = GpdParams(1.0, 0.0, 0.0)
    ext_ledger, cen_ledger = PayloadLedger(), PayloadLedger()
    glob = GlobalModel(start)
    locals_ = [LocalModel(start) for _ in range(n_vues)]
    central = CentralEstimator(0.0, start, cen_ledger)
    for _ in range(rounds):
        batch = [gpd_sample(true, samples_per_round, rng) for _ in range(n_vues)]
        locals_ = [local_update(m.synced(glob.params), b, 0.0, lr) for m, b in zip(locals_, batch)]
        glob = federate(locals_, glob, ext_ledger, n_vues)
        central.update(batch)
    return glob, central.model, ext_ledger, cen_ledger
