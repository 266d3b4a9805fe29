"""Extreme-event-controlled MEC: power split between local computing and offloading.

Each UE owns a bit queue. Every slot it picks how much of its power budget to
spend on local computation (cubic DVFS model) and on transmission to an edge
server. Three virtual queues turn the long-run tail constraints on the queue
(violation probability, conditional mean and second moment of the excess)
into per-slot prices, and the split minimises power plus priced violation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .evt import GpdParams, fit_gpd_mle, gpd_moments, peaks_over_threshold
from .simcore import (
    BlockageChannel,
    ChannelState,
    ConfigurationError,
    EventLog,
    QueueState,
    ServerState,
    Task,
    make_rng,
    shannon_rate,
    step_queue,
)

GRID = 101
SCHEMES = ("controlled", "no_mec", "no_local")


@dataclass(frozen=True)
class TailConstraint:
    d: float
    epsilon: float
    sigma_th: float
    xi_th: float

    def __post_init__(self):
        if self.d <= 0:
            raise ConfigurationError("d must be > 0")
        if not 0 < self.epsilon < 1:
            raise ConfigurationError("epsilon must lie in (0,1)")
        if self.sigma_th <= 0:
            raise ConfigurationError("sigma_th must be > 0")
        if self.xi_th >= 0.5:
            raise ConfigurationError("xi_th must be < 1/2")

    @property
    def mean_bound(self) -> float:
        return self.sigma_th / (1.0 - self.xi_th)

    @property
    def m2_bound(self) -> float:
        return 2.0 * self.sigma_th ** 2 / ((1.0 - self.xi_th) * (1.0 - 2.0 * self.xi_th))


@dataclass
class UeState:
    power_budget: float
    queue: QueueState = field(default_factory=QueueState)
    cpu_share: float = 0.0
    tx_share: float = 0.0

    def __post_init__(self):
        if self.cpu_share < 0 or self.tx_share < 0 or self.cpu_share + self.tx_share > 1 + 1e-12:
            raise ConfigurationError("shares must be non-negative and sum to at most 1")


@dataclass
class VirtualQueues:
    v_prob: float = 0.0
    v_mean: float = 0.0
    v_m2: float = 0.0


def local_compute_rate(power: float, kappa: float, k_chip: float) -> float:
    """Bits per slot computed locally: ``(power / k_chip)^(1/3) / kappa``."""
    if power < 0:
        raise ConfigurationError("power must be >= 0")
    return (power / k_chip) ** (1.0 / 3.0) / kappa


def update_virtual_queues(vq: VirtualQueues, q: QueueState | float, tc: TailConstraint) -> VirtualQueues:
    """Advance the three constraint accumulators with the current backlog.

    The mean and second-moment queues are measured in units of their bounds
    so that all three are dimensionless.
    """
    backlog = q.backlog if isinstance(q, QueueState) else q
    if backlog > tc.d:
        e = backlog - tc.d
        return VirtualQueues(
            max(vq.v_prob + 1.0 - tc.epsilon, 0.0),
            max(vq.v_mean + (e - tc.mean_bound) / tc.mean_bound, 0.0),
            max(vq.v_m2 + (e * e - tc.m2_bound) / tc.m2_bound, 0.0),
        )
    return VirtualQueues(max(vq.v_prob - tc.epsilon, 0.0), vq.v_mean, vq.v_m2)


@dataclass(frozen=True)
class LinkModel:
    """Static parameters turning a power split into served bits."""

    kappa: float
    k_chip: float = 1e-18
    bandwidth: float = 1e6
    slot_duration: float = 1e-3
    snr_per_watt: float = 3.0

    def local_bits(self, power):
        f = np.cbrt(np.asarray(power, dtype=float) / self.k_chip)
        return np.floor(f / self.kappa)

    def tx_bits(self, power, channel_gain: float):
        snr = np.asarray(power, dtype=float) * self.snr_per_watt * channel_gain
        return np.floor(shannon_rate(snr, self.bandwidth, self.slot_duration))


def _share_grid():
    i, j = np.meshgrid(np.arange(GRID), np.arange(GRID), indexing="ij")
    return i, j, (i + j) <= GRID - 1


def _penalty(q_next, vq: VirtualQueues, tc: TailConstraint):
    e = np.asarray(q_next, dtype=float) - tc.d
    viol = e > 0
    pen = vq.v_prob + vq.v_mean * e / tc.mean_bound + vq.v_m2 * e * e / tc.m2_bound
    return np.where(viol, pen, 0.0)


def _drift_weight(Q: float, vq: VirtualQueues, tc: TailConstraint) -> float:
    # queue drift in units of d, priced up by the outstanding constraint debt
    return (1.0 + vq.v_prob + vq.v_mean + vq.v_m2) * Q / (tc.d * tc.d)


def select_server(servers: Sequence[ServerState], task: Task) -> int:
    """Index of the server with the smallest expected sojourn; ties go to the lowest id."""
    best, best_t = 0, math.inf
    for k, s in enumerate(servers):
        t = s.expected_sojourn(task)
        if t < best_t:
            best, best_t = k, t
    return best


def control_step(ue: UeState, vq: VirtualQueues, tc: TailConstraint, channel: ChannelState,
                 lam: float, link: LinkModel, arrived: int = 0,
                 servers: Sequence[ServerState] = (), scheme: str = "controlled"):
    """Exhaustive 101x101 search for the per-slot power split.

    Minimises::

        lam * power - w (Q/d)(served/d) + v_prob 1{Q'>d} + v_mean e/mb + v_m2 e^2/m2b

    where ``Q'`` is the backlog after this slot's service and arrivals,
    ``e = Q' - d`` and ``w = 1 + v_prob + v_mean + v_m2``. The drift term keeps
    the queue away from ``d``; the violation terms alone only react once the
    bound is already crossed. Among equal objectives the lowest power wins,
    then the lowest cpu share.

    Returns ``(cpu_share, tx_share, server_index)``; the server index is
    ``None`` when nothing is offloaded.
    """
    i, j, feasible = _share_grid()
    if scheme == "no_mec":
        feasible &= j == 0
    elif scheme == "no_local":
        feasible &= i == 0
    P = ue.power_budget
    loc = link.local_bits(i / (GRID - 1) * P)
    tx = link.tx_bits(j / (GRID - 1) * P, channel.link_gain)
    Q = ue.queue.backlog
    served = np.minimum(loc + tx, Q)
    q_next = Q - served + arrived
    level = i + j
    obj = lam * P * level / (GRID - 1) - _drift_weight(Q, vq, tc) * served + _penalty(q_next, vq, tc)
    obj = np.where(feasible, obj, np.inf)
    best = obj.min()
    cand = np.argwhere(obj == best)
    # lexicographic: power level, then cpu index
    order = np.lexsort((cand[:, 0], level[cand[:, 0], cand[:, 1]]))
    ci, cj = cand[order[0]]
    server = None
    offload = min(int(tx[ci, cj]), max(Q - int(loc[ci, cj]), 0))
    if offload > 0 and servers:
        server = select_server(servers, Task(0, offload, link.kappa))
    return ci / (GRID - 1), cj / (GRID - 1), server


class SplitPlanner:
    """Cached equivalent of :func:`control_step` for the simulation loop.

    For a fixed total power level only the split serving the most bits can
    be optimal, so the 2-D grid collapses to 101 levels per channel state.
    """

    def __init__(self, link: LinkModel, power_budget: float, channel_gains: Sequence[float],
                 scheme: str = "controlled"):
        if scheme not in SCHEMES:
            raise ConfigurationError(f"unknown scheme {scheme!r}")
        self.P = power_budget
        self.scheme = scheme
        i, j, feasible = _share_grid()
        if scheme == "no_mec":
            feasible &= j == 0
        elif scheme == "no_local":
            feasible &= i == 0
        self.loc = link.local_bits(np.arange(GRID) / (GRID - 1) * power_budget)
        self.tables = {}
        for g in channel_gains:
            tx = link.tx_bits(np.arange(GRID) / (GRID - 1) * power_budget, g)
            served = np.where(feasible, self.loc[i] + tx[j], -1.0)
            rows = [served[np.arange(L + 1), L - np.arange(L + 1)] for L in range(GRID)]
            best = np.array([r.max() for r in rows])
            # a level serving no more than a cheaper one can never win
            keep, top = [], -1.0
            for L in range(GRID):
                if best[L] > top:
                    keep.append(L)
                    top = best[L]
            keep = np.array(keep)
            self.tables[g] = (tx, rows, keep, best[keep], keep * power_budget / (GRID - 1))

    def plan(self, Q: int, arrived: int, vq: VirtualQueues, tc: TailConstraint, lam: float,
             gain: float) -> Tuple[int, int, int, int]:
        """Return ``(cpu_idx, tx_idx, local_bits, tx_bits)`` for this slot."""
        if Q == 0:
            return 0, 0, 0, 0
        tx, rows, levels, best, power = self.tables[gain]
        served = np.minimum(best, Q)
        obj = lam * power - _drift_weight(Q, vq, tc) * served
        if Q + arrived > tc.d and (vq.v_prob or vq.v_mean or vq.v_m2):
            obj = obj + _penalty(Q - served + arrived, vq, tc)
        k = int(np.argmin(obj))  # first minimum = lowest power level
        L = int(levels[k])
        row = rows[L]
        ci = int(np.argmax(np.minimum(row, Q) >= served[k]))
        cj = L - ci
        return ci, cj, int(self.loc[ci]), int(tx[cj])


@dataclass
class MecConfig:
    n_ues: int = 2
    n_servers: int = 2
    server_capabilities: Sequence[float] = (4e6, 4e6)
    arrival_prob: float = 0.5
    task_size: int = 2000
    kappa: float = 1000.0
    d: float = 4e4
    epsilon: float = 0.01
    sigma_th: float = 4e3
    xi_th: float = 0.1
    lambda_tradeoff: float = 0.1
    power_budget: float = 0.5
    k_chip: float = 1e-18
    bandwidth: float = 1e6
    snr_per_watt: float = 3.0
    p_block: float = 0.2
    block_duration: float = 5.0
    nlos_penalty_db: float = 20.0
    slot_duration: float = 1e-3
    horizon: int = 100000
    seed: int = 0
    scheme: str = "controlled"

    def __post_init__(self):
        self.server_capabilities = tuple(float(c) for c in self.server_capabilities)
        if self.n_ues < 1 or self.n_servers < 1:
            raise ConfigurationError("n_ues and n_servers must be >= 1")
        if len(self.server_capabilities) != self.n_servers:
            raise ConfigurationError("server_capabilities must list one value per server")
        if min(self.server_capabilities) <= 0:
            raise ConfigurationError("server_capabilities must be > 0")
        if not 0 <= self.arrival_prob <= 1:
            raise ConfigurationError("arrival_prob must lie in [0,1]")
        if self.task_size <= 0 or self.kappa <= 0:
            raise ConfigurationError("task_size and kappa must be > 0")
        if self.lambda_tradeoff < 0:
            raise ConfigurationError("lambda_tradeoff must be >= 0")
        if self.power_budget <= 0 or self.bandwidth <= 0 or self.snr_per_watt <= 0:
            raise ConfigurationError("power_budget, bandwidth and snr_per_watt must be > 0")
        if not 0 <= self.p_block <= 1:
            raise ConfigurationError("p_block must lie in [0,1]")
        if self.horizon < 0:
            raise ConfigurationError("horizon must be >= 0")
        if self.scheme not in SCHEMES:
            raise ConfigurationError(f"scheme must be one of {SCHEMES}")
        self.constraint  # validates d, epsilon and the GPD thresholds

    @property
    def constraint(self) -> TailConstraint:
        return TailConstraint(self.d, self.epsilon, self.sigma_th, self.xi_th)

    @property
    def link(self) -> LinkModel:
        return LinkModel(self.kappa, self.k_chip, self.bandwidth, self.slot_duration, self.snr_per_watt)


@dataclass
class TailReport:
    violation_prob: float
    params: Optional[GpdParams]
    excess_mean: float
    excess_std: float
    gpd_mean: Optional[float]
    gpd_std: Optional[float]
    q99: float
    n_exceedances: int
    low_confidence: bool


def tail_report(q, tc: TailConstraint, min_samples: int = 10_000, min_exceedances: int = 30) -> TailReport:
    """Empirical and GPD-implied tail statistics of a backlog history."""
    hist = q.as_array() if isinstance(q, QueueState) else np.asarray(q, dtype=float)
    if hist.size < min_samples:
        raise ValueError(f"tail_report needs at least {min_samples} samples, got {hist.size}")
    exc = peaks_over_threshold(hist, tc.d)
    k = len(exc)
    emean = float(exc.values.mean()) if k else 0.0
    estd = float(exc.values.std()) if k else 0.0
    params = gmean = gstd = None
    if k >= 2:
        params = fit_gpd_mle(exc).params
        gmean, gvar = gpd_moments(params)
        gstd = math.sqrt(gvar) if gvar is not None else None
    return TailReport(exc.rate, params, emean, estd, gmean, gstd, float(np.quantile(hist, 0.99)),
                      k, k < min_exceedances)


@dataclass
class MecResult:
    config: MecConfig
    queues: List[QueueState]
    virtual: List[VirtualQueues]
    avg_power: float
    violation_freq: float
    vq_max: List[Tuple[float, float, float]]
    log: EventLog

    @property
    def pooled_history(self) -> np.ndarray:
        return np.concatenate([q.as_array() for q in self.queues])


def simulate(cfg: MecConfig, record: bool = True) -> MecResult:
    """Run one scheme for ``cfg.horizon`` slots."""
    tc = cfg.constraint
    link = cfg.link
    blockage = BlockageChannel(cfg.p_block, cfg.block_duration, cfg.nlos_penalty_db)
    gains = (1.0, blockage.penalty(False))
    planner = SplitPlanner(link, cfg.power_budget, gains, cfg.scheme)
    servers = [ServerState(capability=c, id=k) for k, c in enumerate(cfg.server_capabilities)]
    arr_rng = make_rng(cfg.seed, "arrivals")
    ch_rng = make_rng(cfg.seed, "channel")
    H = cfg.horizon
    arrivals = [(arr_rng.random(H) < cfg.arrival_prob).astype(np.int64) * cfg.task_size for _ in range(cfg.n_ues)]
    los = [blockage.trajectory(ch_rng, H) for _ in range(cfg.n_ues)]
    queues = [QueueState(record=record) for _ in range(cfg.n_ues)]
    vqs = [VirtualQueues() for _ in range(cfg.n_ues)]
    vq_max = [[0.0, 0.0, 0.0] for _ in range(cfg.n_ues)]
    log = EventLog()
    energy = 0.0
    violations = 0
    P = cfg.power_budget
    nlos_gain = gains[1]
    task_id = 0
    for t in range(H):
        for u in range(cfg.n_ues):
            q = queues[u]
            a = int(arrivals[u][t])
            g = 1.0 if los[u][t] else nlos_gain
            ci, cj, lb, tb = planner.plan(q.backlog, a, vqs[u], tc, cfg.lambda_tradeoff, g)
            Q = q.backlog
            local_used = min(lb, Q)
            offload = min(tb, Q - local_used)
            if offload > 0:
                task = Task(task_id, offload, cfg.kappa, t)
                task_id += 1
                servers[select_server(servers, task)].enqueue(task)
            energy += (ci + cj) * P / (GRID - 1)
            step_queue(q, a, local_used + offload)
            v = update_virtual_queues(vqs[u], q.backlog, tc)
            vqs[u] = v
            m = vq_max[u]
            if q.backlog > tc.d:
                violations += 1
                if v.v_prob > m[0]:
                    m[0] = v.v_prob
                m[1] = max(m[1], v.v_mean)
                m[2] = max(m[2], v.v_m2)
        for s in servers:
            if s.service_queue:
                s.serve_slot()
    for u in range(cfg.n_ues):
        v = vqs[u]
        log.append(H, u, "v_prob", v.v_prob)
        log.append(H, u, "v_mean", v.v_mean)
        log.append(H, u, "v_m2", v.v_m2)
        log.append(H, u, "backlog", queues[u].backlog)
    n = max(H * cfg.n_ues, 1)
    return MecResult(cfg, queues, vqs, energy / n, violations / n, [tuple(m) for m in vq_max], log)


def run_kappa_sweep(base: MecConfig, kappas: Sequence[float],
                    schemes: Sequence[str] = SCHEMES) -> List[Dict[str, object]]:
    """One output row per (kappa, scheme) with the tail metrics."""
    rows = []
    for kappa in kappas:
        for scheme in schemes:
            cfg = replace(base, kappa=kappa, scheme=scheme)
            res = simulate(cfg)
            rep = tail_report(res.pooled_history, cfg.constraint)
            rows.append({
                "kappa": kappa,
                "scheme": scheme,
                "violation_prob": rep.violation_prob,
                "q99": rep.q99,
                "excess_mean": rep.excess_mean,
                "excess_std": rep.excess_std,
                "avg_power": res.avg_power,
            })
    return rows
