"""Offloading MDP for an energy-harvesting mobile device, with Q-learning.

The device holds a small task queue and a battery fed by sporadic energy
arrivals. Each slot it may idle, run the head-of-line task locally (costs
battery), or ship it through one of several base stations whose channel
quality changes every slot. Cost per slot is the delay incurred plus a
penalty for every failed task.

Everything exogenous (task arrivals, energy arrivals, channel levels) is
drawn up front from the seed, so two policies evaluated on the same seed
face exactly the same world.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from .simcore import ConfigurationError, make_rng

IDLE, LOCAL = 0, 1
BASELINES = ("LOCAL_ONLY", "SERVER_BEST", "GREEDY_MYOPIC")


@dataclass(frozen=True)
class OffloadAction:
    kind: str  # "IDLE", "LOCAL" or "OFFLOAD"
    bs_id: Optional[int] = None

    @property
    def index(self) -> int:
        if self.kind == "IDLE":
            return IDLE
        if self.kind == "LOCAL":
            return LOCAL
        return 2 + int(self.bs_id)

    @classmethod
    def from_index(cls, a: int) -> "OffloadAction":
        if a == IDLE:
            return cls("IDLE")
        if a == LOCAL:
            return cls("LOCAL")
        return cls("OFFLOAD", a - 2)


@dataclass(frozen=True)
class MdpState:
    task_queue: int
    energy_queue: int
    channel_q: Tuple[int, ...]


@dataclass(frozen=True)
class MdpTransition:
    s: int
    a: int
    cost: float
    s_next: int

    def __post_init__(self):
        if self.cost < 0:
            raise ValueError("transition cost must be >= 0")


@dataclass
class OffloadEnvConfig:
    """Environment constants. Delays are in slots; ``None`` in ``tx_delay`` is an outage."""

    rho: float = 0.3
    energy_rate: float = 0.3
    queue_cap: int = 3
    energy_cap: int = 10
    n_bs: int = 2
    channel_probs: Tuple[float, ...] = (0.3, 0.4, 0.3)
    tx_delay: Tuple[Optional[int], ...] = (None, 4, 1)
    server_delay: int = 1
    local_delay: int = 3
    local_energy: int = 1
    deadline: int = 20
    fail_penalty: float = 50.0
    gamma: float = 0.9

    def __post_init__(self):
        if not 0 <= self.rho <= 1:
            raise ConfigurationError("rho must lie in [0,1]")
        if not 0 <= self.energy_rate <= 1:
            raise ConfigurationError("energy_rate must lie in [0,1]")
        if not 0 <= self.gamma < 1:
            raise ConfigurationError("gamma must lie in [0,1)")
        if len(self.channel_probs) != len(self.tx_delay):
            raise ConfigurationError("channel_probs and tx_delay need one entry per level")
        if abs(sum(self.channel_probs) - 1.0) > 1e-9 or min(self.channel_probs) < 0:
            raise ConfigurationError("channel_probs must be a probability vector")
        if self.queue_cap < 1 or self.energy_cap < 0 or self.n_bs < 1:
            raise ConfigurationError("queue_cap >= 1, energy_cap >= 0 and n_bs >= 1 required")

    @property
    def n_levels(self) -> int:
        return len(self.channel_probs)


MILD = OffloadEnvConfig(rho=0.3)
HEAVY = OffloadEnvConfig(rho=0.5)


def immediate_cost(delay: float, failure: bool, fail_penalty: float = 50.0) -> float:
    return float(delay) + (fail_penalty if failure else 0.0)


def discounted_return(costs: Sequence[float], gamma: float) -> float:
    if not 0 <= gamma < 1:
        raise ConfigurationError("gamma must lie in [0,1)")
    c = np.asarray(costs, dtype=float)
    return float(np.dot(gamma ** np.arange(c.size), c))


@dataclass
class Exogenous:
    """Pre-drawn randomness for ``horizon`` slots."""

    arrival_u: np.ndarray
    energy_u: np.ndarray
    channels: np.ndarray  # (horizon + 1, n_bs) levels


class OffloadEnv:
    """Enumerable MDP with exact transition lists for the value-iteration oracle."""

    def __init__(self, cfg: OffloadEnvConfig):
        self.cfg = cfg
        L = cfg.n_levels
        self.n_actions = 2 + cfg.n_bs
        self.channel_tuples = list(itertools.product(range(L), repeat=cfg.n_bs))
        self.channel_probs = np.array([math.prod(cfg.channel_probs[l] for l in ch) for ch in self.channel_tuples])
        self.states = [MdpState(n, e, ch)
                       for n in range(cfg.queue_cap + 1)
                       for e in range(cfg.energy_cap + 1)
                       for ch in self.channel_tuples]
        self.n_states = len(self.states)
        self._index = {s: i for i, s in enumerate(self.states)}
        self.mask = np.array([[self.feasible(s, a) for a in range(self.n_actions)] for s in self.states])
        self._tables()

    # ---------------------------------------------------------------- encoding
    def index(self, s: MdpState) -> int:
        return self._index[s]

    def features(self, idx) -> np.ndarray:
        """One-hot per component: queue, energy, then each base station's level."""
        idx = np.atleast_1d(idx)
        cfg = self.cfg
        width = cfg.queue_cap + 1 + cfg.energy_cap + 1 + cfg.n_bs * cfg.n_levels
        X = np.zeros((idx.size, width))
        for row, i in enumerate(idx):
            s = self.states[int(i)]
            X[row, s.task_queue] = 1
            off = cfg.queue_cap + 1
            X[row, off + s.energy_queue] = 1
            off += cfg.energy_cap + 1
            for b, lvl in enumerate(s.channel_q):
                X[row, off + b * cfg.n_levels + lvl] = 1
        return X

    # ---------------------------------------------------------------- dynamics
    def feasible(self, s: MdpState, a: int) -> bool:
        if a == IDLE:
            return True
        if s.task_queue == 0:
            return False
        if a == LOCAL:
            return s.energy_queue >= self.cfg.local_energy
        return 0 <= a - 2 < self.cfg.n_bs

    def service(self, s: MdpState, a: int) -> Tuple[int, float, bool]:
        """``(tasks served, execution delay, failure)`` of the action itself."""
        cfg = self.cfg
        if a == IDLE:
            return 0, 0.0, False
        if a == LOCAL:
            delay = cfg.local_delay
        else:
            tx = cfg.tx_delay[s.channel_q[a - 2]]
            if tx is None:
                return 1, 0.0, True
            delay = tx + cfg.server_delay
        if delay > cfg.deadline:
            return 1, 0.0, True
        return 1, float(delay), False

    def _post_action(self, s: MdpState, a: int):
        served, delay, fail = self.service(s, a)
        n = s.task_queue - served
        e = s.energy_queue - (self.cfg.local_energy if a == LOCAL else 0)
        base = immediate_cost(delay + n, fail, self.cfg.fail_penalty)  # waiting tasks each lose a slot
        return n, e, base

    def step(self, s: MdpState, a: int, arrival: bool, energy: bool,
             channel: Tuple[int, ...]) -> Tuple[float, MdpState]:
        if not self.feasible(s, a):
            raise ConfigurationError(f"action {OffloadAction.from_index(a)} infeasible in {s}")
        n, e, cost = self._post_action(s, a)
        if arrival:
            if n == self.cfg.queue_cap:
                cost += self.cfg.fail_penalty  # dropped
            else:
                n += 1
        if energy:
            e = min(e + 1, self.cfg.energy_cap)
        return cost, MdpState(n, e, tuple(channel))

    def _tables(self):
        """Expected cost ``C[s,a]`` and transition matrices ``P[a]`` (dense)."""
        cfg = self.cfg
        S, A = self.n_states, self.n_actions
        self.C = np.zeros((S, A))
        self.P = np.zeros((A, S, S))
        for i, s in enumerate(self.states):
            for a in range(A):
                if not self.mask[i, a]:
                    continue
                n, e, base = self._post_action(s, a)
                drop = cfg.rho if n == cfg.queue_cap else 0.0
                self.C[i, a] = base + drop * cfg.fail_penalty
                for arr, p_arr in ((True, cfg.rho), (False, 1 - cfg.rho)):
                    for en, p_en in ((True, cfg.energy_rate), (False, 1 - cfg.energy_rate)):
                        w = p_arr * p_en
                        if w == 0:
                            continue
                        n2 = min(n + 1, cfg.queue_cap) if arr else n
                        e2 = min(e + 1, cfg.energy_cap) if en else e
                        for ch, pc in zip(self.channel_tuples, self.channel_probs):
                            self.P[a, i, self._index[MdpState(n2, e2, ch)]] += w * pc

    def exogenous(self, seed: int, horizon: int) -> Exogenous:
        rng_a = make_rng(seed, "arrivals")
        rng_e = make_rng(seed, "energy")
        rng_c = make_rng(seed, "channel")
        ch = rng_c.choice(self.cfg.n_levels, size=(horizon + 1, self.cfg.n_bs), p=self.cfg.channel_probs)
        return Exogenous(rng_a.random(horizon), rng_e.random(horizon), ch)

    def initial_state(self, exo: Exogenous) -> MdpState:
        return MdpState(0, 0, tuple(int(c) for c in exo.channels[0]))


# ----------------------------------------------------------------------------- exact solvers

def _masked_min(Q: np.ndarray, mask: np.ndarray) -> np.ndarray:
    return np.where(mask, Q, np.inf).min(axis=1)


def value_iteration(env: OffloadEnv, tol: float = 1e-12, max_iter: int = 100_000) -> Tuple[np.ndarray, np.ndarray]:
    """Oracle: iterate on state values, return ``(V, Q)`` with infeasible Q = inf."""
    g = env.cfg.gamma
    V = np.zeros(env.n_states)
    for _ in range(max_iter):
        Q = env.C + g * np.einsum("ast,t->sa", env.P, V)
        V_new = _masked_min(Q, env.mask)
        if np.max(np.abs(V_new - V)) < tol:
            V = V_new
            break
        V = V_new
    Q = env.C + g * np.einsum("ast,t->sa", env.P, V)
    return V, np.where(env.mask, Q, np.inf)


def bellman_residual(env: OffloadEnv, Q: np.ndarray) -> float:
    target = env.C + env.cfg.gamma * np.einsum("ast,t->sa", env.P, _masked_min(Q, env.mask))
    return float(np.max(np.abs(np.where(env.mask, Q - target, 0.0))))


# ----------------------------------------------------------------------------- approximators

class ReplayBuffer:
    """Ring buffer of transitions with uniform sampling (with replacement)."""

    def __init__(self, capacity: int = 5000):
        if capacity < 1:
            raise ConfigurationError("capacity must be >= 1")
        self.capacity = capacity
        self._s = np.zeros(capacity, dtype=np.int64)
        self._a = np.zeros(capacity, dtype=np.int64)
        self._c = np.zeros(capacity)
        self._s2 = np.zeros(capacity, dtype=np.int64)
        self._next = 0
        self._size = 0

    def __len__(self):
        return self._size

    def add(self, tr: MdpTransition) -> None:
        k = self._next
        self._s[k], self._a[k], self._c[k], self._s2[k] = tr.s, tr.a, tr.cost, tr.s_next
        self._next = (k + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def sample_indices(self, rng: np.random.Generator, batch: int) -> np.ndarray:
        if self._size == 0:
            raise ValueError("cannot sample from an empty replay buffer")
        return rng.integers(0, self._size, size=batch)

    def sample(self, rng: np.random.Generator, batch: int):
        k = self.sample_indices(rng, batch)
        return self._s[k], self._a[k], self._c[k], self._s2[k]


class TabularQ:
    """Lookup-table Q function."""

    def __init__(self, n_states: int, n_actions: int):
        self.table = np.zeros((n_states, n_actions))

    def values(self, states) -> np.ndarray:
        return self.table[np.asarray(states)]

    def update(self, s, a, y, lr: float) -> None:
        # sequential so duplicated (s, a) pairs in a batch compose exactly
        for si, ai, yi in zip(s, a, y):
            self.table[si, ai] = (1.0 - lr) * self.table[si, ai] + lr * yi


def expected_q_sweep(env: OffloadEnv, Q: np.ndarray, lr: float = 1.0) -> np.ndarray:
    """Synchronous tabular update over every (s, a) with the exact expected target."""
    y = env.C + env.cfg.gamma * np.einsum("ast,t->sa", env.P, _masked_min(Q, env.mask))
    out = (1.0 - lr) * np.where(env.mask, Q, 0.0) + lr * y
    return np.where(env.mask, out, np.inf)


def tabular_q_iteration(env: OffloadEnv, lr: float = 1.0, tol: float = 1e-10,
                        max_sweeps: int = 100_000) -> np.ndarray:
    Q = np.where(env.mask, 0.0, np.inf)
    for _ in range(max_sweeps):
        Q_new = expected_q_sweep(env, Q, lr)
        diff = np.max(np.abs(Q_new[env.mask] - Q[env.mask]))
        Q = Q_new
        if diff < tol:
            break
    return Q


class MlpQ:
    """One-hidden-layer ReLU network mapping state features to Q values, trained with Adam."""

    def __init__(self, n_in: int, n_actions: int, hidden: int = 512, lr: float = 1e-3,
                 rng: Optional[np.random.Generator] = None):
        rng = rng if rng is not None else make_rng(0, "init")
        self.params = {
            "W1": rng.normal(0.0, math.sqrt(2.0 / n_in), (n_in, hidden)),
            "b1": np.zeros(hidden),
            "W2": rng.normal(0.0, math.sqrt(1.0 / hidden), (hidden, n_actions)),
            "b2": np.zeros(n_actions),
        }
        self.lr = lr
        self._m = {k: np.zeros_like(v) for k, v in self.params.items()}
        self._v = {k: np.zeros_like(v) for k, v in self.params.items()}
        self._t = 0

    def forward(self, X: np.ndarray, params: Optional[Dict[str, np.ndarray]] = None):
        p = params if params is not None else self.params
        h_pre = X @ p["W1"] + p["b1"]
        h = np.maximum(h_pre, 0.0)
        return h @ p["W2"] + p["b2"], (X, h_pre, h)

    def values(self, X: np.ndarray) -> np.ndarray:
        return self.forward(X)[0]

    def loss(self, X, a, y, params=None) -> float:
        out, _ = self.forward(X, params)
        err = out[np.arange(len(a)), a] - y
        return 0.5 * float(np.mean(err * err))

    def gradient(self, X, a, y) -> Dict[str, np.ndarray]:
        out, (X, h_pre, h) = self.forward(X)
        n = len(a)
        d_out = np.zeros_like(out)
        d_out[np.arange(n), a] = (out[np.arange(n), a] - y) / n
        d_h = d_out @ self.params["W2"].T
        d_h[h_pre <= 0] = 0.0
        return {"W1": X.T @ d_h, "b1": d_h.sum(0), "W2": h.T @ d_out, "b2": d_out.sum(0)}

    def apply(self, grads: Dict[str, np.ndarray], beta1=0.9, beta2=0.999, eps=1e-8) -> None:
        self._t += 1
        for k, g in grads.items():
            self._m[k] = beta1 * self._m[k] + (1 - beta1) * g
            self._v[k] = beta2 * self._v[k] + (1 - beta2) * g * g
            m_hat = self._m[k] / (1 - beta1 ** self._t)
            v_hat = self._v[k] / (1 - beta2 ** self._t)
            self.params[k] -= self.lr * m_hat / (np.sqrt(v_hat) + eps)

    def copy_params(self) -> Dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.params.items()}


def greedy_action(q_values: np.ndarray, mask: np.ndarray) -> int:
    """Lowest-index argmin over feasible actions (IDLE < LOCAL < OFFLOAD(0) < ...)."""
    return int(np.argmin(np.where(mask, q_values, np.inf)))


def greedy_policy(Q: np.ndarray, env: OffloadEnv) -> np.ndarray:
    return np.argmin(np.where(env.mask, Q, np.inf), axis=1)


# ----------------------------------------------------------------------------- learning

@dataclass
class DqnConfig:
    hidden: int = 512
    capacity: int = 5000
    batch: int = 100
    target_every: int = 200
    steps: int = 20000
    lr: float = 1e-3
    eps_start: float = 1.0
    eps_end: float = 0.05
    anneal_frac: float = 0.2
    train_every: int = 1

    def epsilon(self, t: int) -> float:
        span = max(int(self.anneal_frac * self.steps), 1)
        if t >= span:
            return self.eps_end
        return self.eps_start + (self.eps_end - self.eps_start) * t / span


def _explore(env: OffloadEnv, rng: np.random.Generator, s_idx: int, eps: float, greedy: int) -> int:
    if rng.random() < eps:
        return int(rng.choice(np.flatnonzero(env.mask[s_idx])))
    return greedy


def train_dqn(env: OffloadEnv, cfg: DqnConfig = DqnConfig(), seed: int = 0) -> MlpQ:
    """Deep Q-learning with replay and a hard-copied target network."""
    features = env.features(np.arange(env.n_states))
    net = MlpQ(features.shape[1], env.n_actions, cfg.hidden, cfg.lr, make_rng(seed, "init"))
    target = net.copy_params()
    replay = ReplayBuffer(cfg.capacity)
    rng_pol = make_rng(seed, "policy")
    rng_rep = make_rng(seed, "replay")
    exo = env.exogenous(seed, cfg.steps)
    s = env.initial_state(exo)
    g = env.cfg.gamma
    for t in range(cfg.steps):
        i = env.index(s)
        a = _explore(env, rng_pol, i, cfg.epsilon(t), greedy_action(net.values(features[i:i + 1])[0], env.mask[i]))
        cost, s_next = env.step(s, a, exo.arrival_u[t] < env.cfg.rho, exo.energy_u[t] < env.cfg.energy_rate,
                                tuple(int(c) for c in exo.channels[t + 1]))
        j = env.index(s_next)
        replay.add(MdpTransition(i, a, cost, j))
        s = s_next
        if len(replay) >= cfg.batch and t % cfg.train_every == 0:
            bs, ba, bc, bs2 = replay.sample(rng_rep, cfg.batch)
            q_next, _ = net.forward(features[bs2], target)
            y = bc + g * _masked_min(q_next, env.mask[bs2])
            net.apply(net.gradient(features[bs], ba, y))
        if (t + 1) % cfg.target_every == 0:
            target = net.copy_params()
    return net


def train_tabular(env: OffloadEnv, steps: int = 200_000, lr: float = 0.1, batch: int = 1,
                  capacity: int = 5000, seed: int = 0, eps: float = 0.2) -> TabularQ:
    """Sample-based tabular Q-learning on the simulated trajectory."""
    q = TabularQ(env.n_states, env.n_actions)
    replay = ReplayBuffer(capacity)
    rng_pol = make_rng(seed, "policy")
    rng_rep = make_rng(seed, "replay")
    exo = env.exogenous(seed, steps)
    s = env.initial_state(exo)
    g = env.cfg.gamma
    for t in range(steps):
        i = env.index(s)
        a = _explore(env, rng_pol, i, eps, greedy_action(q.table[i], env.mask[i]))
        cost, s_next = env.step(s, a, exo.arrival_u[t] < env.cfg.rho, exo.energy_u[t] < env.cfg.energy_rate,
                                tuple(int(c) for c in exo.channels[t + 1]))
        replay.add(MdpTransition(i, a, cost, env.index(s_next)))
        s = s_next
        bs, ba, bc, bs2 = replay.sample(rng_rep, batch)
        y = bc + g * _masked_min(q.table[bs2], env.mask[bs2])
        q.update(bs, ba, y, lr)
    return q


# ----------------------------------------------------------------------------- evaluation

def baseline_policy(env: OffloadEnv, name: str) -> np.ndarray:
    """Action per state index for one of the reference heuristics."""
    if name not in BASELINES:
        raise ConfigurationError(f"unknown baseline {name!r}")
    pol = np.zeros(env.n_states, dtype=np.int64)
    for i, s in enumerate(env.states):
        if s.task_queue == 0:
            continue
        if name == "LOCAL_ONLY":
            pol[i] = LOCAL if env.mask[i, LOCAL] else IDLE
        elif name == "SERVER_BEST":
            pol[i] = 2 + int(np.argmax(s.channel_q))
        else:
            pol[i] = greedy_action(env.C[i], env.mask[i])
    return pol


def evaluate_policy(env: OffloadEnv, policy: np.ndarray, horizon: int, seed: int) -> float:
    """Average cost per slot of a stationary policy on the seed's exogenous draws."""
    exo = env.exogenous(seed, horizon)
    s = env.initial_state(exo)
    cfg = env.cfg
    total = 0.0
    for t in range(horizon):
        cost, s = env.step(s, int(policy[env.index(s)]), exo.arrival_u[t] < cfg.rho,
                           exo.energy_u[t] < cfg.energy_rate, tuple(int(c) for c in exo.channels[t + 1]))
        total += cost
    return total / horizon if horizon else 0.0


def compare_schemes(cfg: OffloadEnvConfig, seed: int, horizon: int = 50_000,
                    dqn: DqnConfig = DqnConfig()) -> Dict[str, float]:
    """Average cost of the trained DQN policy and of every baseline, paired by seed."""
    env = OffloadEnv(cfg)
    net = train_dqn(env, dqn, seed)
    learned = greedy_policy(net.values(env.features(np.arange(env.n_states))), env)
    out = {"DQN": evaluate_policy(env, learned, horizon, seed)}
    for name in BASELINES:
        out[name] = evaluate_policy(env, baseline_policy(env, name), horizon, seed)
    return out
