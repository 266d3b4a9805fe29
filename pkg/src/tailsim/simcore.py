"""Slotted-time simulation primitives shared by every scenario.

Queues are measured in integer bits, time in slots (1 ms by default) and every
stochastic process draws from its own seeded stream, so switching one process
on or off never perturbs the draws of another.
"""
from __future__ import annotations

import csv
import io
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Iterable, List, Optional, Sequence, Tuple

import numpy as np

__all__ = [
    "ConfigurationError",
    "STREAMS",
    "make_rng",
    "SimClock",
    "Task",
    "QueueState",
    "step_queue",
    "ChannelState",
    "shannon_rate",
    "db_to_linear",
    "ServerState",
    "bernoulli_arrivals",
    "BlockageChannel",
    "sample_blockage",
    "hedged_completion",
    "hedged_offload",
    "EventLog",
]


class ConfigurationError(ValueError):
    """Raised when a parameter is outside its admissible range."""


# Fixed stream ids; one per stochastic process.
STREAMS = {
    "arrivals": 0,
    "channel": 1,
    "policy": 2,
    "energy": 3,
    "prediction": 4,
    "replay": 5,
    "init": 6,
    "servers": 7,
}


def make_rng(seed: int, stream_id: int | str = 0) -> np.random.Generator:
    """Independent, platform-stable generator for ``(seed, stream_id)``.

    PCG64 seeded through a ``SeedSequence`` gives bit-identical draws for the
    same pair on every platform numpy supports.
    """
    if isinstance(stream_id, str):
        stream_id = STREAMS[stream_id]
    if seed < 0 or stream_id < 0:
        raise ConfigurationError("seed and stream_id must be non-negative")
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), int(stream_id)])))


@dataclass
class SimClock:
    slot: int = 0
    slot_duration: float = 1e-3

    def __post_init__(self):
        if self.slot_duration <= 0:
            raise ConfigurationError("slot_duration must be > 0")
        if self.slot < 0:
            raise ConfigurationError("slot must be >= 0")

    def tick(self) -> int:
        self.slot += 1
        return self.slot

    def to_ms(self, slots: float) -> float:
        return slots * self.slot_duration * 1e3


@dataclass(frozen=True)
class Task:
    id: int
    size: int
    density: float
    arrival_slot: int = 0

    def __post_init__(self):
        if self.size <= 0:
            raise ConfigurationError("task size must be > 0")
        if self.density <= 0:
            raise ConfigurationError("task density must be > 0")

    @property
    def cycles(self) -> float:
        return self.size * self.density


@dataclass
class QueueState:
    backlog: int = 0
    history: List[int] = field(default_factory=list)
    record: bool = True

    def __post_init__(self):
        if self.backlog < 0:
            raise ConfigurationError("backlog must be >= 0")

    def as_array(self) -> np.ndarray:
        return np.asarray(self.history, dtype=float)


def step_queue(q: QueueState, arrived: int, served: int) -> QueueState:
    """Advance ``q`` by one slot in place and return it.

    ``backlog <- max(backlog - served, 0) + arrived``; serving more than the
    backlog saturates at zero.
    """
    if arrived < 0 or served < 0:
        raise ConfigurationError("arrived and served must be >= 0")
    q.backlog = max(q.backlog - served, 0) + arrived
    if q.record:
        q.history.append(q.backlog)
    return q


def db_to_linear(db: float) -> float:
    return 10.0 ** (db / 10.0)


def shannon_rate(sinr, bandwidth: float, slot_duration: float):
    """Bits deliverable in one slot; works on scalars and arrays."""
    return bandwidth * slot_duration * np.log2(1.0 + np.maximum(sinr, 0.0))


@dataclass
class ChannelState:
    link_gain: float = 1.0
    los: bool = True
    sinr: float = 0.0
    bandwidth: float = 1e6
    slot_duration: float = 1e-3
    rate: float = field(init=False, default=0.0)

    def __post_init__(self):
        self.set_sinr(self.sinr)

    def set_sinr(self, sinr: float) -> "ChannelState":
        self.sinr = max(float(sinr), 0.0)
        self.rate = float(shannon_rate(self.sinr, self.bandwidth, self.slot_duration))
        return self


@dataclass
class ServerState:
    """Edge server with a FIFO service queue.

    ``capability`` is in cycles per slot. ``latency_sampler`` replaces the
    deterministic queue model with a random latency (in slots), which is how
    stragglers are modelled for hedged requests.
    """

    capability: float
    service_queue: deque = field(default_factory=deque)
    busy_until: int = 0
    id: int = 0
    reachable: bool = True
    latency_sampler: Optional[Callable[[np.random.Generator], int]] = None
    remaining_head: float = 0.0

    def __post_init__(self):
        if self.capability <= 0:
            raise ConfigurationError("server capability must be > 0")

    def backlog_cycles(self) -> float:
        if not self.service_queue:
            return 0.0
        total = sum(t.cycles for t in self.service_queue)
        return total - (self.service_queue[0].cycles - self.remaining_head)

    def expected_sojourn(self, task: Task) -> float:
        """Slots until ``task`` would finish if enqueued now (FIFO)."""
        return (self.backlog_cycles() + task.cycles) / self.capability

    def enqueue(self, task: Task) -> None:
        if not self.service_queue:
            self.remaining_head = task.cycles
        self.service_queue.append(task)

    def serve_slot(self) -> List[Task]:
        """Spend one slot of cycles on the queue; return completed tasks."""
        budget = self.capability
        done = []
        while self.service_queue and budget > 0:
            if self.remaining_head <= budget:
                budget -= self.remaining_head
                done.append(self.service_queue.popleft())
                self.remaining_head = self.service_queue[0].cycles if self.service_queue else 0.0
            else:
                self.remaining_head -= budget
                budget = 0
        return done

    def latency(self, task: Task, slot: int, rng: Optional[np.random.Generator] = None) -> int:
        if self.latency_sampler is not None:
            if rng is None:
                raise ConfigurationError("stochastic server needs an rng")
            return int(self.latency_sampler(rng))
        wait = max(self.busy_until - slot, 0)
        return wait + math.ceil(task.cycles / self.capability)


def bernoulli_arrivals(rng: np.random.Generator, prob: float, template: Task,
                       slot: int = 0, task_id: Optional[int] = None) -> Optional[Task]:
    """One Bernoulli trial per slot; returns a copy of ``template`` stamped with ``slot``."""
    if not 0.0 <= prob <= 1.0:
        raise ConfigurationError("arrival probability must lie in [0,1]")
    if rng.random() < prob:
        return Task(template.id if task_id is None else task_id, template.size, template.density, slot)
    return None


class BlockageChannel:
    """Two-state LoS/NLoS Markov chain.

    Leaving NLoS happens w.p. ``1/mean_duration_slots`` per slot, which makes
    NLoS sojourns geometric with that mean; the LoS->NLoS probability is set
    so that the stationary NLoS fraction equals ``p_block``.
    """

    def __init__(self, p_block: float, mean_duration_slots: float = 5.0,
                 nlos_penalty_db: float = 20.0, los: Optional[bool] = None):
        if not 0.0 <= p_block <= 1.0:
            raise ConfigurationError("p_block must lie in [0,1]")
        if mean_duration_slots < 1:
            raise ConfigurationError("mean_duration_slots must be >= 1")
        self.p_block = p_block
        self.mean_duration = float(mean_duration_slots)
        self.nlos_penalty_db = nlos_penalty_db
        self.p_exit = 1.0 / self.mean_duration
        if p_block >= 1.0:
            self.p_enter = 1.0
            self.p_exit = 0.0
        else:
            self.p_enter = min(p_block * self.p_exit / (1.0 - p_block), 1.0)
        self._los_init = los

    def initial_state(self, rng: np.random.Generator) -> bool:
        if self._los_init is not None:
            return self._los_init
        return not (rng.random() < self.p_block)

    def next_state(self, los: bool, rng: np.random.Generator) -> bool:
        u = rng.random()
        if los:
            return not (u < self.p_enter)
        return u < self.p_exit

    def penalty(self, los: bool) -> float:
        """Linear SINR multiplier (1 for LoS)."""
        return 1.0 if los else db_to_linear(-self.nlos_penalty_db)

    def trajectory(self, rng: np.random.Generator, n_slots: int) -> np.ndarray:
        """Boolean LoS indicator for ``n_slots`` consecutive slots.

        Consumes exactly one uniform for the initial state and one per transition.
        """
        if n_slots <= 0:
            return np.zeros(0, dtype=bool)
        u = rng.random(n_slots)
        los = np.empty(n_slots, dtype=bool)
        state = (not (u[0] < self.p_block)) if self._los_init is None else self._los_init
        los[0] = state
        p_enter, p_exit = self.p_enter, self.p_exit
        for t in range(1, n_slots):
            if state:
                state = not (u[t] < p_enter)
            else:
                state = u[t] < p_exit
            los[t] = state
        return los


def sample_blockage(rng: np.random.Generator, p_block: float, mean_duration_slots: float,
                    channel: ChannelState, base_sinr: float,
                    model: Optional[BlockageChannel] = None) -> ChannelState:
    """Advance ``channel`` one slot through the blockage chain.

    The NLoS penalty multiplies ``base_sinr`` and the rate is recomputed.
    """
    model = model or BlockageChannel(p_block, mean_duration_slots)
    channel.los = model.next_state(channel.los, rng)
    return channel.set_sinr(base_sinr * model.penalty(channel.los))


def hedged_completion(t0: int, primary_latency: int, backup_latency: int,
                      hedge_delay: int) -> Tuple[int, str]:
    """Completion slot and winner of a hedged request given both latencies."""
    primary_done = t0 + primary_latency
    if primary_latency <= hedge_delay:
        return primary_done, "primary"
    backup_done = t0 + hedge_delay + backup_latency
    if backup_done < primary_done:
        return backup_done, "backup"
    return primary_done, "primary"


def hedged_offload(task: Task, primary: ServerState, backup: ServerState, hedge_delay: int,
                   t0: int = 0, rng: Optional[np.random.Generator] = None,
                   log: Optional["EventLog"] = None, node_id: int = 0) -> Optional[int]:
    """Send ``task`` to ``primary`` and a delayed replica to ``backup``.

    The replica is only issued if the primary has not finished after
    ``hedge_delay`` slots. The losing replica is cancelled: its server's
    ``busy_until`` is rolled back to what it was before the replica was
    admitted. Returns the completion slot, or ``None`` (and logs a
    ``task_failure``) when neither server is reachable.
    """
    if hedge_delay < 0:
        raise ConfigurationError("hedge_delay must be >= 0")
    if not primary.reachable and not backup.reachable:
        if log is not None:
            log.append(t0, node_id, "task_failure", task.id)
        return None
    if not primary.reachable:
        done = t0 + hedge_delay + backup.latency(task, t0 + hedge_delay, rng)
        _occupy(backup, t0 + hedge_delay, done, done)
        return done
    p_lat = primary.latency(task, t0, rng)
    if not backup.reachable or p_lat <= hedge_delay:
        _occupy(primary, t0, t0 + p_lat, t0 + p_lat)
        return t0 + p_lat
    b_lat = backup.latency(task, t0 + hedge_delay, rng)
    done, winner = hedged_completion(t0, p_lat, b_lat, hedge_delay)
    _occupy(primary, t0, t0 + p_lat, done)
    _occupy(backup, t0 + hedge_delay, t0 + hedge_delay + b_lat, done)
    if log is not None:
        log.append(done, node_id, f"hedge_{winner}", task.id)
    return done


def _occupy(server: ServerState, sent: int, own_done: int, cancel_at: int) -> None:
    # a replica cancelled before it reached service releases the server entirely
    if server.latency_sampler is not None:
        return
    start = max(server.busy_until, sent)
    end = min(own_done, cancel_at)
    if start < end:
        server.busy_until = end


class EventLog:
    """Append-only ``(slot, node_id, event, value)`` record."""

    columns = ("slot", "node_id", "event", "value")

    def __init__(self):
        self.rows: List[Tuple[int, int, str, object]] = []

    def append(self, slot: int, node_id: int, event: str, value=0) -> None:
        self.rows.append((int(slot), int(node_id), event, value))

    def extend(self, rows: Iterable[Sequence]) -> None:
        for r in rows:
            self.append(*r)

    def __len__(self):
        return len(self.rows)

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        for slot, node, event, value in self.rows:
            w.writerow((slot, node, event, _fmt(value)))
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="", encoding="utf-8") as f:
                f.write(text)
        return text


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)
