# -*- coding: utf-8 -*-
"""
MDC Simulator - deterministic discrete-event engine

Drives the broker with SP churn (Little's law: N = W * T), workflow
arrivals, dedup and ready windows and task completions. Every random
quantity comes from a per-purpose stream of the master seed, so two runs
with the same (config, trace) produce byte-identical event logs.
"""
import heapq
import json
import math
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path
from typing import Any, Dict, List, NamedTuple, Optional, Tuple

import numpy as np

from dedup import DedupBatch, dedup
from metrics import RunMetrics, metrics_from_broker
from scheduler import (
    Allocation, AvailabilityModel, Broker, BrokerConfig, Policy, SPProfile, Trust,
)
from tracegen import WorkflowTrace
from utils import ConfigError, read_yaml, require_keys, stream_rng, write_json


# Stream ids for stream_rng(seed, ...)
CHURN_STREAM = 1
DEVICE_STREAM = 2


class EventKind(IntEnum):
    """Rank breaks ties between events at the same instant"""
    TASK_COMPLETE = 0
    SP_LEAVE = 1
    SP_JOIN = 2
    WORKFLOW_ARRIVAL = 3
    DEDUP_WINDOW_EXPIRY = 4
    READY_WINDOW_EXPIRY = 5


@dataclass(order=True)
class SimEvent:
    time: float
    kind: EventKind
    seq: int
    payload: Any = field(default=None, compare=False)


# ============================================================================
# CONFIG
# ============================================================================

@dataclass(frozen=True)
class ChurnConfig:
    """
    SP churn statistics.

    mean_interarrival = 1/W, mean_availability = T, target_population = N.
    Any two determine the third; mean_availability may be inf (no departures).
    """
    mean_interarrival: float
    mean_availability: float
    target_population: float
    initial_population: int = 0
    arrival_distribution: str = "exponential"
    availability_distribution: str = "exponential"
    enabled: bool = True

    @classmethod
    def from_means(cls, mean_interarrival: Optional[float] = None, mean_availability: Optional[float] = None,
                   target_population: Optional[float] = None, initial_population: Optional[int] = None,
                   arrival_distribution: str = "exponential", availability_distribution: str = "exponential",
                   enabled: bool = True) -> "ChurnConfig":
        given = [v is not None for v in (mean_interarrival, mean_availability, target_population)]
        if not enabled and sum(given) < 2:
            return cls(math.inf, math.inf, 0.0, 0, arrival_distribution, availability_distribution, False)
        if sum(given) < 2:
            raise ConfigError("churn: give at least two of mean_interarrival, mean_availability, target_population")
        if mean_interarrival is None:
            mean_interarrival = mean_availability / target_population
        elif mean_availability is None:
            mean_availability = target_population * mean_interarrival
        elif target_population is None:
            target_population = mean_availability / mean_interarrival
        elif not math.isclose(target_population, mean_availability / mean_interarrival, rel_tol=1e-6):
            raise ConfigError(
                f"churn: N={target_population} contradicts T/(1/W)={mean_availability / mean_interarrival}")
        if initial_population is None:
            initial_population = int(round(target_population)) if math.isfinite(target_population) else 0
        config = cls(float(mean_interarrival), float(mean_availability), float(target_population),
                     int(initial_population), arrival_distribution, availability_distribution, enabled)
        config.check()
        return config

    def check(self):
        if not self.mean_interarrival > 0 or not self.mean_availability > 0:
            raise ConfigError("churn: means must be > 0")
        if self.initial_population < 0:
            raise ConfigError("churn: initial_population must be >= 0")
        if self.arrival_distribution not in ("exponential", "deterministic"):
            raise ConfigError(f"churn: unknown arrival_distribution {self.arrival_distribution!r}")
        if self.availability_distribution not in AvailabilityModel.FAMILIES:
            raise ConfigError(f"churn: unknown availability_distribution {self.availability_distribution!r}")

    def availability_model(self) -> AvailabilityModel:
        mean = self.mean_availability if self.enabled else math.inf
        return AvailabilityModel(self.availability_distribution, mean)

    def draw_interarrival(self, rng: np.random.Generator) -> float:
        if self.arrival_distribution == "deterministic":
            return self.mean_interarrival
        return float(rng.exponential(self.mean_interarrival))

    def draw_availability(self, rng: np.random.Generator) -> float:
        if math.isinf(self.mean_availability):
            return math.inf
        if self.availability_distribution == "deterministic":
            return self.mean_availability
        if self.availability_distribution == "uniform":
            return float(rng.uniform(0.0, 2.0 * self.mean_availability))
        return float(rng.exponential(self.mean_availability))


@dataclass(frozen=True)
class DeviceType:
    name: str
    speed: float
    weight: float = 1.0
    battery_mah: Optional[float] = None
    battery_voltage: Optional[float] = None
    profiled: Tuple[Tuple[str, float], ...] = ()

    @classmethod
    def from_dict(cls, doc: Dict) -> "DeviceType":
        require_keys(doc, ("name", "speed", "weight", "battery_mah", "battery_voltage", "profiled", "count"),
                     "sp_pool.devices")
        if not float(doc.get("speed", 0)) > 0:
            raise ConfigError(f"device {doc.get('name')!r}: speed must be > 0")
        profiled = tuple(sorted((str(k), float(v)) for k, v in (doc.get("profiled") or {}).items()))
        return cls(str(doc["name"]), float(doc["speed"]), float(doc.get("weight", 1.0)),
                   doc.get("battery_mah"), doc.get("battery_voltage"), profiled)

    def make_sp(self, sp_id: str, trust: Trust, join: float, leave: float) -> SPProfile:
        return SPProfile(sp_id, self.speed, trust, advertised_until=leave, join_time=join,
                         device=self.name, profiled=dict(self.profiled),
                         battery_mah=self.battery_mah, battery_voltage=self.battery_voltage)


_TRUST_ORDER = (Trust.PERSONAL, Trust.TRUSTED, Trust.VOLUNTEERED)


@dataclass(frozen=True)
class ScriptedSP:
    sp_id: str
    speed: float
    trust: Trust = Trust.VOLUNTEERED
    join: float = 0.0
    leave: float = math.inf


@dataclass(frozen=True)
class SPPool:
    """Device catalog, trust mix (personal, trusted, volunteered) and fixed SPs"""
    devices: Tuple[DeviceType, ...] = (DeviceType("generic", 8.0),)
    trust_mix: Tuple[float, float, float] = (0.01, 0.33, 0.66)
    permanent: int = 0
    scripted: Tuple[ScriptedSP, ...] = ()

    @classmethod
    def from_dict(cls, doc: Dict) -> "SPPool":
        require_keys(doc, ("devices", "trust_mix", "permanent", "scripted"), "sp_pool")
        devices = tuple(DeviceType.from_dict(d) for d in doc.get("devices") or [])
        mix_doc = doc.get("trust_mix") or {"personal": 0.01, "trusted": 0.33, "volunteered": 0.66}
        require_keys(mix_doc, ("personal", "trusted", "volunteered"), "sp_pool.trust_mix")
        mix = tuple(float(mix_doc.get(t.value, 0.0)) for t in _TRUST_ORDER)
        if min(mix) < 0 or abs(sum(mix) - 1.0) > 1e-9:
            raise ConfigError(f"sp_pool.trust_mix {mix} must be fractions summing to 1")
        scripted = []
        for entry in doc.get("scripted") or []:
            require_keys(entry, ("sp_id", "speed", "trust", "join", "leave"), "sp_pool.scripted")
            leave = entry.get("leave")
            try:
                trust = Trust(entry.get("trust", "volunteered"))
            except ValueError as e:
                raise ConfigError(f"sp_pool.scripted: {e}") from e
            scripted.append(ScriptedSP(str(entry["sp_id"]), float(entry["speed"]), trust,
                                       float(entry.get("join", 0.0)),
                                       math.inf if leave is None else float(leave)))
        pool = cls(devices or cls.devices, mix, int(doc.get("permanent", 0)), tuple(scripted))
        if pool.permanent < 0:
            raise ConfigError("sp_pool.permanent must be >= 0")
        return pool

    def draw(self, rng: np.random.Generator, sp_id: str, join: float, leave: float) -> SPProfile:
        weights = np.array([d.weight for d in self.devices], dtype=float)
        device = self.devices[int(rng.choice(len(self.devices), p=weights / weights.sum()))]
        trust = _TRUST_ORDER[int(rng.choice(3, p=list(self.trust_mix)))]
        return device.make_sp(sp_id, trust, join, leave)


@dataclass(frozen=True)
class SimConfig:
    seed: int = 0
    churn: ChurnConfig = ChurnConfig(2.0, 60.0, 30.0, 30)
    broker: BrokerConfig = BrokerConfig()
    sp_pool: SPPool = SPPool()
    delta_wait: float = 0.0
    dedup: bool = True
    horizon: Optional[float] = None

    @classmethod
    def from_dict(cls, cfg: Dict) -> "SimConfig":
        """Typed config from the loaded YAML; ConfigError names the offending key"""
        sim = cfg.get("simulation") or {}
        require_keys(sim, ("seed", "policy", "dedup", "delta_wait", "delta_ready", "ccr_threshold",
                           "link_rate", "horizon", "default_speed"), "simulation")
        churn_doc = dict(cfg.get("churn") or {})
        require_keys(churn_doc, ("enabled", "mean_interarrival", "mean_availability", "target_population",
                                 "initial_population", "arrival_distribution", "availability_distribution"),
                     "churn")
        caps = cfg.get("replica_caps") or {}
        require_keys(caps, ("blocking", "fork", "noncritical"), "replica_caps")
        if int(caps.get("noncritical", 1)) != 1:
            raise ConfigError("replica_caps.noncritical: noncritical tasks are never replicated, must be 1")

        try:
            policy = Policy(sim.get("policy", "protection"))
        except ValueError as e:
            raise ConfigError(f"simulation.policy: {e}") from e
        for key in ("delta_wait", "delta_ready"):
            if float(sim.get(key, 0.0)) < 0:
                raise ConfigError(f"simulation.{key} must be >= 0")

        broker = BrokerConfig(
            policy=policy,
            delta_ready=float(sim.get("delta_ready", 0.0)),
            ccr_threshold=float(sim.get("ccr_threshold", 1.0)),
            link_rate=float(sim.get("link_rate", 10.0)),
            default_speed=float(sim.get("default_speed", 8.0)),
            cap_blocking=int(caps.get("blocking", 2)),
            cap_fork=int(caps.get("fork", 3)),
        )
        if broker.cap_blocking < 1 or broker.cap_fork < 1:
            raise ConfigError("replica_caps must be >= 1")
        if not broker.link_rate > 0:
            raise ConfigError("simulation.link_rate must be > 0")

        churn = ChurnConfig.from_means(**churn_doc)
        horizon = sim.get("horizon")
        return cls(
            seed=int(sim.get("seed", 0)),
            churn=churn,
            broker=broker,
            sp_pool=SPPool.from_dict(cfg.get("sp_pool") or {}),
            delta_wait=float(sim.get("delta_wait", 0.0)),
            dedup=bool(sim.get("dedup", True)),
            horizon=None if horizon is None else float(horizon),
        )


# ============================================================================
# CHURN
# ============================================================================

class SPLifetime(NamedTuple):
    sp: SPProfile
    join: float
    leave: float


def spawn_churn(config: ChurnConfig, rng: np.random.Generator, horizon: float,
                pool: Optional[SPPool] = None, device_rng: Optional[np.random.Generator] = None) -> List[SPLifetime]:
    """
    SP join/leave stream up to the horizon.

    initial_population SPs are present at t=0; further SPs join as a
    renewal process with mean gap mean_interarrival and stay for a drawn
    availability duration.
    """
    pool = pool or SPPool()
    device_rng = device_rng if device_rng is not None else rng
    lifetimes: List[SPLifetime] = []

    def add(join: float):
        leave = join + config.draw_availability(rng)
        sp = pool.draw(device_rng, f"sp-{len(lifetimes):05d}", join, leave)
        lifetimes.append(SPLifetime(sp, join, leave))

    for _ in range(config.initial_population):
        add(0.0)
    t = 0.0
    while True:
        t += config.draw_interarrival(rng)
        if t > horizon:
            break
        add(t)
    return lifetimes


def mean_population(lifetimes: List[SPLifetime], horizon: float) -> float:
    """Time-averaged number of joined SPs over [0, horizon]"""
    if horizon <= 0:
        return 0.0
    covered = sum(max(0.0, min(lt.leave, horizon) - min(lt.join, horizon)) for lt in lifetimes)
    return covered / horizon


class TaskOutcome(NamedTuple):
    ok: bool
    time: float


def execute(alloc: Allocation, leave_time: float) -> TaskOutcome:
    """Completes at t_finish if the SP is still joined then, else fails when it leaves"""
    if leave_time >= alloc.t_finish:
        return TaskOutcome(True, alloc.t_finish)
    return TaskOutcome(False, leave_time)


# ============================================================================
# ENGINE
# ============================================================================

@dataclass
class SimResult:
    log: List[Dict]
    metrics: RunMetrics
    outcomes: Dict[str, str]
    horizon: float = 0.0

    def log_lines(self) -> List[str]:
        return [json.dumps(record, sort_keys=True, ensure_ascii=False) for record in self.log]

    def write(self, out_dir: Path):
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / "events.jsonl", "w", encoding="utf-8") as f:
            for line in self.log_lines():
                f.write(line + "\n")
        write_json(out_dir / "summary.json", {
            "metrics": self.metrics.to_dict(),
            "outcomes": self.outcomes,
            "horizon": self.horizon,
        })


class MdcSimulator:
    """One run: owns the event heap, the broker and the SP leave schedule"""

    def __init__(self, config: SimConfig, trace: WorkflowTrace):
        self.config = config
        self.trace = trace
        self.log: List[Dict] = []
        self.broker = Broker(config.broker, config.churn.availability_model(), emit=self.log.append)
        self._heap: List[SimEvent] = []
        self._seq = 0
        self._leave: Dict[str, float] = {}
        self._batch = []
        self._window_open = False

        if config.horizon is not None:
            self.horizon = config.horizon
        else:
            self.horizon = trace.last_arrival + config.delta_wait + 4.0 * trace.max_deadline

    def schedule(self, time: float, kind: EventKind, payload: Any = None):
        self._seq += 1
        heapq.heappush(self._heap, SimEvent(time, kind, self._seq, payload))

    def _populate(self):
        for wf in self.trace.instantiate():
            self.schedule(wf.arrival_time, EventKind.WORKFLOW_ARRIVAL, wf)

        lifetimes: List[SPLifetime] = []
        pool = self.config.sp_pool
        device_rng = stream_rng(self.config.seed, DEVICE_STREAM)
        for i in range(pool.permanent):
            sp = pool.draw(device_rng, f"perm-{i:03d}", 0.0, math.inf)
            lifetimes.append(SPLifetime(sp, 0.0, math.inf))
        for s in pool.scripted:
            sp = SPProfile(s.sp_id, s.speed, s.trust, advertised_until=s.leave, join_time=s.join)
            lifetimes.append(SPLifetime(sp, s.join, s.leave))
        if self.config.churn.enabled:
            lifetimes.extend(spawn_churn(self.config.churn, stream_rng(self.config.seed, CHURN_STREAM),
                                         self.horizon, pool, device_rng))

        for lt in lifetimes:
            self._leave[lt.sp.sp_id] = lt.leave
            self.schedule(lt.join, EventKind.SP_JOIN, lt.sp)
            if lt.leave <= self.horizon:
                self.schedule(lt.leave, EventKind.SP_LEAVE, lt.sp.sp_id)

    def _flush_broker(self):
        for t in self.broker.take_timers():
            self.schedule(t, EventKind.READY_WINDOW_EXPIRY)
        for alloc in self.broker.take_allocations():
            outcome = execute(alloc, self._leave.get(alloc.sp, math.inf))
            if outcome.ok:
                self.schedule(alloc.t_finish, EventKind.TASK_COMPLETE, alloc.alloc_id)
            # a failing allocation is reported by the SP_LEAVE event

    def _admit(self, workflows, now: float):
        merged = dedup(DedupBatch(list(workflows), self.config.delta_wait))
        self.log.append({
            "t": now, "event": "dedup", "workflows": [w.wf_id for w in workflows],
            "original": merged.original_task_count, "surviving": merged.surviving_count,
            "comparisons": merged.comparisons, "forks": len(merged.fork_tasks),
        })
        self.broker.admit(merged, now)

    def _on_arrival(self, wf, now: float):
        self.log.append({"t": now, "event": "arrival", "wf": wf.wf_id, "deadline": wf.deadline,
                         "p_fail": wf.p_fail, "tasks": len(wf.real_tasks())})
        if not self.config.dedup:
            self._admit([wf], now)
            return
        self._batch.append(wf)
        if not self._window_open:
            self._window_open = True
            self.schedule(now + self.config.delta_wait, EventKind.DEDUP_WINDOW_EXPIRY)

    def run(self) -> SimResult:
        self._populate()
        arrivals_left = len(self.trace)
        stopped_at = None

        while self._heap:
            if arrivals_left == 0 and not self._batch and self.broker.all_terminal():
                break
            event = heapq.heappop(self._heap)
            if event.time > self.horizon:
                stopped_at = self.horizon
                break
            now = event.time

            if event.kind == EventKind.WORKFLOW_ARRIVAL:
                arrivals_left -= 1
                self._on_arrival(event.payload, now)
            elif event.kind == EventKind.DEDUP_WINDOW_EXPIRY:
                batch, self._batch, self._window_open = self._batch, [], False
                if batch:
                    self._admit(batch, now)
            elif event.kind == EventKind.READY_WINDOW_EXPIRY:
                self.broker.dispatch(now)
            elif event.kind == EventKind.TASK_COMPLETE:
                self.broker.on_complete(event.payload, now)
            elif event.kind == EventKind.SP_JOIN:
                self.broker.on_sp_join(event.payload, now)
            elif event.kind == EventKind.SP_LEAVE:
                self.broker.on_sp_leave(event.payload, now)
            self._flush_broker()

        if not self.broker.all_terminal():
            self.broker.finalize(stopped_at if stopped_at is not None else self.horizon)

        outcomes = {wf_id: state.status for wf_id, state in sorted(self.broker.workflows.items())}
        metrics = metrics_from_broker(self.broker, len(self.trace))
        return SimResult(self.log, metrics, outcomes, self.horizon)


def run(config: SimConfig, trace: WorkflowTrace) -> SimResult:
    """Simulate one trace; deterministic for a fixed (config, trace)"""
    try:
        trace.check()
    except ValueError as e:
        raise ConfigError(f"trace: {e}") from e
    return MdcSimulator(config, trace).run()


def load_testbed(path) -> List[SPProfile]:
    """
    Testbed fixture as personal SPs (one per device unit).

    Profiled execution times override work / speed for the listed kinds.
    """
    doc = read_yaml(Path(path)) or {}
    sps = []
    for entry in doc.get("devices") or []:
        device = DeviceType.from_dict(entry)
        try:
            trust = Trust(doc.get("trust", "personal"))
        except ValueError as e:
            raise ConfigError(f"{path}: {e}") from e
        for i in range(int(entry.get("count", 1))):
            sps.append(device.make_sp(f"{device.name}-{i}", trust, 0.0, math.inf))
    return sps
