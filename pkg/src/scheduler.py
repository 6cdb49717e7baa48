# -*- coding: utf-8 -*-
"""
Scheduler - the broker's task scheduling state machine

Pipeline per ready task:
1. level (longest average-cost path to an exit task) and slack
2. priority = smallest slack first (or arrival order for FCFS)
3. earliest-finish candidate SPs, filtered by protection class
4. controlled replication until the joint success probability meets
   the workflow's requirement or the replica cap is hit
5. reactive healing when an allocation fails with no live sibling

The Broker is driven by the simulation engine; it never touches the clock.
"""
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, Iterable, List, NamedTuple, Optional, Sequence, Set, Tuple

import networkx as nx

from dedup import MergedWorkflowSet
from workflow_model import CycleError, Criticality, Protection, Task, TaskId, Workflow


class NoEligibleSP(RuntimeError):
    """No joined SP is authorized for the task"""


class DomainError(ValueError):
    """Argument outside the domain of a scheduling equation"""


class Trust(str, Enum):
    PERSONAL = "personal"
    TRUSTED = "trusted"
    VOLUNTEERED = "volunteered"


AUTHORIZED_TRUST = {
    Protection.PUBLIC: frozenset(Trust),
    Protection.PROTECTED: frozenset({Trust.PERSONAL, Trust.TRUSTED}),
    Protection.PRIVATE: frozenset({Trust.PERSONAL}),
}


def is_authorized(task: Task, sp: "SPProfile") -> bool:
    return sp.trust in AUTHORIZED_TRUST[task.protection]


class Policy(str, Enum):
    BASELINE = "baseline"
    HEALING = "healing"
    PROTECTION = "protection"
    FCFS = "fcfs"

    @property
    def heals(self) -> bool:
        return self is not Policy.BASELINE

    @property
    def replicates(self) -> bool:
        return self in (Policy.PROTECTION, Policy.FCFS)

    @property
    def slack_order(self) -> bool:
        return self is not Policy.FCFS


# ============================================================================
# SERVICE PROVIDERS
# ============================================================================

@dataclass
class Allocation:
    task: TaskId
    sp: str
    t_start: float
    t_finish: float
    is_replica: bool = False
    p_succ: float = 1.0
    alloc_id: int = 0
    status: str = "active"  # active | done | failed | cancelled
    data_ready: float = 0.0


@dataclass
class SPProfile:
    sp_id: str
    speed: float
    trust: Trust = Trust.VOLUNTEERED
    queue: List[Allocation] = field(default_factory=list)
    advertised_until: float = math.inf
    join_time: float = 0.0
    device: str = ""
    profiled: Dict[str, float] = field(default_factory=dict)
    battery_mah: Optional[float] = None
    battery_voltage: Optional[float] = None

    def __post_init__(self):
        if not self.speed > 0:
            raise DomainError(f"SP {self.sp_id}: speed must be > 0")

    def exec_time(self, task: Task) -> float:
        """α: profiled seconds for the kind when known, else work / speed"""
        if task.is_dummy:
            return 0.0
        if task.kind.name in self.profiled:
            return self.profiled[task.kind.name]
        return task.work / self.speed

    def queue_end(self, now: float) -> float:
        return max([now] + [a.t_finish for a in self.queue])


@dataclass(frozen=True)
class AvailabilityModel:
    """
    Distribution of SP availability duration T with mean `mean`.

    exponential: memoryless, P(residual > d) = exp(-d / mean)
    deterministic: T known from the advertisement (advertised_until)
    uniform: T ~ U[0, 2*mean], conditioned on the SP's current age
    """
    family: str = "exponential"
    mean: float = 200.0

    FAMILIES = ("exponential", "deterministic", "uniform")

    def __post_init__(self):
        if self.family not in self.FAMILIES:
            raise DomainError(f"unknown availability family {self.family!r}")
        if not self.mean > 0:
            raise DomainError(f"mean availability must be > 0, got {self.mean}")

    def survival(self, sp: SPProfile, now: float, t_end: float) -> float:
        horizon = max(0.0, t_end - now)
        if horizon == 0.0 or math.isinf(self.mean):
            return 1.0
        if self.family == "exponential":
            return math.exp(-horizon / self.mean)
        if self.family == "deterministic":
            return 1.0 if t_end <= sp.advertised_until else 0.0
        span = 2.0 * self.mean
        age = max(0.0, now - sp.join_time)
        if age >= span:
            return 0.0
        return max(0.0, span - age - horizon) / (span - age)


def task_success_probability(alloc: Allocation, sp: SPProfile, model: AvailabilityModel, now: float) -> float:
    """Probability the SP stays joined until the allocation finishes"""
    return model.survival(sp, now, alloc.t_finish)


# ============================================================================
# LEVELS, SLACK, PRIORITY
# ============================================================================

class MdcStats:
    """Average SP statistics over the currently joined SPs"""

    def __init__(self, sps: Iterable[SPProfile], link_rate: float = 10.0,
                 ccr_threshold: float = 1.0, default_speed: float = 8.0):
        self.sps = list(sps)
        self.link_rate = link_rate
        self.ccr_threshold = ccr_threshold
        self.default_speed = default_speed
        self._mean: Dict[str, float] = {}

    def mean_exec(self, task: Task) -> float:
        if task.is_dummy:
            return 0.0
        name = task.kind.name
        if name not in self._mean:
            if self.sps:
                self._mean[name] = sum(sp.exec_time(task) for sp in self.sps) / len(self.sps)
            else:
                self._mean[name] = task.work / self.default_speed
        return self._mean[name]

    def comm(self, parent: Task) -> float:
        # dummies forward data already paid for on the edge into them
        if parent.is_dummy or self.link_rate == math.inf:
            return 0.0
        return parent.output_size / self.link_rate


def compute_levels(workflow: Workflow, env: MdcStats) -> Dict[TaskId, float]:
    """
    Level of every task: ᾱ + max over children (β̄ + child level).

    β̄ terms count only when the workflow's communication-to-computation
    ratio exceeds env.ccr_threshold.
    """
    try:
        order = list(nx.topological_sort(workflow.graph))
    except nx.NetworkXUnfeasible as e:
        raise CycleError(f"workflow {workflow.wf_id}: dependency cycle") from e

    alpha = {tid: env.mean_exec(workflow.task(tid)) for tid in order}
    beta = {tid: env.comm(workflow.task(tid)) for tid in order}
    computation = sum(alpha.values())
    communication = sum(beta[p] for p, _ in workflow.edges)
    with_comm = computation > 0 and communication / computation > env.ccr_threshold

    levels: Dict[TaskId, float] = {}
    for tid in reversed(order):
        tail = [levels[c] + (beta[tid] if with_comm else 0.0) for c in workflow.children(tid)]
        levels[tid] = alpha[tid] + max(tail, default=0.0)
    return levels


def compute_slack(now: float, deadline: float, level: float) -> float:
    """S = D - Δ - now; negative when the workflow is already late on averages"""
    return deadline - level - now


@dataclass
class ReadyTask:
    task: TaskId
    workflow: str
    level: float
    slack: float
    required_p_succ: float
    replica_cap: int
    arrival: float = 0.0
    data_ready: float = 0.0

    def __post_init__(self):
        if self.replica_cap < 1:
            raise DomainError("replica_cap must be >= 1")


def prioritize(ready_set: Sequence[ReadyTask], now: float = 0.0, by_slack: bool = True) -> List[ReadyTask]:
    """Smallest slack first, ties by (workflow arrival, task id); FCFS orders by arrival"""
    if by_slack:
        return sorted(ready_set, key=lambda r: (r.slack, r.arrival, r.task))
    return sorted(ready_set, key=lambda r: (r.arrival, r.task))


# ============================================================================
# ALLOCATION
# ============================================================================

class Candidate(NamedTuple):
    sp_id: str
    t_start: float
    t_finish: float


def earliest_finish(task: Task, sps: Iterable[SPProfile], now: float,
                    data_ready: float = 0.0) -> List[Candidate]:
    """
    Authorized SPs ordered by finish time (ties by sp_id).

    Raises:
        NoEligibleSP: protection class filters out every SP
    """
    candidates = []
    for sp in sps:
        if not is_authorized(task, sp):
            continue
        t_start = max(now, sp.queue_end(now), data_ready)
        candidates.append(Candidate(sp.sp_id, t_start, t_start + sp.exec_time(task)))
    if not candidates:
        raise NoEligibleSP(f"no authorized SP for {task.id} ({task.protection.value})")
    return sorted(candidates, key=lambda c: (c.t_finish, c.sp_id))


def required_success_probability(incomplete: int, p_fail: float) -> float:
    """Per-task success probability so that all |K| remaining tasks succeed with 1 - P_fail"""
    if incomplete < 1:
        raise DomainError(f"need at least one incomplete task, got {incomplete}")
    if not 0.0 <= p_fail < 1.0:
        raise DomainError(f"p_fail must lie in [0, 1), got {p_fail}")
    return (1.0 - p_fail) ** (1.0 / incomplete)


@dataclass(frozen=True)
class ReplicaPlan:
    allocations: Tuple[Allocation, ...]
    required: float
    achieved: float
    cap_reached: bool


def plan_replicas(task: ReadyTask, candidates: Sequence[Tuple[Candidate, float]]) -> ReplicaPlan:
    """
    Shortest prefix of the finish-ordered candidates meeting the requirement.

    Args:
        task: Ready task with required_p_succ and replica_cap
        candidates: (candidate, success probability) in earliest-finish order

    Returns:
        ReplicaPlan; cap_reached marks a requirement not met within the cap
    """
    if not candidates:
        raise NoEligibleSP(f"no candidates for {task.task}")
    chosen = []
    miss = 1.0
    for candidate, p in candidates:
        if chosen and (1.0 - miss >= task.required_p_succ or len(chosen) >= task.replica_cap):
            break
        chosen.append(Allocation(task.task, candidate.sp_id, candidate.t_start, candidate.t_finish,
                                 is_replica=bool(chosen), p_succ=p))
        miss *= 1.0 - p
    achieved = 1.0 - miss
    return ReplicaPlan(tuple(chosen), task.required_p_succ, achieved, achieved < task.required_p_succ)


# ============================================================================
# BROKER
# ============================================================================

class ReadyCollector:
    """Accumulates ready tasks; a window opens at the first item"""

    def __init__(self, window: float = 0.0):
        if window < 0:
            raise DomainError("ready window must be >= 0")
        self.window = window
        self.items: List[TaskId] = []
        self.expiry: Optional[float] = None

    def add(self, tid: TaskId, now: float) -> Optional[float]:
        """Returns the expiry time when this item opened a new window"""
        if tid in self.items:
            return None
        self.items.append(tid)
        if self.expiry is None:
            self.expiry = now + self.window
            return self.expiry
        return None

    def drain(self) -> List[TaskId]:
        items, self.items, self.expiry = self.items, [], None
        return items


@dataclass(frozen=True)
class BrokerConfig:
    policy: Policy = Policy.PROTECTION
    delta_ready: float = 0.0
    ccr_threshold: float = 1.0
    link_rate: float = 10.0
    default_speed: float = 8.0
    cap_blocking: int = 2
    cap_fork: int = 3

    def replica_cap(self, criticality: Criticality) -> int:
        if not self.policy.replicates or criticality == Criticality.NONCRITICAL:
            return 1
        return {
            Criticality.BLOCKING: self.cap_blocking,
            Criticality.FORK: self.cap_fork,
        }[criticality]


@dataclass
class TaskState:
    task: Task
    # a shared task may hang under different (similar) parents in each simplified workflow
    parents_by_wf: Dict[str, Tuple[TaskId, ...]] = field(default_factory=dict)
    children: Set[TaskId] = field(default_factory=set)
    served: Set[str] = field(default_factory=set)
    status: str = "pending"  # pending | ready | allocated | done | cancelled
    allocations: List[Allocation] = field(default_factory=list)
    finish: Optional[float] = None
    scheduled: bool = False


@dataclass
class WorkflowState:
    workflow: Workflow
    remaining: Set[TaskId]
    remaining_real: Set[TaskId]
    status: str = "running"  # running | on_time | late | failed
    finish: Optional[float] = None

    @property
    def live(self) -> bool:
        return self.status == "running"


class Broker:
    """
    Single-threaded scheduling state machine.

    The engine calls admit / dispatch / on_complete / on_sp_join /
    on_sp_leave at event boundaries and drains `take_timers()` and
    `take_allocations()` afterwards to schedule follow-up events.
    """

    def __init__(self, config: BrokerConfig, availability: AvailabilityModel,
                 emit: Optional[Callable[[Dict], None]] = None):
        self.config = config
        self.availability = availability
        self.emit = emit or (lambda record: None)
        self.sps: Dict[str, SPProfile] = {}
        self.tasks: Dict[TaskId, TaskState] = {}
        self.workflows: Dict[str, WorkflowState] = {}
        self.collector = ReadyCollector(config.delta_ready)
        self.blocked: List[TaskId] = []
        self.allocations: Dict[int, Allocation] = {}
        self._timers: List[float] = []
        self._new_allocations: List[Allocation] = []
        self._stats: Optional[MdcStats] = None
        self._levels: Dict[str, Dict[TaskId, float]] = {}
        self.counters = {"allocations": 0, "replicas": 0, "heals": 0, "cap_reached": 0,
                         "comparisons": 0, "original_tasks": 0, "admitted_tasks": 0}

    # --- engine plumbing ------------------------------------------------

    def take_timers(self) -> List[float]:
        timers, self._timers = self._timers, []
        return timers

    def take_allocations(self) -> List[Allocation]:
        allocs, self._new_allocations = self._new_allocations, []
        return allocs

    def stats(self) -> MdcStats:
        if self._stats is None:
            self._stats = MdcStats(self.sps.values(), self.config.link_rate,
                                   self.config.ccr_threshold, self.config.default_speed)
        return self._stats

    def _sp_set_changed(self):
        self._stats = None
        self._levels.clear()

    def all_terminal(self) -> bool:
        return all(not w.live for w in self.workflows.values())

    # --- admission ------------------------------------------------------

    def admit(self, merged: MergedWorkflowSet, now: float):
        """Register the simplified workflows of one dedup batch"""
        self.counters["comparisons"] += merged.comparisons
        self.counters["original_tasks"] += merged.original_task_count
        self.counters["admitted_tasks"] += merged.surviving_count

        for wf in merged.workflows:
            ids = {t.id for t in wf.tasks}
            real = {t.id for t in wf.tasks if not t.is_dummy}
            self.workflows[wf.wf_id] = WorkflowState(wf, set(ids), set(real))
            for t in wf.tasks:
                state = self.tasks.get(t.id)
                if state is None:
                    state = self.tasks[t.id] = TaskState(t)
                state.parents_by_wf[wf.wf_id] = wf.parents(t.id)
                state.served.add(wf.wf_id)
                state.children.update(wf.children(t.id))

        for wf in merged.workflows:
            for t in wf.tasks:
                self._maybe_ready(t.id, now)

    # --- readiness ------------------------------------------------------

    def _live_served(self, state: TaskState) -> List[WorkflowState]:
        return [self.workflows[w] for w in sorted(state.served) if self.workflows[w].live]

    def parents(self, tid: TaskId) -> Tuple[TaskId, ...]:
        """Parents the task waits for: union over the live workflows it serves"""
        state = self.tasks[tid]
        views = [w.workflow.wf_id for w in self._live_served(state)] or sorted(state.served)
        return tuple(sorted({p for w in views for p in state.parents_by_wf.get(w, ())}))

    def _maybe_ready(self, tid: TaskId, now: float):
        state = self.tasks[tid]
        if state.status != "pending" or not self._live_served(state):
            return
        if all(self.tasks[p].status == "done" for p in self.parents(tid)):
            self._mark_ready(tid, now)

    def _data_ready(self, state: TaskState) -> float:
        stats = self.stats()
        ready = 0.0
        for p in self.parents(state.task.id):
            parent = self.tasks[p]
            ready = max(ready, (parent.finish or 0.0) + stats.comm(parent.task))
        return ready

    def _mark_ready(self, tid: TaskId, now: float):
        state = self.tasks[tid]
        if state.task.is_dummy:
            self._finish_task(state, max(now, self._data_ready(state)))
            return
        state.status = "ready"
        expiry = self.collector.add(tid, now)
        if expiry is not None:
            self._timers.append(expiry)

    def _levels_for(self, wf: WorkflowState) -> Dict[TaskId, float]:
        levels = self._levels.get(wf.workflow.wf_id)
        if levels is None:
            levels = self._levels[wf.workflow.wf_id] = compute_levels(wf.workflow, self.stats())
        return levels

    def ready_task(self, tid: TaskId, now: float) -> ReadyTask:
        """Slack and success requirement of a task at time now"""
        state = self.tasks[tid]
        live = self._live_served(state) or [self.workflows[w] for w in sorted(state.served)]
        best = None
        for wf in live:
            level = self._levels_for(wf)[tid]
            slack = compute_slack(now, wf.workflow.deadline, level)
            key = (slack, wf.workflow.arrival_time, wf.workflow.wf_id)
            if best is None or key < best[0]:
                best = (key, wf, level)
        (slack, _, _), owner, level = best
        required = max(required_success_probability(max(1, len(wf.remaining_real)), wf.workflow.p_fail)
                       for wf in live)
        return ReadyTask(
            task=tid,
            workflow=owner.workflow.wf_id,
            level=level,
            slack=slack,
            required_p_succ=required,
            replica_cap=self.config.replica_cap(state.task.criticality),
            arrival=min(wf.workflow.arrival_time for wf in live),
            data_ready=self._data_ready(state),
        )

    def collect_ready(self, now: float) -> List[ReadyTask]:
        """Drain the ready window (and blocked tasks) into ReadyTasks"""
        ids = self.collector.drain()
        return [self.ready_task(tid, now) for tid in ids if self.tasks[tid].status == "ready"]

    # --- dispatch -------------------------------------------------------

    def dispatch(self, now: float):
        ready = prioritize(self.collect_ready(now), now, self.config.policy.slack_order)
        for rt in ready:
            try:
                self._allocate(rt, now)
            except NoEligibleSP:
                if rt.task not in self.blocked:
                    self.blocked.append(rt.task)
                    self.emit({"t": now, "event": "blocked", "task": rt.task})

    def _allocate(self, rt: ReadyTask, now: float):
        state = self.tasks[rt.task]
        task = state.task
        candidates = earliest_finish(task, [self.sps[s] for s in sorted(self.sps)], now, rt.data_ready)
        scored = []
        for c in candidates:
            trial = Allocation(rt.task, c.sp_id, c.t_start, c.t_finish)
            scored.append((c, task_success_probability(trial, self.sps[c.sp_id], self.availability, now)))

        plan = plan_replicas(rt, scored)
        if plan.cap_reached:
            self.counters["cap_reached"] += 1

        state.status = "allocated"
        state.scheduled = True
        for alloc in plan.allocations:
            self.counters["allocations"] += 1
            alloc.alloc_id = self.counters["allocations"]
            alloc.data_ready = rt.data_ready
            sp = self.sps[alloc.sp]
            sp.queue.append(alloc)
            state.allocations.append(alloc)
            self.allocations[alloc.alloc_id] = alloc
            self._new_allocations.append(alloc)
            if alloc.is_replica:
                self.counters["replicas"] += 1
            self.emit({
                "t": now, "event": "allocate", "alloc": alloc.alloc_id, "task": alloc.task,
                "sp": alloc.sp, "trust": sp.trust.value, "protection": task.protection.value,
                "criticality": task.criticality.value, "start": alloc.t_start,
                "finish": alloc.t_finish, "replica": alloc.is_replica, "p_succ": round(alloc.p_succ, 12),
                "slack": rt.slack, "required": round(rt.required_p_succ, 12),
            })

    # --- completion -----------------------------------------------------

    def _release(self, alloc: Allocation, status: str):
        alloc.status = status
        sp = self.sps.get(alloc.sp)
        if sp is not None and alloc in sp.queue:
            sp.queue.remove(alloc)

    def _cancel(self, alloc: Allocation, now: float):
        self._release(alloc, "cancelled")
        self.emit({"t": now, "event": "cancel", "alloc": alloc.alloc_id, "task": alloc.task, "sp": alloc.sp})
        self._compact(alloc.sp, now)

    def _compact(self, sp_id: str, now: float):
        """Pull queued allocations forward into the time a cancelled one freed"""
        sp = self.sps.get(sp_id)
        if sp is None:
            return
        free = now
        for alloc in sp.queue:
            if alloc.t_start > now:
                start = max(free, alloc.data_ready)
                if start < alloc.t_start:
                    duration = alloc.t_finish - alloc.t_start
                    alloc.t_start, alloc.t_finish = start, start + duration
                    self._new_allocations.append(alloc)
                    self.emit({"t": now, "event": "shift", "alloc": alloc.alloc_id, "task": alloc.task,
                               "sp": sp_id, "start": alloc.t_start, "finish": alloc.t_finish})
            free = max(free, alloc.t_finish)

    def on_complete(self, alloc_id: int, now: float):
        alloc = self.allocations.get(alloc_id)
        if alloc is None or alloc.status != "active":
            return
        self._release(alloc, "done")
        state = self.tasks[alloc.task]
        self.emit({"t": now, "event": "complete", "alloc": alloc_id, "task": alloc.task, "sp": alloc.sp})
        if state.status in ("done", "cancelled"):
            return
        for sibling in state.allocations:
            if sibling.status == "active":
                self._cancel(sibling, now)
        self._finish_task(state, now)

    def _finish_task(self, state: TaskState, now: float):
        state.status = "done"
        state.finish = now
        tid = state.task.id
        for wf_id in sorted(state.served):
            wf = self.workflows[wf_id]
            wf.remaining.discard(tid)
            wf.remaining_real.discard(tid)
            if wf.live and not wf.remaining:
                wf.finish = now
                wf.status = "on_time" if now <= wf.workflow.deadline else "late"
                self.emit({"t": now, "event": "workflow", "wf": wf_id, "status": wf.status,
                           "makespan": now - wf.workflow.arrival_time})
        for child in sorted(state.children):
            self._maybe_ready(child, now)

    # --- failures -------------------------------------------------------

    def on_sp_join(self, sp: SPProfile, now: float):
        self.sps[sp.sp_id] = sp
        self._sp_set_changed()
        self.emit({"t": now, "event": "sp_join", "sp": sp.sp_id, "trust": sp.trust.value,
                   "speed": sp.speed, "device": sp.device, "battery_mah": sp.battery_mah,
                   "battery_voltage": sp.battery_voltage})
        if self.blocked:
            retry, self.blocked = self.blocked, []
            for tid in retry:
                if self.tasks[tid].status == "ready":
                    expiry = self.collector.add(tid, now)
                    if expiry is not None:
                        self._timers.append(expiry)

    def on_sp_leave(self, sp_id: str, now: float):
        """SP departure fails its running and queued allocations at once"""
        sp = self.sps.pop(sp_id, None)
        if sp is None:
            return
        self._sp_set_changed()
        self.emit({"t": now, "event": "sp_leave", "sp": sp_id})
        for alloc in list(sp.queue):
            alloc.status = "failed"
            self.emit({"t": now, "event": "fail", "alloc": alloc.alloc_id, "task": alloc.task, "sp": sp_id})
        failed, sp.queue = list(sp.queue), []
        for alloc in failed:
            self._on_failure(alloc, now)

    def _on_failure(self, alloc: Allocation, now: float):
        state = self.tasks[alloc.task]
        if state.status != "allocated":
            return
        if any(a.status == "active" for a in state.allocations):
            return
        if self.config.policy.heals:
            self.heal(alloc, now)
        else:
            for wf_id in sorted(state.served):
                self.fail_workflow(wf_id, now, reason=f"task {alloc.task} failed")

    def heal(self, failed: Allocation, now: float) -> ReadyTask:
        """Put the task of a failed allocation back into the ready set"""
        self.counters["heals"] += 1
        self.emit({"t": now, "event": "heal", "alloc": failed.alloc_id, "task": failed.task})
        self._mark_ready(failed.task, now)
        return self.ready_task(failed.task, now)

    def fail_workflow(self, wf_id: str, now: float, reason: str = ""):
        wf = self.workflows[wf_id]
        if not wf.live:
            return
        wf.status = "failed"
        wf.finish = now
        self.emit({"t": now, "event": "workflow", "wf": wf_id, "status": "failed", "reason": reason})
        for t in wf.workflow.tasks:
            state = self.tasks[t.id]
            if state.status in ("done", "cancelled") or self._live_served(state):
                continue
            state.status = "cancelled"
            for alloc in state.allocations:
                if alloc.status == "active":
                    self._cancel(alloc, now)
        # shared tasks may no longer wait for parents only this workflow needed
        for t in wf.workflow.tasks:
            self._maybe_ready(t.id, now)

    def finalize(self, now: float):
        """Workflows still running at the horizon fail"""
        for wf_id in sorted(self.workflows):
            if self.workflows[wf_id].live:
                self.fail_workflow(wf_id, now, reason="horizon")
