# -*- coding: utf-8 -*-
"""
Метрики прогона

Two independent paths to the same RunMetrics:
- metrics_from_broker: online counters and workflow states of the broker
- metrics_from_log: recomputed from the raw event log records
"""
import json
from dataclasses import asdict, dataclass, field
from typing import Dict, Iterable, List, Union

import numpy as np

from scheduler import AUTHORIZED_TRUST, Broker, Trust
from workflow_model import Criticality, Protection


@dataclass
class RunMetrics:
    workflows: int = 0
    on_time: int = 0
    late: int = 0
    failed: int = 0
    original_tasks: int = 0
    executed_tasks: int = 0
    allocations: int = 0
    replica_count: int = 0
    heals: int = 0
    comparisons: int = 0
    makespans: Dict[str, float] = field(default_factory=dict)

    @property
    def pct_tasks_executed(self) -> float:
        """Post-dedup tasks handed to the scheduler over pre-dedup tasks (replicas excluded)"""
        if not self.original_tasks:
            return 0.0
        return 100.0 * self.executed_tasks / self.original_tasks

    @property
    def pct_success(self) -> float:
        if not self.workflows:
            return 0.0
        return 100.0 * self.on_time / self.workflows

    @property
    def mean_makespan(self) -> float:
        if not self.makespans:
            return 0.0
        return float(np.mean(list(self.makespans.values())))

    def to_dict(self) -> Dict:
        data = asdict(self)
        data["pct_tasks_executed"] = self.pct_tasks_executed
        data["pct_success"] = self.pct_success
        data["mean_makespan"] = self.mean_makespan
        return data


def metrics_from_broker(broker: Broker, trace_size: int) -> RunMetrics:
    counters = broker.counters
    metrics = RunMetrics(
        workflows=trace_size,
        original_tasks=counters["original_tasks"],
        executed_tasks=counters["admitted_tasks"],
        allocations=counters["allocations"],
        replica_count=counters["replicas"],
        heals=counters["heals"],
        comparisons=counters["comparisons"],
    )
    for wf_id, state in sorted(broker.workflows.items()):
        if state.status == "on_time":
            metrics.on_time += 1
        elif state.status == "late":
            metrics.late += 1
        elif state.status == "failed":
            metrics.failed += 1
        if state.status in ("on_time", "late"):
            metrics.makespans[wf_id] = state.finish - state.workflow.arrival_time
    return metrics


Record = Union[Dict, str]


def _records(log: Iterable[Record]) -> List[Dict]:
    return [json.loads(r) if isinstance(r, str) else r for r in log]


def metrics_from_log(log: Iterable[Record]) -> RunMetrics:
    """Recompute run metrics from event records (dicts or JSON lines)"""
    metrics = RunMetrics()
    for record in _records(log):
        event = record["event"]
        if event == "arrival":
            metrics.workflows += 1
        elif event == "dedup":
            metrics.original_tasks += record["original"]
            metrics.executed_tasks += record["surviving"]
            metrics.comparisons += record["comparisons"]
        elif event == "allocate":
            metrics.allocations += 1
            metrics.replica_count += int(record["replica"])
        elif event == "heal":
            metrics.heals += 1
        elif event == "workflow":
            status = record["status"]
            if status == "on_time":
                metrics.on_time += 1
            elif status == "late":
                metrics.late += 1
            else:
                metrics.failed += 1
            if "makespan" in record:
                metrics.makespans[record["wf"]] = record["makespan"]
    metrics.makespans = dict(sorted(metrics.makespans.items()))
    return metrics


def audit_log(log: Iterable[Record]) -> List[str]:
    """
    Safety checks over a full event log.

    - no allocation pairs a task with an SP its protection class forbids
    - noncritical tasks are never replicated
    - every allocation ends exactly once (complete, fail or cancel)
    """
    problems = []
    open_allocs: Dict[int, str] = {}
    for record in _records(log):
        event = record["event"]
        if event == "allocate":
            protection = Protection(record["protection"])
            trust = Trust(record["trust"])
            if trust not in AUTHORIZED_TRUST[protection]:
                problems.append(f"t={record['t']}: {protection.value} task {record['task']} on {trust.value} SP {record['sp']}")
            if record["replica"] and record["criticality"] == Criticality.NONCRITICAL.value:
                problems.append(f"t={record['t']}: replica of noncritical task {record['task']}")
            open_allocs[record["alloc"]] = record["task"]
        elif event in ("complete", "fail", "cancel"):
            if open_allocs.pop(record["alloc"], None) is None:
                problems.append(f"t={record['t']}: allocation {record['alloc']} ended twice or never started")
    return problems
