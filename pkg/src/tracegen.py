# -*- coding: utf-8 -*-
"""
Trace generator - workflow arrival traces for the simulator

A trace is a pool of workflow templates plus an ordered list of requests
(arrival time, template, relative deadline, P_fail). Inter-arrivals are
exponential with mean mu; deadlines are uniform over the given range.
"""
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from utils import stream_rng
from workflow_model import (
    GeneratorSpec, SpecError, Workflow, WorkflowFormatError,
    generate_workflow, load_workflow, save_workflow,
)


TRACE_FILE = "trace.jsonl"
TEMPLATES_DIR = "templates"

# Large workflows for mixed traces: deeper, wider, heavier kinds
LARGE_SPEC = GeneratorSpec(
    stages=(4, 6),
    tasks_per_stage=(3, 5),
    work_range=(120.0, 280.0),
    kind_prefix="L",
)


@dataclass(frozen=True)
class TraceEntry:
    arrival_time: float
    template_id: str
    deadline: float  # relative to arrival
    p_fail: float


@dataclass
class WorkflowTrace:
    entries: List[TraceEntry]
    mu: float
    pool: Dict[str, Workflow] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def last_arrival(self) -> float:
        return self.entries[-1].arrival_time if self.entries else 0.0

    @property
    def max_deadline(self) -> float:
        return max((e.deadline for e in self.entries), default=0.0)

    def check(self):
        previous = 0.0
        for i, entry in enumerate(self.entries):
            if entry.arrival_time < previous:
                raise SpecError(f"trace entry {i}: arrival times must be non-decreasing")
            if entry.template_id not in self.pool:
                raise SpecError(f"trace entry {i}: unknown template {entry.template_id!r}")
            previous = entry.arrival_time

    def instantiate(self) -> List[Workflow]:
        """One workflow per request, ids r0000, r0001, ..."""
        return [
            self.pool[e.template_id].instantiate(f"r{i:04d}", e.arrival_time,
                                                 e.arrival_time + e.deadline, e.p_fail)
            for i, e in enumerate(self.entries)
        ]

    def save(self, trace_dir):
        trace_dir = Path(trace_dir)
        (trace_dir / TEMPLATES_DIR).mkdir(parents=True, exist_ok=True)
        with open(trace_dir / TRACE_FILE, "w", encoding="utf-8") as f:
            f.write(json.dumps({"mu": self.mu, "pool": sorted(self.pool)}, sort_keys=True) + "\n")
            for e in self.entries:
                f.write(json.dumps({"arrival_time": e.arrival_time, "template_id": e.template_id,
                                    "deadline": e.deadline, "p_fail": e.p_fail}, sort_keys=True) + "\n")
        for template_id, template in sorted(self.pool.items()):
            save_workflow(template, trace_dir / TEMPLATES_DIR / f"{template_id}.yaml")

    @classmethod
    def load(cls, trace_dir) -> "WorkflowTrace":
        trace_dir = Path(trace_dir)
        path = trace_dir / TRACE_FILE
        if not path.exists():
            raise FileNotFoundError(f"нет {TRACE_FILE} в {trace_dir}")
        with open(path, "r", encoding="utf-8") as f:
            lines = [line for line in f if line.strip()]
        if not lines:
            raise WorkflowFormatError(f"{path}: empty trace")
        header = json.loads(lines[0])
        pool = {tid: load_workflow(trace_dir / TEMPLATES_DIR / f"{tid}.yaml") for tid in header["pool"]}
        entries = []
        for line in lines[1:]:
            record = json.loads(line)
            entries.append(TraceEntry(float(record["arrival_time"]), str(record["template_id"]),
                                      float(record["deadline"]), float(record["p_fail"])))
        trace = cls(entries, float(header["mu"]), pool)
        trace.check()
        return trace


def _check_trace_args(n_requests: int, mu: float, pool_size: int, deadline_range: Sequence[float], p_fail: float):
    if n_requests < 1:
        raise SpecError("n_requests must be >= 1")
    if not mu > 0:
        raise SpecError("mu must be > 0")
    if pool_size < 1:
        raise SpecError("pool_size must be >= 1")
    lo, hi = deadline_range
    if lo > hi or lo <= 0:
        raise SpecError(f"deadline range [{lo}, {hi}] is empty or non-positive")
    if not 0.0 <= p_fail < 1.0:
        raise SpecError("p_fail must lie in [0, 1)")


def _template_seed(seed: int, group: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, group, index]).generate_state(1)[0])


def make_pool(spec: GeneratorSpec, size: int, seed: int, prefix: str = "tpl", group: int = 0) -> Dict[str, Workflow]:
    pool = {}
    for i in range(size):
        template_id = f"{prefix}-{i:03d}"
        pool[template_id] = generate_workflow(spec, _template_seed(seed, group, i), wf_id=template_id)
    return pool


def generate_trace(n_requests: int, mu: float, pool_size: int, deadline_range: Tuple[float, float],
                   p_fail: float = 0.1, seed: int = 0, spec: Optional[GeneratorSpec] = None,
                   pool: Optional[Dict[str, Workflow]] = None) -> WorkflowTrace:
    """
    Requests drawn uniformly from a template pool.

    Args:
        n_requests: Number of requests
        mu: Mean inter-arrival time [s]
        pool_size: Number of distinct templates (ignored when pool is given)
        deadline_range: Relative deadline bounds [s]
        p_fail: Acceptable failure probability per request
        seed: Master seed
        spec: Generator bounds for the templates
        pool: Ready-made templates (fixtures)
    """
    if pool is not None:
        pool_size = len(pool)
    _check_trace_args(n_requests, mu, pool_size, deadline_range, p_fail)
    pool = pool if pool is not None else make_pool(spec or GeneratorSpec(), pool_size, seed)
    ids = sorted(pool)

    rng = stream_rng(seed, 10)
    arrivals = np.cumsum(rng.exponential(mu, size=n_requests))
    picks = rng.integers(len(ids), size=n_requests)
    deadlines = rng.uniform(deadline_range[0], deadline_range[1], size=n_requests)

    entries = [TraceEntry(float(a), ids[int(k)], float(d), float(p_fail))
               for a, k, d in zip(arrivals, picks, deadlines)]
    return WorkflowTrace(entries, float(mu), dict(pool))


def mixed_size_trace(n_requests: int, mu: float, pool_size: int, small_frac: float = 0.66,
                     small_deadlines: Tuple[float, float] = (40.0, 80.0),
                     large_deadlines: Tuple[float, float] = (80.0, 160.0),
                     p_fail: float = 0.1, seed: int = 0,
                     small_spec: Optional[GeneratorSpec] = None,
                     large_spec: Optional[GeneratorSpec] = None,
                     large_frac: Optional[float] = None) -> WorkflowTrace:
    """Mix of small and large workflows, each class with its own pool and deadline range"""
    large_frac = 1.0 - small_frac if large_frac is None else large_frac
    if min(small_frac, large_frac) < 0 or abs(small_frac + large_frac - 1.0) > 1e-9:
        raise SpecError(f"fractions {small_frac} + {large_frac} must sum to 1")
    _check_trace_args(n_requests, mu, pool_size, small_deadlines, p_fail)
    _check_trace_args(n_requests, mu, pool_size, large_deadlines, p_fail)

    small_spec = small_spec or GeneratorSpec()
    large_spec = large_spec or LARGE_SPEC
    small_kinds, large_kinds = small_spec.all_kinds(), large_spec.all_kinds()
    clash = sorted(n for n in set(small_kinds) & set(large_kinds) if small_kinds[n] != large_kinds[n])
    if clash:
        raise SpecError(f"small and large pools disagree on kinds {', '.join(clash)}")

    if small_frac > 0 and large_frac > 0 and pool_size > 1:
        n_small = min(max(1, int(round(pool_size * small_frac))), pool_size - 1)
    elif small_frac >= large_frac:
        n_small = pool_size
    else:
        n_small = 0
    n_large = pool_size - n_small
    small_pool = make_pool(small_spec, n_small, seed, "small", group=1)
    large_pool = make_pool(large_spec, n_large, seed, "large", group=2)
    small_ids, large_ids = sorted(small_pool), sorted(large_pool)

    rng = stream_rng(seed, 10)
    arrivals = np.cumsum(rng.exponential(mu, size=n_requests))
    entries = []
    for arrival in arrivals:
        if large_ids and (not small_ids or rng.random() >= small_frac):
            template = large_ids[int(rng.integers(len(large_ids)))]
            deadline = rng.uniform(*large_deadlines)
        else:
            template = small_ids[int(rng.integers(len(small_ids)))]
            deadline = rng.uniform(*small_deadlines)
        entries.append(TraceEntry(float(arrival), template, float(deadline), float(p_fail)))
    return WorkflowTrace(entries, float(mu), {**small_pool, **large_pool})


def build_trace(params: Dict, fixtures: Optional[Dict[str, Workflow]] = None) -> WorkflowTrace:
    """
    Trace from a plain parameter dict (config `trace` section or an experiment point).

    kind: standard | mixed | fixture
    """
    kind = params.get("kind", "standard")
    seed = int(params.get("seed", 0))
    p_fail = float(params.get("p_fail", 0.1))
    mu = float(params["mu"])
    n = int(params["n_requests"])
    spec = GeneratorSpec.from_dict(params.get("generator") or {})

    if kind == "standard":
        return generate_trace(n, mu, int(params["pool_size"]), tuple(params["deadline_range"]),
                              p_fail, seed, spec)
    if kind == "mixed":
        large = GeneratorSpec.from_dict({**LARGE_SPEC.to_dict(), **(params.get("large_generator") or {})})
        return mixed_size_trace(n, mu, int(params["pool_size"]), float(params.get("small_frac", 0.66)),
                                tuple(params.get("small_deadlines", (40.0, 80.0))),
                                tuple(params.get("large_deadlines", (80.0, 160.0))),
                                p_fail, seed, spec, large)
    if kind == "fixture":
        if not fixtures:
            raise SpecError("fixture trace needs fixture workflows")
        scale = float(params.get("work_scale", 1.0))
        if scale != 1.0:
            fixtures = {name: wf.scaled(scale) for name, wf in fixtures.items()}
        return generate_trace(n, mu, len(fixtures), tuple(params["deadline_range"]),
                              p_fail, seed, pool=fixtures)
    raise SpecError(f"unknown trace kind {kind!r}")



def load_pool(directory, names: Optional[Sequence[str]] = None) -> Dict[str, Workflow]:
    """Workflow documents of a directory as a template pool keyed by file stem"""
    directory = Path(directory)
    if names is None:
        paths = sorted(directory.glob("*.yaml"))
    else:
        paths = [directory / f"{name}.yaml" for name in names]
    pool = {}
    for path in paths:
        if not path.exists():
            raise FileNotFoundError(f"шаблон не найден: {path}")
        pool[path.stem] = load_workflow(path)
    return pool
