# -*- coding: utf-8 -*-
"""
Workflow Model - staged workflow DAGs for the device-cloud broker

A workflow is a DAG of elementary tasks arranged in stages: stage-0 tasks
collect sensor data, later stages compute on the outputs of the previous
stage. Edges may only join consecutive stages; longer edges are bridged
with zero-cost dummy tasks.

Contents:
- Task / TaskKind / Workflow value types (immutable)
- validate() - report-based invariant check
- insert_dummies() - restores the consecutive-stage invariant
- GeneratorSpec + generate_workflow() - seeded synthetic workflows
- YAML workflow documents (load_workflow / save_workflow)
"""
import zlib
from dataclasses import dataclass, field, replace
from enum import Enum
from functools import cached_property, lru_cache
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import networkx as nx
import numpy as np

from utils import read_yaml, write_yaml


TaskId = str

DUMMY_KIND_NAME = "dummy"


class CycleError(ValueError):
    """The dependency graph is not a DAG"""


class SpecError(ValueError):
    """Generator / trace parameters with empty or inconsistent ranges"""


class WorkflowFormatError(ValueError):
    """Malformed workflow document"""


class Criticality(str, Enum):
    NONCRITICAL = "noncritical"
    BLOCKING = "blocking"
    FORK = "fork"

    @property
    def rank(self) -> int:
        return _CRITICALITY_RANK[self]


class Protection(str, Enum):
    PUBLIC = "public"
    PROTECTED = "protected"
    PRIVATE = "private"

    @property
    def strictness(self) -> int:
        return _STRICTNESS[self]


_CRITICALITY_RANK = {Criticality.NONCRITICAL: 0, Criticality.BLOCKING: 1, Criticality.FORK: 2}
_STRICTNESS = {Protection.PUBLIC: 0, Protection.PROTECTED: 1, Protection.PRIVATE: 2}


@dataclass(frozen=True)
class TaskKind:
    """Task type label with its mean work in abstract work units"""
    name: str
    mean_work: float

    def __post_init__(self):
        if self.name != DUMMY_KIND_NAME and not self.mean_work > 0:
            raise SpecError(f"kind {self.name!r}: mean_work must be > 0, got {self.mean_work}")


DUMMY_KIND = TaskKind(DUMMY_KIND_NAME, 0.0)


@dataclass(frozen=True)
class Task:
    id: TaskId
    kind: TaskKind
    stage: int
    output_size: float
    input_sizes: Tuple[float, ...] = ()
    criticality: Criticality = Criticality.BLOCKING
    protection: Protection = Protection.PUBLIC
    is_dummy: bool = False

    @property
    def work(self) -> float:
        return 0.0 if self.is_dummy else self.kind.mean_work


@dataclass(frozen=True)
class Workflow:
    """
    Immutable workflow DAG.

    tasks keep their declaration order; edges are (parent, child) pairs.
    deadline is absolute (seconds of simulated time).
    """
    wf_id: str
    tasks: Tuple[Task, ...]
    edges: Tuple[Tuple[TaskId, TaskId], ...]
    deadline: float
    p_fail: float = 0.1
    arrival_time: float = 0.0

    @classmethod
    def build(cls, wf_id: str, tasks: List[Task], edges: List[Tuple[TaskId, TaskId]],
              deadline: float, p_fail: float = 0.1, arrival_time: float = 0.0) -> "Workflow":
        """Construct a workflow, deriving every task's input_sizes from its parents"""
        outputs = {t.id: t.output_size for t in tasks}
        inputs: Dict[TaskId, List[float]] = {t.id: [] for t in tasks}
        for parent, child in edges:
            if child in inputs and parent in outputs:
                inputs[child].append(outputs[parent])
        sized = tuple(replace(t, input_sizes=tuple(inputs[t.id])) for t in tasks)
        return cls(wf_id, sized, tuple((p, c) for p, c in edges), float(deadline),
                   float(p_fail), float(arrival_time))

    # --- lookups --------------------------------------------------------

    @cached_property
    def task_map(self) -> Dict[TaskId, Task]:
        return {t.id: t for t in self.tasks}

    @cached_property
    def parent_map(self) -> Dict[TaskId, Tuple[TaskId, ...]]:
        parents: Dict[TaskId, List[TaskId]] = {t.id: [] for t in self.tasks}
        for p, c in self.edges:
            parents.setdefault(c, []).append(p)
        return {k: tuple(v) for k, v in parents.items()}

    @cached_property
    def child_map(self) -> Dict[TaskId, Tuple[TaskId, ...]]:
        children: Dict[TaskId, List[TaskId]] = {t.id: [] for t in self.tasks}
        for p, c in self.edges:
            children.setdefault(p, []).append(c)
        return {k: tuple(v) for k, v in children.items()}

    @cached_property
    def graph(self) -> nx.DiGraph:
        g = nx.DiGraph()
        g.add_nodes_from(t.id for t in self.tasks)
        g.add_edges_from(self.edges)
        return g

    def task(self, tid: TaskId) -> Task:
        return self.task_map[tid]

    def parents(self, tid: TaskId) -> Tuple[TaskId, ...]:
        return self.parent_map.get(tid, ())

    def children(self, tid: TaskId) -> Tuple[TaskId, ...]:
        return self.child_map.get(tid, ())

    def topological_order(self) -> List[TaskId]:
        """Deterministic topological order (ties by declaration order)"""
        position = {t.id: i for i, t in enumerate(self.tasks)}
        try:
            return list(nx.lexicographical_topological_sort(self.graph, key=lambda n: position.get(n, -1)))
        except nx.NetworkXUnfeasible as e:
            raise CycleError(f"workflow {self.wf_id}: dependency cycle") from e

    def real_tasks(self) -> List[Task]:
        return [t for t in self.tasks if not t.is_dummy]

    def total_work(self) -> float:
        return sum(t.work for t in self.tasks)

    def scaled(self, factor: float) -> "Workflow":
        """Same graph with every kind's work and every data size multiplied by factor"""
        if not factor > 0:
            raise SpecError(f"scale factor must be > 0, got {factor}")
        tasks = []
        for t in self.tasks:
            kind = t.kind if t.is_dummy else TaskKind(t.kind.name, t.kind.mean_work * factor)
            tasks.append(replace(t, kind=kind, output_size=t.output_size * factor,
                                 input_sizes=tuple(s * factor for s in t.input_sizes)))
        return replace(self, tasks=tuple(tasks))

    @property
    def n_stages(self) -> int:
        return 1 + max((t.stage for t in self.tasks), default=-1)

    def real_parents(self, tid: TaskId) -> Tuple[TaskId, ...]:
        """Parents with dummy chains looked through"""
        found: List[TaskId] = []
        for p in self.parents(tid):
            if self.task_map[p].is_dummy:
                found.extend(self.real_parents(p))
            else:
                found.append(p)
        return tuple(found)

    def instantiate(self, wf_id: str, arrival_time: float, deadline: float,
                    p_fail: Optional[float] = None) -> "Workflow":
        """
        Copy of a template with run-unique task ids (`wf_id/task`).

        Args:
            wf_id: Identifier of the request
            arrival_time: Arrival time [s]
            deadline: Absolute deadline [s]
            p_fail: Acceptable failure probability (None = keep template value)
        """
        rename = {t.id: f"{wf_id}/{t.id}" for t in self.tasks}
        tasks = tuple(replace(t, id=rename[t.id]) for t in self.tasks)
        edges = tuple((rename[p], rename[c]) for p, c in self.edges)
        return Workflow(wf_id, tasks, edges, float(deadline),
                        self.p_fail if p_fail is None else float(p_fail), float(arrival_time))


# ============================================================================
# VALIDATION
# ============================================================================

@dataclass(frozen=True)
class Violation:
    code: str
    detail: str
    tasks: Tuple[TaskId, ...] = ()


@dataclass(frozen=True)
class ValidationReport:
    wf_id: str
    violations: Tuple[Violation, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def codes(self) -> List[str]:
        return sorted({v.code for v in self.violations})

    def __bool__(self) -> bool:
        return bool(self.violations)


def validate(workflow: Workflow) -> ValidationReport:
    """
    Check every workflow invariant and report all violations.

    Empty report iff the workflow is a valid staged DAG.
    """
    found: List[Violation] = []
    ids = [t.id for t in workflow.tasks]
    known = set(ids)

    duplicates = sorted({i for i in ids if ids.count(i) > 1})
    if duplicates:
        found.append(Violation("duplicate-id", "task ids are not unique", tuple(duplicates)))

    if not 0.0 <= workflow.p_fail < 1.0:
        found.append(Violation("p-fail", f"p_fail={workflow.p_fail} outside [0, 1)"))

    for p, c in workflow.edges:
        if p not in known or c not in known:
            found.append(Violation("unknown-task", f"edge {p}->{c} references an unknown task", (p, c)))

    graph = nx.DiGraph()
    graph.add_nodes_from(known)
    graph.add_edges_from((p, c) for p, c in workflow.edges if p in known and c in known)
    for component in nx.strongly_connected_components(graph):
        members = sorted(component)
        if len(members) > 1 or graph.has_edge(members[0], members[0]):
            found.append(Violation("cycle", f"cycle through {', '.join(members)}", tuple(members)))

    tasks = workflow.task_map
    for p, c in workflow.edges:
        if p in tasks and c in tasks and tasks[c].stage != tasks[p].stage + 1:
            found.append(Violation(
                "stage-gap",
                f"edge {p}(stage {tasks[p].stage}) -> {c}(stage {tasks[c].stage}) does not join consecutive stages",
                (p, c)))

    for t in workflow.tasks:
        if t.stage < 0:
            found.append(Violation("negative-stage", f"{t.id} has stage {t.stage}", (t.id,)))
        parents = [p for p in workflow.parents(t.id) if p in known]
        if t.stage > 0 and not parents:
            found.append(Violation("orphan", f"{t.id} at stage {t.stage} has no parent", (t.id,)))
        if t.is_dummy:
            if len(parents) != 1:
                found.append(Violation("dummy", f"dummy {t.id} needs exactly one parent", (t.id,)))
            elif t.output_size != tasks[parents[0]].output_size:
                found.append(Violation("dummy", f"dummy {t.id} output differs from its input", (t.id,)))

    return ValidationReport(workflow.wf_id, tuple(found))


# ============================================================================
# DUMMY TASKS
# ============================================================================

def dummy_id(parent: TaskId, child: TaskId, index: int) -> TaskId:
    return f"{parent}>{child}~{index}"


def insert_dummies(workflow: Workflow) -> Workflow:
    """
    Bridge every stage-skipping edge with zero-cost dummy tasks.

    An edge skipping k stages gets k-1 dummies. Tasks placed on a stage not
    above one of their parents are pushed down first. A workflow that already
    satisfies the invariant is returned as is.
    """
    order = workflow.topological_order()
    stage: Dict[TaskId, int] = {}
    for tid in order:
        own = workflow.task(tid).stage
        parent_stages = [stage[p] for p in workflow.parents(tid)]
        stage[tid] = max([own] + [s + 1 for s in parent_stages])

    moved = any(stage[t.id] != t.stage for t in workflow.tasks)
    gaps = [(p, c) for p, c in workflow.edges if stage[c] - stage[p] > 1]
    if not moved and not gaps:
        return workflow

    tasks: List[Task] = [replace(t, stage=stage[t.id]) for t in workflow.tasks]
    edges: List[Tuple[TaskId, TaskId]] = []
    for p, c in workflow.edges:
        span = stage[c] - stage[p]
        if span <= 1:
            edges.append((p, c))
            continue
        size = workflow.task(p).output_size
        previous = p
        for i in range(1, span):
            d = dummy_id(p, c, i)
            tasks.append(Task(d, DUMMY_KIND, stage[p] + i, size, (size,),
                              Criticality.NONCRITICAL, Protection.PUBLIC, True))
            edges.append((previous, d))
            previous = d
        edges.append((previous, c))

    return Workflow.build(workflow.wf_id, tasks, edges, workflow.deadline,
                          workflow.p_fail, workflow.arrival_time)


# ============================================================================
# GENERATOR
# ============================================================================

@dataclass(frozen=True)
class GeneratorSpec:
    """
    Bounds for synthetic workflows.

    Kind pools are a deterministic function of (prefix, pool_seed, ranges),
    so workflows drawn with different seeds share kinds and can be deduplicated.
    Computation tasks draw their kind from `kind_affinity` candidates tied to
    the kinds of their parents (ECG data feeds ECG analysis, not SONAR ranging).
    """
    stages: Tuple[int, int] = (3, 4)
    tasks_per_stage: Tuple[int, int] = (2, 4)
    source_pool_size: int = 6
    kind_pool_size: int = 24
    source_work_range: Tuple[float, float] = (5.0, 15.0)
    work_range: Tuple[float, float] = (60.0, 140.0)
    output_size_range: Tuple[float, float] = (1.0, 4.0)
    max_parents: int = 2
    kind_affinity: int = 2
    skip_edge_prob: float = 0.0
    noncritical_fraction: float = 0.1
    protection_mix: Tuple[float, float, float] = (0.0, 0.0, 1.0)  # private, protected, public
    deadline: float = 60.0
    p_fail: float = 0.1
    pool_seed: int = 0
    source_prefix: str = "src"
    kind_prefix: str = "k"

    @classmethod
    def from_dict(cls, doc: Dict) -> "GeneratorSpec":
        unknown = sorted(set(doc) - set(cls.__dataclass_fields__))
        if unknown:
            raise SpecError(f"generator: unknown keys {', '.join(unknown)}")
        values = {k: tuple(v) if isinstance(v, list) else v for k, v in doc.items()}
        spec = cls(**values)
        spec.check()
        return spec

    def to_dict(self) -> Dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in self.__dict__.items()}

    def check(self):
        for name in ("stages", "tasks_per_stage", "source_work_range", "work_range", "output_size_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise SpecError(f"{name}: empty range [{lo}, {hi}]")
        if self.stages[0] < 1 or self.tasks_per_stage[0] < 1:
            raise SpecError("stages and tasks_per_stage need a lower bound >= 1")
        if self.source_pool_size < 1 or self.kind_pool_size < 1:
            raise SpecError("kind pools must not be empty")
        if self.source_work_range[0] <= 0 or self.work_range[0] <= 0:
            raise SpecError("work ranges must be positive")
        if self.output_size_range[0] < 0:
            raise SpecError("output sizes must be non-negative")
        if self.max_parents < 1 or self.kind_affinity < 1:
            raise SpecError("max_parents and kind_affinity must be >= 1")
        if len(self.protection_mix) != 3 or min(self.protection_mix) < 0 \
                or abs(sum(self.protection_mix) - 1.0) > 1e-9:
            raise SpecError(f"protection_mix {self.protection_mix} must be 3 fractions summing to 1")
        for name in ("skip_edge_prob", "noncritical_fraction"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise SpecError(f"{name} must lie in [0, 1]")
        if not 0.0 <= self.p_fail < 1.0:
            raise SpecError("p_fail must lie in [0, 1)")

    def source_pool(self) -> Tuple[Tuple[TaskKind, float], ...]:
        return _kind_pool(self.source_prefix, self.source_pool_size, self.source_work_range,
                          self.output_size_range, self.pool_seed, 0)

    def kind_pool(self) -> Tuple[Tuple[TaskKind, float], ...]:
        return _kind_pool(self.kind_prefix, self.kind_pool_size, self.work_range,
                          self.output_size_range, self.pool_seed, 1)

    def all_kinds(self) -> Dict[str, TaskKind]:
        return {k.name: k for k, _ in self.source_pool() + self.kind_pool()}


@lru_cache(maxsize=None)
def _kind_pool(prefix: str, size: int, work_range: Tuple[float, float],
               output_range: Tuple[float, float], pool_seed: int, stream: int) -> Tuple[Tuple[TaskKind, float], ...]:
    rng = np.random.default_rng([pool_seed, stream, zlib.crc32(prefix.encode("utf-8"))])
    pool = []
    for i in range(size):
        work = round(float(rng.uniform(*work_range)), 3)
        output = round(float(rng.uniform(*output_range)), 2)
        pool.append((TaskKind(f"{prefix}-{i:02d}", work), output))
    return tuple(pool)


@lru_cache(maxsize=None)
def _affine_kinds(pool_seed: int, pool_size: int, affinity: int, key: str) -> Tuple[int, ...]:
    rng = np.random.default_rng([pool_seed, 2, zlib.crc32(key.encode("utf-8"))])
    picks = rng.choice(pool_size, size=min(affinity, pool_size), replace=False)
    return tuple(sorted(int(i) for i in picks))


_PROTECTION_ORDER = (Protection.PRIVATE, Protection.PROTECTED, Protection.PUBLIC)


def generate_workflow(spec: GeneratorSpec, rng_seed: int, wf_id: Optional[str] = None) -> Workflow:
    """
    Draw one synthetic workflow.

    Args:
        spec: Generator bounds
        rng_seed: Seed; same (spec, seed) -> identical workflow
        wf_id: Identifier (None = "wf-<seed>")

    Returns:
        Valid staged workflow (dummies inserted when skip edges were drawn)
    """
    spec.check()
    rng = np.random.default_rng(rng_seed)
    sources = spec.source_pool()
    kinds = spec.kind_pool()

    n_stages = int(rng.integers(spec.stages[0], spec.stages[1] + 1))
    tasks: List[Task] = []
    edges: List[Tuple[TaskId, TaskId]] = []
    by_stage: List[List[Task]] = []

    def draw_labels() -> Tuple[Criticality, Protection]:
        critical = Criticality.NONCRITICAL if rng.random() < spec.noncritical_fraction else Criticality.BLOCKING
        protection = _PROTECTION_ORDER[int(rng.choice(3, p=list(spec.protection_mix)))]
        return critical, protection

    for s in range(n_stages):
        width = int(rng.integers(spec.tasks_per_stage[0], spec.tasks_per_stage[1] + 1))
        layer: List[Task] = []
        if s == 0:
            replace_draw = width > len(sources)
            picks = rng.choice(len(sources), size=width, replace=replace_draw)
            for i in picks:
                kind, output = sources[int(i)]
                critical, protection = draw_labels()
                layer.append(Task(f"t{len(tasks) + len(layer)}", kind, 0, output,
                                  criticality=critical, protection=protection))
        else:
            prev = by_stage[s - 1]
            for _ in range(width):
                n_par = int(rng.integers(1, min(spec.max_parents, len(prev)) + 1))
                parent_idx = sorted(int(i) for i in rng.choice(len(prev), size=n_par, replace=False))
                parents = [prev[i] for i in parent_idx]
                key = "|".join(sorted(p.kind.name for p in parents))
                candidates = _affine_kinds(spec.pool_seed, len(kinds), spec.kind_affinity, key)
                kind, output = kinds[candidates[int(rng.integers(len(candidates)))]]
                critical, protection = draw_labels()
                task = Task(f"t{len(tasks) + len(layer)}", kind, s, output,
                            criticality=critical, protection=protection)
                layer.append(task)
                edges.extend((p.id, task.id) for p in parents)
                if s >= 2 and rng.random() < spec.skip_edge_prob:
                    far = by_stage[s - 2][int(rng.integers(len(by_stage[s - 2])))]
                    edges.append((far.id, task.id))
        tasks.extend(layer)
        by_stage.append(layer)

    workflow = Workflow.build(wf_id or f"wf-{rng_seed}", tasks, edges, spec.deadline, spec.p_fail)
    return insert_dummies(workflow)


# ============================================================================
# WORKFLOW DOCUMENTS
# ============================================================================

_DOC_KEYS = {"wf_id", "deadline", "p_fail", "tasks", "edges", "arrival_time", "kinds"}
_DOC_REQUIRED = {"wf_id", "deadline", "p_fail", "tasks", "edges"}
_TASK_KEYS = {"id", "kind", "stage", "output_size", "criticality", "protection", "is_dummy"}
_TASK_REQUIRED = _TASK_KEYS - {"is_dummy"}
_EDGE_KEYS = {"parent", "child"}


def _check_keys(entry: Dict, allowed: set, required: set, where: str):
    if not isinstance(entry, dict):
        raise WorkflowFormatError(f"{where}: expected a mapping")
    unknown = sorted(set(entry) - allowed)
    if unknown:
        raise WorkflowFormatError(f"{where}: unknown fields {', '.join(unknown)}")
    missing = sorted(required - set(entry))
    if missing:
        raise WorkflowFormatError(f"{where}: missing fields {', '.join(missing)}")


def workflow_to_dict(workflow: Workflow) -> Dict:
    kinds = {}
    for t in workflow.tasks:
        if not t.is_dummy:
            kinds[t.kind.name] = {"mean_work": t.kind.mean_work}
    tasks = []
    for t in workflow.tasks:
        entry = {
            "id": t.id,
            "kind": t.kind.name,
            "stage": t.stage,
            "output_size": t.output_size,
            "criticality": t.criticality.value,
            "protection": t.protection.value,
        }
        if t.is_dummy:
            entry["is_dummy"] = True
        tasks.append(entry)
    return {
        "wf_id": workflow.wf_id,
        "deadline": workflow.deadline,
        "p_fail": workflow.p_fail,
        "arrival_time": workflow.arrival_time,
        "kinds": kinds,
        "tasks": tasks,
        "edges": [{"parent": p, "child": c} for p, c in workflow.edges],
    }


def workflow_from_dict(doc: Dict) -> Workflow:
    _check_keys(doc, _DOC_KEYS, _DOC_REQUIRED, "workflow")
    wf_id = str(doc["wf_id"])
    catalog = doc.get("kinds") or {}
    kinds: Dict[str, TaskKind] = {}
    for name, entry in catalog.items():
        _check_keys(entry, {"mean_work"}, {"mean_work"}, f"{wf_id}: kinds.{name}")
        try:
            kinds[name] = TaskKind(str(name), float(entry["mean_work"]))
        except SpecError as e:
            raise WorkflowFormatError(f"{wf_id}: {e}") from e

    tasks: List[Task] = []
    for i, entry in enumerate(doc["tasks"] or []):
        _check_keys(entry, _TASK_KEYS, _TASK_REQUIRED, f"{wf_id}: tasks[{i}]")
        is_dummy = bool(entry.get("is_dummy", False))
        name = str(entry["kind"])
        if is_dummy:
            kind = DUMMY_KIND
        elif name in kinds:
            kind = kinds[name]
        else:
            raise WorkflowFormatError(f"{wf_id}: kind {name!r} missing from the kinds catalog")
        try:
            criticality = Criticality(entry["criticality"])
            protection = Protection(entry["protection"])
        except ValueError as e:
            raise WorkflowFormatError(f"{wf_id}: tasks[{i}]: {e}") from e
        tasks.append(Task(str(entry["id"]), kind, int(entry["stage"]), float(entry["output_size"]),
                          criticality=criticality, protection=protection, is_dummy=is_dummy))

    edges = []
    for i, entry in enumerate(doc["edges"] or []):
        _check_keys(entry, _EDGE_KEYS, _EDGE_KEYS, f"{wf_id}: edges[{i}]")
        edges.append((str(entry["parent"]), str(entry["child"])))

    return Workflow.build(wf_id, tasks, edges, float(doc["deadline"]), float(doc["p_fail"]),
                          float(doc.get("arrival_time", 0.0)))


def load_workflow(path) -> Workflow:
    doc = read_yaml(Path(path))
    if doc is None:
        raise WorkflowFormatError(f"{path}: empty document")
    return workflow_from_dict(doc)


def save_workflow(workflow: Workflow, path):
    write_yaml(Path(path), workflow_to_dict(workflow))
