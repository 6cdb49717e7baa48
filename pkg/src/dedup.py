# -*- coding: utf-8 -*-
"""
Dedup - consolidation of concurrent workflows

Workflows collected during one broker window are merged into a single
task graph: tasks that compute the same thing from the same (recursively
similar) inputs run once and feed every workflow that needs them.

Similarity of two tasks:
- same kind name, same output size, same stage
- a perfect matching between their real parents (dummies looked through)
  under the same relation

The running merged set is compared against each arrival in batch order.
"""
from dataclasses import dataclass, field, replace
from typing import Dict, FrozenSet, List, NamedTuple, Optional, Set, Tuple

from workflow_model import Criticality, Task, TaskId, Workflow, insert_dummies


Origin = Tuple[str, TaskId]  # (wf_id, task id) of an original task


class TaskRef(NamedTuple):
    """A task inside its graph; graph exposes task(tid) and real_parents(tid)"""
    graph: object
    task: TaskId


@dataclass
class DedupBatch:
    workflows: List[Workflow]
    window: float = 0.0

    def __post_init__(self):
        if self.window < 0:
            raise ValueError(f"window must be >= 0, got {self.window}")


class _MergedGraph:
    """Surviving tasks plus their real parents (ids of other survivors)"""

    def __init__(self):
        self.tasks: Dict[TaskId, Task] = {}
        self.parents: Dict[TaskId, Tuple[TaskId, ...]] = {}
        self.by_stage: Dict[int, List[TaskId]] = {}
        self.copies: Dict[TaskId, List[Task]] = {}
        self.provenance: Dict[TaskId, Set[Origin]] = {}

    def task(self, tid: TaskId) -> Task:
        return self.tasks[tid]

    def real_parents(self, tid: TaskId) -> Tuple[TaskId, ...]:
        return self.parents[tid]

    def add(self, task: Task, parents: Tuple[TaskId, ...], origin: Origin):
        self.tasks[task.id] = task
        self.parents[task.id] = parents
        self.by_stage.setdefault(task.stage, []).append(task.id)
        self.copies[task.id] = [task]
        self.provenance[task.id] = {origin}

    def absorb(self, survivor: TaskId, task: Task, origin: Origin):
        self.copies[survivor].append(task)
        self.provenance[survivor].add(origin)


class SimilarityChecker:
    """
    Recursive task similarity with memoization.

    `calls` counts top-level comparisons only; recursive parent checks
    are served from the memo once evaluated.
    """

    def __init__(self):
        self.calls = 0
        self._memo: Dict[tuple, bool] = {}

    def __call__(self, k: TaskRef, l: TaskRef) -> bool:
        self.calls += 1
        return self._similar(k, l)

    def _similar(self, k: TaskRef, l: TaskRef) -> bool:
        key = (id(k.graph), k.task, id(l.graph), l.task)
        if key in self._memo:
            return self._memo[key]

        tk = k.graph.task(k.task)
        tl = l.graph.task(l.task)
        result = (tk.kind.name == tl.kind.name
                  and tk.output_size == tl.output_size
                  and tk.stage == tl.stage)
        if result:
            pk = k.graph.real_parents(k.task)
            pl = l.graph.real_parents(l.task)
            result = len(pk) == len(pl) and self._match_parents(k.graph, pk, l.graph, pl)

        self._memo[key] = result
        return result

    def _match_parents(self, gk, pk: Tuple[TaskId, ...], gl, pl: Tuple[TaskId, ...]) -> bool:
        # greedy by kind name, backtracking on ties
        left = sorted(pk, key=lambda t: (gk.task(t).kind.name, t))
        right = sorted(pl, key=lambda t: (gl.task(t).kind.name, t))
        used = [False] * len(right)

        def assign(i: int) -> bool:
            if i == len(left):
                return True
            for j, candidate in enumerate(right):
                if used[j]:
                    continue
                if self._similar(TaskRef(gk, left[i]), TaskRef(gl, candidate)):
                    used[j] = True
                    if assign(i + 1):
                        return True
                    used[j] = False
            return False

        return assign(0)


def check_similarity(k: TaskRef, l: TaskRef) -> bool:
    return SimilarityChecker()(k, l)


@dataclass(frozen=True)
class MergedWorkflowSet:
    """
    Result of one dedup pass.

    workflows: simplified workflows in batch order (shared tasks keep one id)
    provenance: surviving task -> original (wf_id, task id) pairs it stands for
    served: surviving task -> wf_ids whose simplified workflow contains it
    """
    workflows: Tuple[Workflow, ...]
    fork_tasks: FrozenSet[TaskId]
    provenance: Dict[TaskId, FrozenSet[Origin]]
    served: Dict[TaskId, FrozenSet[str]] = field(default_factory=dict)
    comparisons: int = 0
    original_task_count: int = 0

    @property
    def surviving_count(self) -> int:
        return len(self.provenance)

    @property
    def discarded_count(self) -> int:
        return self.original_task_count - self.surviving_count

    @property
    def pct_discarded(self) -> float:
        if not self.original_task_count:
            return 0.0
        return 100.0 * self.discarded_count / self.original_task_count

    def discarded(self) -> Dict[TaskId, TaskId]:
        """Every merged-away task id (`wf_id/task` once instantiated) -> surviving task id"""
        mapping = {}
        for survivor, origins in self.provenance.items():
            for _, tid in origins:
                if tid != survivor:
                    mapping[tid] = survivor
        return dict(sorted(mapping.items()))

    def to_doc(self) -> Dict:
        return {
            "surviving": self.surviving_count,
            "discarded": self.discarded_count,
            "pct_discarded": round(self.pct_discarded, 4),
            "comparisons": self.comparisons,
            "fork_tasks": sorted(self.fork_tasks),
            "mapping": self.discarded(),
        }


def _merged_task(survivor: Task, copies: List[Task], n_served: int) -> Task:
    protection = max((c.protection for c in copies), key=lambda p: p.strictness)
    if n_served > 1:
        if all(c.criticality == Criticality.NONCRITICAL for c in copies):
            criticality = Criticality.NONCRITICAL
        else:
            criticality = Criticality.FORK
    else:
        criticality = max((c.criticality for c in copies), key=lambda c: c.rank)
    return replace(survivor, protection=protection, criticality=criticality, input_sizes=())


def _merge_arrival(merged: _MergedGraph, workflow: Workflow, checker: SimilarityChecker) -> Dict[TaskId, TaskId]:
    """Fold one workflow into the merged graph; returns original -> survivor ids"""
    order = {
        stage: sorted(ids, key=lambda t: (-len(merged.provenance[t]), merged.tasks[t].kind.name, t))
        for stage, ids in merged.by_stage.items()
    }
    claimed: Set[TaskId] = set()
    image: Dict[TaskId, TaskId] = {}

    for task in sorted(workflow.real_tasks(), key=lambda t: (t.stage, t.id)):
        origin = (workflow.wf_id, task.id)
        parents = tuple(image[p] for p in workflow.real_parents(task.id))
        wanted = sorted(parents)
        # survivors already fed by this arrival's parent images come first
        candidates = sorted(
            (c for c in order.get(task.stage, []) if c not in claimed),
            key=lambda c: sorted(merged.parents[c]) != wanted,
        )
        match: Optional[TaskId] = None
        for candidate in candidates:
            if checker(TaskRef(merged, candidate), TaskRef(workflow, task.id)):
                match = candidate
                break
        if match is None:
            merged.add(task, parents, origin)
            image[task.id] = task.id
        else:
            merged.absorb(match, task, origin)
            claimed.add(match)
            image[task.id] = match
    return image


def dedup(batch: DedupBatch) -> MergedWorkflowSet:
    """
    Merge duplicate sub-graphs across the workflows of one batch.

    Args:
        batch: Validated workflows (task ids unique across the batch)

    Returns:
        MergedWorkflowSet with simplified workflows, fork tasks and provenance
    """
    merged = _MergedGraph()
    checker = SimilarityChecker()
    images: List[Dict[TaskId, TaskId]] = []
    for workflow in batch.workflows:
        images.append(_merge_arrival(merged, workflow, checker))

    # each simplified workflow is its arrival's real graph relabelled onto survivors
    served: Dict[TaskId, Set[str]] = {tid: set() for tid in merged.tasks}
    for workflow, image in zip(batch.workflows, images):
        for tid in image.values():
            served[tid].add(workflow.wf_id)

    final: Dict[TaskId, Task] = {
        tid: _merged_task(task, merged.copies[tid], len(served[tid]))
        for tid, task in merged.tasks.items()
    }

    simplified = []
    for workflow, image in zip(batch.workflows, images):
        ids = sorted(image.values(), key=lambda t: (final[t].stage, t))
        edges = [(image[p], image[t.id]) for t in workflow.real_tasks() for p in workflow.real_parents(t.id)]
        rebuilt = Workflow.build(workflow.wf_id, [final[t] for t in ids], edges,
                                 workflow.deadline, workflow.p_fail, workflow.arrival_time)
        simplified.append(insert_dummies(rebuilt))

    forks = frozenset(t for t, wfs in served.items() if len(wfs) > 1)
    return MergedWorkflowSet(
        workflows=tuple(simplified),
        fork_tasks=forks,
        provenance={t: frozenset(o) for t, o in merged.provenance.items()},
        served={t: frozenset(w) for t, w in served.items()},
        comparisons=checker.calls,
        original_task_count=sum(len(w.real_tasks()) for w in batch.workflows),
    )


def pair_comparison_count(batch: DedupBatch) -> int:
    """Number of top-level similarity checks one dedup pass performs"""
    return dedup(batch).comparisons
