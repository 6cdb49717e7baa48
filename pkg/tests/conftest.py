# -*- coding: utf-8 -*-
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import pytest

ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(ROOT / "src"))

from utils import deep_merge, load_config, write_yaml  # noqa: E402
from workflow_model import Criticality, Protection, Task, TaskKind, Workflow  # noqa: E402


FIXTURES = ROOT / "data" / "fixtures"
WORKFLOW_FIXTURES = FIXTURES / "workflows"


def make_task(tid: str, kind: str, stage: int, output: float = 1.0, work: float = 8.0,
              criticality: Criticality = Criticality.BLOCKING,
              protection: Protection = Protection.PUBLIC) -> Task:
    return Task(tid, TaskKind(kind, work), stage, output, criticality=criticality, protection=protection)


def make_workflow(wf_id: str, tasks: Sequence[Task], edges: Sequence[Tuple[str, str]],
                  deadline: float = 100.0, p_fail: float = 0.1, arrival: float = 0.0) -> Workflow:
    return Workflow.build(wf_id, list(tasks), list(edges), deadline, p_fail, arrival)


def chain(wf_id: str, kinds: List[str], works: Optional[List[float]] = None, output: float = 1.0,
          deadline: float = 100.0, **labels) -> Workflow:
    """a -> b -> c ... one task per stage, ids `<wf_id>/<i>`"""
    works = works or [8.0] * len(kinds)
    tasks = [make_task(f"{wf_id}/{i}", k, i, output, w, **labels) for i, (k, w) in enumerate(zip(kinds, works))]
    edges = [(tasks[i].id, tasks[i + 1].id) for i in range(len(tasks) - 1)]
    return make_workflow(wf_id, tasks, edges, deadline)


def repo_config(overrides: Optional[Dict] = None) -> Dict:
    config = load_config(str(ROOT / "config.yaml"))
    config = deep_merge(config, {"experiments": {"fixtures_dir": str(FIXTURES)}})
    return deep_merge(config, overrides or {})


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture
def workflow_dir() -> Path:
    return WORKFLOW_FIXTURES


@pytest.fixture
def config_file(tmp_path):
    """Writes a (possibly overridden) copy of the repo config and returns its path"""
    def _write(overrides: Optional[Dict] = None) -> Path:
        path = tmp_path / "config.yaml"
        write_yaml(path, repo_config(overrides))
        return path
    return _write
