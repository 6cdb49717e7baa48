# -*- coding: utf-8 -*-
import pytest

from conftest import repo_config
from experiments import (
    CSV_COLUMNS, EXPERIMENTS, SCENARIO_LADDER, ExperimentRunner, _churn,
    experiment_makespan, experiment_task_size,
)


TINY = {
    "experiments": {
        "makespan": {"n_requests": 3, "mu": 30},
        "task_size": {"n_requests": 3, "mu": 30},
    },
}


@pytest.fixture
def runner():
    return ExperimentRunner(repo_config(TINY), jobs=1, replications=1, silent=True)


@pytest.mark.parametrize("ladder", [
    SCENARIO_LADDER,
    repo_config()["experiments"]["scenarios"]["ladder"],
    repo_config()["experiments"]["scenarios"]["biomedical"]["ladder"],
])
def test_churn_rate_rises_from_stable_to_volatile(ladder):
    rates = [1.0 / _churn(ladder[letter], 30)["churn"]["mean_interarrival"] for letter in "ABCDE"]
    assert all(a < b for a, b in zip(rates, rates[1:]))


def test_new_suites_are_registered():
    assert {"makespan", "task-size"} <= set(EXPERIMENTS)


def test_makespan_suite_shape(runner):
    table = experiment_makespan(runner, availabilities=[20.0, 80.0])
    assert list(table.columns) == CSV_COLUMNS
    assert sorted(set(table["series"])) == ["healing", "protection"]
    assert sorted(set(table["x"])) == [20.0, 80.0]
    assert (table["n"] == 1).all()
    assert (table["mean"] >= 0.0).all()


def test_task_size_suite_shape(runner):
    table = experiment_task_size(runner, scales=[0.5, 2.0], policies=["protection"])
    assert list(table.columns) == CSV_COLUMNS
    assert sorted(set(table["x"])) == [0.5, 2.0]
    assert table["mean"].between(0.0, 100.0).all()
