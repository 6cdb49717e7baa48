# -*- coding: utf-8 -*-
"""
Trend checks over the full experiment suites (pytest -m slow).

Averages over 10 seeded replications; the monotonicity checks allow one
percentage point of replication noise.
"""
import os

import pytest

from conftest import repo_config
from experiments import (
    ExperimentRunner, experiment_dedup_reduction, experiment_dedup_success,
    experiment_makespan, experiment_protection_price, experiment_scenarios, experiment_task_size,
)


pytestmark = pytest.mark.slow

NOISE = 1.0


@pytest.fixture(scope="module")
def runner():
    return ExperimentRunner(repo_config(), jobs=os.cpu_count() or 1, replications=10, silent=True)


def series(table, name):
    rows = table[table["series"] == name].sort_values("x")
    return dict(zip(rows["x"], rows["mean"]))


def test_dedup_reduction_trend(runner):
    table = experiment_dedup_reduction(runner)
    for mu in (10, 20, 30):
        curve = series(table, f"adapted mu={mu}")
        values = [curve[x] for x in sorted(curve)]
        assert values[0] == pytest.approx(100.0)
        assert curve[5.0] <= 85.0
        assert all(b <= a + NOISE for a, b in zip(values, values[1:]))


def test_dedup_success_hump(runner):
    table = experiment_dedup_success(runner)
    dedup, plain, fcfs = series(table, "dedup"), series(table, "no-dedup"), series(table, "fcfs")
    assert dedup[2.0] - plain[2.0] >= 10.0
    assert abs(dedup[3.5] - plain[3.5]) <= 5.0
    assert dedup[2.0] + NOISE >= fcfs[2.0]
    best = max(dedup, key=dedup.get)
    assert min(dedup) < best < max(dedup)


def test_policy_ordering_over_scenarios(runner):
    table = experiment_scenarios(runner)
    baseline, healing, protection = (series(table, p) for p in ("baseline", "healing", "protection"))
    strict = 0
    for letter in ("B", "C", "D"):
        assert protection[letter] + NOISE >= healing[letter] >= baseline[letter] - NOISE
        strict += protection[letter] > healing[letter]
    assert strict >= 1
    assert abs(protection["A"] - healing["A"]) <= 2.0


def test_protection_price_is_monotone(runner):
    table = experiment_protection_price(runner)
    curve = series(table, "protection")
    values = [curve[k] for k in sorted(curve)]
    assert all(b + NOISE >= a for a, b in zip(values, values[1:]))
    assert curve[5] == max(values)


def test_biomedical_policies_at_moderate_churn(runner):
    table = experiment_scenarios(runner, scenarios=["C"], variant="biomedical")
    baseline, healing, protection = (series(table, p)["C"] for p in ("baseline", "healing", "protection"))
    assert 53.0 <= baseline <= 73.0
    assert healing >= 85.0
    assert protection >= 85.0


def test_healing_makespan_grows_with_churn(runner):
    table = experiment_makespan(runner)
    healing, protection = series(table, "healing"), series(table, "protection")
    assert healing[10.0] >= healing[160.0]
    assert healing[10.0] >= protection[10.0]


def test_larger_tasks_miss_the_deadline_more_often(runner):
    table = experiment_task_size(runner)
    for policy in ("healing", "protection"):
        curve = series(table, policy)
        assert curve[0.5] + NOISE >= curve[3.0]
