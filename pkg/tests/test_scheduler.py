# -*- coding: utf-8 -*-
import math
import random

import networkx as nx
import pytest

from conftest import FIXTURES, chain, make_task, make_workflow
from dedup import DedupBatch, dedup
from mdc_sim import load_testbed
from scheduler import (
    AUTHORIZED_TRUST, Allocation, AvailabilityModel, Broker, BrokerConfig, Candidate, DomainError,
    MdcStats, NoEligibleSP, Policy, ReadyTask, SPProfile, Trust, compute_levels, compute_slack,
    earliest_finish, is_authorized, plan_replicas, prioritize, required_success_probability,
    task_success_probability,
)
from workflow_model import Criticality, GeneratorSpec, Protection, generate_workflow


# =============================================================================
# Levels and slack
# =============================================================================


def test_levels_of_a_chain():
    wf = chain("w", ["a", "b", "c"], works=[8.0, 16.0, 24.0])
    env = MdcStats([SPProfile("sp", 8.0)], link_rate=10.0, ccr_threshold=1.0)
    levels = compute_levels(wf, env)
    assert levels == pytest.approx({"w/0": 6.0, "w/1": 5.0, "w/2": 3.0})


def test_levels_count_communication_above_ccr_threshold():
    wf = chain("w", ["a", "b", "c"], works=[8.0, 16.0, 24.0])
    env = MdcStats([SPProfile("sp", 8.0)], link_rate=10.0, ccr_threshold=0.0)
    levels = compute_levels(wf, env)
    assert levels["w/1"] == pytest.approx(2.0 + 0.1 + 3.0)
    assert levels["w/0"] == pytest.approx(1.0 + 0.1 + 5.1)


def test_levels_without_sps_use_default_speed():
    wf = chain("w", ["a"], works=[16.0])
    assert compute_levels(wf, MdcStats([], default_speed=4.0)) == {"w/0": 4.0}


def test_profiled_time_overrides_speed():
    sp = SPProfile("sp", 8.0, profiled={"a": 5.0})
    assert sp.exec_time(make_task("t", "a", 0, work=80.0)) == 5.0
    assert sp.exec_time(make_task("t", "b", 0, work=80.0)) == 10.0


def path_oracle(wf, env):
    """Longest path by enumerating every path to an exit task"""
    alpha = {t.id: env.mean_exec(t) for t in wf.tasks}
    beta = {t.id: env.comm(t) for t in wf.tasks}
    comp = sum(alpha.values())
    comm = sum(beta[p] for p, _ in wf.edges)
    with_comm = comp > 0 and comm / comp > env.ccr_threshold
    exits = [t.id for t in wf.tasks if not wf.children(t.id)]
    best = {}
    for tid in wf.task_map:
        paths = [[tid]] if tid in exits else []
        for exit_id in exits:
            if exit_id != tid:
                paths += list(nx.all_simple_paths(wf.graph, tid, exit_id))
        best[tid] = max(
            sum(alpha[n] for n in path) + (sum(beta[n] for n in path[:-1]) if with_comm else 0.0)
            for path in paths
        )
    return best


def test_levels_match_path_enumeration():
    spec = GeneratorSpec(stages=(2, 4), tasks_per_stage=(1, 3), skip_edge_prob=0.3,
                         output_size_range=(0.0, 40.0))
    rng = random.Random(17)
    checked = 0
    for seed in range(1000):
        wf = generate_workflow(spec, seed)
        if len(wf.tasks) > 10:
            continue
        sps = [SPProfile(f"sp{i}", rng.uniform(1.0, 40.0)) for i in range(rng.randint(1, 4))]
        env = MdcStats(sps, link_rate=rng.choice([1.0, 10.0]), ccr_threshold=rng.choice([0.0, 1.0]))
        levels = compute_levels(wf, env)
        oracle = path_oracle(wf, env)
        assert levels == pytest.approx(oracle, rel=1e-12, abs=1e-12)
        checked += 1
    assert checked > 300


def test_slack():
    assert compute_slack(now=10.0, deadline=100.0, level=30.0) == 60.0
    assert compute_slack(now=90.0, deadline=100.0, level=30.0) == -20.0


# =============================================================================
# Priority
# =============================================================================


def test_prioritize_matches_stable_sort():
    rng = random.Random(3)
    for _ in range(200):
        ready = [ReadyTask(f"t{i}", "w", 1.0, float(rng.randint(-5, 5)), 0.9, 1, arrival=float(rng.randint(0, 3)))
                 for i in range(rng.randint(0, 12))]
        rng.shuffle(ready)
        expected = sorted(ready, key=lambda r: (r.slack, r.arrival, r.task))
        assert prioritize(ready) == expected
        fcfs = sorted(ready, key=lambda r: (r.arrival, r.task))
        assert prioritize(ready, by_slack=False) == fcfs


def test_ready_task_needs_positive_cap():
    with pytest.raises(DomainError):
        ReadyTask("t", "w", 1.0, 1.0, 0.9, replica_cap=0)


# =============================================================================
# Allocation
# =============================================================================


def test_earliest_finish_orders_by_finish_then_id():
    task = make_task("t", "k", 0, work=40.0)
    busy = SPProfile("busy", 40.0)
    busy.queue.append(Allocation("other", "busy", 0.0, 10.0))
    sps = [SPProfile("slow", 4.0), busy, SPProfile("b", 8.0), SPProfile("a", 8.0)]
    candidates = earliest_finish(task, sps, now=0.0)
    assert [c.sp_id for c in candidates] == ["a", "b", "slow", "busy"]
    assert candidates[0] == Candidate("a", 0.0, 5.0)
    assert candidates[3] == Candidate("busy", 10.0, 11.0)


def test_earliest_finish_waits_for_data():
    task = make_task("t", "k", 0, work=8.0)
    (c,) = earliest_finish(task, [SPProfile("a", 8.0)], now=1.0, data_ready=3.0)
    assert (c.t_start, c.t_finish) == (3.0, 4.0)


def test_earliest_finish_filters_by_protection():
    task = make_task("t", "k", 0, protection=Protection.PROTECTED)
    sps = [SPProfile("v", 80.0, Trust.VOLUNTEERED), SPProfile("t", 8.0, Trust.TRUSTED)]
    assert [c.sp_id for c in earliest_finish(task, sps, 0.0)] == ["t"]
    private = make_task("p", "k", 0, protection=Protection.PRIVATE)
    with pytest.raises(NoEligibleSP):
        earliest_finish(private, sps, 0.0)


@pytest.mark.parametrize("protection,allowed", [
    (Protection.PUBLIC, {Trust.PERSONAL, Trust.TRUSTED, Trust.VOLUNTEERED}),
    (Protection.PROTECTED, {Trust.PERSONAL, Trust.TRUSTED}),
    (Protection.PRIVATE, {Trust.PERSONAL}),
])
def test_authorization_table(protection, allowed):
    task = make_task("t", "k", 0, protection=protection)
    assert {trust for trust in Trust if is_authorized(task, SPProfile("sp", 1.0, trust))} == allowed
    assert AUTHORIZED_TRUST[protection] == allowed


def test_testbed_ordering_for_location_determination():
    sps = load_testbed(FIXTURES / "testbed.yaml")
    assert len(sps) == 8
    task = make_task("loc", "location-determination", 1, work=1100.0)
    order = [c.sp_id for c in earliest_finish(task, sps, 0.0)]
    assert order[0] == "toshiba-laptop-0"
    assert order[1:3] == ["galaxy-tab-0", "galaxy-tab-1"]
    assert order[-1] == "raspberry-pi-0"
    assert earliest_finish(task, sps, 0.0)[0].t_finish == pytest.approx(28.6)


# =============================================================================
# Replication
# =============================================================================


def test_required_success_probability():
    for k in range(1, 40):
        for p_fail in (0.0, 0.01, 0.1, 0.5, 0.9):
            p = required_success_probability(k, p_fail)
            assert abs(p ** k - (1.0 - p_fail)) < 1e-12
    with pytest.raises(DomainError):
        required_success_probability(0, 0.1)
    with pytest.raises(DomainError):
        required_success_probability(3, 1.0)


def test_plan_replicas_is_minimal_prefix():
    rng = random.Random(99)
    for _ in range(10000):
        n = rng.randint(1, 6)
        probs = [rng.random() for _ in range(n)]
        required = rng.random()
        cap = rng.randint(1, 4)
        rt = ReadyTask("t", "w", 1.0, 0.0, required, cap)
        candidates = [(Candidate(f"sp{i}", 0.0, float(i + 1)), p) for i, p in enumerate(probs)]
        plan = plan_replicas(rt, candidates)

        expected = min(cap, n)
        for k in range(1, min(cap, n) + 1):
            if 1.0 - math.prod(1.0 - p for p in probs[:k]) >= required:
                expected = k
                break
        assert len(plan.allocations) == expected
        assert [a.sp for a in plan.allocations] == [f"sp{i}" for i in range(expected)]
        assert [a.is_replica for a in plan.allocations] == [False] + [True] * (expected - 1)
        assert plan.cap_reached == (plan.achieved < required)


def test_plan_replicas_needs_candidates():
    with pytest.raises(NoEligibleSP):
        plan_replicas(ReadyTask("t", "w", 1.0, 0.0, 0.9, 2), [])


def test_replica_caps_per_policy():
    config = BrokerConfig(policy=Policy.PROTECTION, cap_blocking=2, cap_fork=3)
    assert config.replica_cap(Criticality.NONCRITICAL) == 1
    assert config.replica_cap(Criticality.BLOCKING) == 2
    assert config.replica_cap(Criticality.FORK) == 3
    healing = BrokerConfig(policy=Policy.HEALING)
    assert healing.replica_cap(Criticality.FORK) == 1


def test_availability_families():
    sp = SPProfile("sp", 1.0, join_time=0.0, advertised_until=50.0)
    assert AvailabilityModel("exponential", 60.0).survival(sp, 0.0, 30.0) == pytest.approx(math.exp(-0.5))
    assert AvailabilityModel("deterministic", 60.0).survival(sp, 0.0, 40.0) == 1.0
    assert AvailabilityModel("deterministic", 60.0).survival(sp, 0.0, 60.0) == 0.0
    # U[0, 120] given age 20: P(T > 50) / P(T > 20) = 70 / 100
    assert AvailabilityModel("uniform", 60.0).survival(sp, 20.0, 50.0) == pytest.approx(0.7)
    assert AvailabilityModel("exponential", math.inf).survival(sp, 0.0, 1e9) == 1.0
    with pytest.raises(DomainError):
        AvailabilityModel("weibull", 60.0)


# =============================================================================
# Broker
# =============================================================================


def start(broker, workflow, now=0.0):
    broker.admit(dedup(DedupBatch([workflow])), now)
    assert broker.take_timers() == [now]
    broker.dispatch(now)
    return broker.take_allocations()


def events(log, name):
    return [r for r in log if r["event"] == name]


def test_single_task_completes_on_time():
    log = []
    broker = Broker(BrokerConfig(policy=Policy.HEALING), AvailabilityModel(), log.append)
    broker.on_sp_join(SPProfile("sp", 8.0), 0.0)
    (alloc,) = start(broker, chain("w", ["a"], works=[16.0], deadline=10.0))
    assert (alloc.sp, alloc.t_finish) == ("sp", 2.0)

    broker.on_complete(alloc.alloc_id, 2.0)
    broker.on_complete(alloc.alloc_id, 2.0)
    assert broker.workflows["w"].status == "on_time"
    assert len(events(log, "complete")) == 1
    assert events(log, "workflow")[0]["makespan"] == 2.0
    assert broker.all_terminal()


def test_chain_releases_children_after_data_transfer():
    log = []
    broker = Broker(BrokerConfig(policy=Policy.HEALING, link_rate=2.0), AvailabilityModel(), log.append)
    broker.on_sp_join(SPProfile("sp", 8.0), 0.0)
    (first,) = start(broker, chain("w", ["a", "b"], works=[8.0, 8.0], output=4.0))
    broker.on_complete(first.alloc_id, first.t_finish)
    assert broker.take_timers() == [1.0]
    broker.dispatch(1.0)
    (second,) = broker.take_allocations()
    # output 4 over link rate 2 delays the child by 2 s
    assert second.t_start == 3.0


def test_healing_reallocates_after_leave():
    log = []
    broker = Broker(BrokerConfig(policy=Policy.HEALING), AvailabilityModel(), log.append)
    broker.on_sp_join(SPProfile("fast", 16.0), 0.0)
    broker.on_sp_join(SPProfile("slow", 8.0), 0.0)
    (alloc,) = start(broker, chain("w", ["a"], works=[16.0], deadline=20.0))
    assert alloc.sp == "fast"

    broker.on_sp_leave("fast", 0.5)
    assert alloc.status == "failed"
    assert broker.counters["heals"] == 1
    assert broker.take_timers() == [0.5]
    broker.dispatch(0.5)
    (retry,) = broker.take_allocations()
    assert (retry.sp, retry.t_start) == ("slow", 0.5)
    broker.on_complete(retry.alloc_id, retry.t_finish)
    assert broker.workflows["w"].status == "on_time"
    assert [r["event"] for r in log if r["event"] in ("fail", "heal")] == ["fail", "heal"]


def test_baseline_fails_the_workflow():
    log = []
    broker = Broker(BrokerConfig(policy=Policy.BASELINE), AvailabilityModel(), log.append)
    broker.on_sp_join(SPProfile("fast", 16.0), 0.0)
    broker.on_sp_join(SPProfile("slow", 8.0), 0.0)
    start(broker, chain("w", ["a", "b"]))
    broker.on_sp_leave("fast", 0.1)
    assert broker.workflows["w"].status == "failed"
    assert broker.tasks["w/1"].status == "cancelled"
    assert broker.counters["heals"] == 0


def test_replicas_and_sibling_cancellation():
    log = []
    volatile = AvailabilityModel("exponential", 1.0)
    broker = Broker(BrokerConfig(policy=Policy.PROTECTION, cap_blocking=2), volatile, log.append)
    broker.on_sp_join(SPProfile("a", 8.0), 0.0)
    broker.on_sp_join(SPProfile("b", 8.0), 0.0)
    broker.on_sp_join(SPProfile("c", 8.0), 0.0)
    allocs = start(broker, chain("w", ["x"], works=[8.0]))
    assert [a.sp for a in allocs] == ["a", "b"]
    assert [a.is_replica for a in allocs] == [False, True]
    assert broker.counters["cap_reached"] == 1

    broker.on_complete(allocs[1].alloc_id, 1.0)
    assert allocs[0].status == "cancelled"
    assert events(log, "cancel")[0]["alloc"] == allocs[0].alloc_id
    broker.on_complete(allocs[0].alloc_id, 1.0)
    assert len(events(log, "complete")) == 1


def test_noncritical_task_is_never_replicated():
    broker = Broker(BrokerConfig(policy=Policy.PROTECTION), AvailabilityModel("exponential", 1.0))
    broker.on_sp_join(SPProfile("a", 8.0), 0.0)
    broker.on_sp_join(SPProfile("b", 8.0), 0.0)
    allocs = start(broker, chain("w", ["x"], criticality=Criticality.NONCRITICAL))
    assert len(allocs) == 1


def test_blocked_task_waits_for_an_authorized_sp():
    log = []
    broker = Broker(BrokerConfig(policy=Policy.PROTECTION), AvailabilityModel(), log.append)
    broker.on_sp_join(SPProfile("public", 8.0, Trust.VOLUNTEERED), 0.0)
    allocs = start(broker, chain("w", ["x"], protection=Protection.PRIVATE))
    assert allocs == []
    assert events(log, "blocked")[0]["task"] == "w/0"

    broker.on_sp_join(SPProfile("mine", 8.0, Trust.PERSONAL), 5.0)
    assert broker.take_timers() == [5.0]
    broker.dispatch(5.0)
    (alloc,) = broker.take_allocations()
    assert alloc.sp == "mine"
    assert events(log, "allocate")[0]["trust"] == "personal"


def test_shared_task_uses_smallest_slack():
    broker = Broker(BrokerConfig(policy=Policy.HEALING), AvailabilityModel())
    broker.on_sp_join(SPProfile("sp", 8.0), 0.0)
    relaxed = chain("A", ["x", "y"], deadline=100.0)
    tight = make_workflow("B", [make_task("B/0", "x", 0), make_task("B/1", "z", 1)],
                          [("B/0", "B/1")], deadline=20.0)
    broker.admit(dedup(DedupBatch([relaxed, tight])), 0.0)
    rt = broker.ready_task("A/0", 0.0)
    assert rt.workflow == "B"
    assert rt.slack == pytest.approx(20.0 - 2.0)
    assert rt.required_p_succ == pytest.approx(0.9 ** 0.5)


def test_finalize_fails_running_workflows():
    log = []
    broker = Broker(BrokerConfig(), AvailabilityModel(), log.append)
    broker.admit(dedup(DedupBatch([chain("w", ["x"])])), 0.0)
    broker.finalize(50.0)
    assert broker.workflows["w"].status == "failed"
    assert events(log, "workflow")[0]["reason"] == "horizon"


def drive(broker, allocs):
    """Complete every allocation at its planned finish until nothing is left to run"""
    pending = list(allocs)
    while pending:
        alloc = min(pending, key=lambda a: (a.t_finish, a.alloc_id))
        pending.remove(alloc)
        broker.on_complete(alloc.alloc_id, alloc.t_finish)
        for t in broker.take_timers():
            broker.dispatch(t)
        pending = [a for a in pending + broker.take_allocations() if a.status == "active"]


@pytest.mark.parametrize("family,expected", [
    ("exponential", math.exp(-0.5)),
    ("deterministic", 1.0),
    # U[0, 120] given age 10: P(T > 40) / P(T > 10) = 80 / 110
    ("uniform", 80.0 / 110.0),
])
def test_task_success_probability_per_family(family, expected):
    sp = SPProfile("sp", 8.0, join_time=0.0, advertised_until=50.0)
    alloc = Allocation("t", "sp", 20.0, 40.0)
    model = AvailabilityModel(family, 60.0)
    assert task_success_probability(alloc, sp, model, now=10.0) == pytest.approx(expected)
    late = Allocation("t", "sp", 20.0, 60.0)
    assert task_success_probability(late, sp, model, now=10.0) < expected


def test_broker_scores_candidates_with_the_availability_model():
    log = []
    broker = Broker(BrokerConfig(policy=Policy.PROTECTION, cap_blocking=2),
                    AvailabilityModel("deterministic", 60.0), log.append)
    broker.on_sp_join(SPProfile("leaving", 8.0, advertised_until=0.5), 0.0)
    broker.on_sp_join(SPProfile("staying", 4.0), 0.0)
    allocs = start(broker, chain("w", ["x"], works=[8.0]))
    assert [a.sp for a in allocs] == ["leaving", "staying"]
    assert [r["p_succ"] for r in events(log, "allocate")] == [0.0, 1.0]
    assert broker.counters["cap_reached"] == 0


@pytest.mark.parametrize("factor", [2.0, 8.0])
def test_priority_is_invariant_under_time_scaling(factor):
    spec = GeneratorSpec(stages=(2, 4), tasks_per_stage=(1, 4), output_size_range=(0.0, 30.0))
    for seed in range(50):
        wf = generate_workflow(spec, seed)
        orders = []
        for scale in (1.0, factor):
            env = MdcStats([SPProfile("a", 8.0), SPProfile("b", 2.0)], link_rate=10.0, ccr_threshold=0.0)
            levels = compute_levels(wf.scaled(scale) if scale != 1.0 else wf, env)
            ready = [ReadyTask(tid, "w", level, compute_slack(3.0 * scale, 90.0 * scale, level), 0.9, 1)
                     for tid, level in levels.items()]
            orders.append([r.task for r in prioritize(ready)])
        assert orders[0] == orders[1]


def test_required_probability_relaxes_along_a_chain():
    log = []
    broker = Broker(BrokerConfig(policy=Policy.HEALING), AvailabilityModel(), log.append)
    broker.on_sp_join(SPProfile("sp", 8.0), 0.0)
    drive(broker, start(broker, chain("w", ["a", "b", "c", "d"])))
    required = [r["required"] for r in events(log, "allocate")]
    assert len(required) == 4
    assert required == sorted(required, reverse=True)
    assert required[-1] == pytest.approx(0.9)
    assert broker.workflows["w"].status == "on_time"


def test_ready_window_batches_arrivals():
    log = []
    broker = Broker(BrokerConfig(policy=Policy.HEALING, delta_ready=5.0), AvailabilityModel(), log.append)
    broker.on_sp_join(SPProfile("a", 8.0), 0.0)
    broker.on_sp_join(SPProfile("b", 8.0), 0.0)
    first = make_workflow("A", [make_task("A/0", "x", 0)], [], arrival=1.0)
    second = make_workflow("B", [make_task("B/0", "y", 0)], [], arrival=3.0)
    broker.admit(dedup(DedupBatch([first])), 1.0)
    assert broker.take_timers() == [6.0]
    broker.admit(dedup(DedupBatch([second])), 3.0)
    assert broker.take_timers() == []
    broker.dispatch(6.0)
    allocs = broker.take_allocations()
    assert sorted(a.task for a in allocs) == ["A/0", "B/0"]
    assert {r["t"] for r in events(log, "allocate")} == {6.0}
    assert all(a.t_start >= 6.0 for a in allocs)


def test_replica_masks_a_failure():
    log = []
    broker = Broker(BrokerConfig(policy=Policy.PROTECTION, cap_blocking=2),
                    AvailabilityModel("exponential", 1.0), log.append)
    broker.on_sp_join(SPProfile("a", 8.0), 0.0)
    broker.on_sp_join(SPProfile("b", 8.0), 0.0)
    allocs = start(broker, chain("w", ["x"], works=[8.0]))
    assert len(allocs) == 2

    broker.on_sp_leave("a", 0.5)
    assert allocs[0].status == "failed"
    assert broker.counters["heals"] == 0
    assert events(log, "heal") == []
    assert broker.take_timers() == []

    broker.on_complete(allocs[1].alloc_id, allocs[1].t_finish)
    assert broker.workflows["w"].status == "on_time"


def test_cancelled_replica_frees_its_slot():
    log = []
    broker = Broker(BrokerConfig(policy=Policy.PROTECTION, cap_blocking=2),
                    AvailabilityModel("exponential", 1.0), log.append)
    broker.on_sp_join(SPProfile("a", 8.0), 0.0)
    broker.on_sp_join(SPProfile("b", 4.0), 0.0)
    allocs = start(broker, make_workflow("A", [make_task("A/0", "x", 0)], []))
    assert [(a.task, a.sp) for a in allocs] == [("A/0", "a"), ("A/0", "b")]

    broker.admit(dedup(DedupBatch([make_workflow("B", [make_task("B/0", "y", 0)], [])])), 0.0)
    broker.take_timers()
    broker.dispatch(0.0)
    later = broker.take_allocations()
    queued = next(a for a in later if a.sp == "b")
    assert (queued.t_start, queued.t_finish) == (2.0, 4.0)

    broker.on_complete(allocs[0].alloc_id, 1.0)
    assert allocs[1].status == "cancelled"
    assert (queued.t_start, queued.t_finish) == (1.0, 3.0)
    assert queued in broker.take_allocations()
    (shift,) = events(log, "shift")
    assert (shift["alloc"], shift["start"]) == (queued.alloc_id, 1.0)


def test_shared_task_stops_waiting_for_a_failed_workflows_parent():
    p1, p2, c2 = make_task("A/p1", "x", 0), make_task("A/p2", "x", 0), make_task("A/c2", "y", 1)
    a = make_workflow("A", [p1, p2, c2], [("A/p2", "A/c2")])
    b = make_workflow("B", [make_task("B/q", "x", 0), make_task("B/d", "y", 1)], [("B/q", "B/d")])
    merged = dedup(DedupBatch([a, b]))
    assert merged.discarded() == {"B/d": "A/c2", "B/q": "A/p1"}

    broker = Broker(BrokerConfig(policy=Policy.HEALING), AvailabilityModel())
    broker.on_sp_join(SPProfile("sp", 8.0), 0.0)
    broker.admit(merged, 0.0)
    broker.take_timers()
    broker.dispatch(0.0)
    allocs = {a.task: a for a in broker.take_allocations()}
    assert broker.parents("A/c2") == ("A/p1", "A/p2")

    broker.on_complete(allocs["A/p1"].alloc_id, allocs["A/p1"].t_finish)
    assert broker.tasks["A/c2"].status == "pending"

    broker.fail_workflow("A", 1.0, reason="test")
    assert broker.tasks["A/p2"].status == "cancelled"
    assert broker.parents("A/c2") == ("A/p1",)
    assert broker.tasks["A/c2"].status == "ready"
    assert broker.take_timers()[-1] == 1.0
