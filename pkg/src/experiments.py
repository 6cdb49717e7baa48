# -*- coding: utf-8 -*-
"""
Experiments - evaluation suites

dedup-reduction   % of tasks executed vs. dedup window (mu-adapted and mu-agnostic sweeps)
dedup-success     % successful workflows vs. dedup window, with no-dedup and FCFS series
scenarios         success per policy over the churn ladder A (stable) .. E (volatile)
protection-price  success per protection-mix scheme 1 (strict) .. 5 (all public)
makespan          vision-workflow makespan vs. mean SP availability (healing, protection)
task-size         vision-workflow success within 200 s vs. task work multiplier

Every point is averaged over seeded replications; output is one CSV per
suite with columns x, series, mean, stddev, n.
"""
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional

import pandas as pd
from tqdm import tqdm

from mdc_sim import SimConfig, run
from tracegen import build_trace, load_pool
from utils import deep_merge


SCENARIO_LADDER = {"A": 3200.0, "B": 800.0, "C": 200.0, "D": 50.0, "E": 12.5}

# (private, protected, public)
PROTECTION_SCHEMES = {
    1: (0.4, 0.4, 0.2),
    2: (0.2, 0.4, 0.4),
    3: (0.1, 0.3, 0.6),
    4: (0.05, 0.15, 0.8),
    5: (0.0, 0.0, 1.0),
}

CSV_COLUMNS = ["x", "series", "mean", "stddev", "n"]


@dataclass
class RunPoint:
    suite: str
    x: Any
    series: str
    replication: int
    config: Dict
    trace: Dict
    metric: str


def evaluate_point(point: RunPoint) -> Dict:
    """One seeded simulation; module-level so worker processes can run it"""
    config = SimConfig.from_dict(point.config)
    fixtures = None
    if point.trace.get("kind") == "fixture":
        fixtures = load_pool(point.trace["fixtures_dir"], point.trace.get("templates"))
    trace = build_trace(point.trace, fixtures)
    result = run(config, trace)
    return {
        "x": point.x,
        "series": point.series,
        "replication": point.replication,
        "value": getattr(result.metrics, point.metric),
    }


class ExperimentRunner:
    """Fans seeded replications out over a process pool and aggregates them"""

    def __init__(self, config: Dict, jobs: int = 1, replications: Optional[int] = None, silent: bool = False):
        self.config = config
        settings = config.get("experiments") or {}
        self.settings = settings
        self.jobs = max(1, int(jobs))
        self.replications = int(replications or settings.get("replications", 10))
        self.seed = int((config.get("simulation") or {}).get("seed", 0))
        self.silent = silent

    def suite(self, name: str) -> Dict:
        return dict(self.settings.get(name.replace("-", "_")) or {})

    def points(self, suite: str, x: Any, series: str, overrides: Dict, trace: Dict,
               metric: str) -> List[RunPoint]:
        points = []
        for rep in range(self.replications):
            seed = self.seed + rep
            cfg = deep_merge(self.config, deep_merge(overrides, {"simulation": {"seed": seed}}))
            points.append(RunPoint(suite, x, series, rep, cfg, {**trace, "seed": seed}, metric))
        return points

    def run(self, points: List[RunPoint], desc: str = "runs") -> pd.DataFrame:
        if self.jobs == 1:
            rows = [evaluate_point(p) for p in tqdm(points, desc=desc, disable=self.silent)]
        else:
            with ProcessPoolExecutor(max_workers=self.jobs) as pool:
                rows = list(tqdm(pool.map(evaluate_point, points), total=len(points),
                                 desc=desc, disable=self.silent))
        return pd.DataFrame(rows, columns=["x", "series", "replication", "value"])

    @staticmethod
    def aggregate(raw: pd.DataFrame) -> pd.DataFrame:
        """mean, sample standard deviation and count per (x, series)"""
        if raw.empty:
            return pd.DataFrame(columns=CSV_COLUMNS)
        table = (raw.groupby(["x", "series"], sort=False)["value"]
                 .agg(mean="mean", stddev="std", n="count")
                 .reset_index())
        table["stddev"] = table["stddev"].fillna(0.0)
        return table[CSV_COLUMNS]


def _standard_trace(settings: Dict, mu: float) -> Dict:
    return {
        "kind": "standard",
        "n_requests": int(settings.get("n_requests", 100)),
        "mu": float(mu),
        "pool_size": int(settings.get("pool_size", 10)),
        "deadline_range": list(settings.get("deadline_range", [40.0, 80.0])),
        "p_fail": float(settings.get("p_fail", 0.1)),
        "generator": dict(settings.get("generator") or {}),
    }


def _fixed_mdc(sps: int, devices: Optional[List[Dict]] = None) -> Dict:
    pool: Dict = {"permanent": int(sps)}
    if devices:
        pool["devices"] = [dict(d) for d in devices]
    return {"churn": {"enabled": False}, "sp_pool": pool}


def _fixture_trace(runner: ExperimentRunner, settings: Dict, default_templates: List[str]) -> Dict:
    return {
        "kind": "fixture",
        "fixtures_dir": str(Path(runner.settings.get("fixtures_dir", "data/fixtures")) / "workflows"),
        "templates": list(settings.get("templates", default_templates)),
        "n_requests": int(settings.get("n_requests", 200)),
        "mu": float(settings.get("mu", 20)),
        "deadline_range": list(settings.get("deadline_range", [40.0, 80.0])),
        "p_fail": float(settings.get("p_fail", 0.1)),
    }


def _churn(mean_availability: float, population: float) -> Dict:
    return {"churn": {
        "enabled": True,
        "mean_availability": float(mean_availability),
        "target_population": float(population),
        "mean_interarrival": float(mean_availability) / float(population),
        "initial_population": int(round(population)),
    }}


def experiment_dedup_reduction(runner: ExperimentRunner, ratios: Optional[List[float]] = None,
                               mus: Optional[List[float]] = None) -> pd.DataFrame:
    """
    Share of tasks executed after dedup.

    Series `adapted mu=..` sweep delta_wait = ratio * mu (x = ratio);
    series `agnostic mu=..` sweep delta_wait in fixed steps (x = delta_wait [s]).
    """
    settings = runner.suite("dedup-reduction")
    ratios = ratios if ratios is not None else settings.get("ratios", [0, 1, 2, 3, 4, 5])
    mus = mus if mus is not None else settings.get("mus", [10, 20, 30])
    deltas = settings.get("agnostic_deltas", [0, 20, 40, 60, 80, 100])
    mdc = _fixed_mdc(settings.get("sps", 10))

    points = []
    for mu in mus:
        trace = _standard_trace(settings, mu)
        for ratio in ratios:
            overrides = deep_merge(mdc, {"simulation": {"dedup": True, "delta_wait": float(ratio) * mu}})
            points += runner.points("dedup-reduction", float(ratio), f"adapted mu={mu:g}", overrides,
                                    trace, "pct_tasks_executed")
        for delta in deltas:
            overrides = deep_merge(mdc, {"simulation": {"dedup": True, "delta_wait": float(delta)}})
            points += runner.points("dedup-reduction", float(delta), f"agnostic mu={mu:g}", overrides,
                                    trace, "pct_tasks_executed")
    return ExperimentRunner.aggregate(runner.run(points, desc="dedup-reduction"))


def experiment_dedup_success(runner: ExperimentRunner, ratios: Optional[List[float]] = None) -> pd.DataFrame:
    """Workflow success vs. delta_wait / mu for dedup, no-dedup and FCFS"""
    settings = runner.suite("dedup-success")
    ratios = ratios if ratios is not None else settings.get("ratios", [0, 0.5, 1, 1.5, 2, 2.5, 3, 3.5, 4])
    mu = float(settings.get("mu", 10))
    trace = _standard_trace(settings, mu)
    mdc = _fixed_mdc(settings.get("sps", 10), settings.get("devices"))

    series = {
        "dedup": lambda d: {"simulation": {"dedup": True, "delta_wait": d, "policy": "protection"}},
        "no-dedup": lambda d: {"simulation": {"dedup": False, "delta_wait": 0.0, "policy": "protection"}},
        "fcfs": lambda d: {"simulation": {"dedup": True, "delta_wait": d, "policy": "fcfs"}},
    }
    points = []
    for ratio in ratios:
        for name, make in series.items():
            overrides = deep_merge(mdc, make(float(ratio) * mu))
            points += runner.points("dedup-success", float(ratio), name, overrides, trace, "pct_success")
    return ExperimentRunner.aggregate(runner.run(points, desc="dedup-success"))


def experiment_scenarios(runner: ExperimentRunner, scenarios: Optional[List[str]] = None,
                         policies: Optional[List[str]] = None, variant: str = "mixed") -> pd.DataFrame:
    """
    Success per policy over the churn ladder at fixed mean population.

    variant "mixed": 66/33 small/large synthetic trace;
    variant "biomedical": requests drawn from the biomedical fixture workflows.
    """
    settings = runner.suite("scenarios")
    ladder = {k: float(v) for k, v in (settings.get("ladder") or SCENARIO_LADDER).items()}
    scenarios = scenarios or list(ladder)
    policies = policies or settings.get("policies", ["baseline", "healing", "protection"])
    population = float(settings.get("target_population", 30))

    extra: Dict = {}
    if variant == "biomedical":
        bio = dict(settings.get("biomedical") or {})
        if bio.get("ladder"):
            ladder = {k: float(v) for k, v in bio["ladder"].items()}
            scenarios = [s for s in scenarios if s in ladder]
        # body-sensor tasks are private: the MDC is the patient's own devices by default
        pool: Dict = {"trust_mix": dict(bio.get("trust_mix") or
                                        {"personal": 1.0, "trusted": 0.0, "volunteered": 0.0})}
        if bio.get("devices"):
            pool["devices"] = [dict(d) for d in bio["devices"]]
        extra = {"sp_pool": pool}
        trace = _fixture_trace(runner, bio, ["stress_detection", "hypoxia_detection"])
    elif variant == "mixed":
        trace = {
            "kind": "mixed",
            "n_requests": int(settings.get("n_requests", 500)),
            "mu": float(settings.get("mu", 20)),
            "pool_size": int(settings.get("pool_size", 10)),
            "small_frac": float(settings.get("small_frac", 0.66)),
            "small_deadlines": list(settings.get("small_deadlines", [40.0, 80.0])),
            "large_deadlines": list(settings.get("large_deadlines", [80.0, 160.0])),
            "p_fail": float(settings.get("p_fail", 0.1)),
            "generator": dict(settings.get("generator") or {}),
            "large_generator": dict(settings.get("large_generator") or {}),
        }
    else:
        raise ValueError(f"unknown scenarios variant {variant!r}")

    suite = "scenarios" if variant == "mixed" else f"scenarios-{variant}"
    points = []
    for letter in scenarios:
        for policy in policies:
            overrides = deep_merge(deep_merge(_churn(ladder[letter], population), extra),
                                   {"simulation": {"policy": policy, "dedup": False, "delta_wait": 0.0}})
            points += runner.points(suite, letter, policy, overrides, trace, "pct_success")
    return ExperimentRunner.aggregate(runner.run(points, desc=suite))


def experiment_protection_price(runner: ExperimentRunner, schemes: Optional[Dict[int, tuple]] = None) -> pd.DataFrame:
    """Success per protection-mix scheme with a 1/33/66 % personal/trusted/volunteered MDC"""
    settings = runner.suite("protection-price")
    if schemes is None:
        configured = settings.get("schemes")
        schemes = {int(k): tuple(v) for k, v in configured.items()} if configured else PROTECTION_SCHEMES
    trust_mix = settings.get("trust_mix", {"personal": 0.01, "trusted": 0.33, "volunteered": 0.66})
    mdc = deep_merge(_churn(settings.get("mean_availability", 200.0), settings.get("target_population", 30)),
                     {"sp_pool": {"trust_mix": dict(trust_mix)}})
    mu = float(settings.get("mu", 20))
    policy = settings.get("policy", "protection")

    points = []
    for number, mix in sorted(schemes.items()):
        trace = _standard_trace(settings, mu)
        trace["generator"] = {**trace["generator"], "protection_mix": list(mix)}
        overrides = deep_merge(mdc, {"simulation": {"policy": policy, "dedup": False, "delta_wait": 0.0}})
        points += runner.points("protection-price", number, policy, overrides, trace, "pct_success")
    return ExperimentRunner.aggregate(runner.run(points, desc="protection-price"))


def _vision_mdc(settings: Dict, mean_availability: float) -> Dict:
    mdc = _churn(mean_availability, settings.get("target_population", 3))
    pool: Dict = {}
    if settings.get("devices"):
        pool["devices"] = [dict(d) for d in settings["devices"]]
    if settings.get("trust_mix"):
        pool["trust_mix"] = dict(settings["trust_mix"])
    if pool:
        mdc["sp_pool"] = pool
    return mdc


def experiment_makespan(runner: ExperimentRunner, availabilities: Optional[List[float]] = None,
                        policies: Optional[List[str]] = None) -> pd.DataFrame:
    """Mean makespan of finished vision workflows vs. mean SP availability, healing against protection"""
    settings = runner.suite("makespan")
    availabilities = availabilities or settings.get("availabilities", [10, 20, 40, 80, 160])
    policies = policies or settings.get("policies", ["healing", "protection"])
    trace = _fixture_trace(runner, settings, ["feature_pipeline"])

    points = []
    for availability in availabilities:
        mdc = _vision_mdc(settings, float(availability))
        for policy in policies:
            overrides = deep_merge(mdc, {"simulation": {"policy": policy, "dedup": False, "delta_wait": 0.0}})
            points += runner.points("makespan", float(availability), policy, overrides, trace, "mean_makespan")
    return ExperimentRunner.aggregate(runner.run(points, desc="makespan"))


def experiment_task_size(runner: ExperimentRunner, scales: Optional[List[float]] = None,
                         policies: Optional[List[str]] = None) -> pd.DataFrame:
    """Vision workflows finished within a fixed deadline vs. a multiplier on every task's work"""
    settings = runner.suite("task-size")
    scales = scales or settings.get("work_scales", [0.5, 1.0, 1.5, 2.0, 2.5, 3.0])
    policies = policies or settings.get("policies", ["healing", "protection"])
    mdc = _vision_mdc(settings, float(settings.get("mean_availability", 40.0)))
    base = _fixture_trace(runner, {"deadline_range": [200.0, 200.0], **settings}, ["feature_pipeline"])

    points = []
    for scale in scales:
        trace = {**base, "work_scale": float(scale)}
        for policy in policies:
            overrides = deep_merge(mdc, {"simulation": {"policy": policy, "dedup": False, "delta_wait": 0.0}})
            points += runner.points("task-size", float(scale), policy, overrides, trace, "pct_success")
    return ExperimentRunner.aggregate(runner.run(points, desc="task-size"))


EXPERIMENTS: Dict[str, Callable[[ExperimentRunner], pd.DataFrame]] = {
    "dedup-reduction": experiment_dedup_reduction,
    "dedup-success": experiment_dedup_success,
    "scenarios": experiment_scenarios,
    "scenarios-biomedical": lambda runner: experiment_scenarios(runner, variant="biomedical"),
    "protection-price": experiment_protection_price,
    "makespan": experiment_makespan,
    "task-size": experiment_task_size,
}


def run_experiment(name: str, runner: ExperimentRunner, out_dir: Path) -> Path:
    """Run one suite and write <out_dir>/<name>.csv"""
    if name not in EXPERIMENTS:
        raise KeyError(f"unknown experiment {name!r}; choose from {', '.join(EXPERIMENTS)}")
    table = EXPERIMENTS[name](runner)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"{name}.csv"
    table.to_csv(path, index=False)
    if not runner.silent:
        print(f"📈 {name}: {len(table)} точек -> {path}")
    return path
