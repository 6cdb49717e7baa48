# -*- coding: utf-8 -*-
"""
DeviceCloud Broker - command line

    python src/cli.py validate data/fixtures/workflows/stress_detection.yaml
    python src/cli.py gen-trace --seed 7
    python src/cli.py simulate --trace data/runs/gen-trace-000 --seed 42 --policy healing
    python src/cli.py experiment dedup-reduction --jobs 4

Exit codes: 0 ok, 2 usage, 3 validation, 4 runtime/config.
"""
import argparse
import sys
from pathlib import Path
from typing import Dict, List, Optional

from dedup import DedupBatch, dedup
from experiments import EXPERIMENTS, ExperimentRunner, run_experiment
from mdc_sim import SimConfig, run
from metrics import audit_log
from run_manager import RunManager
from scheduler import Policy
from tracegen import WorkflowTrace, build_trace
from utils import ConfigError, deep_merge, get_out_root, load_config, write_yaml
from workflow_model import (
    CycleError, GeneratorSpec, SpecError, WorkflowFormatError,
    generate_workflow, load_workflow, save_workflow, validate,
)


EXIT_OK = 0
EXIT_USAGE = 2
EXIT_VALIDATION = 3
EXIT_RUNTIME = 4


class ValidationFailed(Exception):
    """Input rejected by validation (exit code 3)"""


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default="config.yaml", help="YAML config (default: config.yaml)")
    common.add_argument("--out", default=None, help="output root (default: $DCB_OUT_ROOT or data/runs)")
    common.add_argument("--seed", type=int, default=None, help="master seed override")
    common.add_argument("--quiet", action="store_true", help="no progress output")

    sim_flags = argparse.ArgumentParser(add_help=False)
    sim_flags.add_argument("--policy", choices=[p.value for p in Policy], default=None)
    sim_flags.add_argument("--delta-wait", type=float, default=None, help="dedup window [s]")
    sim_flags.add_argument("--delta-ready", type=float, default=None, help="ready window [s]")
    sim_flags.add_argument("--jobs", type=int, default=None, help="worker processes")

    parser = argparse.ArgumentParser(prog="dcb", description="Mobile device cloud broker simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", parents=[common], help="check workflow documents or a trace directory")
    p.add_argument("paths", nargs="+")

    p = sub.add_parser("gen-workflows", parents=[common], help="generate synthetic workflows")
    p.add_argument("--count", type=int, default=10)

    p = sub.add_parser("gen-trace", parents=[common], help="generate a workflow arrival trace")
    p.add_argument("--kind", choices=["standard", "mixed"], default=None)

    p = sub.add_parser("dedup", parents=[common], help="merge a batch of workflows")
    p.add_argument("--in", dest="inputs", nargs="+", required=True,
                   help="workflow documents or directories of them (batch order = argument order)")

    p = sub.add_parser("simulate", parents=[common, sim_flags], help="run one simulation")
    p.add_argument("--trace", default=None, help="trace directory (default: generated from config)")

    p = sub.add_parser("experiment", parents=[common, sim_flags], help="run an experiment suite")
    p.add_argument("name", choices=sorted(EXPERIMENTS) + ["all"])
    p.add_argument("--replications", type=int, default=None)
    return parser


def apply_overrides(config: Dict, args: argparse.Namespace) -> Dict:
    """CLI flags win over config file values"""
    sim = {}
    if args.seed is not None:
        sim["seed"] = args.seed
    if getattr(args, "policy", None):
        sim["policy"] = args.policy
    if getattr(args, "delta_wait", None) is not None:
        sim["delta_wait"] = args.delta_wait
    if getattr(args, "delta_ready", None) is not None:
        sim["delta_ready"] = args.delta_ready
    return deep_merge(config, {"simulation": sim}) if sim else config


def _workflow_paths(inputs: List[str]) -> List[Path]:
    paths = []
    for item in inputs:
        path = Path(item)
        if path.is_dir():
            paths.extend(sorted(path.glob("*.yaml")))
        elif path.exists():
            paths.append(path)
        else:
            raise FileNotFoundError(f"нет такого файла: {path}")
    return paths


def cmd_validate(args, config: Dict, manager: RunManager) -> int:
    failures = 0
    for item in args.paths:
        path = Path(item)
        if path.is_dir() and (path / "trace.jsonl").exists():
            WorkflowTrace.load(path)
            print(f"✅ {path}: trace OK")
            continue
        for wf_path in _workflow_paths([item]):
            report = validate(load_workflow(wf_path))
            if report.ok:
                print(f"✅ {wf_path}: OK")
            else:
                failures += 1
                print(f"❌ {wf_path}:", file=sys.stderr)
                for v in report.violations:
                    print(f"   {v.code}: {v.detail}", file=sys.stderr)
    if failures:
        raise ValidationFailed(f"{failures} invalid workflow document(s)")
    return EXIT_OK


def cmd_gen_workflows(args, config: Dict, manager: RunManager) -> int:
    spec = GeneratorSpec.from_dict(config.get("generator") or {})
    seed = int(config["simulation"].get("seed", 0))
    run_dir = manager.create_run("gen-workflows")
    manager.write_manifest(run_dir, config, seed)
    work = 0.0
    for i in range(args.count):
        wf = generate_workflow(spec, seed + i, wf_id=f"wf-{i:03d}")
        save_workflow(wf, run_dir / "workflows" / f"{wf.wf_id}.yaml")
        work += wf.total_work()
    manager.record_outputs(run_dir)
    if not args.quiet:
        print(f"✅ {args.count} workflow, суммарная работа {work:.1f}")
    return EXIT_OK


def _trace_params(config: Dict, kind: Optional[str] = None) -> Dict:
    params = dict(config.get("trace") or {})
    if not params:
        raise ConfigError("config: нет секции trace")
    params["seed"] = int(config["simulation"].get("seed", 0))
    params.setdefault("generator", config.get("generator") or {})
    if kind:
        params["kind"] = kind
    return params


def cmd_gen_trace(args, config: Dict, manager: RunManager) -> int:
    params = _trace_params(config, args.kind)
    trace = build_trace(params)
    run_dir = manager.create_run("gen-trace")
    manager.write_manifest(run_dir, config, params["seed"])
    trace.save(run_dir)
    manager.record_outputs(run_dir)
    if not args.quiet:
        print(f"✅ {len(trace)} запросов, {len(trace.pool)} шаблонов")
    return EXIT_OK


def cmd_dedup(args, config: Dict, manager: RunManager) -> int:
    paths = _workflow_paths(args.inputs)
    workflows = [load_workflow(p) for p in paths]
    for wf in workflows:
        report = validate(wf)
        if not report.ok:
            raise ValidationFailed(f"{wf.wf_id}: {', '.join(report.codes())}")
    # task ids must be unique inside the batch
    names = [wf.wf_id for wf in workflows]
    workflows = [
        wf.instantiate(wf.wf_id if names.count(wf.wf_id) == 1 else f"{wf.wf_id}-{i}", wf.arrival_time, wf.deadline)
        for i, wf in enumerate(workflows)
    ]
    merged = dedup(DedupBatch(workflows, float(config["simulation"].get("delta_wait", 0.0))))

    run_dir = manager.create_run("dedup")
    manager.write_manifest(run_dir, config, None, inputs=paths)
    write_yaml(run_dir / "provenance.yaml", merged.to_doc())
    for wf in merged.workflows:
        save_workflow(wf, run_dir / "simplified" / f"{wf.wf_id}.yaml")
    manager.record_outputs(run_dir)
    if not args.quiet:
        print(f"✅ Задач: {merged.original_task_count} -> {merged.surviving_count} "
              f"(отброшено {merged.pct_discarded:.1f}%), fork: {len(merged.fork_tasks)}")
    return EXIT_OK


def cmd_simulate(args, config: Dict, manager: RunManager) -> int:
    sim_config = SimConfig.from_dict(config)
    if args.trace:
        trace = WorkflowTrace.load(args.trace)
        inputs = [Path(args.trace)]
    else:
        trace = build_trace(_trace_params(config))
        inputs = []
    result = run(sim_config, trace)

    run_dir = manager.create_run("simulate")
    manager.write_manifest(run_dir, config, sim_config.seed, inputs=inputs)
    result.write(run_dir)
    manager.record_outputs(run_dir)

    problems = audit_log(result.log)
    for problem in problems:
        print(f"⚠️ {problem}", file=sys.stderr)
    if not args.quiet:
        m = result.metrics
        print(f"✅ Успешно: {m.pct_success:.1f}% ({m.on_time}/{m.workflows}), "
              f"опоздали {m.late}, провалены {m.failed}")
        print(f"   Задач выполнено: {m.pct_tasks_executed:.1f}%, реплик: {m.replica_count}, healing: {m.heals}")
    return EXIT_OK if not problems else EXIT_RUNTIME


def cmd_experiment(args, config: Dict, manager: RunManager) -> int:
    settings = config.get("experiments") or {}
    jobs = args.jobs if args.jobs is not None else int(settings.get("jobs", 1))
    runner = ExperimentRunner(config, jobs=jobs, replications=args.replications, silent=args.quiet)
    run_dir = manager.create_run("experiment")
    manager.write_manifest(run_dir, config, runner.seed)
    names = list(EXPERIMENTS) if args.name == "all" else [args.name]
    for name in names:
        run_experiment(name, runner, run_dir)
    manager.record_outputs(run_dir)
    return EXIT_OK


COMMANDS = {
    "validate": cmd_validate,
    "gen-workflows": cmd_gen_workflows,
    "gen-trace": cmd_gen_trace,
    "dedup": cmd_dedup,
    "simulate": cmd_simulate,
    "experiment": cmd_experiment,
}


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_USAGE

    try:
        config = apply_overrides(load_config(args.config), args)
        manager = RunManager(get_out_root(args.out), silent=args.quiet)
        return COMMANDS[args.command](args, config, manager)
    except (ValidationFailed, WorkflowFormatError, CycleError, SpecError) as e:
        print(f"❌ {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except (ConfigError, FileNotFoundError, OSError, RuntimeError, ValueError, KeyError) as e:
        print(f"❌ {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
