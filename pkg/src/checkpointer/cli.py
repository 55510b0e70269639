"""Command-line entry point.

Subcommands: fit (telemetry -> model bank), simulate (jobs -> schedules),
optimize (jobs -> cuts), admit (offers -> decisions), backtest (workload ->
strategy report), report (report JSON -> table + curve CSV).

Exit codes: 0 success, 2 usage, 3 I/O, 4 domain error. Failures print one
machine-parsable line: ``error[<ExceptionName>]: <message>``. Log level
comes from the CHECKPOINTER_LOG environment variable. A JSON config file
(--config) may supply any flag's value under its long name with dashes
replaced by underscores; explicit flags win.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from dataclasses import dataclass
from pathlib import Path

from . import admission, workload as workload_mod
from .costs import ModelBank, fit_model_bank, predict_stage_costs, read_telemetry_csv
from .errors import CheckpointerError, ParseError, UsageError
from .graph import JobGraph, parse_jobs
from .optimizer import (
    CheckpointObjective,
    CutSolution,
    heuristic_recovery_cut,
    heuristic_temp_storage_cut,
    solve_exact_multi_cut,
    solve_exact_single_cut,
    temp_saving_curve,
)
from .simulator import simulate_schedule

log = logging.getLogger("checkpointer.cli")

DEFAULT_SEED = 20240601


@dataclass(frozen=True)
class RunConfig:
    """A fully merged invocation: subcommand plus every option it uses."""

    command: str
    options: dict

    def __getitem__(self, key: str):
        return self.options[key]

    def get(self, key: str, default=None):
        return self.options.get(key, default)


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse default exits; we want exit 2 via main
        raise UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="checkpointer", description=__doc__)
    sub = parser.add_subparsers(dest="command")

    def add(name: str, help_text: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", default=argparse.SUPPRESS)
        p.add_argument("--seed", type=int, default=argparse.SUPPRESS)
        return p

    p = add("fit", "fit cost models from telemetry")
    p.add_argument("--telemetry", default=argparse.SUPPRESS)
    p.add_argument("--output", default=argparse.SUPPRESS)
    p.add_argument("--scope", choices=["general", "per-stage-type"], default=argparse.SUPPRESS)
    p.add_argument("--backend", choices=["linear", "tree"], default=argparse.SUPPRESS)
    p.add_argument("--min-samples", type=int, default=argparse.SUPPRESS)
    p.add_argument("--window", type=int, default=argparse.SUPPRESS)

    p = add("simulate", "simulate job schedules")
    p.add_argument("--input", default=argparse.SUPPRESS)
    p.add_argument("--output", default=argparse.SUPPRESS)

    p = add("optimize", "choose checkpoint cuts for jobs")
    p.add_argument("--input", default=argparse.SUPPRESS)
    p.add_argument("--output", default=argparse.SUPPRESS)
    p.add_argument("--objective", choices=["temp-storage", "recovery"], default=argparse.SUPPRESS)
    p.add_argument("--solver", choices=["heuristic", "exact"], default=argparse.SUPPRESS)
    p.add_argument("--cuts", type=int, default=argparse.SUPPRESS)
    p.add_argument("--alpha", type=float, default=argparse.SUPPRESS)
    p.add_argument("--delta", type=float, default=argparse.SUPPRESS)
    p.add_argument("--mtbf", type=float, default=argparse.SUPPRESS)
    p.add_argument("--mean-task-runtime", type=float, default=argparse.SUPPRESS)
    p.add_argument("--exact-cap", type=int, default=argparse.SUPPRESS)
    p.add_argument("--models", default=argparse.SUPPRESS)
    p.add_argument("--jobs", type=int, default=argparse.SUPPRESS)
    p.add_argument("--curves", action="store_true", default=argparse.SUPPRESS)

    p = add("admit", "run the admission policy over an offer stream")
    p.add_argument("--input", default=argparse.SUPPRESS)
    p.add_argument("--output", default=argparse.SUPPRESS)
    p.add_argument("--capacity", type=float, default=argparse.SUPPRESS)
    p.add_argument("--window", type=float, default=argparse.SUPPRESS)
    p.add_argument("--rate", type=float, default=argparse.SUPPRESS)
    p.add_argument("--calibration", default=argparse.SUPPRESS)
    p.add_argument("--policy", default=argparse.SUPPRESS)
    p.add_argument("--save-policy", default=argparse.SUPPRESS)
    p.add_argument("--summary", default=argparse.SUPPRESS)
    p.add_argument("--no-capacity-check", action="store_true", default=argparse.SUPPRESS)

    p = add("backtest", "compare cut strategies on a workload")
    p.add_argument("--workload", default=argparse.SUPPRESS)
    p.add_argument("--generate", default=argparse.SUPPRESS)
    p.add_argument("--save-workload", default=argparse.SUPPRESS)
    p.add_argument("--strategies", default=argparse.SUPPRESS)
    p.add_argument("--objective", choices=["temp-storage", "recovery"], default=argparse.SUPPRESS)
    p.add_argument("--report", default=argparse.SUPPRESS)
    p.add_argument("--format", choices=["json", "csv"], default=argparse.SUPPRESS)
    p.add_argument("--train-fraction", type=float, default=argparse.SUPPRESS)
    p.add_argument("--backend", choices=["linear", "tree"], default=argparse.SUPPRESS)
    p.add_argument("--min-samples", type=int, default=argparse.SUPPRESS)
    p.add_argument("--delta", type=float, default=argparse.SUPPRESS)
    p.add_argument("--jobs", type=int, default=argparse.SUPPRESS)

    p = add("report", "render a back-test report")
    p.add_argument("--input", default=argparse.SUPPRESS)
    p.add_argument("--output", default=argparse.SUPPRESS)
    p.add_argument("--curve-csv", default=argparse.SUPPRESS)

    return parser


_DEFAULTS: dict[str, dict] = {
    "fit": {
        "scope": "per-stage-type",
        "backend": "linear",
        "min_samples": 30,
        "window": None,
    },
    "simulate": {},
    "optimize": {
        "solver": "heuristic",
        "cuts": 1,
        "alpha": 0.0,
        "exact_cap": 20,
        "jobs": None,
        "curves": False,
    },
    "admit": {"no_capacity_check": False},
    "backtest": {
        "strategies": ",".join(workload_mod.STRATEGIES),
        "objective": "temp-storage",
        "format": None,
        "train_fraction": 0.5,
        "backend": "linear",
        "min_samples": 30,
        "jobs": None,
    },
    "report": {},
}

_KNOWN_KEYS: dict[str, set[str]] = {
    "fit": {"telemetry", "output", "scope", "backend", "min_samples", "window"},
    "simulate": {"input", "output"},
    "optimize": {
        "input", "output", "objective", "solver", "cuts", "alpha", "delta",
        "mtbf", "mean_task_runtime", "exact_cap", "models", "jobs", "curves",
    },
    "admit": {
        "input", "output", "capacity", "window", "rate", "calibration",
        "policy", "save_policy", "summary", "no_capacity_check",
    },
    "backtest": {
        "workload", "generate", "save_workload", "strategies", "objective",
        "report", "format", "train_fraction", "backend", "min_samples",
        "delta", "jobs",
    },
    "report": {"input", "output", "curve_csv"},
}


def _read_json(path: str | Path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.lineno, str(exc.colno), exc.msg) from exc


def _write_json(doc, path: str | None) -> None:
    text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    _write_text(text, path)


def _write_text(text: str, path: str | None) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8")


def _merge_config(namespace: argparse.Namespace) -> RunConfig:
    ns = vars(namespace)
    command = ns.pop("command", None)
    if not command:
        raise UsageError("a subcommand is required (see --help)")
    options = dict(_DEFAULTS[command])
    options["seed"] = DEFAULT_SEED
    config_path = ns.pop("config", None)
    if config_path:
        doc = _read_json(config_path)
        if not isinstance(doc, dict):
            raise UsageError(f"config file {config_path} must hold a JSON object")
        allowed = _KNOWN_KEYS[command] | {"seed"}
        unknown = [k for k in doc if k not in allowed]
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")
        options.update(doc)
    options.update(ns)  # explicit flags win over config and defaults
    return RunConfig(command=command, options=options)


def _require(config: RunConfig, key: str, flag: str):
    value = config.get(key)
    if value is None:
        raise UsageError(f"{flag} is required")
    return value


def _load_graphs(path: str) -> list[JobGraph]:
    return parse_jobs(_read_json(path))


# ---------------------------------------------------------------------------
# Subcommands


def _cmd_fit(config: RunConfig) -> int:
    records = read_telemetry_csv(_require(config, "telemetry", "--telemetry"))
    scope = config["scope"].replace("-", "_")
    bank = fit_model_bank(
        records,
        scope=scope,
        backend=config["backend"],
        min_samples=config["min_samples"],
        window=config.get("window"),
    )
    out = _require(config, "output", "--output")
    bank.save(out)
    log.info("fitted %s models from %d records -> %s", scope, len(records), out)
    return 0


def _cmd_simulate(config: RunConfig) -> int:
    graphs = _load_graphs(_require(config, "input", "--input"))
    jobs_doc = []
    for graph in sorted(graphs, key=lambda g: g.job_id):
        schedule = simulate_schedule(graph)
        stages = [
            {
                "id": sid,
                "start": schedule.start[sid],
                "end": schedule.end[sid],
                "ttl": schedule.ttl[sid],
                "tfs": schedule.tfs[sid],
            }
            for sid in sorted(schedule.start)
        ]
        jobs_doc.append(
            {"job_id": graph.job_id, "job_end": schedule.job_end, "stages": stages}
        )
    _write_json({"jobs": jobs_doc}, config.get("output"))
    return 0


def _objective_from(config: RunConfig) -> CheckpointObjective:
    kind = _require(config, "objective", "--objective")
    if kind == "temp-storage":
        return CheckpointObjective.temp_storage(alpha=config.get("alpha", 0.0))
    delta = config.get("delta")
    mtbf = config.get("mtbf")
    runtime = config.get("mean_task_runtime")
    if delta is None and (mtbf is None or runtime is None):
        raise UsageError("recovery objective needs --delta, or --mtbf with --mean-task-runtime")
    return CheckpointObjective.recovery(
        delta=delta, mean_task_runtime=runtime, mtbf=mtbf
    )


def _solution_doc(graph: JobGraph, solution: CutSolution) -> dict:
    checkpoint = sorted(
        {sid for cut in solution.cuts for sid in cut.checkpoint_stages(graph)}
    )
    doc = {
        "job_id": graph.job_id,
        "solver": solution.solver,
        "cuts": [sorted(cut.pre_cut) for cut in solution.cuts],
        "checkpoint_stages": checkpoint,
        "T": solution.saving,
        "G": solution.storage,
        "objective": solution.objective_value,
    }
    if solution.failure_prob is not None:
        doc["failure_prob"] = solution.failure_prob
        doc["restart_gain"] = solution.restart_gain
    return doc


_OPT_STATE: dict = {}


def _optimize_init(payload) -> None:
    _OPT_STATE["payload"] = payload


def _optimize_one(graph: JobGraph) -> dict:
    objective, solver, cuts, exact_cap, bank, curves = _OPT_STATE["payload"]
    exec_times = None
    sizes = None
    if bank is not None:
        exec_times = {}
        sizes = {}
        for stage in graph.stages:
            e, s = predict_stage_costs(bank, stage, None, graph.template_id)
            exec_times[stage.id] = e
            sizes[stage.id] = s
    schedule = simulate_schedule(graph, exec_times=exec_times)
    if solver == "exact":
        if cuts > 1:
            solution = solve_exact_multi_cut(
                graph, schedule, objective, cuts,
                exact_cap=exact_cap, output_sizes=sizes,
            )
        else:
            solution = solve_exact_single_cut(
                graph, schedule, objective, exact_cap=exact_cap, output_sizes=sizes
            )
    elif objective.kind == "recovery":
        solution = heuristic_recovery_cut(graph, schedule, objective.failure_rate)
    else:
        solution = heuristic_temp_storage_cut(graph, schedule, output_sizes=sizes)
    doc = _solution_doc(graph, solution)
    if curves:
        doc["curve"] = [
            {"end_time": x, "saving": y}
            for x, y in temp_saving_curve(graph, schedule, output_sizes=sizes)
        ]
    return doc


def _cmd_optimize(config: RunConfig) -> int:
    graphs = _load_graphs(_require(config, "input", "--input"))
    objective = _objective_from(config)
    solver = config["solver"]
    cuts = config["cuts"]
    if cuts < 1:
        raise UsageError("--cuts must be >= 1")
    if cuts > 1 and solver != "exact":
        raise UsageError("multi-cut optimization requires --solver exact")
    if cuts > 1 and objective.kind == "recovery":
        raise UsageError("multi-cut optimization supports only --objective temp-storage")
    if config["curves"] and objective.kind != "temp_storage":
        raise UsageError("--curves applies to the temp-storage objective")
    bank = ModelBank.load(config["models"]) if config.get("models") else None

    payload = (objective, solver, cuts, config["exact_cap"], bank, config["curves"])
    workers = config.get("jobs")
    ordered = sorted(graphs, key=lambda g: g.job_id)
    if workers and workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(
            max_workers=workers, initializer=_optimize_init, initargs=(payload,)
        ) as pool:
            docs = list(pool.map(_optimize_one, ordered))
    else:
        _optimize_init(payload)
        docs = [_optimize_one(graph) for graph in ordered]
    docs.sort(key=lambda d: d["job_id"])
    _write_json({"jobs": docs}, config.get("output"))
    return 0


def _cmd_admit(config: RunConfig) -> int:
    if config.get("policy"):
        policy = admission.AdmissionPolicy.from_dict(_read_json(config["policy"]))
    else:
        calibration_path = config.get("calibration")
        if not calibration_path:
            raise UsageError("provide --policy, or --calibration with --capacity/--window/--rate")
        with open(calibration_path, encoding="utf-8") as fh:
            training = admission.read_offers_jsonl(fh)
        policy = admission.calibrate_policy(
            training,
            capacity=_require(config, "capacity", "--capacity"),
            window=_require(config, "window", "--window"),
            arrival_rate=_require(config, "rate", "--rate"),
        )
    if config.get("save_policy"):
        _write_json(policy.to_dict(), config["save_policy"])

    with open(_require(config, "input", "--input"), encoding="utf-8") as fh:
        offers = admission.read_offers_jsonl(fh)
    decisions, summary = admission.process_stream(
        policy, offers, enforce_capacity=not config["no_capacity_check"]
    )
    lines = "".join(
        json.dumps(d.to_dict(), sort_keys=True) + "\n" for d in decisions
    )
    _write_text(lines, config.get("output"))
    if config.get("summary"):
        _write_json(summary.to_dict(), config["summary"])
    log.info(
        "admitted %d of %d offers (weight %.6g)",
        summary.accepted_count, summary.offered_count, summary.accepted_weight,
    )
    return 0


def _cmd_backtest(config: RunConfig) -> int:
    if config.get("workload") and config.get("generate"):
        raise UsageError("pass either --workload or --generate, not both")
    if config.get("workload"):
        load = workload_mod.load_workload(config["workload"])
    elif config.get("generate"):
        spec_doc = _read_json(config["generate"])
        spec = workload_mod.WorkloadSpec.from_dict(spec_doc)
        load = workload_mod.generate_workload(spec)
    else:
        raise UsageError("--workload or --generate is required")
    if config.get("save_workload"):
        workload_mod.save_workload(load, config["save_workload"])

    strategies = [s.strip() for s in config["strategies"].split(",") if s.strip()]
    if not strategies:
        raise UsageError("--strategies must name at least one strategy")
    unknown = [s for s in strategies if s not in workload_mod.STRATEGIES]
    if unknown:
        raise UsageError(
            f"unknown strategies {', '.join(unknown)}; "
            f"choose from {', '.join(workload_mod.STRATEGIES)}"
        )
    if config["objective"] == "recovery":
        delta = config.get("delta")
        objective = CheckpointObjective.recovery(
            delta=delta if delta is not None else load.spec.failure_rate
        )
    else:
        objective = CheckpointObjective.temp_storage()

    report = workload_mod.run_backtest(
        load,
        strategies,
        objective,
        train_fraction=config["train_fraction"],
        backend=config["backend"],
        min_samples=config["min_samples"],
        seed=config["seed"],
        workers=config.get("jobs"),
    )
    doc = report.to_doc()
    out = config.get("report")
    fmt = config.get("format")
    if fmt is None and out:
        fmt = "csv" if out.endswith(".csv") else "json"
    if fmt == "csv":
        if not out:
            raise UsageError("--format csv needs --report <path>")
        workload_mod.write_report_csv(doc, out)
    else:
        _write_json(doc, out)
    return 0


def _cmd_report(config: RunConfig) -> int:
    doc = _read_json(_require(config, "input", "--input"))
    _write_text(workload_mod.render_report_table(doc), config.get("output"))
    if config.get("curve_csv"):
        workload_mod.write_curve_csv(doc, config["curve_csv"])
    return 0


_COMMANDS = {
    "fit": _cmd_fit,
    "simulate": _cmd_simulate,
    "optimize": _cmd_optimize,
    "admit": _cmd_admit,
    "backtest": _cmd_backtest,
    "report": _cmd_report,
}


def dispatch(config: RunConfig) -> int:
    return _COMMANDS[config.command](config)


def main(argv: list[str] | None = None) -> int:
    level = os.environ.get("CHECKPOINTER_LOG", "WARNING").upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.WARNING),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        namespace = _build_parser().parse_args(argv)
        config = _merge_config(namespace)
        return dispatch(config)
    except UsageError as exc:
        print(f"error[UsageError]: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error[{type(exc).__name__}]: {exc}", file=sys.stderr)
        return 3
    except (CheckpointerError, ValueError) as exc:
        print(f"error[{type(exc).__name__}]: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
