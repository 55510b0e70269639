"""Synthetic workloads, failure injection, and strategy back-testing.

The generator builds layered random DAGs so acyclicity holds by
construction, then gives every job two parallel cost stories: the ground
truth (what actually ran, emitted as telemetry) and the planner's noisy
estimates (truth times a per-template bias times log-normal noise, stored
on the plan). Recurring templates make the bias learnable from history,
which is exactly the signal the cost models are supposed to pick up.

Ground-truth schedules pipeline: a stage may start before its inputs fully
finish, by a per-stage-type overlap factor. The plain simulator assumes
strict stage boundaries, so its lifetimes are systematically off in a
type-dependent way; the lifetime adjuster exists to learn that correction.

The backtester replays jobs against seven cut-selection strategies, scoring
every chosen cut on the ground truth, never on the inputs the strategy saw.
"""

from __future__ import annotations

import json
import math
import time
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .costs import (
    OPTIMIZER_FEATURE_KEYS,
    CostModelBank,
    ModelBank,
    TelemetryHistory,
    TelemetryRecord,
    fit_model_bank,
    predict_stage_costs,
    read_telemetry_csv,
    stage_name_tokens,
    write_telemetry_csv,
)
from .errors import CheckpointerError, InvalidSpec, MissingModels
from .graph import CutAssignment, JobGraph, StageNode, load_jobs, save_jobs
from .optimizer import (
    CheckpointObjective,
    CutSolution,
    baseline_cut,
    global_storage,
    heuristic_recovery_cut,
    heuristic_temp_storage_cut,
    recovery_objective,
    temp_saving,
)
from .simulator import (
    StageSchedule,
    TtlAdjuster,
    adjust_ttl,
    fit_ttl_adjuster,
    simulate_schedule,
)

STRATEGIES = ("random", "mid_point", "op", "occ", "oml", "omls", "optimal")


@dataclass(frozen=True)
class StageTypeProfile:
    """Log-normal cost distributions and pipelining behavior of one stage type.

    exec/size parameters are the underlying normal's mean and sigma. overlap
    is the fraction of an upstream stage's runtime this stage can pipeline
    over: 0 waits for full completion, values near 1 start almost alongside.
    estimate_exponent is the power-law fidelity of the planner's estimates
    for this type: estimates scale as truth**exponent, so values below 1
    compress large stages (the planner under-spreads) and values above 1
    exaggerate them. instance_coupling is how much of a run's actual
    deviation from the template norm the planner sees in advance (it scales
    the shared log-normal instance factor inside the estimate); prediction
    models must weigh the estimate differently per type to exploit it.
    depth_affinity in [0, 1] is the relative pipeline depth where the type
    concentrates (0 = sources, 1 = sinks), so generated templates read like
    real pipelines instead of a uniform type shuffle.
    """

    exec_log_mean: float
    exec_log_sigma: float
    size_log_mean: float
    size_log_sigma: float
    overlap: float
    estimate_exponent: float = 1.0
    instance_coupling: float = 1.0
    depth_affinity: float = 0.5

    def __post_init__(self) -> None:
        if self.exec_log_sigma < 0 or self.size_log_sigma < 0:
            raise InvalidSpec("log-normal sigma must be >= 0")
        if not 0.0 <= self.overlap < 1.0:
            raise InvalidSpec("overlap must be in [0, 1)")
        if self.estimate_exponent <= 0:
            raise InvalidSpec("estimate_exponent must be > 0")
        if self.instance_coupling < 0:
            raise InvalidSpec("instance_coupling must be >= 0")
        if not 0.0 <= self.depth_affinity <= 1.0:
            raise InvalidSpec("depth_affinity must be in [0, 1]")

    def to_dict(self) -> dict:
        return {
            "exec_log_mean": self.exec_log_mean,
            "exec_log_sigma": self.exec_log_sigma,
            "size_log_mean": self.size_log_mean,
            "size_log_sigma": self.size_log_sigma,
            "overlap": self.overlap,
            "estimate_exponent": self.estimate_exponent,
            "instance_coupling": self.instance_coupling,
            "depth_affinity": self.depth_affinity,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "StageTypeProfile":
        return cls(**{k: float(doc[k]) for k in (
            "exec_log_mean", "exec_log_sigma", "size_log_mean", "size_log_sigma",
            "overlap", "estimate_exponent", "instance_coupling", "depth_affinity",
        )})


DEFAULT_STAGE_TYPES: dict[str, StageTypeProfile] = {
    "extract": StageTypeProfile(3.0, 0.6, 4.5, 0.8, 0.0, 1.0, 1.0, 0.0),
    "partition": StageTypeProfile(2.5, 0.5, 3.8, 0.7, 0.6, 0.9, 0.7, 0.25),
    "join": StageTypeProfile(3.4, 0.7, 4.0, 0.9, 0.7, 0.8, 0.25, 0.5),
    "aggregate": StageTypeProfile(2.8, 0.5, 3.0, 0.6, 0.3, 1.15, 0.5, 0.75),
    "output": StageTypeProfile(2.2, 0.4, 2.0, 0.5, 0.1, 1.0, 0.9, 1.0),
}


@dataclass(frozen=True)
class WorkloadSpec:
    """Everything the generator needs; the seed pins the workload bit-exactly."""

    job_count: int
    template_count: int = 10
    min_stages: int = 4
    max_stages: int = 12
    max_layers: int = 6
    edge_density: float = 0.3
    stage_types: Mapping[str, StageTypeProfile] = field(
        default_factory=lambda: dict(DEFAULT_STAGE_TYPES)
    )
    template_bias_sigma: float = 0.8
    estimate_noise_sigma: float = 0.5
    instance_noise_sigma: float = 0.2
    min_tasks: int = 1
    max_tasks: int = 60
    mtbf: float = 86400.0 * 30
    mean_task_runtime: float = 30.0
    submit_interval: float = 60.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.job_count < 0:
            raise InvalidSpec("job_count must be >= 0")
        if self.template_count < 1:
            raise InvalidSpec("template_count must be >= 1")
        if not 1 <= self.min_stages <= self.max_stages:
            raise InvalidSpec("need 1 <= min_stages <= max_stages")
        if self.max_layers < 1:
            raise InvalidSpec("max_layers must be >= 1")
        if not 0.0 <= self.edge_density <= 1.0:
            raise InvalidSpec("edge_density must be in [0, 1]")
        if not self.stage_types:
            raise InvalidSpec("need at least one stage type")
        if min(self.template_bias_sigma, self.estimate_noise_sigma,
               self.instance_noise_sigma) < 0:
            raise InvalidSpec("noise sigmas must be >= 0")
        if not 1 <= self.min_tasks <= self.max_tasks:
            raise InvalidSpec("need 1 <= min_tasks <= max_tasks")
        if self.mtbf <= 0:
            raise InvalidSpec("mtbf must be > 0")
        if self.mean_task_runtime < 0:
            raise InvalidSpec("mean_task_runtime must be >= 0")
        if self.submit_interval <= 0:
            raise InvalidSpec("submit_interval must be > 0")
        object.__setattr__(self, "stage_types", dict(self.stage_types))

    @property
    def failure_rate(self) -> float:
        return self.mean_task_runtime / self.mtbf

    def to_dict(self) -> dict:
        doc = {
            "job_count": self.job_count,
            "template_count": self.template_count,
            "min_stages": self.min_stages,
            "max_stages": self.max_stages,
            "max_layers": self.max_layers,
            "edge_density": self.edge_density,
            "stage_types": {
                name: profile.to_dict()
                for name, profile in sorted(self.stage_types.items())
            },
            "template_bias_sigma": self.template_bias_sigma,
            "estimate_noise_sigma": self.estimate_noise_sigma,
            "instance_noise_sigma": self.instance_noise_sigma,
            "min_tasks": self.min_tasks,
            "max_tasks": self.max_tasks,
            "mtbf": self.mtbf,
            "mean_task_runtime": self.mean_task_runtime,
            "submit_interval": self.submit_interval,
            "seed": self.seed,
        }
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "WorkloadSpec":
        kwargs = dict(doc)
        if "stage_types" in kwargs:
            kwargs["stage_types"] = {
                name: StageTypeProfile.from_dict(profile)
                for name, profile in kwargs["stage_types"].items()
            }
        return cls(**kwargs)


@dataclass(frozen=True)
class Workload:
    spec: WorkloadSpec
    jobs: tuple[JobGraph, ...]
    telemetry: tuple[TelemetryRecord, ...]


# ---------------------------------------------------------------------------
# Generation


def _layered_structure(rng: np.random.Generator, spec: WorkloadSpec) -> tuple[list[int], list[list[int]]]:
    """Pick a stage count, assign stages to layers, wire forward edges.

    Returns (layer index per stage, upstream stage indices per stage). Every
    non-source stage gets at least one parent in the previous layer, so the
    graph is acyclic and reasonably connected by construction.
    """
    n = int(rng.integers(spec.min_stages, spec.max_stages + 1))
    if n == 1:
        return [0], [[]]
    layer_cap = min(n, spec.max_layers)
    layers = int(rng.integers(2, layer_cap + 1)) if layer_cap >= 2 else 1
    # A permutation of 0..n-1 taken mod layers hits every label, so no layer
    # is empty; sorting makes stage ids follow layer order (edges go forward).
    layer_of = sorted(int(x) % layers for x in rng.permutation(n))

    by_layer: dict[int, list[int]] = {}
    for i, lay in enumerate(layer_of):
        by_layer.setdefault(lay, []).append(i)

    upstream: list[list[int]] = [[] for _ in range(n)]
    for i in range(n):
        lay = layer_of[i]
        if lay == 0:
            continue
        previous = by_layer[lay - 1]
        parent = int(previous[rng.integers(len(previous))])
        chosen = {parent}
        for u in previous:
            if u != parent and rng.random() < spec.edge_density:
                chosen.add(u)
        for distant_layer in range(lay - 1):
            for u in by_layer[distant_layer]:
                if rng.random() < spec.edge_density / 3.0:
                    chosen.add(u)
        upstream[i] = sorted(chosen)
    return layer_of, upstream


@dataclass(frozen=True)
class _Template:
    template_id: str
    upstream: tuple[tuple[int, ...], ...]
    stage_types: tuple[str, ...]
    exec_truth: tuple[float, ...]
    size_truth: tuple[float, ...]
    task_counts: tuple[int, ...]
    exec_bias: float
    size_bias: float


def _build_templates(rng: np.random.Generator, spec: WorkloadSpec) -> list[_Template]:
    type_names = sorted(spec.stage_types)
    affinities = np.array([spec.stage_types[nm].depth_affinity for nm in type_names])
    templates = []
    for t in range(spec.template_count):
        layer_of, upstream = _layered_structure(rng, spec)
        n = len(upstream)
        layer_count = max(layer_of) + 1
        stage_types = []
        exec_truth = []
        size_truth = []
        task_counts = []
        for i in range(n):
            depth = layer_of[i] / (layer_count - 1) if layer_count > 1 else 0.0
            weights = np.exp(-(((depth - affinities) / 0.25) ** 2))
            name = type_names[int(rng.choice(len(type_names), p=weights / weights.sum()))]
            profile = spec.stage_types[name]
            stage_types.append(name)
            exec_truth.append(float(rng.lognormal(profile.exec_log_mean, profile.exec_log_sigma)))
            size_truth.append(float(rng.lognormal(profile.size_log_mean, profile.size_log_sigma)))
            task_counts.append(int(rng.integers(spec.min_tasks, spec.max_tasks + 1)))
        templates.append(
            _Template(
                template_id=f"tmpl{t:03d}",
                upstream=tuple(tuple(u) for u in upstream),
                stage_types=tuple(stage_types),
                exec_truth=tuple(exec_truth),
                size_truth=tuple(size_truth),
                task_counts=tuple(task_counts),
                exec_bias=float(rng.lognormal(0.0, spec.template_bias_sigma)),
                size_bias=float(rng.lognormal(0.0, spec.template_bias_sigma)),
            )
        )
    return templates


def _stage_id(i: int) -> str:
    return f"s{i:03d}"


def generate_workload(spec: WorkloadSpec) -> Workload:
    """Deterministically expand a spec into jobs plus ground-truth telemetry.

    Jobs carry the planner's view (noisy estimates as exec_time/output_size
    and optimizer features); telemetry carries what "actually" happened,
    scheduled with per-type pipelining overlap.
    """
    rng = np.random.default_rng(spec.seed)
    templates = _build_templates(rng, spec)
    jobs: list[JobGraph] = []
    telemetry: list[TelemetryRecord] = []
    for j in range(spec.job_count):
        template = templates[j % len(templates)]
        job_id = f"job{j:06d}"
        n = len(template.upstream)

        actual_exec = []
        actual_size = []
        est_cost = []
        est_card = []
        est_exclusive = []
        for i in range(n):
            profile = spec.stage_types[template.stage_types[i]]
            exponent = profile.estimate_exponent
            coupling = profile.instance_coupling
            f_exec = float(rng.lognormal(0.0, spec.instance_noise_sigma))
            f_size = float(rng.lognormal(0.0, spec.instance_noise_sigma))
            actual_exec.append(template.exec_truth[i] * f_exec)
            actual_size.append(template.size_truth[i] * f_size)
            est_cost.append(
                template.exec_truth[i] ** exponent
                * template.exec_bias
                * f_exec**coupling
                * float(rng.lognormal(0.0, spec.estimate_noise_sigma))
            )
            est_card.append(
                template.size_truth[i] ** exponent
                * template.size_bias
                * f_size**coupling
                * float(rng.lognormal(0.0, spec.estimate_noise_sigma))
            )
            est_exclusive.append(est_cost[i] * float(rng.uniform(0.6, 1.0)))

        stages = []
        for i in range(n):
            upstream_ids = tuple(_stage_id(u) for u in template.upstream[i])
            est_input = math.fsum(est_card[u] for u in template.upstream[i])
            stage_type = template.stage_types[i]
            stages.append(
                StageNode(
                    id=_stage_id(i),
                    stage_type=stage_type,
                    exec_time=est_cost[i],
                    output_size=est_card[i],
                    task_count=template.task_counts[i],
                    upstream=upstream_ids,
                    optimizer_features={
                        "estimated_cost": est_cost[i],
                        "estimated_input_cardinality": est_input,
                        "estimated_exclusive_cost": est_exclusive[i],
                        "estimated_cardinality": est_card[i],
                    },
                    name_tokens=stage_name_tokens(
                        template.template_id, stage_type, _stage_id(i)
                    ),
                )
            )
        graph = JobGraph(
            job_id=job_id,
            stages=tuple(stages),
            template_id=template.template_id,
            submit_time=j * spec.submit_interval,
        )
        jobs.append(graph)

        # Pipelined ground-truth schedule: a stage may start once each input
        # is far enough along, not necessarily finished.
        starts = [0.0] * n
        ends = [0.0] * n
        for i in range(n):
            overlap = spec.stage_types[template.stage_types[i]].overlap
            ready = 0.0
            for u in template.upstream[i]:
                ready = max(ready, ends[u] - overlap * actual_exec[u])
            starts[i] = max(0.0, ready)
            ends[i] = starts[i] + actual_exec[i]
        for i in range(n):
            telemetry.append(
                TelemetryRecord(
                    job_id=job_id,
                    template_id=template.template_id,
                    stage_id=_stage_id(i),
                    stage_type=template.stage_types[i],
                    actual_exec_time=actual_exec[i],
                    actual_output_size=actual_size[i],
                    actual_start=starts[i],
                    actual_end=ends[i],
                    task_count=template.task_counts[i],
                    optimizer_features=dict(stages[i].optimizer_features),
                )
            )
    return Workload(spec=spec, jobs=tuple(jobs), telemetry=tuple(telemetry))


# ---------------------------------------------------------------------------
# Persistence and ingestion


def save_workload(workload: Workload, directory: str | Path) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    save_jobs(workload.jobs, directory / "jobs.json")
    write_telemetry_csv(workload.telemetry, directory / "telemetry.csv")
    with open(directory / "spec.json", "w", encoding="utf-8") as fh:
        json.dump(workload.spec.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_workload(directory: str | Path) -> Workload:
    directory = Path(directory)
    with open(directory / "spec.json", encoding="utf-8") as fh:
        spec = WorkloadSpec.from_dict(json.load(fh))
    jobs = load_jobs(directory / "jobs.json")
    telemetry = read_telemetry_csv(directory / "telemetry.csv")
    return Workload(spec=spec, jobs=tuple(jobs), telemetry=tuple(telemetry))


def ingest_telemetry(
    path: str | Path, jobs_path: str | Path | None = None
) -> tuple[list[TelemetryRecord], list[JobGraph] | None]:
    """Read telemetry CSV, optionally with the job file that produced it."""
    records = read_telemetry_csv(path)
    jobs = load_jobs(jobs_path) if jobs_path is not None else None
    return records, jobs


def telemetry_by_job(records: Iterable[TelemetryRecord]) -> dict[str, list[TelemetryRecord]]:
    grouped: dict[str, list[TelemetryRecord]] = {}
    for record in records:
        grouped.setdefault(record.job_id, []).append(record)
    return grouped


def actual_schedule(records: Sequence[TelemetryRecord]) -> StageSchedule:
    """Observed schedule of one job, straight from its telemetry rows."""
    start = {r.stage_id: r.actual_start for r in records}
    end = {r.stage_id: r.actual_end for r in records}
    job_end = max(end.values(), default=0.0)
    return StageSchedule(
        start=start,
        end=end,
        job_end=job_end,
        ttl={sid: job_end - t for sid, t in end.items()},
        tfs=dict(start),
    )


# ---------------------------------------------------------------------------
# Failure injection


@dataclass(frozen=True)
class RecoveryEstimate:
    trials: int
    event_rate: float
    mean_saving: float
    saving_fraction: float
    std_error: float


def simulate_recovery_saving(
    graph: JobGraph,
    schedule: StageSchedule,
    cut: CutAssignment,
    delta: float,
    trials: int,
    seed: int,
    chunk: int = 200_000,
) -> RecoveryEstimate:
    """Monte Carlo estimate of the recovery saving a cut earns.

    Per trial each stage fails independently with 1 - (1-delta)^tasks. If
    the earliest failure (by simulated end time) lands after the cut, the
    job restarts from the checkpoint and saves the earliest post-cut start
    time; any earlier failure restarts from scratch and saves nothing. The
    fraction normalizes by job runtime.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if not 0.0 <= delta < 1.0:
        raise ValueError("delta must be in [0, 1)")
    order = sorted((s.id for s in graph.stages), key=lambda sid: (schedule.end[sid], sid))
    if not order:
        return RecoveryEstimate(trials, 0.0, 0.0, 0.0, 0.0)
    tasks = {s.id: s.task_count for s in graph.stages}
    fail_prob = np.array([1.0 - (1.0 - delta) ** tasks[sid] for sid in order])
    is_post = np.array([sid not in cut.pre_cut for sid in order])
    post = [sid for sid in order if sid not in cut.pre_cut]
    gain = min((schedule.tfs[sid] for sid in post), default=0.0)

    rng = np.random.default_rng(seed)
    events = 0
    done = 0
    while done < trials:
        m = min(chunk, trials - done)
        fails = rng.random((m, len(order))) < fail_prob
        any_fail = fails.any(axis=1)
        first = fails.argmax(axis=1)
        events += int(np.count_nonzero(any_fail & is_post[first]))
        done += m
    rate = events / trials
    mean_saving = rate * gain
    std_error = gain * math.sqrt(rate * (1.0 - rate) / trials)
    fraction = mean_saving / schedule.job_end if schedule.job_end > 0 else 0.0
    return RecoveryEstimate(trials, rate, mean_saving, fraction, std_error)


def _job_seed(job_id: str, seed: int) -> int:
    return (zlib.crc32(job_id.encode("utf-8")) ^ seed) & 0xFFFFFFFF


def evaluate_recovery(
    workload: Workload,
    cuts: Mapping[str, CutAssignment],
    delta: float,
    trials: int,
    seed: int,
) -> tuple[float, dict[str, RecoveryEstimate]]:
    """Mean recovery-saving fraction over the jobs named in ``cuts``,
    simulated against each job's observed (telemetry) schedule."""
    grouped = telemetry_by_job(workload.telemetry)
    by_id = {job.job_id: job for job in workload.jobs}
    estimates: dict[str, RecoveryEstimate] = {}
    for job_id in sorted(cuts):
        graph = by_id[job_id]
        schedule = actual_schedule(grouped[job_id])
        estimates[job_id] = simulate_recovery_saving(
            graph, schedule, cuts[job_id], delta, trials, _job_seed(job_id, seed)
        )
    if not estimates:
        return 0.0, estimates
    mean_fraction = math.fsum(e.saving_fraction for e in estimates.values()) / len(estimates)
    return mean_fraction, estimates


# ---------------------------------------------------------------------------
# Back-testing


@dataclass(frozen=True)
class StrategyResult:
    strategy: str
    mean_saving_fraction: float
    p50_saving_fraction: float
    p95_saving_fraction: float
    mean_recovery_fraction: float | None
    global_storage_bytes: float
    seconds_per_job: float

    def to_dict(self) -> dict:
        return {
            "strategy": self.strategy,
            "mean_saving_fraction": self.mean_saving_fraction,
            "p50": self.p50_saving_fraction,
            "p95": self.p95_saving_fraction,
            "mean_recovery_fraction": self.mean_recovery_fraction,
            "global_storage_bytes": self.global_storage_bytes,
            "seconds_per_job": self.seconds_per_job,
        }


@dataclass(frozen=True)
class BacktestReport:
    objective_kind: str
    scored_job_count: int
    train_job_count: int
    rows: tuple[StrategyResult, ...]
    curve: tuple[tuple[float, float], ...]
    per_job: Mapping[str, Mapping[str, float]]
    meta: Mapping[str, object]

    def to_doc(self) -> dict:
        return {
            "objective": self.objective_kind,
            "scored_job_count": self.scored_job_count,
            "train_job_count": self.train_job_count,
            "strategies": [row.to_dict() for row in self.rows],
            "curve": [
                {"relative_time": x, "saving_fraction": y} for x, y in self.curve
            ],
            "meta": dict(self.meta),
        }


REPORT_CSV_COLUMNS = (
    "strategy",
    "mean_saving_fraction",
    "p50",
    "p95",
    "global_storage_bytes",
    "seconds_per_job",
)


def write_report_csv(doc: dict, path: str | Path) -> None:
    lines = [",".join(REPORT_CSV_COLUMNS)]
    for row in doc["strategies"]:
        lines.append(
            ",".join(
                [row["strategy"]]
                + [repr(float(row[c])) for c in REPORT_CSV_COLUMNS[1:]]
            )
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_curve_csv(doc: dict, path: str | Path) -> None:
    lines = ["relative_time,saving_fraction"]
    for point in doc.get("curve", []):
        lines.append(f"{point['relative_time']!r},{point['saving_fraction']!r}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def render_report_table(doc: dict) -> str:
    """Plain-text table of a back-test report document."""
    headers = list(REPORT_CSV_COLUMNS)
    rows = [
        [r["strategy"]] + [f"{float(r[c]):.6g}" for c in headers[1:]]
        for r in doc["strategies"]
    ]
    widths = [
        max(len(headers[i]), *(len(row[i]) for row in rows)) if rows else len(headers[i])
        for i in range(len(headers))
    ]
    out = [
        "  ".join(h.ljust(widths[i]) for i, h in enumerate(headers)),
        "  ".join("-" * w for w in widths),
    ]
    for row in rows:
        out.append("  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)))
    header = (
        f"objective={doc['objective']} scored_jobs={doc['scored_job_count']} "
        f"train_jobs={doc['train_job_count']}"
    )
    note = (
        "note: saving magnitudes depend on the workload mix;"
        " compare strategy ordering, not absolute values."
    )
    return header + "\n" + "\n".join(out) + "\n" + note + "\n"


@dataclass(frozen=True)
class _JobCase:
    """Everything one job contributes to the back-test, precomputed."""

    graph: JobGraph
    actual: StageSchedule
    actual_sizes: dict[str, float]
    total_byte_seconds: float


def _job_case(graph: JobGraph, records: Sequence[TelemetryRecord]) -> _JobCase:
    sched = actual_schedule(records)
    sizes = {r.stage_id: r.actual_output_size for r in records}
    total = math.fsum(sizes[sid] * sched.ttl[sid] for sid in sorted(sizes))
    return _JobCase(graph=graph, actual=sched, actual_sizes=sizes, total_byte_seconds=total)


def _ml_cut(
    graph: JobGraph,
    predicted: StageSchedule,
    size_hat: Mapping[str, float],
    adjuster: TtlAdjuster | None = None,
) -> CutSolution:
    """Temp-storage cut from a predicted schedule, optionally lifetime-adjusted.

    With an adjuster, the scan order stays pinned to the predicted schedule
    and the adjusted lifetimes only pick the prefix depth: a per-type
    correction can sharpen lifetime magnitudes while being too coarse to
    re-rank individual stages, so re-sorting by it would trade a systematic
    improvement for ordering noise.
    """
    if adjuster is None or not adjuster.models:
        return heuristic_temp_storage_cut(graph, predicted, output_sizes=size_hat)
    adjusted = adjust_ttl(adjuster, graph, predicted)
    order = sorted(
        (s.id for s in graph.stages), key=lambda sid: (-predicted.ttl[sid], sid)
    )
    return heuristic_temp_storage_cut(
        graph, predicted, output_sizes=size_hat, ttl=adjusted, scan_order=order
    )


def _strategy_cut(
    strategy: str,
    case: _JobCase,
    objective: CheckpointObjective,
    bank: ModelBank | None,
    adjuster: TtlAdjuster | None,
    history: TelemetryHistory | None,
    seed: int,
) -> CutSolution:
    graph = case.graph
    recovery = objective.kind == "recovery"
    if strategy in ("random", "mid_point", "op", "occ"):
        est = simulate_schedule(graph)
        if strategy == "random":
            return baseline_cut(graph, est, "random", seed=_job_seed(graph.job_id, seed))
        if strategy == "mid_point":
            return baseline_cut(graph, est, "mid_point")
        if recovery:
            return heuristic_recovery_cut(graph, est, objective.failure_rate)
        if strategy == "op":
            return heuristic_temp_storage_cut(graph, est)
        ones = {s.id: 1.0 for s in graph.stages}
        return heuristic_temp_storage_cut(graph, est, output_sizes=ones)
    if strategy in ("oml", "omls"):
        if bank is None or (strategy == "omls" and adjuster is None):
            raise MissingModels(strategy)
        exec_hat: dict[str, float] = {}
        size_hat: dict[str, float] = {}
        for stage in graph.stages:
            e, s = predict_stage_costs(bank, stage, history, graph.template_id)
            exec_hat[stage.id] = e
            size_hat[stage.id] = s
        predicted = simulate_schedule(graph, exec_times=exec_hat)
        if recovery:
            return heuristic_recovery_cut(graph, predicted, objective.failure_rate)
        return _ml_cut(graph, predicted, size_hat, adjuster if strategy == "omls" else None)
    if strategy == "optimal":
        if recovery:
            return heuristic_recovery_cut(graph, case.actual, objective.failure_rate)
        return heuristic_temp_storage_cut(
            graph, case.actual, output_sizes=case.actual_sizes
        )
    raise ValueError(f"unknown strategy {strategy!r}")


def _score_job(
    case: _JobCase,
    strategies: Sequence[str],
    objective: CheckpointObjective,
    bank: ModelBank | None,
    adjuster: TtlAdjuster | None,
    history: TelemetryHistory | None,
    seed: int,
) -> dict[str, tuple[float, float, float, float]]:
    """Per strategy: (saving fraction, recovery fraction, storage, seconds)."""
    out = {}
    for strategy in strategies:
        begin = time.perf_counter()
        solution = _strategy_cut(strategy, case, objective, bank, adjuster, history, seed)
        elapsed = time.perf_counter() - begin
        cut = solution.cuts[0]
        saving = temp_saving(
            case.graph, case.actual, cut, output_sizes=case.actual_sizes
        )
        fraction = saving / case.total_byte_seconds if case.total_byte_seconds > 0 else 0.0
        storage = global_storage(case.graph, cut, output_sizes=case.actual_sizes)
        if objective.kind == "recovery":
            value, _, _ = recovery_objective(
                case.graph, case.actual, cut, objective.failure_rate
            )
            recovery_fraction = value / case.actual.job_end if case.actual.job_end > 0 else 0.0
        else:
            recovery_fraction = math.nan
        out[strategy] = (fraction, recovery_fraction, storage, elapsed)
    return out


_WORKER_STATE: dict = {}


def _worker_init(payload) -> None:
    _WORKER_STATE["payload"] = payload


def _worker_score(case: _JobCase):
    strategies, objective, bank, adjuster, history, seed = _WORKER_STATE["payload"]
    return case.graph.job_id, _score_job(
        case, strategies, objective, bank, adjuster, history, seed
    )


def _fit_backtest_models(
    train_jobs: Sequence[JobGraph],
    train_records: Sequence[TelemetryRecord],
    backend: str,
    min_samples: int,
) -> tuple[ModelBank, TtlAdjuster, TelemetryHistory]:
    try:
        bank = fit_model_bank(
            train_records, scope="per_stage_type", backend=backend, min_samples=min_samples
        )
    except CheckpointerError as exc:
        raise MissingModels("oml", detail=str(exc)) from exc
    history = TelemetryHistory.from_records(train_records)

    grouped = telemetry_by_job(train_records)
    sim_ttl: list[float] = []
    sim_tfs: list[float] = []
    act_ttl: list[float] = []
    types: list[str] = []
    prepared: list[tuple[JobGraph, StageSchedule, dict[str, float], _JobCase]] = []
    for job in train_jobs:
        records = grouped.get(job.job_id)
        if not records:
            continue
        exec_hat = {}
        size_hat = {}
        for stage in job.stages:
            e, s = predict_stage_costs(bank, stage, history, job.template_id)
            exec_hat[stage.id] = e
            size_hat[stage.id] = s
        predicted = simulate_schedule(job, exec_times=exec_hat)
        case = _job_case(job, records)
        prepared.append((job, predicted, size_hat, case))
        for stage in job.stages:
            sim_ttl.append(predicted.ttl[stage.id])
            sim_tfs.append(predicted.tfs[stage.id])
            act_ttl.append(case.actual.ttl[stage.id])
            types.append(stage.stage_type)
    adjuster = fit_ttl_adjuster(sim_ttl, sim_tfs, act_ttl, types, min_samples=min_samples)
    adjuster = _gate_adjuster_on_cut_quality(adjuster, prepared)
    return bank, adjuster, history


def _mean_cut_fraction(
    prepared: Sequence[tuple[JobGraph, StageSchedule, dict[str, float], _JobCase]],
    adjuster: TtlAdjuster | None,
) -> float:
    total = 0.0
    for job, predicted, size_hat, case in prepared:
        solution = _ml_cut(job, predicted, size_hat, adjuster)
        saving = temp_saving(
            job, case.actual, solution.cuts[0], output_sizes=case.actual_sizes
        )
        if case.total_byte_seconds > 0:
            total += saving / case.total_byte_seconds
    return total / len(prepared) if prepared else 0.0


def _gate_adjuster_on_cut_quality(
    adjuster: TtlAdjuster,
    prepared: Sequence[tuple[JobGraph, StageSchedule, dict[str, float], _JobCase]],
) -> TtlAdjuster:
    """Keep only the per-type lifetime corrections that improve training cuts.

    A correction can reduce pointwise lifetime error and still pick worse
    prefixes, because the cut depends on the lifetime at the scan boundary
    rather than the average error. The arbiter here is therefore the same
    score the backtest reports — saving fraction against the observed
    schedule — computed on the training split. Greedy forward selection
    starts from no correction and admits one stage type at a time, keeping
    it only while the training mean improves by a real margin: hairline
    in-sample gains are as likely as not to invert out of sample, and an
    empty selection just degrades the adjusted strategy to the unadjusted
    one, which is the safe floor.
    """
    if not adjuster.models or not prepared:
        return adjuster
    margin = 0.005
    selected: dict[str, object] = {}
    best = _mean_cut_fraction(prepared, None)
    remaining = dict(adjuster.models)
    while remaining:
        scored = [
            (_mean_cut_fraction(
                prepared, TtlAdjuster(models={**selected, st: remaining[st]})
            ), st)
            for st in sorted(remaining)
        ]
        value, stage_type = max(scored)
        if value < best + margin:
            break
        best = value
        selected[stage_type] = remaining.pop(stage_type)
    return TtlAdjuster(models=selected)


def run_backtest(
    workload: Workload,
    strategies: Sequence[str] = STRATEGIES,
    objective: CheckpointObjective | None = None,
    *,
    train_fraction: float = 0.5,
    backend: str = "linear",
    min_samples: int = 30,
    seed: int = 0,
    workers: int | None = None,
) -> BacktestReport:
    """Replay a workload against cut strategies and score on ground truth.

    Jobs are split by submit time: the earlier ``train_fraction`` feeds the
    cost models and the lifetime adjuster, the rest are scored. Later
    evaluation on truth uses the observed schedule and actual output sizes,
    whatever inputs a strategy consumed. The saving fraction denominator is
    the job's total temp byte-seconds with no checkpoint at all.
    """
    if objective is None:
        objective = CheckpointObjective.temp_storage()
    strategies = list(dict.fromkeys(strategies))
    unknown = [s for s in strategies if s not in STRATEGIES]
    if unknown:
        raise ValueError(f"unknown strategies: {unknown}")
    if not workload.jobs:
        raise ValueError("workload has no jobs")
    if not 0.0 <= train_fraction < 1.0:
        raise ValueError("train_fraction must be in [0, 1)")

    ordered = sorted(workload.jobs, key=lambda j: (j.submit_time, j.job_id))
    split = math.ceil(len(ordered) * train_fraction)
    train_jobs, test_jobs = ordered[:split], ordered[split:]
    if not test_jobs:
        raise ValueError("train_fraction leaves no jobs to score")

    grouped = telemetry_by_job(workload.telemetry)
    bank = adjuster = history = None
    needs_models = any(s in ("oml", "omls") for s in strategies)
    if needs_models:
        train_records = [r for job in train_jobs for r in grouped.get(job.job_id, ())]
        bank, adjuster, history = _fit_backtest_models(
            train_jobs, train_records, backend, min_samples
        )

    began = time.perf_counter()
    cases = [_job_case(job, grouped[job.job_id]) for job in test_jobs]
    payload = (strategies, objective, bank, adjuster, history, seed)
    results: dict[str, dict[str, tuple[float, float, float, float]]] = {}
    if workers and workers > 1:
        chunk = max(1, len(cases) // (workers * 4))
        with ProcessPoolExecutor(
            max_workers=workers, initializer=_worker_init, initargs=(payload,)
        ) as pool:
            for job_id, scores in pool.map(_worker_score, cases, chunksize=chunk):
                results[job_id] = scores
    else:
        _worker_init(payload)
        for case in cases:
            job_id, scores = _worker_score(case)
            results[job_id] = scores

    job_ids = sorted(results)
    rows = []
    per_job: dict[str, dict[str, float]] = {s: {} for s in strategies}
    for strategy in strategies:
        fractions = np.array([results[j][strategy][0] for j in job_ids])
        recoveries = [results[j][strategy][1] for j in job_ids]
        storages = [results[j][strategy][2] for j in job_ids]
        seconds = math.fsum(results[j][strategy][3] for j in job_ids)
        for j in job_ids:
            per_job[strategy][j] = results[j][strategy][0]
        mean_recovery = (
            math.fsum(recoveries) / len(recoveries)
            if objective.kind == "recovery"
            else None
        )
        rows.append(
            StrategyResult(
                strategy=strategy,
                mean_saving_fraction=float(fractions.mean()),
                p50_saving_fraction=float(np.quantile(fractions, 0.5)),
                p95_saving_fraction=float(np.quantile(fractions, 0.95)),
                mean_recovery_fraction=mean_recovery,
                global_storage_bytes=math.fsum(storages) / len(storages),
                seconds_per_job=seconds / len(job_ids),
            )
        )

    curve = _saving_curve(cases)
    meta = {
        "seed": seed,
        "train_fraction": train_fraction,
        "backend": backend,
        "wall_seconds": time.perf_counter() - began,
    }
    return BacktestReport(
        objective_kind=objective.kind,
        scored_job_count=len(test_jobs),
        train_job_count=len(train_jobs),
        rows=tuple(rows),
        curve=curve,
        per_job=per_job,
        meta=meta,
    )


def _saving_curve(cases: Sequence[_JobCase], points: int = 101) -> tuple[tuple[float, float], ...]:
    """Workload-level potential saving versus relative cut time.

    For each grid point q, every job is cut right after the stages that
    finished by q times its runtime, the freed byte-seconds are summed over
    jobs, and the total normalizes by the no-checkpoint byte-second total.
    """
    grid = np.linspace(0.0, 1.0, points)
    totals = np.zeros(points)
    denominator = math.fsum(case.total_byte_seconds for case in cases)
    for case in cases:
        sched = case.actual
        order = sorted(
            (s.id for s in case.graph.stages), key=lambda sid: (sched.end[sid], sid)
        )
        if not order:
            continue
        ends = np.array([sched.end[sid] for sid in order])
        running_sum = 0.0
        running_min = math.inf
        values = []
        for sid in order:
            running_sum += case.actual_sizes[sid]
            running_min = min(running_min, sched.ttl[sid])
            values.append(running_sum * running_min)
        values = np.array([0.0] + values)
        counts = np.searchsorted(ends, grid * sched.job_end, side="right")
        totals += values[counts]
    if denominator > 0:
        totals /= denominator
    return tuple((float(q), float(v)) for q, v in zip(grid, totals))
