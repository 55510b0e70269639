"""Stage schedule simulation with strict stage boundaries, plus TTL correction.

The simulator walks the DAG in dependency order. A stage starts when the last
of its upstream stages finishes and runs for its full duration; downstream
never overlaps upstream. From the resulting timeline it derives, per stage:

* ttl: how long the stage's output must stay in temp storage, measured from
  the stage's end to the end of the whole job, and
* tfs: how much recovery time a restart from this point saves, measured from
  job start to the stage's start.

Real runtimes pipeline stages together, so the strict-boundary ttl tends to
run high in a stage-type-specific way. TtlAdjuster learns that correction
from telemetry with a per-type regression on (ttl, tfs).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import MissingExecTime, NegativeExecTime
from .graph import JobGraph, topological_order
from .regression import FittedRegressor, get_backend, regressor_from_dict


@dataclass(frozen=True)
class StageSchedule:
    """Simulated timeline for one job. All maps are keyed by stage id."""

    start: Mapping[str, float]
    end: Mapping[str, float]
    job_end: float
    ttl: Mapping[str, float]
    tfs: Mapping[str, float]


def simulate_schedule(
    graph: JobGraph, exec_times: Mapping[str, float] | None = None
) -> StageSchedule:
    """Simulate start and end times for every stage.

    ``exec_times`` defaults to each stage's own exec_time field. A stage with
    no entry raises MissingExecTime; a negative duration raises
    NegativeExecTime.
    """
    if exec_times is None:
        exec_times = {s.id: s.exec_time for s in graph.stages}
    start: dict[str, float] = {}
    end: dict[str, float] = {}
    for sid in topological_order(graph):
        if sid not in exec_times:
            raise MissingExecTime(sid)
        duration = float(exec_times[sid])
        if duration < 0:
            raise NegativeExecTime(sid, duration)
        ups = graph.stages_by_id[sid].upstream
        start[sid] = max((end[u] for u in ups), default=0.0)
        end[sid] = start[sid] + duration
    job_end = max(end.values(), default=0.0)
    ttl = {sid: job_end - t for sid, t in end.items()}
    tfs = dict(start)
    return StageSchedule(start=start, end=end, job_end=job_end, ttl=ttl, tfs=tfs)


def compute_ttl_tfs(schedule: StageSchedule) -> dict[str, tuple[float, float]]:
    """Re-derive (ttl, tfs) per stage from the raw timeline."""
    return {
        sid: (schedule.job_end - schedule.end[sid], schedule.start[sid])
        for sid in schedule.end
    }


# ---------------------------------------------------------------------------
# TTL adjustment


@dataclass(frozen=True)
class TtlAdjuster:
    """Per-stage-type correction of simulated ttl toward observed ttl.

    Models live on a log1p scale: schedule distortions are close to
    multiplicative and job durations span orders of magnitude, so a raw
    affine fit would be dominated by the largest jobs. Stage types without
    a fitted model fall through to the identity, so an untrained adjuster
    is always safe to apply.
    """

    models: Mapping[str, FittedRegressor] = field(default_factory=dict)

    def adjust(self, ttl: float, tfs: float, stage_type: str) -> float:
        model = self.models.get(stage_type)
        if model is None:
            return ttl
        features = np.log1p(np.clip(np.array([[ttl, tfs]], dtype=float), 0.0, None))
        pred = float(model.predict(features)[0])
        return max(0.0, math.expm1(pred))

    def to_dict(self) -> dict:
        return {"models": {k: m.to_dict() for k, m in sorted(self.models.items())}}

    @classmethod
    def from_dict(cls, d: dict) -> "TtlAdjuster":
        return cls(
            models={k: regressor_from_dict(v) for k, v in d.get("models", {}).items()}
        )


def fit_ttl_adjuster(
    simulated_ttl: Sequence[float],
    simulated_tfs: Sequence[float],
    actual_ttl: Sequence[float],
    stage_types: Sequence[str],
    *,
    backend: str = "linear",
    min_samples: int = 30,
) -> TtlAdjuster:
    """Fit one regression per stage type mapping (ttl, tfs) to observed ttl.

    Fitting happens on a log1p scale (see TtlAdjuster). Types with fewer
    than ``min_samples`` observations are skipped and keep identity
    behavior. A fitted model is kept only when it beats the identity
    mapping on a held-out tail of its rows; a correction that cannot beat
    "leave the simulated value alone" out of sample would only add noise.
    """
    n = len(actual_ttl)
    if not (len(simulated_ttl) == len(simulated_tfs) == len(stage_types) == n):
        raise ValueError("training sequences must have equal lengths")
    fitter = get_backend(backend)
    by_type: dict[str, list[int]] = {}
    for i, st in enumerate(stage_types):
        by_type.setdefault(st, []).append(i)
    models: dict[str, FittedRegressor] = {}
    for st in sorted(by_type):
        rows = by_type[st]
        if len(rows) < min_samples:
            continue
        X = np.log1p(
            np.clip(
                np.array(
                    [[simulated_ttl[i], simulated_tfs[i]] for i in rows], dtype=float
                ),
                0.0,
                None,
            )
        )
        y = np.log1p(np.clip(np.array([actual_ttl[i] for i in rows], dtype=float), 0.0, None))
        split = int(0.7 * len(rows))
        holdout = len(rows) - split
        if holdout < 8:
            continue
        probe = fitter.fit(X[:split], y[:split])
        mse_model = float(np.mean((probe.predict(X[split:]) - y[split:]) ** 2))
        mse_identity = float(np.mean((X[split:, 0] - y[split:]) ** 2))
        if mse_model <= 0.98 * mse_identity:
            models[st] = fitter.fit(X, y)
    return TtlAdjuster(models=models)


def adjust_ttl(
    adjuster: TtlAdjuster, graph: JobGraph, schedule: StageSchedule
) -> dict[str, float]:
    """Apply the adjuster to a simulated schedule, returning corrected ttl."""
    out: dict[str, float] = {}
    for stage in graph.stages:
        out[stage.id] = adjuster.adjust(
            schedule.ttl[stage.id], schedule.tfs[stage.id], stage.stage_type
        )
    return out
