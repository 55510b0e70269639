"""Job plans as DAGs of stages: validation, ordering, and cut bookkeeping."""

from __future__ import annotations

import heapq
import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Any, Iterable, Mapping

from .errors import (
    CycleDetected,
    DanglingReference,
    DuplicateStageId,
    SchemaError,
    UnknownStageId,
)


@dataclass(frozen=True)
class StageNode:
    """One executable stage of a job plan.

    ``exec_time`` and ``output_size`` may hold either optimizer estimates or
    measured values; which one is a caller decision. ``upstream`` lists the
    ids of stages whose output this stage consumes.
    """

    id: str
    stage_type: str = "unknown"
    exec_time: float = 0.0
    output_size: float = 0.0
    task_count: int = 1
    upstream: tuple[str, ...] = ()
    optimizer_features: Mapping[str, float] = field(default_factory=dict)
    name_tokens: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not self.id:
            raise ValueError("stage id must be a non-empty string")
        if self.exec_time < 0:
            raise ValueError(f"stage {self.id!r}: exec_time must be >= 0")
        if self.output_size < 0:
            raise ValueError(f"stage {self.id!r}: output_size must be >= 0")
        if self.task_count < 1:
            raise ValueError(f"stage {self.id!r}: task_count must be >= 1")
        object.__setattr__(self, "upstream", tuple(self.upstream))
        object.__setattr__(self, "name_tokens", tuple(str(t) for t in self.name_tokens))
        object.__setattr__(
            self, "optimizer_features", dict(self.optimizer_features)
        )


@dataclass(frozen=True)
class JobGraph:
    """A single job: a set of stages wired into a DAG by upstream references."""

    job_id: str
    stages: tuple[StageNode, ...]
    template_id: str = ""
    submit_time: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "stages", tuple(self.stages))

    @cached_property
    def stages_by_id(self) -> dict[str, StageNode]:
        return {s.id: s for s in self.stages}

    @cached_property
    def edges(self) -> tuple[tuple[str, str], ...]:
        """All (upstream, downstream) pairs, mirroring the stage upstream lists."""
        pairs = [(u, s.id) for s in self.stages for u in s.upstream]
        return tuple(sorted(pairs))

    @cached_property
    def downstream_ids(self) -> dict[str, tuple[str, ...]]:
        """Per stage, the ids of stages that consume its output, sorted."""
        out: dict[str, list[str]] = {s.id: [] for s in self.stages}
        for u, v in self.edges:
            out[u].append(v)
        return {k: tuple(sorted(vs)) for k, vs in out.items()}

    def stage(self, stage_id: str) -> StageNode:
        try:
            return self.stages_by_id[stage_id]
        except KeyError:
            raise UnknownStageId(stage_id) from None


@dataclass(frozen=True)
class CutAssignment:
    """A checkpoint cut, stored as the set of stages placed before the cut."""

    pre_cut: frozenset[str]

    def __post_init__(self) -> None:
        object.__setattr__(self, "pre_cut", frozenset(self.pre_cut))

    def cut_edges(self, graph: JobGraph) -> tuple[tuple[str, str], ...]:
        """Edges crossing the cut: upstream side in, downstream side out.

        This is the minimal crossing-edge set for the pre-cut assignment, so
        for every edge (u, v) the indicator satisfies crossed >= in(u) - in(v).
        """
        pre = self.pre_cut
        return tuple(e for e in graph.edges if e[0] in pre and e[1] not in pre)

    def checkpoint_stages(self, graph: JobGraph) -> frozenset[str]:
        """Pre-cut stages with at least one crossing edge; these persist output."""
        return frozenset(u for u, _ in self.cut_edges(graph))


def validate_graph(graph: JobGraph) -> JobGraph:
    """Check id uniqueness, reference resolution, and acyclicity.

    Returns the graph unchanged when valid. Raises DuplicateStageId,
    DanglingReference, or CycleDetected (carrying one offending cycle).
    """
    seen: set[str] = set()
    for stage in graph.stages:
        if stage.id in seen:
            raise DuplicateStageId(stage.id)
        seen.add(stage.id)
    for stage in graph.stages:
        for uid in stage.upstream:
            if uid == stage.id:
                raise CycleDetected((stage.id, stage.id))
            if uid not in seen:
                raise DanglingReference(uid, referenced_by=stage.id)

    order = _kahn_order(graph)
    if len(order) < len(graph.stages):
        raise CycleDetected(_find_cycle(graph, exclude=set(order)))
    return graph


def topological_order(graph: JobGraph) -> list[str]:
    """Stages in dependency order, ties broken by ascending stage id."""
    order = _kahn_order(graph)
    if len(order) < len(graph.stages):
        raise CycleDetected(_find_cycle(graph, exclude=set(order)))
    return order


def _kahn_order(graph: JobGraph) -> list[str]:
    indegree = {s.id: len(s.upstream) for s in graph.stages}
    ready = [sid for sid, deg in indegree.items() if deg == 0]
    heapq.heapify(ready)
    downstream = graph.downstream_ids
    order: list[str] = []
    while ready:
        sid = heapq.heappop(ready)
        order.append(sid)
        for vid in downstream.get(sid, ()):
            indegree[vid] -= 1
            if indegree[vid] == 0:
                heapq.heappush(ready, vid)
    return order


def _find_cycle(graph: JobGraph, exclude: set[str]) -> tuple[str, ...]:
    """Recover one concrete cycle among stages that Kahn's algorithm left over."""
    remaining = sorted(set(graph.stages_by_id) - exclude)
    state: dict[str, int] = {}
    stack: list[str] = []

    def walk(sid: str) -> tuple[str, ...] | None:
        state[sid] = 1
        stack.append(sid)
        for uid in graph.stages_by_id[sid].upstream:
            if uid in exclude:
                continue
            mark = state.get(uid, 0)
            if mark == 1:
                i = stack.index(uid)
                path = tuple(reversed(stack[i:]))
                return path + (path[0],)
            if mark == 0:
                found = walk(uid)
                if found:
                    return found
        state[sid] = 2
        stack.pop()
        return None

    for sid in remaining:
        if state.get(sid, 0) == 0:
            found = walk(sid)
            if found:
                return found
    raise AssertionError("cycle extraction called on an acyclic graph")


def classify_stages(
    graph: JobGraph, cut: CutAssignment
) -> tuple[frozenset[str], frozenset[str], frozenset[str]]:
    """Partition stages into (checkpoint, other pre-cut, post-cut) sets.

    Checkpoint stages are the pre-cut stages whose output crosses the cut.
    Pre-cut stages feeding only other pre-cut stages keep their output in
    temp storage and land in the middle set.
    """
    known = graph.stages_by_id
    for sid in cut.pre_cut:
        if sid not in known:
            raise UnknownStageId(sid)
    checkpoint = cut.checkpoint_stages(graph)
    other_pre = frozenset(cut.pre_cut - checkpoint)
    post = frozenset(set(known) - cut.pre_cut)
    return checkpoint, other_pre, post


# ---------------------------------------------------------------------------
# Job file round trip


def parse_jobs(doc: Mapping[str, Any]) -> list[JobGraph]:
    """Build validated JobGraphs from a parsed job document.

    Unknown fields are ignored. Optional stage fields get defaults; a missing
    ``id`` or ``job_id`` raises SchemaError.
    """
    jobs_raw = doc.get("jobs")
    if jobs_raw is None:
        raise SchemaError("jobs")
    jobs: list[JobGraph] = []
    for j, job_raw in enumerate(jobs_raw):
        if "job_id" not in job_raw:
            raise SchemaError(f"jobs[{j}].job_id")
        stages = []
        for i, s in enumerate(job_raw.get("stages", ())):
            if "id" not in s:
                raise SchemaError(f"jobs[{j}].stages[{i}].id")
            stages.append(
                StageNode(
                    id=str(s["id"]),
                    stage_type=str(s.get("stage_type", "unknown")),
                    exec_time=float(s.get("exec_time", 0.0)),
                    output_size=float(s.get("output_size", 0.0)),
                    task_count=int(s.get("task_count", 1)),
                    upstream=tuple(str(u) for u in s.get("upstream", ())),
                    optimizer_features={
                        str(k): float(v)
                        for k, v in (s.get("optimizer_features") or {}).items()
                    },
                    name_tokens=tuple(str(t) for t in s.get("name_tokens", ())),
                )
            )
        graph = JobGraph(
            job_id=str(job_raw["job_id"]),
            stages=tuple(stages),
            template_id=str(job_raw.get("template_id", "")),
            submit_time=float(job_raw.get("submit_time", 0.0)),
        )
        jobs.append(validate_graph(graph))
    return jobs


def jobs_to_doc(jobs: Iterable[JobGraph]) -> dict[str, Any]:
    return {
        "jobs": [
            {
                "job_id": g.job_id,
                "template_id": g.template_id,
                "submit_time": g.submit_time,
                "stages": [
                    {
                        "id": s.id,
                        "stage_type": s.stage_type,
                        "exec_time": s.exec_time,
                        "output_size": s.output_size,
                        "task_count": s.task_count,
                        "upstream": list(s.upstream),
                        "optimizer_features": dict(sorted(s.optimizer_features.items())),
                        "name_tokens": list(s.name_tokens),
                    }
                    for s in g.stages
                ],
            }
            for g in jobs
        ]
    }


def load_jobs(path: str | Path) -> list[JobGraph]:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_jobs(json.load(fh))


def save_jobs(jobs: Iterable[JobGraph], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(jobs_to_doc(jobs), fh, indent=2, sort_keys=True)
        fh.write("\n")
