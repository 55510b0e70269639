"""Checkpoint cut selection over a simulated schedule.

Two objectives are supported:

* temp_storage: maximize freed temp-storage byte-seconds minus a storage
  penalty. A cut frees, for every stage placed before it, that stage's
  output size times the shortest remaining lifetime among pre-cut outputs.
  The penalty is alpha times the bytes persisted by checkpoint stages.
* recovery: maximize expected recovery-time saving. A cut pays off when the
  first failure lands after it, in which case the job restarts from the cut
  instead of from scratch.

Solvers come in two speeds. The exact single-cut solver enumerates every
subset; it is written for clarity, serves as the ground-truth oracle, and is
capped by ``exact_cap``. The exact multi-cut solver runs a dynamic program
over the subset lattice, which visits the same search space as explicit
chain enumeration but prunes through shared subproblems. The heuristics scan
a single sorted candidate order in near-linear time; the temp-storage scan
is provably optimal for alpha = 0 because some maximizer is always a
keep-the-longest-lived-outputs threshold set, and every threshold set is a
prefix of the scan order.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import TooLargeForExact, UnknownStageId
from .graph import CutAssignment, JobGraph
from .simulator import StageSchedule

_OBJECTIVE_KINDS = ("temp_storage", "recovery")


@dataclass(frozen=True)
class CheckpointObjective:
    """What a solver optimizes, plus the constants the objective needs."""

    kind: str
    alpha: float = 0.0
    delta: float | None = None
    mean_task_runtime: float | None = None
    mtbf: float | None = None

    def __post_init__(self) -> None:
        if self.kind not in _OBJECTIVE_KINDS:
            raise ValueError(f"unknown objective kind {self.kind!r}")
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if self.kind == "recovery":
            rate = self.failure_rate
            if not 0.0 <= rate < 1.0:
                raise ValueError(f"per-task failure rate must be in [0, 1), got {rate}")

    @classmethod
    def temp_storage(cls, alpha: float = 0.0) -> "CheckpointObjective":
        return cls(kind="temp_storage", alpha=alpha)

    @classmethod
    def recovery(
        cls,
        delta: float | None = None,
        *,
        mean_task_runtime: float | None = None,
        mtbf: float | None = None,
    ) -> "CheckpointObjective":
        return cls(
            kind="recovery", delta=delta, mean_task_runtime=mean_task_runtime, mtbf=mtbf
        )

    @property
    def failure_rate(self) -> float:
        """Per-task failure probability over the job's run."""
        if self.delta is not None:
            return self.delta
        if self.mtbf is None or self.mean_task_runtime is None:
            raise ValueError("recovery objective needs delta, or mtbf and mean_task_runtime")
        if self.mtbf <= 0:
            raise ValueError("mtbf must be > 0")
        return self.mean_task_runtime / self.mtbf


@dataclass(frozen=True)
class CutSolution:
    """A solver's chosen cuts plus the numbers backing the choice.

    ``saving`` is the temp-storage byte-seconds freed and ``storage`` the
    checkpoint bytes persisted, both re-evaluated from the cuts so they can
    be checked independently. Recovery solutions also carry the failure
    window probability and the restart saving of the chosen cut.
    """

    cuts: tuple[CutAssignment, ...]
    objective_value: float
    saving: float
    storage: float
    solver: str
    failure_prob: float | None = None
    restart_gain: float | None = None

    @property
    def cut(self) -> CutAssignment:
        if len(self.cuts) != 1:
            raise ValueError("solution holds multiple cuts; index .cuts instead")
        return self.cuts[0]


# ---------------------------------------------------------------------------
# Objective evaluation


def _as_cut_tuple(cuts) -> tuple[CutAssignment, ...]:
    if isinstance(cuts, CutAssignment):
        return (cuts,)
    out = tuple(cuts)
    if not out:
        raise ValueError("need at least one cut assignment")
    return out


def _check_ids(graph: JobGraph, cuts: tuple[CutAssignment, ...]) -> None:
    known = graph.stages_by_id
    for cut in cuts:
        for sid in cut.pre_cut:
            if sid not in known:
                raise UnknownStageId(sid)


def _sizes(graph: JobGraph, output_sizes: Mapping[str, float] | None) -> Mapping[str, float]:
    if output_sizes is not None:
        return output_sizes
    return {s.id: s.output_size for s in graph.stages}


def temp_saving(
    graph: JobGraph,
    schedule: StageSchedule,
    cuts,
    output_sizes: Mapping[str, float] | None = None,
    ttl: Mapping[str, float] | None = None,
) -> float:
    """Temp-storage byte-seconds freed by one cut or a nested chain of cuts.

    With one cut this is (sum of pre-cut output sizes) times (shortest ttl
    among pre-cut stages). With several, each band of stages added by a cut
    contributes its size total times the shortest ttl at or before that cut.
    Chains must be nested and no edge may cross two cuts.
    """
    cuts = _as_cut_tuple(cuts)
    _check_ids(graph, cuts)
    o = _sizes(graph, output_sizes)
    t = ttl if ttl is not None else schedule.ttl

    seen_edges: set[tuple[str, str]] = set()
    prev: frozenset[str] = frozenset()
    parts: list[float] = []
    for i, cut in enumerate(cuts):
        pre = cut.pre_cut
        if not prev <= pre:
            raise ValueError(f"cut {i} is not a superset of cut {i - 1}; chains must nest")
        crossing = cut.cut_edges(graph)
        overlap = seen_edges.intersection(crossing)
        if overlap:
            raise ValueError(f"edge {sorted(overlap)[0]} crosses more than one cut")
        seen_edges.update(crossing)
        band = pre - prev
        if band:
            band_size = math.fsum(o[sid] for sid in sorted(band))
            horizon = min(t[sid] for sid in pre)
            parts.append(band_size * horizon)
        prev = pre
    return math.fsum(parts)


def global_storage(
    graph: JobGraph,
    cuts,
    output_sizes: Mapping[str, float] | None = None,
) -> float:
    """Bytes persisted to checkpoint storage: output sizes of every stage
    whose data crosses any of the cuts. Stages feeding only their own side
    of a cut stay in temp storage and cost nothing here."""
    cuts = _as_cut_tuple(cuts)
    _check_ids(graph, cuts)
    o = _sizes(graph, output_sizes)
    persisted: set[str] = set()
    for cut in cuts:
        persisted.update(cut.checkpoint_stages(graph))
    return math.fsum(o[sid] for sid in sorted(persisted))


def stage_failure_prob(task_count: int, delta: float) -> float:
    """Probability that a stage of ``task_count`` independent tasks sees at
    least one failure, each task failing with probability ``delta``."""
    if task_count < 1:
        raise ValueError("task_count must be >= 1")
    if not 0.0 <= delta < 1.0:
        raise ValueError("delta must be in [0, 1)")
    return 1.0 - (1.0 - delta) ** task_count


def recovery_objective(
    graph: JobGraph,
    schedule: StageSchedule,
    cut: CutAssignment,
    delta: float,
    task_counts: Mapping[str, int] | None = None,
    tfs: Mapping[str, float] | None = None,
) -> tuple[float, float, float]:
    """Expected recovery saving of one cut: (objective, failure_prob, gain).

    failure_prob is the chance that every pre-cut stage survives while some
    post-cut stage fails; gain is the recovery time a restart from the cut
    saves, bounded by the earliest post-cut stage start. With nothing after
    the cut there is nothing to recover, so the objective is zero.
    """
    _check_ids(graph, (cut,))
    v = task_counts if task_counts is not None else {
        s.id: s.task_count for s in graph.stages
    }
    f = tfs if tfs is not None else schedule.tfs
    pre = sorted(cut.pre_cut)
    post = sorted(set(graph.stages_by_id) - cut.pre_cut)
    if not post:
        return 0.0, 0.0, 0.0
    survive_pre = math.prod((1.0 - delta) ** v[sid] for sid in pre)
    survive_post = math.prod((1.0 - delta) ** v[sid] for sid in post)
    failure_prob = survive_pre * (1.0 - survive_post)
    gain = min(f[sid] for sid in post)
    return failure_prob * gain, failure_prob, gain


# ---------------------------------------------------------------------------
# Exact solvers


def _cut_key(pre: tuple[str, ...]) -> tuple[int, tuple[str, ...]]:
    # Tie order: fewer persisted stages first, then lexicographic ids.
    return (len(pre), pre)


def solve_exact_single_cut(
    graph: JobGraph,
    schedule: StageSchedule,
    objective: CheckpointObjective,
    *,
    exact_cap: int = 20,
    output_sizes: Mapping[str, float] | None = None,
    ttl: Mapping[str, float] | None = None,
    tfs: Mapping[str, float] | None = None,
    task_counts: Mapping[str, int] | None = None,
) -> CutSolution:
    """Evaluate every pre-cut subset and keep the best.

    Written as a plain enumeration on purpose: this is the reference answer
    the fast paths are tested against. Ties go to the smaller pre-cut set,
    then to the lexicographically smallest id tuple.
    """
    ids = sorted(s.id for s in graph.stages)
    n = len(ids)
    if n > exact_cap:
        raise TooLargeForExact(n, exact_cap)
    o = _sizes(graph, output_sizes)
    t = ttl if ttl is not None else schedule.ttl
    f = tfs if tfs is not None else schedule.tfs
    v = task_counts if task_counts is not None else {
        s.id: s.task_count for s in graph.stages
    }
    downstream = graph.downstream_ids
    is_recovery = objective.kind == "recovery"
    delta = objective.failure_rate if is_recovery else 0.0
    survive = {sid: (1.0 - delta) ** v[sid] for sid in ids} if is_recovery else {}

    best_value = -math.inf
    best_members: tuple[str, ...] = ()
    for mask in range(1 << n):
        members = tuple(ids[i] for i in range(n) if mask >> i & 1)
        inside = set(members)
        if is_recovery:
            post = [sid for sid in ids if sid not in inside]
            if not post:
                value = 0.0
            else:
                keep = math.prod(survive[sid] for sid in members)
                lose = math.prod(survive[sid] for sid in post)
                value = keep * (1.0 - lose) * min(f[sid] for sid in post)
        else:
            if members:
                size_total = sum(o[sid] for sid in members)
                horizon = min(t[sid] for sid in members)
                persisted = sum(
                    o[sid]
                    for sid in members
                    if any(d not in inside for d in downstream[sid])
                )
                value = size_total * horizon - objective.alpha * persisted
            else:
                value = 0.0
        if value > best_value or (
            value == best_value and _cut_key(members) < _cut_key(best_members)
        ):
            best_value = value
            best_members = members

    cut = CutAssignment(frozenset(best_members))
    saving = temp_saving(graph, schedule, cut, output_sizes=output_sizes, ttl=ttl)
    storage = global_storage(graph, cut, output_sizes=output_sizes)
    if is_recovery:
        value, failure_prob, gain = recovery_objective(
            graph, schedule, cut, delta, task_counts=task_counts, tfs=tfs
        )
        return CutSolution(
            cuts=(cut,),
            objective_value=value,
            saving=saving,
            storage=storage,
            solver="exact",
            failure_prob=failure_prob,
            restart_gain=gain,
        )
    return CutSolution(
        cuts=(cut,),
        objective_value=saving - objective.alpha * storage,
        saving=saving,
        storage=storage,
        solver="exact",
    )


def _max_over_subsets(values: np.ndarray, n: int) -> np.ndarray:
    """For every mask A return max(values[M]) over all subsets M of A."""
    out = values.copy()
    idx = np.arange(out.size)
    for i in range(n):
        bit = 1 << i
        has = (idx & bit) != 0
        out[has] = np.maximum(out[has], out[idx[has] ^ bit])
    return out


def solve_exact_multi_cut(
    graph: JobGraph,
    schedule: StageSchedule,
    objective: CheckpointObjective,
    cut_count: int,
    *,
    exact_cap: int = 20,
    output_sizes: Mapping[str, float] | None = None,
    ttl: Mapping[str, float] | None = None,
) -> CutSolution:
    """Optimal chain of ``cut_count`` nested cuts for the temp-storage goal.

    Candidate chains are nested pre-cut sets where no edge crosses two cuts,
    so each output is checkpointed at most once. The search runs level by
    level over the subset lattice: an optimal chain ending in set A extends
    an optimal shorter chain ending in some compatible subset of A, which is
    what makes the lattice program equivalent to enumerating every chain.
    The reported optimum never decreases as ``cut_count`` grows because a
    shorter chain padded with an empty leading cut is always a candidate.
    """
    if objective.kind != "temp_storage":
        raise ValueError("multi-cut solving is defined for the temp_storage objective")
    if cut_count < 1:
        raise ValueError("cut_count must be >= 1")
    ids = sorted(s.id for s in graph.stages)
    n = len(ids)
    if n > exact_cap:
        raise TooLargeForExact(n, exact_cap)
    if cut_count > max(1, n):
        raise ValueError(f"cut_count {cut_count} exceeds stage count {n}")
    if n == 0 or cut_count == 1:
        single = solve_exact_single_cut(
            graph,
            schedule,
            objective,
            exact_cap=exact_cap,
            output_sizes=output_sizes,
            ttl=ttl,
        )
        return single

    o_map = _sizes(graph, output_sizes)
    t_map = ttl if ttl is not None else schedule.ttl
    index = {sid: i for i, sid in enumerate(ids)}
    o = np.array([o_map[sid] for sid in ids])
    t = np.array([t_map[sid] for sid in ids])
    out_adj = np.zeros(n, dtype=np.int64)
    for u, dests in graph.downstream_ids.items():
        for d in dests:
            out_adj[index[u]] |= 1 << index[d]

    size = 1 << n
    full = size - 1
    idx = np.arange(size, dtype=np.int64)
    sum_o = np.zeros(size)
    min_t = np.full(size, np.inf)
    out_mask = np.zeros(size, dtype=np.int64)
    # Fill subset tables by peeling the lowest set bit of each mask.
    for i in reversed(range(n)):
        bit = 1 << i
        lowest = (idx & ((bit << 1) - 1)) == bit
        rest = idx[lowest] ^ bit
        sum_o[lowest] = o[i] + sum_o[rest]
        min_t[lowest] = np.minimum(t[i], min_t[rest])
        out_mask[lowest] = out_adj[i] | out_mask[rest]
    min_t[0] = 0.0

    crossing_cost = np.zeros(size)
    for i in range(n):
        bit = 1 << i
        leaves = ((idx & bit) != 0) & ((out_adj[i] & (full ^ idx)) != 0)
        crossing_cost[leaves] += o[i]

    base = sum_o * min_t - objective.alpha * crossing_cost
    # A chain may step from B to A only when B's outputs all land inside A,
    # i.e. A covers req[B]; otherwise some edge would cross both cuts.
    req = idx | out_mask
    distinct_t = np.unique(min_t)

    def evaluate(masks: list[int]) -> tuple[float, tuple[CutAssignment, ...]]:
        cuts = tuple(
            CutAssignment(frozenset(ids[i] for i in range(n) if m >> i & 1))
            for m in masks
        )
        value = temp_saving(
            graph, schedule, cuts, output_sizes=output_sizes, ttl=ttl
        ) - objective.alpha * global_storage(graph, cuts, output_sizes=output_sizes)
        return value, cuts

    def pick_mask(level_values: np.ndarray) -> int:
        top = level_values.max()
        if level_values[0] == top:
            return 0  # empty set is always the minimal tie candidate
        cand = (int(m) for m in np.flatnonzero(level_values == top))
        return min(cand, key=lambda m: _cut_key(tuple(ids[i] for i in range(n) if m >> i & 1)))

    levels = [base]
    for _ in range(cut_count - 1):
        prev = levels[-1]
        nxt = np.empty(size)
        for v in distinct_t:
            f = prev - sum_o * v
            scattered = np.full(size, -np.inf)
            np.maximum.at(scattered, req, f)
            reachable = _max_over_subsets(scattered, n)
            group = min_t == v
            nxt[group] = reachable[group]
        nxt += base
        levels.append(nxt)

    def backtrack(level: int, mask: int) -> list[int]:
        chain = [mask]
        for lv in range(level, 0, -1):
            target = levels[lv][mask]
            v = min_t[mask]
            outside = full ^ mask
            best_sub: int | None = None
            best_key: tuple[int, tuple[str, ...]] | None = None
            sub = mask
            while True:
                if (req[sub] & outside) == 0:
                    candidate = base[mask] + (levels[lv - 1][sub] - sum_o[sub] * v)
                    if candidate == target:
                        key = _cut_key(tuple(ids[i] for i in range(n) if sub >> i & 1))
                        if best_key is None or key < best_key:
                            best_key = key
                            best_sub = int(sub)
                if sub == 0:
                    break
                sub = (sub - 1) & mask
            assert best_sub is not None, "transition lost during backtracking"
            chain.append(best_sub)
            mask = best_sub
        chain.reverse()
        return chain

    best_value = -math.inf
    best_cuts: tuple[CutAssignment, ...] = ()
    for level in range(cut_count):
        chain = backtrack(level, pick_mask(levels[level]))
        chain = [0] * (cut_count - 1 - level) + chain
        value, cuts = evaluate(chain)
        if value > best_value:
            best_value = value
            best_cuts = cuts

    saving = temp_saving(graph, schedule, best_cuts, output_sizes=output_sizes, ttl=ttl)
    storage = global_storage(graph, best_cuts, output_sizes=output_sizes)
    return CutSolution(
        cuts=best_cuts,
        objective_value=best_value,
        saving=saving,
        storage=storage,
        solver="exact",
    )


# ---------------------------------------------------------------------------
# Fast scans


def heuristic_temp_storage_cut(
    graph: JobGraph,
    schedule: StageSchedule,
    output_sizes: Mapping[str, float] | None = None,
    ttl: Mapping[str, float] | None = None,
    scan_order: Sequence[str] | None = None,
) -> CutSolution:
    """Best single cut for temp storage via one sorted scan.

    Stages are ordered by remaining output lifetime, longest first, and every
    prefix is scored as a candidate pre-cut set. Some optimizer of the
    unpenalized objective is always a lifetime-threshold set, and every
    threshold set shows up as a prefix here, so the scan is exact for
    alpha = 0. The storage penalty is intentionally not applied; budget
    enforcement happens in admission, with storage reported for it.

    ``scan_order`` pins the prefix family to an explicit stage ordering
    instead of sorting by the effective lifetimes. Callers use this to keep
    the scan aligned with one schedule while scoring prefixes with lifetime
    values from another source; the running minimum keeps every prefix value
    exact regardless of the order supplied.
    """
    o = _sizes(graph, output_sizes)
    t = ttl if ttl is not None else schedule.ttl
    if scan_order is None:
        order = sorted((s.id for s in graph.stages), key=lambda sid: (-t[sid], sid))
    else:
        order = list(scan_order)
        if set(order) != {s.id for s in graph.stages} or len(order) != len(graph.stages):
            raise ValueError("scan_order must be a permutation of the graph's stage ids")

    best_len = 0
    best_value = 0.0
    running_sum = 0.0
    running_min = math.inf
    for k, sid in enumerate(order, start=1):
        running_sum += o[sid]
        running_min = min(running_min, t[sid])
        value = running_sum * running_min
        if value > best_value:
            best_value = value
            best_len = k

    cut = CutAssignment(frozenset(order[:best_len]))
    saving = temp_saving(graph, schedule, cut, output_sizes=output_sizes, ttl=ttl)
    storage = global_storage(graph, cut, output_sizes=output_sizes)
    return CutSolution(
        cuts=(cut,),
        objective_value=saving,
        saving=saving,
        storage=storage,
        solver="heuristic",
    )


def temp_saving_curve(
    graph: JobGraph,
    schedule: StageSchedule,
    output_sizes: Mapping[str, float] | None = None,
) -> list[tuple[float, float]]:
    """Potential temp saving as a function of cut time.

    Point k is (end time of the k-th finishing stage, saving if the cut is
    placed right after it). This is the same prefix family the heuristic
    scans, since longest-lifetime order equals earliest-finish order.
    """
    o = _sizes(graph, output_sizes)
    t = schedule.ttl
    order = sorted((s.id for s in graph.stages), key=lambda sid: (-t[sid], sid))
    points: list[tuple[float, float]] = []
    running_sum = 0.0
    running_min = math.inf
    for sid in order:
        running_sum += o[sid]
        running_min = min(running_min, t[sid])
        points.append((schedule.end[sid], running_sum * running_min))
    return points


def heuristic_recovery_cut(
    graph: JobGraph,
    schedule: StageSchedule,
    delta: float,
    task_counts: Mapping[str, int] | None = None,
    tfs: Mapping[str, float] | None = None,
) -> CutSolution:
    """Best recovery cut among earliest-finishers prefixes.

    Candidates place the cut after the first k finishing stages. Survival
    products over the prefix and its complement give the failure-window
    probability in one forward and one backward pass. The whole-graph prefix
    is skipped: with nothing after the cut there is nothing to recover.
    """
    if not 0.0 <= delta < 1.0:
        raise ValueError("delta must be in [0, 1)")
    v = task_counts if task_counts is not None else {
        s.id: s.task_count for s in graph.stages
    }
    f = tfs if tfs is not None else schedule.tfs
    order = sorted((s.id for s in graph.stages), key=lambda sid: (schedule.end[sid], sid))
    n = len(order)

    survive = [(1.0 - delta) ** v[sid] for sid in order]
    post_survive = [1.0] * (n + 1)
    post_min_tfs = [math.inf] * (n + 1)
    for k in reversed(range(n)):
        post_survive[k] = survive[k] * post_survive[k + 1]
        post_min_tfs[k] = min(f[order[k]], post_min_tfs[k + 1])

    best_len = 0
    best_value = 0.0
    pre_survive = 1.0
    for k in range(n):  # k = size of the pre-cut prefix; k = n is skipped
        value = pre_survive * (1.0 - post_survive[k]) * post_min_tfs[k]
        if value > best_value:
            best_value = value
            best_len = k
        pre_survive *= survive[k]

    cut = CutAssignment(frozenset(order[:best_len]))
    value, failure_prob, gain = recovery_objective(
        graph, schedule, cut, delta, task_counts=task_counts, tfs=tfs
    )
    return CutSolution(
        cuts=(cut,),
        objective_value=value,
        saving=temp_saving(graph, schedule, cut),
        storage=global_storage(graph, cut),
        solver="heuristic",
        failure_prob=failure_prob,
        restart_gain=gain,
    )


def baseline_cut(
    graph: JobGraph,
    schedule: StageSchedule,
    strategy: str,
    *,
    seed: int | None = None,
    output_sizes: Mapping[str, float] | None = None,
    ttl: Mapping[str, float] | None = None,
) -> CutSolution:
    """Reference cuts that ignore costs: "mid_point" cuts after every stage
    finishing by half the simulated makespan; "random" cuts after all stages
    finishing by the end time of one uniformly drawn stage."""
    ids = sorted(s.id for s in graph.stages)
    if strategy == "mid_point":
        threshold = schedule.job_end / 2.0
    elif strategy == "random":
        if seed is None:
            raise ValueError("random baseline needs a seed")
        if not ids:
            threshold = 0.0
        else:
            threshold = schedule.end[random.Random(seed).choice(ids)]
    else:
        raise ValueError(f"unknown baseline strategy {strategy!r}")

    pre = frozenset(sid for sid in ids if schedule.end[sid] <= threshold)
    cut = CutAssignment(pre)
    saving = temp_saving(graph, schedule, cut, output_sizes=output_sizes, ttl=ttl)
    storage = global_storage(graph, cut, output_sizes=output_sizes)
    return CutSolution(
        cuts=(cut,),
        objective_value=saving,
        saving=saving,
        storage=storage,
        solver=strategy,
    )
