"""Shared fixtures and independent reference implementations.

The reference functions here recompute results with deliberately different
algorithms and code paths than the package (plain enumeration, numpy subset
tables, textbook DP) so that agreement between the two is meaningful.
"""
from __future__ import annotations

import math
import random

import numpy as np
import pytest

from checkpointer import JobGraph, StageNode


# ---------------------------------------------------------------------------
# Graph builders


def make_graph(job_id: str, rows, template_id: str = "") -> JobGraph:
    """rows: iterable of (id, exec_time, output_size, task_count, upstream)."""
    stages = tuple(
        StageNode(
            id=sid,
            exec_time=float(exec_time),
            output_size=float(size),
            task_count=int(tasks),
            upstream=tuple(upstream),
        )
        for sid, exec_time, size, tasks, upstream in rows
    )
    return JobGraph(job_id=job_id, stages=stages, template_id=template_id)


@pytest.fixture
def rng_factory():
    """Seeded stdlib RNG factory so corpora are stable across runs."""
    return random.Random


@pytest.fixture
def diamond() -> JobGraph:
    """A fans out to B and C, which join at D.

    exec times (1, 2, 3, 1) give starts (0, 1, 1, 4), ends (1, 3, 4, 5),
    job end 5, ttl (4, 2, 1, 0), tfs (0, 1, 1, 4).
    """
    return make_graph(
        "diamond",
        [
            ("A", 1.0, 8.0, 5, ()),
            ("B", 2.0, 4.0, 10, ("A",)),
            ("C", 3.0, 2.0, 20, ("A",)),
            ("D", 1.0, 1.0, 5, ("B", "C")),
        ],
    )


@pytest.fixture
def two_chain() -> JobGraph:
    return make_graph(
        "two-chain",
        [("a", 2.0, 3.0, 1, ()), ("b", 3.0, 1.0, 1, ("a",))],
    )


@pytest.fixture
def single_stage() -> JobGraph:
    return make_graph("solo", [("only", 7.0, 2.0, 4, ())])


@pytest.fixture
def six_chain() -> JobGraph:
    """Pipeline a->b->c->d->e->f, exec 1 each: ttl (5,4,3,2,1,0)."""
    rows = []
    sizes = [4.0, 1.0, 3.0, 2.0, 5.0, 7.0]
    for i, size in enumerate(sizes):
        sid = "abcdef"[i]
        upstream = ("abcdef"[i - 1],) if i else ()
        rows.append((sid, 1.0, size, 1, upstream))
    return make_graph("six-chain", rows)


def random_dag(
    rng: random.Random,
    min_stages: int = 4,
    max_stages: int = 12,
    *,
    chain_bias: float = 0.0,
    first_parent_p: float = 0.85,
    extra_edge_p: float = 0.25,
) -> JobGraph:
    """Random DAG built independently of the package's generator.

    Stage i may only depend on stages < i, which makes acyclicity a
    construction invariant. ``chain_bias`` is the probability that a stage's
    first parent is its immediate predecessor (pipeline-like shape) instead
    of a uniformly random earlier stage; ``extra_edge_p`` adds fan-in.
    """
    n = rng.randint(min_stages, max_stages)
    rows = []
    for i in range(n):
        parents: set[int] = set()
        if i > 0:
            if rng.random() < first_parent_p:
                if rng.random() < chain_bias:
                    parents.add(i - 1)
                else:
                    parents.add(rng.randrange(i))
            for j in range(i):
                if j not in parents and rng.random() < extra_edge_p:
                    parents.add(j)
        rows.append(
            (
                f"n{i:02d}",
                rng.uniform(0.5, 10.0),
                rng.uniform(0.1, 10.0),
                rng.randint(1, 40),
                tuple(f"n{j:02d}" for j in sorted(parents)),
            )
        )
    return make_graph("rand", rows)


def big_random_dag(rng: random.Random, n: int, window: int = 50) -> JobGraph:
    """Size-n DAG with bounded fan-in, cheap enough to build at n = 5000."""
    rows = []
    for i in range(n):
        parents: set[int] = set()
        if i > 0:
            lo = max(0, i - window)
            parents.add(rng.randrange(lo, i))
            for _ in range(rng.randint(0, 2)):
                parents.add(rng.randrange(lo, i))
        rows.append(
            (
                f"n{i:04d}",
                rng.uniform(0.5, 10.0),
                rng.uniform(0.1, 10.0),
                rng.randint(1, 40),
                tuple(f"n{j:04d}" for j in sorted(parents)),
            )
        )
    return make_graph("big", rows)


# ---------------------------------------------------------------------------
# Independent schedule reference


def reference_schedule(graph: JobGraph) -> dict[str, tuple[float, float]]:
    """(start, end) per stage via plain longest-path DP in insertion order.

    Resolves stages with a worklist instead of an explicit topological sort
    so it shares no code shape with the package's simulator.
    """
    done: dict[str, tuple[float, float]] = {}
    pending = list(graph.stages)
    while pending:
        rest = []
        for stage in pending:
            if all(u in done for u in stage.upstream):
                start = max((done[u][1] for u in stage.upstream), default=0.0)
                done[stage.id] = (start, start + stage.exec_time)
            else:
                rest.append(stage)
        if len(rest) == len(pending):
            raise AssertionError("reference schedule stuck; graph not a DAG?")
        pending = rest
    return done


def longest_path_end(graph: JobGraph) -> float:
    sched = reference_schedule(graph)
    return max((end for _, end in sched.values()), default=0.0)


# ---------------------------------------------------------------------------
# Brute-force optimizer references


def _subset_tables(graph: JobGraph, schedule):
    ids = sorted(s.id for s in graph.stages)
    n = len(ids)
    pos = {sid: i for i, sid in enumerate(ids)}
    o = np.array([graph.stages_by_id[sid].output_size for sid in ids])
    ttl = np.array([schedule.ttl[sid] for sid in ids])
    down = np.zeros(n, dtype=np.int64)
    for u, v in graph.edges:
        down[pos[u]] |= 1 << pos[v]
    masks = np.arange(1 << n, dtype=np.int64)
    bits = ((masks[:, None] >> np.arange(n)) & 1).astype(bool)
    sums = bits @ o
    min_ttl = np.where(bits, ttl[None, :], np.inf).min(axis=1)
    min_ttl[0] = 0.0
    return ids, n, o, down, masks, bits, sums, min_ttl


def brute_temp_best(graph: JobGraph, schedule, alpha: float = 0.0) -> float:
    """Max over every pre-cut subset of T - alpha * G, computed from scratch."""
    ids, n, o, down, masks, bits, sums, min_ttl = _subset_tables(graph, schedule)
    crossing = np.zeros(1 << n)
    for i in range(n):
        in_set = bits[:, i]
        crosses = (down[i] & ~masks) != 0
        crossing[in_set & crosses] += o[i]
    vals = sums * min_ttl - alpha * crossing
    vals[0] = 0.0
    return float(vals.max())


def brute_multi_cut_best(
    graph: JobGraph, schedule, cut_count: int, alpha: float = 0.0
) -> float:
    """Exhaustive best nested cut chain where no edge crosses two cuts.

    Enumerates every chain S_1 subset-of ... subset-of S_K with each stage's
    downstream contained in the next set, scoring bands against the minimum
    lifetime of their enclosing set and charging every crossing output once.
    """
    ids, n, o, down, masks, bits, sums, min_ttl = _subset_tables(graph, schedule)
    size = 1 << n
    out_mask = np.zeros(size, dtype=np.int64)
    for i in range(n):
        out_mask[bits[:, i]] |= down[i]

    def score(chain: tuple[int, ...]) -> float:
        value = 0.0
        prev = 0
        crossed = 0
        for mask in chain:
            band = sums[mask] - sums[prev]
            value += band * min_ttl[mask]
            for i in range(n):
                in_set = (mask >> i) & 1
                crosses = (int(down[i]) & ~mask) != 0
                if in_set and crosses and not ((crossed >> i) & 1):
                    value -= alpha * float(o[i])
                    crossed |= 1 << i
            prev = mask
        return value

    best = 0.0

    def extend(chain: tuple[int, ...]) -> None:
        nonlocal best
        if len(chain) == cut_count:
            best = max(best, score(chain))
            return
        last = chain[-1] if chain else 0
        required = int(last | out_mask[last]) if chain else 0
        for mask in range(size):
            if mask & required == required and (
                not chain or (mask | last) == mask
            ):
                extend(chain + (mask,))

    extend(())
    return best


def brute_recovery_best(
    graph: JobGraph, schedule, delta: float, *, closed_only: bool = False
) -> float:
    """Max recovery objective over pre-cut sets, computed from scratch.

    With ``closed_only`` the search is limited to downward-closed sets
    (every upstream of a member is a member) — the family of physically
    meaningful restart points. Tables are filled by peeling the lowest bit,
    textbook subset-DP style.
    """
    ids = sorted(s.id for s in graph.stages)
    n = len(ids)
    pos = {sid: i for i, sid in enumerate(ids)}
    v = np.array([graph.stages_by_id[sid].task_count for sid in ids], dtype=float)
    tfs = np.array([schedule.tfs[sid] for sid in ids])
    up = np.zeros(n, dtype=np.int64)
    for u, w in graph.edges:
        up[pos[w]] |= 1 << pos[u]

    size = 1 << n
    full = size - 1
    up_union = np.zeros(size, dtype=np.int64)
    sum_v = np.zeros(size)
    for mask in range(1, size):
        low = mask & -mask
        b = low.bit_length() - 1
        rest = mask ^ low
        up_union[mask] = up_union[rest] | up[b]
        sum_v[mask] = sum_v[rest] + v[b]

    min_tfs_post = np.full(size, np.inf)
    for mask in range(size):
        post = full ^ mask
        while post:
            low = post & -post
            b = low.bit_length() - 1
            if tfs[b] < min_tfs_post[mask]:
                min_tfs_post[mask] = tfs[b]
            post ^= low

    masks = np.arange(size, dtype=np.int64)
    s_pre = (1.0 - delta) ** sum_v
    s_all = (1.0 - delta) ** sum_v[full]
    gain = np.where(np.isfinite(min_tfs_post), min_tfs_post, 0.0)
    vals = (s_pre - s_all) * gain
    if closed_only:
        closed = (up_union & ~masks) == 0
        vals = np.where(closed, vals, -np.inf)
    vals[full] = 0.0
    return float(vals.max())
