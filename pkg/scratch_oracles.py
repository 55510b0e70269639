"""Scratch: prototype test-side oracles and measure criterion feasibility."""
import math
import random
import time

import numpy as np

import checkpointer as cp


def random_dag(rng: random.Random, min_stages=4, max_stages=12):
    """Independent random DAG builder for tests: each stage may draw parents
    from earlier stages; stage 0 is a root; every later stage gets >= 1 parent
    with probability keeping graphs connected-ish."""
    n = rng.randint(min_stages, max_stages)
    stages = []
    for i in range(n):
        parents = []
        if i > 0:
            # at least one parent for most nodes; allow extra roots sometimes
            if rng.random() < 0.85:
                parents.append(rng.randrange(i))
            for j in range(i):
                if j not in parents and rng.random() < 0.25:
                    parents.append(j)
        stages.append(
            cp.StageNode(
                id=f"n{i:02d}",
                exec_time=rng.uniform(0.5, 10.0),
                output_size=rng.uniform(0.1, 10.0),
                task_count=rng.randint(1, 40),
                upstream=tuple(f"n{j:02d}" for j in sorted(parents)),
            )
        )
    return cp.JobGraph(job_id="t", stages=tuple(stages))


def brute_temp_max(graph, schedule):
    """Exhaustive max over all subsets of sum(o) * min(ttl), vectorized."""
    ids = sorted(s.id for s in graph.stages)
    n = len(ids)
    o = np.array([next(s.output_size for s in graph.stages if s.id == i) for i in ids])
    ttl = np.array([schedule.ttl[i] for i in ids])
    masks = np.arange(1 << n, dtype=np.uint32)
    bits = ((masks[:, None] >> np.arange(n)) & 1).astype(bool)
    sums = bits @ o
    ttls = np.where(bits, ttl[None, :], np.inf).min(axis=1)
    ttls[0] = 0.0
    vals = sums * np.where(np.isfinite(ttls), ttls, 0.0)
    return float(vals.max())


def brute_recovery_max(graph, schedule, delta):
    """Max of recovery objective over downward-closed subsets, vectorized."""
    ids = sorted(s.id for s in graph.stages)
    n = len(ids)
    pos = {sid: k for k, sid in enumerate(ids)}
    v = np.array([next(s.task_count for s in graph.stages if s.id == i) for i in ids], dtype=float)
    tfs = np.array([schedule.tfs[i] for i in ids])
    up_mask = np.zeros(n, dtype=np.int64)
    for s in graph.stages:
        for u in s.upstream:
            up_mask[pos[s.id]] |= 1 << pos[u]
    size = 1 << n
    up_union = np.zeros(size, dtype=np.int64)
    sum_v = np.zeros(size)
    min_tfs_post = np.full(size, np.inf)  # min tfs over complement of mask
    # complement mins: iterate masks, remove bits
    for mask in range(1, size):
        low = mask & -mask
        b = low.bit_length() - 1
        rest = mask ^ low
        up_union[mask] = up_union[rest] | up_mask[b]
        sum_v[mask] = sum_v[rest] + v[b]
    # min tfs over post = over bits NOT in mask
    full = size - 1
    for mask in range(size):
        post = full ^ mask
        m = np.inf
        while post:
            low = post & -post
            b = low.bit_length() - 1
            if tfs[b] < m:
                m = tfs[b]
            post ^= low
        min_tfs_post[mask] = m
    closed = (up_union & ~np.arange(size)) == 0
    s_all = (1.0 - delta) ** sum_v[full]
    s_pre = (1.0 - delta) ** sum_v
    gain = np.where(np.isfinite(min_tfs_post), min_tfs_post, 0.0)
    vals = np.where(closed, (s_pre - s_all) * gain, -np.inf)
    return float(vals.max())


def main():
    rng = random.Random(12345)
    graphs = [random_dag(rng) for _ in range(1000)]

    # criterion 1/2 oracle timing
    t0 = time.perf_counter()
    worst = 0.0
    for g in graphs:
        s = cp.simulate_schedule(g)
        hv = cp.heuristic_temp_storage_cut(g, s).objective_value
        bv = brute_temp_max(g, s)
        rel = abs(hv - bv) / max(1.0, abs(bv))
        worst = max(worst, rel)
    t1 = time.perf_counter()
    print(f"criterion1: worst rel gap {worst:.2e}, time {t1-t0:.1f}s")

    # criterion 4 match rate
    t0 = time.perf_counter()
    matches = 0
    gaps = []
    for idx, g in enumerate(graphs):
        s = cp.simulate_schedule(g)
        delta = 0.002
        hv = cp.heuristic_recovery_cut(g, s, delta).objective_value
        bv = brute_recovery_max(g, s, delta)
        if abs(hv - bv) <= 1e-9 * max(1.0, abs(bv)):
            matches += 1
        else:
            gaps.append((idx, bv - hv, bv))
    t1 = time.perf_counter()
    print(f"criterion4: match {matches}/1000, time {t1-t0:.1f}s")
    for idx, gap, bv in gaps[:10]:
        print(f"  mismatch idx={idx} gap={gap:.3e} brute={bv:.3e}")


if __name__ == "__main__":
    main()
