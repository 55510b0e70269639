"""Stability probe for the backtest strategy chain across seeds."""
import sys
import time

import numpy as np

from checkpointer import WorkloadSpec, generate_workload, run_backtest

SEEDS = [42, 7, 123, 2024, 31337]
N = int(sys.argv[1]) if len(sys.argv) > 1 else 1200

for seed in SEEDS:
    spec = WorkloadSpec(job_count=N, seed=seed)
    jobs = generate_workload(spec)
    t0 = time.perf_counter()
    report = run_backtest(jobs)
    dt = time.perf_counter() - t0
    res = {r.strategy: r for r in report.rows}
    means = {k: res[k].mean_saving_fraction for k in res}
    # paired t-stat for omls - oml over eval jobs
    ids = sorted(report.per_job["oml"])
    d = np.array([report.per_job["omls"][j] - report.per_job["oml"][j] for j in ids])
    t_stat = d.mean() / (d.std(ddof=1) / np.sqrt(len(d))) if d.std(ddof=1) > 0 else 0.0
    chain = (
        means["optimal"] >= means["omls"] - 1e-12
        and means["omls"] >= means["oml"] - 1e-12
        and means["oml"] >= means["occ"] - 1e-12
        and means["optimal"] >= means["random"]
    )
    gap = means["optimal"] - means["random"]
    print(
        f"seed {seed}: rand={means['random']:.3f} occ={means['occ']:.3f} "
        f"oml={means['oml']:.3f} omls={means['omls']:.3f} opt={means['optimal']:.3f} "
        f"chain={chain} omls-oml t={t_stat:+.1f} opt-rand={gap:.3f} ({dt:.1f}s)"
    )
