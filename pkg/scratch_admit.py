import random

import numpy as np

import checkpointer as cp

rng = random.Random(2024)
W, T, lam = 50.0, 100.0, 2.0


def make_stream(rng, windows, lam, T):
    offers = []
    t = 0.0
    i = 0
    horizon = windows * T
    while True:
        t += rng.expovariate(lam)
        if t >= horizon:
            break
        w = rng.uniform(0.5, 1.5)             # E[w] = 1.0
        ratio = rng.lognormvariate(0.0, 1.0)  # independent of w
        offers.append(cp.JobOffer(job_id=f"o{i:06d}", saving=ratio * w, weight=w, arrival_time=t))
        i += 1
    return offers


train = make_stream(rng, 200, lam, T)
pol = cp.calibrate_policy(train, capacity=W, window=T, arrival_rate=lam)
print("p=%.4f thr=%.4f" % (pol.accept_fraction, pol.threshold))

test = make_stream(rng, 100, lam, T)
decisions, summ = cp.process_stream(pol, test, enforce_capacity=False)
per_w = np.array(summ.per_window_weight)
print("windows:", len(per_w))
mean, se = per_w.mean(), per_w.std(ddof=1) / len(per_w) ** 0.5
print("mean accepted weight/window = %.2f  W = %.1f  |diff|/se = %.2f" % (mean, W, abs(mean - W) / se))

viol = 0
for k in range(2000):
    offers = make_stream(rng, 3, lam, T)
    pol2 = cp.AdmissionPolicy(
        capacity=W, window=T, arrival_rate=lam, mean_weight=1.0,
        accept_fraction=0.25, threshold=rng.uniform(0.1, 3.0),
    )
    _, sm = cp.process_stream(pol2, offers)
    if any(w > W + 1e-9 for w in sm.per_window_weight):
        viol += 1
print("violations:", viol)
