import numpy as np

import checkpointer as cp
from checkpointer.costs import build_training_rows, fit_cost_model
from checkpointer.workload import telemetry_by_job

wl = cp.generate_workload(cp.WorkloadSpec(job_count=2000, seed=11))
jobs = sorted(wl.jobs, key=lambda j: (j.submit_time, j.job_id))
by_job = telemetry_by_job(wl.telemetry)
train_jobs, eval_jobs = jobs[:1000], jobs[1000:]
train = [r for j in train_jobs for r in by_job[j.job_id]]
eval_recs = [r for j in eval_jobs for r in by_job[j.job_id]]

bank_pertype = fit_cost_model(train, "exec_time", scope="per_stage_type")
history = cp.TelemetryHistory.from_records(train)

stage_by = {(j.job_id, s.id): (s, j.template_id) for j in eval_jobs for s in j.stages}
raw, per_type_pred, general_pred, actual = [], [], [], []
for r in eval_recs:
    stage, template = stage_by[(r.job_id, r.stage_id)]
    fv = cp.extract_features(stage, history, template)
    m_t = bank_pertype.model_for(r.stage_type)
    per_type_pred.append(m_t.predict(fv))
    general_pred.append(bank_pertype.general.predict(fv))
    raw.append(stage.exec_time)
    actual.append(r.actual_exec_time)

rep_raw = cp.evaluate_accuracy(raw, actual)
rep_t = cp.evaluate_accuracy(per_type_pred, actual)
rep_g = cp.evaluate_accuracy(general_pred, actual)
print("median qerror: raw=%.4f per_type=%.4f general=%.4f" % (rep_raw.median_qerror, rep_t.median_qerror, rep_g.median_qerror))
print("r2:            raw=%.4f per_type=%.4f general=%.4f" % (rep_raw.r_squared, rep_t.r_squared, rep_g.r_squared))
print("per_type r2 >= general r2:", rep_t.r_squared >= rep_g.r_squared)
print("fine-tuned < raw qerror:", rep_t.median_qerror < rep_raw.median_qerror)
