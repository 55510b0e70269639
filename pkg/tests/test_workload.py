"""Synthetic workload generation, failure simulation, and back-testing."""
from __future__ import annotations

import math

import pytest

from checkpointer import (
    CheckpointObjective,
    CutAssignment,
    InvalidSpec,
    JobGraph,
    MissingModels,
    StageNode,
    StageTypeProfile,
    TelemetryRecord,
    Workload,
    WorkloadSpec,
    evaluate_recovery,
    generate_workload,
    heuristic_temp_storage_cut,
    ingest_telemetry,
    load_workload,
    recovery_objective,
    render_report_table,
    run_backtest,
    save_workload,
    simulate_recovery_saving,
    simulate_schedule,
    telemetry_by_job,
    write_curve_csv,
    write_report_csv,
)
from checkpointer.workload import DEFAULT_STAGE_TYPES, REPORT_CSV_COLUMNS, actual_schedule


def small_spec(**overrides) -> WorkloadSpec:
    base = dict(job_count=12, template_count=3, min_stages=4, max_stages=7, seed=5)
    base.update(overrides)
    return WorkloadSpec(**base)


def profile(**overrides) -> StageTypeProfile:
    base = dict(
        exec_log_mean=2.0, exec_log_sigma=0.5, size_log_mean=3.0, size_log_sigma=0.5,
        overlap=0.2,
    )
    base.update(overrides)
    return StageTypeProfile(**base)


class TestStageTypeProfile:
    @pytest.mark.parametrize(
        "overrides",
        [
            {"exec_log_sigma": -0.1},
            {"size_log_sigma": -1.0},
            {"overlap": 1.0},
            {"overlap": -0.2},
            {"estimate_exponent": 0.0},
            {"instance_coupling": -0.5},
            {"depth_affinity": 1.5},
        ],
    )
    def test_validation(self, overrides):
        with pytest.raises(InvalidSpec):
            profile(**overrides)

    def test_round_trip(self):
        original = profile(estimate_exponent=0.8, instance_coupling=0.3)
        assert StageTypeProfile.from_dict(original.to_dict()) == original

    def test_default_catalog(self):
        assert set(DEFAULT_STAGE_TYPES) == {
            "extract", "partition", "join", "aggregate", "output",
        }


class TestWorkloadSpec:
    @pytest.mark.parametrize(
        "overrides",
        [
            {"job_count": -1},
            {"template_count": 0},
            {"min_stages": 0},
            {"min_stages": 9, "max_stages": 8},
            {"max_layers": 0},
            {"edge_density": 1.5},
            {"stage_types": {}},
            {"template_bias_sigma": -0.1},
            {"min_tasks": 0},
            {"min_tasks": 10, "max_tasks": 5},
            {"mtbf": 0.0},
            {"mean_task_runtime": -1.0},
            {"submit_interval": 0.0},
        ],
    )
    def test_validation(self, overrides):
        with pytest.raises(InvalidSpec):
            small_spec(**overrides)

    def test_failure_rate(self):
        spec = small_spec(mtbf=3000.0, mean_task_runtime=30.0)
        assert spec.failure_rate == 0.01

    def test_dict_round_trip(self):
        spec = small_spec(stage_types={"solo": profile()}, submit_interval=7.5)
        assert WorkloadSpec.from_dict(spec.to_dict()) == spec


class TestGenerateWorkload:
    def test_deterministic(self):
        spec = small_spec()
        assert generate_workload(spec) == generate_workload(spec)

    def test_seed_changes_output(self):
        first = generate_workload(small_spec(seed=1))
        second = generate_workload(small_spec(seed=2))
        assert first.jobs != second.jobs

    def test_shape_and_identities(self):
        spec = small_spec(job_count=6, template_count=2, submit_interval=60.0)
        workload = generate_workload(spec)
        assert len(workload.jobs) == 6
        grouped = telemetry_by_job(workload.telemetry)
        template_ids = set()
        for j, job in enumerate(workload.jobs):
            assert job.job_id == f"job{j:06d}"
            assert job.submit_time == j * 60.0
            template_ids.add(job.template_id)
            records = grouped[job.job_id]
            assert {r.stage_id for r in records} == {s.id for s in job.stages}
            assert spec.min_stages <= len(job.stages) <= spec.max_stages
            for stage in job.stages:
                assert stage.stage_type in spec.stage_types
                assert spec.min_tasks <= stage.task_count <= spec.max_tasks
                assert stage.name_tokens[0] == job.template_id
                assert set(stage.optimizer_features) == {
                    "estimated_cost",
                    "estimated_input_cardinality",
                    "estimated_exclusive_cost",
                    "estimated_cardinality",
                }
                assert stage.optimizer_features["estimated_cost"] == stage.exec_time
                assert stage.optimizer_features["estimated_cardinality"] == stage.output_size
        assert template_ids == {"tmpl000", "tmpl001"}

    def test_telemetry_is_a_consistent_schedule(self):
        workload = generate_workload(small_spec())
        for records in telemetry_by_job(workload.telemetry).values():
            for r in records:
                assert r.actual_start >= 0.0
                assert r.actual_end == pytest.approx(
                    r.actual_start + r.actual_exec_time, rel=1e-12, abs=1e-12
                )
                assert r.actual_exec_time > 0.0
                assert r.actual_output_size > 0.0

    def test_pipelining_can_start_stages_before_inputs_finish(self):
        # With overlap > 0 the observed schedule is tighter than the strict
        # simulation that waits for every input to complete.
        workload = generate_workload(small_spec(job_count=30))
        grouped = telemetry_by_job(workload.telemetry)
        overlapped = 0
        for job in workload.jobs:
            strict = simulate_schedule(job)
            records = {r.stage_id: r for r in grouped[job.job_id]}
            ends = {sid: r.actual_end for sid, r in records.items()}
            for stage in job.stages:
                if any(records[stage.id].actual_start < ends[u] for u in stage.upstream):
                    overlapped += 1
            assert strict.job_end > 0
        assert overlapped > 0

    def test_zero_jobs(self):
        workload = generate_workload(small_spec(job_count=0))
        assert workload.jobs == ()
        assert workload.telemetry == ()


class TestPersistence:
    def test_save_load_round_trip(self, tmp_path):
        workload = generate_workload(small_spec())
        save_workload(workload, tmp_path / "w")
        assert load_workload(tmp_path / "w") == workload

    def test_resave_is_byte_identical(self, tmp_path):
        workload = generate_workload(small_spec())
        save_workload(workload, tmp_path / "a")
        save_workload(load_workload(tmp_path / "a"), tmp_path / "b")
        for name in ("spec.json", "jobs.json", "telemetry.csv"):
            assert (tmp_path / "a" / name).read_bytes() == (
                tmp_path / "b" / name
            ).read_bytes()

    def test_ingest_telemetry(self, tmp_path):
        workload = generate_workload(small_spec())
        save_workload(workload, tmp_path / "w")
        records, jobs = ingest_telemetry(
            tmp_path / "w" / "telemetry.csv", tmp_path / "w" / "jobs.json"
        )
        assert tuple(records) == workload.telemetry
        assert tuple(jobs) == workload.jobs
        records_only, no_jobs = ingest_telemetry(tmp_path / "w" / "telemetry.csv")
        assert tuple(records_only) == workload.telemetry
        assert no_jobs is None


class TestActualSchedule:
    def test_hand_built(self):
        records = [
            TelemetryRecord("j", "t", "x", "join", 2.0, 1.0, 0.0, 2.0),
            TelemetryRecord("j", "t", "y", "join", 3.0, 1.0, 2.0, 5.0),
        ]
        schedule = actual_schedule(records)
        assert schedule.start == {"x": 0.0, "y": 2.0}
        assert schedule.end == {"x": 2.0, "y": 5.0}
        assert schedule.job_end == 5.0
        assert schedule.ttl == {"x": 3.0, "y": 0.0}
        assert schedule.tfs == {"x": 0.0, "y": 2.0}

    def test_grouping(self):
        records = [
            TelemetryRecord("a", "t", "x", "join", 1.0, 1.0, 0.0, 1.0),
            TelemetryRecord("b", "t", "x", "join", 1.0, 1.0, 0.0, 1.0),
            TelemetryRecord("a", "t", "y", "join", 1.0, 1.0, 1.0, 2.0),
        ]
        grouped = telemetry_by_job(records)
        assert sorted(grouped) == ["a", "b"]
        assert [r.stage_id for r in grouped["a"]] == ["x", "y"]


class TestSimulateRecoverySaving:
    def test_matches_analytic_probability(self, diamond):
        schedule = simulate_schedule(diamond)
        cut = CutAssignment(frozenset({"A"}))
        delta = 0.002
        expected, _, _ = recovery_objective(diamond, schedule, cut, delta)
        estimate = simulate_recovery_saving(
            diamond, schedule, cut, delta, trials=200_000, seed=7
        )
        assert estimate.trials == 200_000
        assert estimate.std_error > 0.0
        assert abs(estimate.mean_saving - expected) <= 4.0 * estimate.std_error
        assert estimate.saving_fraction == pytest.approx(
            estimate.mean_saving / schedule.job_end
        )

    def test_deterministic_per_seed(self, diamond):
        schedule = simulate_schedule(diamond)
        cut = CutAssignment(frozenset({"A"}))
        first = simulate_recovery_saving(diamond, schedule, cut, 0.01, 10_000, seed=3)
        second = simulate_recovery_saving(diamond, schedule, cut, 0.01, 10_000, seed=3)
        assert first == second

    def test_zero_failure_rate_never_saves(self, diamond):
        schedule = simulate_schedule(diamond)
        cut = CutAssignment(frozenset({"A"}))
        estimate = simulate_recovery_saving(diamond, schedule, cut, 0.0, 1_000, seed=1)
        assert estimate.event_rate == 0.0
        assert estimate.mean_saving == 0.0

    def test_validation(self, diamond):
        schedule = simulate_schedule(diamond)
        cut = CutAssignment(frozenset({"A"}))
        with pytest.raises(ValueError):
            simulate_recovery_saving(diamond, schedule, cut, 0.01, 0, seed=1)
        with pytest.raises(ValueError):
            simulate_recovery_saving(diamond, schedule, cut, 1.0, 10, seed=1)


class TestEvaluateRecovery:
    def test_empty_cuts(self):
        workload = generate_workload(small_spec(job_count=2))
        assert evaluate_recovery(workload, {}, 0.01, 100, seed=0) == (0.0, {})

    def test_mean_over_jobs_and_determinism(self):
        workload = generate_workload(small_spec(job_count=4))
        cuts = {job.job_id: CutAssignment(frozenset()) for job in workload.jobs[:2]}
        first = evaluate_recovery(workload, cuts, 0.0005, 5_000, seed=9)
        second = evaluate_recovery(workload, cuts, 0.0005, 5_000, seed=9)
        assert first == second
        mean, estimates = first
        assert sorted(estimates) == sorted(cuts)
        assert mean == pytest.approx(
            sum(e.saving_fraction for e in estimates.values()) / len(estimates)
        )

    def test_zero_rate_means_zero(self):
        workload = generate_workload(small_spec(job_count=2))
        cuts = {job.job_id: CutAssignment(frozenset()) for job in workload.jobs}
        mean, _ = evaluate_recovery(workload, cuts, 0.0, 500, seed=0)
        assert mean == 0.0


def equal_estimate_workload(jobs=4):
    """Chain jobs whose estimates equal the truth and whose sizes are all 1:
    strategies that see estimates, unit sizes, or the truth all coincide."""
    spec = WorkloadSpec(job_count=jobs, seed=0)
    graphs = []
    telemetry = []
    for j in range(jobs):
        job_id = f"job{j:06d}"
        stages = (
            StageNode(id="x", exec_time=2.0, output_size=1.0),
            StageNode(id="y", exec_time=1.0, output_size=1.0, upstream=("x",)),
            StageNode(id="z", exec_time=3.0, output_size=1.0, upstream=("y",)),
        )
        graphs.append(
            JobGraph(
                job_id=job_id,
                stages=stages,
                template_id="tmpl000",
                submit_time=float(j),
            )
        )
        for sid, exec_time, start in (("x", 2.0, 0.0), ("y", 1.0, 2.0), ("z", 3.0, 3.0)):
            telemetry.append(
                TelemetryRecord(
                    job_id=job_id,
                    template_id="tmpl000",
                    stage_id=sid,
                    stage_type="",
                    actual_exec_time=exec_time,
                    actual_output_size=1.0,
                    actual_start=start,
                    actual_end=start + exec_time,
                )
            )
    return Workload(spec=spec, jobs=tuple(graphs), telemetry=tuple(telemetry))


class TestRunBacktest:
    @pytest.fixture(scope="class")
    def report(self):
        workload = generate_workload(
            WorkloadSpec(job_count=40, template_count=3, min_stages=4, max_stages=8, seed=5)
        )
        return run_backtest(
            workload,
            strategies=("random", "mid_point", "op", "occ", "oml", "omls", "optimal"),
            train_fraction=0.5,
            min_samples=5,
            seed=11,
        )

    def test_split_counts(self, report):
        assert report.train_job_count == 20
        assert report.scored_job_count == 20

    def test_rows_follow_requested_order(self, report):
        assert [row.strategy for row in report.rows] == [
            "random", "mid_point", "op", "occ", "oml", "omls", "optimal",
        ]

    def test_fractions_are_normalized(self, report):
        for row in report.rows:
            for value in (
                row.mean_saving_fraction,
                row.p50_saving_fraction,
                row.p95_saving_fraction,
            ):
                assert 0.0 <= value <= 1.0
            assert row.global_storage_bytes >= 0.0
            assert row.seconds_per_job >= 0.0
            assert row.mean_recovery_fraction is None  # temp-storage objective

    def test_truth_informed_cut_dominates_every_job(self, report):
        optimal = report.per_job["optimal"]
        for strategy, fractions in report.per_job.items():
            assert sorted(fractions) == sorted(optimal)
            for job_id, value in fractions.items():
                assert optimal[job_id] >= value - 1e-9

    def test_curve_shape(self, report):
        xs = [x for x, _ in report.curve]
        ys = [y for _, y in report.curve]
        assert len(report.curve) == 101
        assert xs[0] == 0.0 and xs[-1] == 1.0
        assert xs == sorted(xs)
        assert all(0.0 <= y <= 1.0 for y in ys)
        assert ys[0] == 0.0 and ys[-1] == 0.0

    def test_document_layout(self, report):
        doc = report.to_doc()
        assert doc["objective"] == "temp_storage"
        assert doc["scored_job_count"] == 20
        assert len(doc["strategies"]) == 7
        assert {"seed", "train_fraction", "backend", "wall_seconds"} <= set(doc["meta"])
        assert doc["meta"]["wall_seconds"] > 0.0
        point = doc["curve"][0]
        assert set(point) == {"relative_time", "saving_fraction"}

    def test_repeat_run_is_identical_apart_from_timing(self, report):
        workload = generate_workload(
            WorkloadSpec(job_count=40, template_count=3, min_stages=4, max_stages=8, seed=5)
        )
        again = run_backtest(
            workload,
            strategies=("random", "mid_point", "op", "occ", "oml", "omls", "optimal"),
            train_fraction=0.5,
            min_samples=5,
            seed=11,
        )
        assert again.per_job == report.per_job
        assert [r.mean_saving_fraction for r in again.rows] == [
            r.mean_saving_fraction for r in report.rows
        ]
        assert again.curve == report.curve

    def test_recovery_objective_reports_recovery_means(self):
        workload = generate_workload(small_spec(job_count=10))
        report = run_backtest(
            workload,
            strategies=("op", "optimal"),
            objective=CheckpointObjective.recovery(0.001),
            train_fraction=0.5,
        )
        assert report.objective_kind == "recovery"
        for row in report.rows:
            assert row.mean_recovery_fraction is not None
            assert 0.0 <= row.mean_recovery_fraction <= 1.0

    def test_unknown_strategy(self):
        workload = generate_workload(small_spec(job_count=4))
        with pytest.raises(ValueError, match="unknown strategies"):
            run_backtest(workload, strategies=("psychic",))

    def test_empty_workload(self):
        workload = generate_workload(small_spec(job_count=0))
        with pytest.raises(ValueError, match="no jobs"):
            run_backtest(workload, strategies=("op",))

    def test_train_fraction_bounds(self):
        workload = generate_workload(small_spec(job_count=4))
        with pytest.raises(ValueError, match="train_fraction"):
            run_backtest(workload, strategies=("op",), train_fraction=1.0)
        with pytest.raises(ValueError, match="no jobs to score"):
            run_backtest(workload, strategies=("op",), train_fraction=0.9)

    def test_model_strategies_need_enough_training_data(self):
        workload = generate_workload(small_spec(job_count=8))
        with pytest.raises(MissingModels):
            run_backtest(workload, strategies=("oml",), min_samples=10**6)

    def test_strategies_coincide_when_inputs_coincide(self):
        workload = equal_estimate_workload()
        report = run_backtest(
            workload, strategies=("op", "occ", "optimal"), train_fraction=0.5
        )
        assert report.per_job["op"] == report.per_job["optimal"]
        assert report.per_job["occ"] == report.per_job["optimal"]
        # Prefix {x, y}: two unit outputs held for 3s out of 7 byte-seconds.
        for fraction in report.per_job["optimal"].values():
            assert fraction == pytest.approx(6.0 / 7.0)
        graph = workload.jobs[0]
        estimated = simulate_schedule(graph)
        ones = {s.id: 1.0 for s in graph.stages}
        from_estimates = heuristic_temp_storage_cut(graph, estimated, output_sizes=ones)
        actual = actual_schedule(telemetry_by_job(workload.telemetry)[graph.job_id])
        from_truth = heuristic_temp_storage_cut(graph, actual)
        assert from_estimates.cut == from_truth.cut
        assert sorted(from_truth.cut.pre_cut) == ["x", "y"]

    def test_single_stage_jobs_have_nothing_to_save(self):
        spec = WorkloadSpec(job_count=3, seed=0)
        stage = StageNode(id="s0", exec_time=5.0, output_size=3.0)
        jobs = tuple(
            JobGraph(
                job_id=f"job{j:06d}",
                stages=(stage,),
                template_id="tmpl000",
                submit_time=float(j),
            )
            for j in range(3)
        )
        telemetry = tuple(
            TelemetryRecord(
                job_id=f"job{j:06d}",
                template_id="tmpl000",
                stage_id="s0",
                stage_type="",
                actual_exec_time=5.0,
                actual_output_size=3.0,
                actual_start=0.0,
                actual_end=5.0,
            )
            for j in range(3)
        )
        workload = Workload(spec=spec, jobs=jobs, telemetry=telemetry)
        report = run_backtest(
            workload,
            strategies=("random", "mid_point", "op", "occ", "optimal"),
            train_fraction=0.5,
            seed=3,
        )
        for row in report.rows:
            assert row.mean_saving_fraction == 0.0


class TestReportRendering:
    @pytest.fixture(scope="class")
    def doc(self):
        workload = generate_workload(small_spec(job_count=8))
        report = run_backtest(
            workload, strategies=("mid_point", "op", "optimal"), train_fraction=0.5
        )
        return report.to_doc()

    def test_table_layout(self, doc):
        text = render_report_table(doc)
        first, *rest = text.splitlines()
        assert first.startswith("objective=temp_storage")
        assert "scored_jobs=" in first and "train_jobs=" in first
        assert all(column in rest[0] for column in REPORT_CSV_COLUMNS)
        assert any(line.startswith("mid_point") for line in rest)
        assert "compare strategy ordering" in text

    def test_report_csv(self, doc, tmp_path):
        path = tmp_path / "report.csv"
        write_report_csv(doc, path)
        lines = path.read_text().splitlines()
        assert lines[0] == ",".join(REPORT_CSV_COLUMNS)
        assert len(lines) == 1 + len(doc["strategies"])
        assert lines[1].startswith("mid_point,")

    def test_curve_csv(self, doc, tmp_path):
        path = tmp_path / "curve.csv"
        write_curve_csv(doc, path)
        lines = path.read_text().splitlines()
        assert lines[0] == "relative_time,saving_fraction"
        assert len(lines) == 1 + len(doc["curve"])
