"""Compile-time checkpoint placement for DAG-shaped analytical job plans.

The package decides, before a job runs, which stage outputs to persist to
durable storage so that (a) local temp storage frees up early and (b) a
mid-job failure can restart from the checkpoint instead of from scratch —
all under a global storage budget shared across jobs.
"""

from .admission import (
    AdmissionPolicy,
    Decision,
    JobOffer,
    StreamSummary,
    calibrate_policy,
    decide,
    process_stream,
    read_offers_jsonl,
)
from .costs import (
    AccuracyReport,
    FeatureSchema,
    FeatureVector,
    ModelBank,
    TelemetryHistory,
    TelemetryRecord,
    build_training_rows,
    evaluate_accuracy,
    extract_features,
    fit_cost_model,
    fit_model_bank,
    predict_stage_costs,
    read_telemetry_csv,
    stage_name_tokens,
    write_telemetry_csv,
)
from .errors import (
    CheckpointerError,
    CycleDetected,
    DanglingReference,
    DuplicateStageId,
    EmptyInput,
    EmptyTrainingSet,
    InsufficientData,
    InvalidSpec,
    MissingExecTime,
    MissingModels,
    NegativeExecTime,
    ParseError,
    SchemaError,
    SchemaMismatch,
    TooLargeForExact,
    UnknownStageId,
    UnsortedStream,
    UsageError,
)
from .graph import (
    CutAssignment,
    JobGraph,
    StageNode,
    classify_stages,
    load_jobs,
    parse_jobs,
    save_jobs,
    topological_order,
    validate_graph,
)
from .optimizer import (
    CheckpointObjective,
    CutSolution,
    baseline_cut,
    global_storage,
    heuristic_recovery_cut,
    heuristic_temp_storage_cut,
    recovery_objective,
    solve_exact_multi_cut,
    solve_exact_single_cut,
    stage_failure_prob,
    temp_saving,
    temp_saving_curve,
)
from .simulator import (
    StageSchedule,
    TtlAdjuster,
    adjust_ttl,
    compute_ttl_tfs,
    fit_ttl_adjuster,
    simulate_schedule,
)
from .workload import (
    REPORT_CSV_COLUMNS,
    STRATEGIES,
    BacktestReport,
    RecoveryEstimate,
    StageTypeProfile,
    StrategyResult,
    Workload,
    WorkloadSpec,
    evaluate_recovery,
    generate_workload,
    ingest_telemetry,
    load_workload,
    render_report_table,
    run_backtest,
    save_workload,
    simulate_recovery_saving,
    telemetry_by_job,
    write_curve_csv,
    write_report_csv,
)

__version__ = "0.1.0"

__all__ = [
    "AccuracyReport",
    "AdmissionPolicy",
    "BacktestReport",
    "CheckpointObjective",
    "CheckpointerError",
    "CutAssignment",
    "CutSolution",
    "CycleDetected",
    "DanglingReference",
    "Decision",
    "DuplicateStageId",
    "EmptyInput",
    "EmptyTrainingSet",
    "FeatureSchema",
    "FeatureVector",
    "InsufficientData",
    "InvalidSpec",
    "JobGraph",
    "JobOffer",
    "MissingExecTime",
    "MissingModels",
    "ModelBank",
    "NegativeExecTime",
    "ParseError",
    "REPORT_CSV_COLUMNS",
    "RecoveryEstimate",
    "STRATEGIES",
    "SchemaError",
    "SchemaMismatch",
    "StageNode",
    "StageSchedule",
    "StageTypeProfile",
    "StrategyResult",
    "StreamSummary",
    "TelemetryHistory",
    "TelemetryRecord",
    "TooLargeForExact",
    "TtlAdjuster",
    "UnknownStageId",
    "UnsortedStream",
    "UsageError",
    "Workload",
    "WorkloadSpec",
    "adjust_ttl",
    "baseline_cut",
    "build_training_rows",
    "calibrate_policy",
    "classify_stages",
    "compute_ttl_tfs",
    "decide",
    "evaluate_accuracy",
    "evaluate_recovery",
    "extract_features",
    "fit_cost_model",
    "fit_model_bank",
    "fit_ttl_adjuster",
    "generate_workload",
    "global_storage",
    "heuristic_recovery_cut",
    "heuristic_temp_storage_cut",
    "ingest_telemetry",
    "load_jobs",
    "load_workload",
    "parse_jobs",
    "predict_stage_costs",
    "process_stream",
    "read_offers_jsonl",
    "read_telemetry_csv",
    "recovery_objective",
    "render_report_table",
    "run_backtest",
    "save_jobs",
    "save_workload",
    "simulate_recovery_saving",
    "simulate_schedule",
    "solve_exact_multi_cut",
    "solve_exact_single_cut",
    "stage_failure_prob",
    "stage_name_tokens",
    "telemetry_by_job",
    "temp_saving",
    "temp_saving_curve",
    "topological_order",
    "validate_graph",
    "write_curve_csv",
    "write_report_csv",
    "write_telemetry_csv",
]
