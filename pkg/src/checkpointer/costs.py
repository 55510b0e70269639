"""Stage cost estimation: telemetry, features, trained predictors, accuracy.

Optimizer estimates of stage cost and output size are often off by orders of
magnitude. This module fine-tunes them against telemetry from previous runs
of the same recurring jobs. The pipeline is deliberately small:

* TelemetryRecord rows round-trip through a fixed-schema CSV,
* TelemetryHistory aggregates per (template, stage type) historic means,
* extract_features builds a fixed-order numeric vector per stage, and
* CostModel wraps a regression backend, trained on log1p-scaled targets so
  multi-order-of-magnitude ranges fit; predictions come back in raw units
  and are never negative.

Models exist at two scopes. Per-stage-type models specialize; a general
model covers types with too little data. Prediction falls back in a fixed
order: per-type model, general model, historic mean, raw optimizer
estimate, and finally the constant 1.0.
"""

from __future__ import annotations

import csv
import json
import math
import zlib
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from .errors import EmptyInput, InsufficientData, ParseError, SchemaError, SchemaMismatch
from .graph import StageNode
from .regression import FittedRegressor, get_backend, regressor_from_dict

OPTIMIZER_FEATURE_KEYS = (
    "estimated_cost",
    "estimated_input_cardinality",
    "estimated_exclusive_cost",
    "estimated_cardinality",
)

# Value written into the history slots when no history exists. The paired
# presence flag is what models should key on; the sentinel just keeps the
# column numeric and out of the non-negative data range.
HISTORY_SENTINEL = -1.0

TELEMETRY_COLUMNS = (
    "job_id",
    "template_id",
    "stage_id",
    "stage_type",
    "actual_exec_time",
    "actual_output_size",
    "actual_start",
    "actual_end",
    "task_count",
)

TARGETS = ("exec_time", "output_size")

# Fallback optimizer estimate per target when no model and no history apply.
_RAW_ESTIMATE_KEY = {
    "exec_time": "estimated_cost",
    "output_size": "estimated_cardinality",
}


@dataclass(frozen=True)
class TelemetryRecord:
    """Measured outcome of one stage execution."""

    job_id: str
    template_id: str
    stage_id: str
    stage_type: str
    actual_exec_time: float
    actual_output_size: float
    actual_start: float
    actual_end: float
    task_count: int = 1
    optimizer_features: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "optimizer_features", dict(self.optimizer_features))


# ---------------------------------------------------------------------------
# Telemetry CSV round trip


def write_telemetry_csv(records: Iterable[TelemetryRecord], path: str | Path) -> None:
    records = list(records)
    feat_names = sorted({k for r in records for k in r.optimizer_features})
    header = list(TELEMETRY_COLUMNS) + [f"feat_{k}" for k in feat_names]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for r in records:
            row = [
                r.job_id,
                r.template_id,
                r.stage_id,
                r.stage_type,
                repr(r.actual_exec_time),
                repr(r.actual_output_size),
                repr(r.actual_start),
                repr(r.actual_end),
                str(r.task_count),
            ]
            row += [repr(float(r.optimizer_features.get(k, 0.0))) for k in feat_names]
            writer.writerow(row)


def read_telemetry_csv(path: str | Path) -> list[TelemetryRecord]:
    """Parse a telemetry CSV, raising SchemaError for missing columns and
    ParseError (with line and column) for malformed or inconsistent values."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(TELEMETRY_COLUMNS[0]) from None
        for col in TELEMETRY_COLUMNS:
            if col not in header:
                raise SchemaError(col)
        index = {name: i for i, name in enumerate(header)}
        feat_cols = [(name[5:], i) for name, i in index.items() if name.startswith("feat_")]
        feat_cols.sort()

        records: list[TelemetryRecord] = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue

            def cell(col: str) -> str:
                i = index[col]
                if i >= len(row):
                    raise ParseError(lineno, col, "row has too few fields")
                return row[i]

            def number(col: str) -> float:
                raw = cell(col)
                try:
                    return float(raw)
                except ValueError:
                    raise ParseError(lineno, col, f"not a number: {raw!r}") from None

            exec_time = number("actual_exec_time")
            output_size = number("actual_output_size")
            start = number("actual_start")
            end = number("actual_end")
            if exec_time < 0:
                raise ParseError(lineno, "actual_exec_time", "must be >= 0")
            if output_size < 0:
                raise ParseError(lineno, "actual_output_size", "must be >= 0")
            if end < start:
                raise ParseError(lineno, "actual_end", "ends before it starts")
            raw_tasks = cell("task_count")
            try:
                task_count = int(raw_tasks)
            except ValueError:
                raise ParseError(lineno, "task_count", f"not an integer: {raw_tasks!r}") from None
            if task_count < 1:
                raise ParseError(lineno, "task_count", "must be >= 1")

            feats: dict[str, float] = {}
            for name, i in feat_cols:
                if i >= len(row):
                    raise ParseError(lineno, f"feat_{name}", "row has too few fields")
                try:
                    feats[name] = float(row[i])
                except ValueError:
                    raise ParseError(
                        lineno, f"feat_{name}", f"not a number: {row[i]!r}"
                    ) from None

            records.append(
                TelemetryRecord(
                    job_id=cell("job_id"),
                    template_id=cell("template_id"),
                    stage_id=cell("stage_id"),
                    stage_type=cell("stage_type"),
                    actual_exec_time=exec_time,
                    actual_output_size=output_size,
                    actual_start=start,
                    actual_end=end,
                    task_count=task_count,
                    optimizer_features=feats,
                )
            )
    return records


# ---------------------------------------------------------------------------
# Historic aggregates


class TelemetryHistory:
    """Running mean exec time and output size per (template_id, stage_type).

    ``window`` caps how many most-recent observations per key contribute;
    None keeps everything.
    """

    def __init__(self, window: int | None = None):
        if window is not None and window < 1:
            raise ValueError("window must be >= 1 or None")
        self.window = window
        self._exec: dict[tuple[str, str], deque[float]] = {}
        self._size: dict[tuple[str, str], deque[float]] = {}

    def add(self, record: TelemetryRecord) -> None:
        key = (record.template_id, record.stage_type)
        if key not in self._exec:
            self._exec[key] = deque(maxlen=self.window)
            self._size[key] = deque(maxlen=self.window)
        self._exec[key].append(record.actual_exec_time)
        self._size[key].append(record.actual_output_size)

    def lookup(self, template_id: str, stage_type: str) -> tuple[float, float] | None:
        key = (template_id, stage_type)
        values = self._exec.get(key)
        if not values:
            return None
        return (
            math.fsum(values) / len(values),
            math.fsum(self._size[key]) / len(self._size[key]),
        )

    @classmethod
    def from_records(
        cls, records: Iterable[TelemetryRecord], window: int | None = None
    ) -> "TelemetryHistory":
        history = cls(window=window)
        for r in records:
            history.add(r)
        return history


# ---------------------------------------------------------------------------
# Feature extraction


@dataclass(frozen=True)
class FeatureSchema:
    """Fixed layout of the stage feature vector.

    Slots 0..3 are the optimizer estimates, 4..5 the historic means (or the
    sentinel), slot 6 the history presence flag, and the remainder hashed
    name tokens. Only the first six slots are magnitude-like; those get a
    log1p squash before regression.
    """

    version: int = 1
    hash_dim: int = 256
    use_name_tokens: bool = True

    @property
    def width(self) -> int:
        return 7 + (self.hash_dim if self.use_name_tokens else 0)

    @property
    def names(self) -> tuple[str, ...]:
        base = OPTIMIZER_FEATURE_KEYS + (
            "hist_exec_time_mean",
            "hist_output_size_mean",
            "hist_present",
        )
        if self.use_name_tokens:
            base = base + tuple(f"name_hash_{i}" for i in range(self.hash_dim))
        return base

    def model_inputs(self, values: np.ndarray) -> np.ndarray:
        """Squash magnitude slots; flags and hash slots pass through."""
        out = np.array(values, dtype=float, copy=True)
        out[..., :6] = np.log1p(np.clip(out[..., :6], 0.0, None))
        return out

    def to_dict(self) -> dict[str, Any]:
        return {
            "version": self.version,
            "hash_dim": self.hash_dim,
            "use_name_tokens": self.use_name_tokens,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "FeatureSchema":
        return cls(
            version=int(d["version"]),
            hash_dim=int(d["hash_dim"]),
            use_name_tokens=bool(d["use_name_tokens"]),
        )


DEFAULT_SCHEMA = FeatureSchema()


@dataclass(frozen=True)
class FeatureVector:
    values: tuple[float, ...]
    schema_version: int = 1


def _hashed_tokens(tokens: Sequence[str], dim: int) -> list[float]:
    # crc32 is stable across processes, unlike the builtin hash().
    vec = [0.0] * dim
    for token in tokens:
        h = zlib.crc32(token.encode("utf-8"))
        sign = 1.0 if (h >> 16) & 1 else -1.0
        vec[h % dim] += sign
    return vec


def stage_name_tokens(template_id: str, stage_type: str, stage_id: str) -> tuple[str, str, str]:
    """Canonical name tokens for a recurring stage.

    The template-qualified stage name is what identifies the same logical
    stage across runs of a template; the bare stage id would collide across
    templates. Training reconstructs these from telemetry identity fields,
    so stages must carry the same triple for the hashed slots to line up.
    """
    return (template_id, stage_type, f"{template_id}/{stage_id}")


def _assemble_features(
    optimizer_features: Mapping[str, float],
    name_tokens: Sequence[str],
    hist: tuple[float, float] | None,
    schema: FeatureSchema,
) -> FeatureVector:
    values = [float(optimizer_features.get(k, 0.0)) for k in OPTIMIZER_FEATURE_KEYS]
    if hist is None:
        values += [HISTORY_SENTINEL, HISTORY_SENTINEL, 0.0]
    else:
        values += [hist[0], hist[1], 1.0]
    if schema.use_name_tokens:
        values += _hashed_tokens(name_tokens, schema.hash_dim)
    return FeatureVector(values=tuple(values), schema_version=schema.version)


def extract_features(
    stage: StageNode,
    history: TelemetryHistory | None,
    template_id: str,
    schema: FeatureSchema = DEFAULT_SCHEMA,
) -> FeatureVector:
    """Feature vector for one stage given aggregated history (or none)."""
    hist = history.lookup(template_id, stage.stage_type) if history is not None else None
    return _assemble_features(stage.optimizer_features, stage.name_tokens, hist, schema)


@dataclass
class TrainingRows:
    features: np.ndarray
    targets: dict[str, np.ndarray]
    stage_types: list[str]


def build_training_rows(
    records: Sequence[TelemetryRecord],
    schema: FeatureSchema = DEFAULT_SCHEMA,
    window: int | None = None,
) -> TrainingRows:
    """Feature matrix and raw targets from telemetry, in record order.

    History features for row i are computed from rows before i only, so
    training matches what prediction sees for a job that has not run yet.
    Name tokens are rebuilt from the record's identity fields with
    stage_name_tokens, matching what prediction-time extraction sees on
    stages tokenized the same way.
    """
    history = TelemetryHistory(window=window)
    rows: list[tuple[float, ...]] = []
    types: list[str] = []
    exec_t: list[float] = []
    size_t: list[float] = []
    for rec in records:
        hist = history.lookup(rec.template_id, rec.stage_type)
        tokens = stage_name_tokens(rec.template_id, rec.stage_type, rec.stage_id)
        fv = _assemble_features(rec.optimizer_features, tokens, hist, schema)
        rows.append(fv.values)
        types.append(rec.stage_type)
        exec_t.append(rec.actual_exec_time)
        size_t.append(rec.actual_output_size)
        history.add(rec)
    features = np.array(rows, dtype=float) if rows else np.empty((0, schema.width))
    return TrainingRows(
        features=features,
        targets={"exec_time": np.array(exec_t), "output_size": np.array(size_t)},
        stage_types=types,
    )


# ---------------------------------------------------------------------------
# Cost models


@dataclass(frozen=True)
class CostModel:
    """One trained predictor for one target at one scope."""

    target: str
    scope_label: str
    backend: str
    regressor: FittedRegressor
    schema: FeatureSchema
    sample_count: int

    def predict(self, features: FeatureVector) -> float:
        if features.schema_version != self.schema.version:
            raise SchemaMismatch(self.schema.version, features.schema_version)
        X = self.schema.model_inputs(np.array([features.values], dtype=float))
        raw = float(self.regressor.predict(X)[0])
        return max(0.0, float(math.expm1(raw)))

    def to_dict(self) -> dict[str, Any]:
        return {
            "target": self.target,
            "scope_label": self.scope_label,
            "backend": self.backend,
            "sample_count": self.sample_count,
            "regressor": self.regressor.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any], schema: FeatureSchema) -> "CostModel":
        return cls(
            target=d["target"],
            scope_label=d["scope_label"],
            backend=d["backend"],
            regressor=regressor_from_dict(d["regressor"]),
            schema=schema,
            sample_count=int(d["sample_count"]),
        )


@dataclass
class CostModelBank:
    """Models for one target: optional per-type specialists plus a general
    fallback. ``insufficient`` records types skipped for lack of data."""

    target: str
    schema: FeatureSchema
    min_samples: int
    general: CostModel | None = None
    per_type: dict[str, CostModel] = field(default_factory=dict)
    insufficient: dict[str, int] = field(default_factory=dict)

    def model_for(self, stage_type: str) -> CostModel | None:
        return self.per_type.get(stage_type, self.general)


def fit_cost_model(
    records: Sequence[TelemetryRecord],
    target: str,
    scope: str = "general",
    *,
    backend: str = "linear",
    min_samples: int = 30,
    schema: FeatureSchema = DEFAULT_SCHEMA,
    window: int | None = None,
    backend_options: Mapping[str, Any] | None = None,
) -> CostModelBank:
    """Train cost predictors for ``target`` from telemetry.

    ``scope`` is "general" for a single pooled model or "per_stage_type" for
    one specialist per observed type backed by the pooled model. Targets are
    fitted on a log1p scale; the inverse transform happens inside predict.
    Raises InsufficientData when even the pooled data is below
    ``min_samples``; per-type shortfalls are recorded, not raised.
    """
    if target not in TARGETS:
        raise ValueError(f"unknown target {target!r}, expected one of {TARGETS}")
    if scope not in ("general", "per_stage_type"):
        raise ValueError(f"unknown scope {scope!r}")
    rows = build_training_rows(records, schema=schema, window=window)
    n = rows.features.shape[0]
    if n < min_samples:
        raise InsufficientData("general", n, min_samples)

    fitter = get_backend(backend, **(backend_options or {}))
    X_all = schema.model_inputs(rows.features)
    y_all = np.log1p(rows.targets[target])

    def train(X: np.ndarray, y: np.ndarray, label: str) -> CostModel:
        return CostModel(
            target=target,
            scope_label=label,
            backend=backend,
            regressor=fitter.fit(X, y),
            schema=schema,
            sample_count=int(y.shape[0]),
        )

    bank = CostModelBank(target=target, schema=schema, min_samples=min_samples)
    bank.general = train(X_all, y_all, "general")
    if scope == "per_stage_type":
        by_type: dict[str, list[int]] = {}
        for i, st in enumerate(rows.stage_types):
            by_type.setdefault(st, []).append(i)
        for st in sorted(by_type):
            idx = by_type[st]
            if len(idx) < min_samples:
                bank.insufficient[st] = len(idx)
                continue
            bank.per_type[st] = train(X_all[idx], y_all[idx], st)
    return bank


@dataclass
class ModelBank:
    """All trained cost predictors plus the schema they expect."""

    schema: FeatureSchema
    banks: dict[str, CostModelBank] = field(default_factory=dict)

    def save(self, path: str | Path) -> None:
        doc = {
            "format_version": 1,
            "schema": self.schema.to_dict(),
            "targets": {
                target: {
                    "min_samples": bank.min_samples,
                    "general": bank.general.to_dict() if bank.general else None,
                    "per_type": {k: m.to_dict() for k, m in sorted(bank.per_type.items())},
                    "insufficient": dict(sorted(bank.insufficient.items())),
                }
                for target, bank in sorted(self.banks.items())
            },
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path: str | Path) -> "ModelBank":
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
        if doc.get("format_version") != 1:
            raise SchemaError("format_version")
        schema = FeatureSchema.from_dict(doc["schema"])
        bank = cls(schema=schema)
        for target, td in doc.get("targets", {}).items():
            cmb = CostModelBank(
                target=target, schema=schema, min_samples=int(td["min_samples"])
            )
            if td.get("general"):
                cmb.general = CostModel.from_dict(td["general"], schema)
            cmb.per_type = {
                k: CostModel.from_dict(v, schema) for k, v in td.get("per_type", {}).items()
            }
            cmb.insufficient = {k: int(v) for k, v in td.get("insufficient", {}).items()}
            bank.banks[target] = cmb
        return bank


def fit_model_bank(
    records: Sequence[TelemetryRecord],
    *,
    scope: str = "per_stage_type",
    backend: str = "linear",
    min_samples: int = 30,
    schema: FeatureSchema = DEFAULT_SCHEMA,
    window: int | None = None,
    backend_options: Mapping[str, Any] | None = None,
) -> ModelBank:
    """Fit predictors for every target into one persistable bank."""
    bank = ModelBank(schema=schema)
    for target in TARGETS:
        bank.banks[target] = fit_cost_model(
            records,
            target,
            scope,
            backend=backend,
            min_samples=min_samples,
            schema=schema,
            window=window,
            backend_options=backend_options,
        )
    return bank


def predict_stage_costs(
    bank: ModelBank | None,
    stage: StageNode,
    history: TelemetryHistory | None,
    template_id: str,
) -> tuple[float, float]:
    """Predicted (exec_time, output_size) for a stage.

    Fallback order per target: per-type model, general model, historic mean,
    raw optimizer estimate, constant 1.0.
    """
    hist = history.lookup(template_id, stage.stage_type) if history is not None else None
    out: list[float] = []
    for target in TARGETS:
        cmb = bank.banks.get(target) if bank is not None else None
        model = cmb.model_for(stage.stage_type) if cmb is not None else None
        if model is not None:
            fv = extract_features(stage, history, template_id, model.schema)
            out.append(model.predict(fv))
        elif hist is not None:
            out.append(hist[0] if target == "exec_time" else hist[1])
        elif _RAW_ESTIMATE_KEY[target] in stage.optimizer_features:
            out.append(max(0.0, float(stage.optimizer_features[_RAW_ESTIMATE_KEY[target]])))
        else:
            out.append(1.0)
    return out[0], out[1]


# ---------------------------------------------------------------------------
# Accuracy metrics


@dataclass(frozen=True)
class AccuracyReport:
    r_squared: float
    median_qerror: float
    p95_qerror: float
    qerror_rows: int
    zero_actual_rows: int


def evaluate_accuracy(
    predictions: Sequence[float],
    actuals: Sequence[float],
    *,
    prediction_floor: float = 1e-9,
) -> AccuracyReport:
    """Fit quality of predictions against actuals.

    R-squared is computed on log1p-scaled values so huge rows do not drown
    the rest; if the actuals have no variance it is reported as nan. QError
    is max(actual/pred, pred/actual) with predictions clamped to a small
    positive floor; rows whose actual is zero are excluded from QError and
    counted separately.
    """
    if len(predictions) != len(actuals):
        raise ValueError("predictions and actuals must have the same length")
    if len(actuals) < 2:
        raise EmptyInput("accuracy evaluation needs at least 2 rows")
    pred = np.asarray(predictions, dtype=float)
    act = np.asarray(actuals, dtype=float)

    log_pred = np.log1p(np.clip(pred, 0.0, None))
    log_act = np.log1p(np.clip(act, 0.0, None))
    ss_res = float(np.sum((log_act - log_pred) ** 2))
    ss_tot = float(np.sum((log_act - log_act.mean()) ** 2))
    r_squared = math.nan if ss_tot == 0.0 else 1.0 - ss_res / ss_tot

    nonzero = act > 0
    zero_rows = int((~nonzero).sum())
    if nonzero.any():
        p = np.maximum(pred[nonzero], prediction_floor)
        a = act[nonzero]
        q = np.maximum(a / p, p / a)
        median_q = float(np.median(q))
        p95_q = float(np.quantile(q, 0.95))
    else:
        median_q = math.nan
        p95_q = math.nan
    return AccuracyReport(
        r_squared=r_squared,
        median_qerror=median_q,
        p95_qerror=p95_q,
        qerror_rows=int(nonzero.sum()),
        zero_actual_rows=zero_rows,
    )
