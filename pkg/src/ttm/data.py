"""Tabular data substrate: schema inference, frames, filtering, what-if edits.

Frames are immutable column stores. Every mutating operation returns a new
frame and leaves row ids untouched, so conversational references such as
"data point 49" survive arbitrary filter chains.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Iterable, Optional, Union

import numpy as np

from .errors import LoadError, SchemaError, SemanticError

NUMERIC = "numeric"
CATEGORICAL = "categorical"

# A column is categorical iff it is non-numeric or has at most this many
# distinct values.
CATEGORICAL_DISTINCT_THRESHOLD = 10

# Condition fields that are not schema features.
ID_FIELD = "id"
LABEL_FIELD = "label"
PREDICTION_FIELD = "prediction"

COMPARISONS = ("<", "<=", ">", ">=", "=", "!=")


@dataclass(frozen=True)
class Feature:
    name: str
    kind: str  # NUMERIC or CATEGORICAL


@dataclass(frozen=True)
class DatasetSchema:
    """Typed description of a tabular dataset.

    target_classes is ordered; the position of a class name is its label
    index everywhere in the engine.
    """

    features: tuple[Feature, ...]
    categorical_values: dict[str, tuple[str, ...]]
    target_classes: tuple[str, ...]
    id_column: str = "id"

    def __post_init__(self):
        names = [f.name for f in self.features]
        if len(names) != len(set(names)):
            raise SchemaError("duplicate feature names in schema")
        if any(not n for n in names):
            raise SchemaError("empty feature name in schema")
        if len(self.target_classes) < 2:
            raise SchemaError("schema needs at least 2 target classes")
        for f in self.features:
            if f.kind == CATEGORICAL and not self.categorical_values.get(f.name):
                raise SchemaError(f"categorical feature {f.name!r} has no values")

    @property
    def feature_names(self) -> tuple[str, ...]:
        return tuple(f.name for f in self.features)

    def kind_of(self, name: str) -> str:
        for f in self.features:
            if f.name == name:
                return f.kind
        raise SemanticError(f"unknown feature {name!r}")

    def has_feature(self, name: str) -> bool:
        return any(f.name == name for f in self.features)

    def class_index(self, name: str) -> int:
        try:
            return self.target_classes.index(name)
        except ValueError:
            raise SemanticError(f"unknown class {name!r}") from None

    def numeric_features(self) -> tuple[str, ...]:
        return tuple(f.name for f in self.features if f.kind == NUMERIC)

    def categorical_features(self) -> tuple[str, ...]:
        return tuple(f.name for f in self.features if f.kind == CATEGORICAL)


class DataFrame:
    """Immutable column-store over a schema.

    Columns hold float arrays for numeric features and string object arrays
    for categorical ones. ids are arbitrary unique integers; labels are
    class indices into schema.target_classes.
    """

    def __init__(self, schema: DatasetSchema, ids, columns, labels):
        self.schema = schema
        self.ids = np.asarray(ids, dtype=np.int64)
        self.columns = {}
        for f in schema.features:
            if f.name not in columns:
                raise SchemaError(f"missing column {f.name!r}")
            col = np.asarray(columns[f.name])
            if f.kind == NUMERIC:
                col = col.astype(np.float64)
            else:
                col = col.astype(object)
                allowed = set(schema.categorical_values[f.name])
                bad = [v for v in col if v not in allowed]
                if bad:
                    raise SchemaError(
                        f"value {bad[0]!r} not in schema for feature {f.name!r}"
                    )
            self.columns[f.name] = col
        self.labels = np.asarray(labels, dtype=np.int64)
        n = len(self.ids)
        if any(len(c) != n for c in self.columns.values()) or len(self.labels) != n:
            raise SchemaError("column length mismatch")
        if len(np.unique(self.ids)) != n:
            raise SchemaError("row ids must be unique")

    def __len__(self) -> int:
        return len(self.ids)

    def row(self, i: int) -> dict:
        return {name: col[i] for name, col in self.columns.items()}

    def row_by_id(self, row_id: int) -> int:
        """Positional index of a row id; raises if absent."""
        hits = np.nonzero(self.ids == row_id)[0]
        if len(hits) == 0:
            raise SemanticError(f"no row with id {row_id}")
        return int(hits[0])

    def take(self, indices) -> "DataFrame":
        idx = np.asarray(indices, dtype=np.int64)
        cols = {name: col[idx] for name, col in self.columns.items()}
        return DataFrame(self.schema, self.ids[idx], cols, self.labels[idx])

    def with_column(self, name: str, values) -> "DataFrame":
        cols = dict(self.columns)
        cols[name] = values
        return DataFrame(self.schema, self.ids, cols, self.labels)

    def feature_matrix(self) -> np.ndarray:
        """Numeric view: categorical columns become value-pool indices."""
        out = np.empty((len(self), len(self.schema.features)), dtype=np.float64)
        for j, f in enumerate(self.schema.features):
            col = self.columns[f.name]
            if f.kind == NUMERIC:
                out[:, j] = col
            else:
                pool = list(self.schema.categorical_values[f.name])
                out[:, j] = [pool.index(v) for v in col]
        return out


# ---------------------------------------------------------------------------
# Selections


@dataclass(frozen=True)
class Cond:
    """One comparison leaf: feature, id, label, or prediction vs a value."""

    field: str
    cmp: str
    value: Union[float, str, int]

    def __post_init__(self):
        if self.cmp not in COMPARISONS:
            raise SemanticError(f"bad comparison {self.cmp!r}")
        if self.field == ID_FIELD and self.cmp != "=":
            raise SemanticError("id leaves support equality only")


@dataclass(frozen=True)
class And:
    parts: tuple


@dataclass(frozen=True)
class Or:
    parts: tuple


Predicate = Union[Cond, And, Or]


@dataclass(frozen=True)
class Selection:
    """A dataset split plus an optional predicate over it."""

    base: str = "test"  # "train" or "test"
    predicate: Optional[Predicate] = None


def _class_index_of(schema: DatasetSchema, value) -> int:
    # parses carry class names; programmatic callers may pass indices
    if isinstance(value, str):
        return schema.class_index(value)
    return int(value)


def _eval_leaf(df: DataFrame, cond: Cond, predictions) -> np.ndarray:
    if cond.field == ID_FIELD:
        return df.ids == int(cond.value)
    if cond.field == LABEL_FIELD:
        target = df.labels
        want = _class_index_of(df.schema, cond.value)
    elif cond.field == PREDICTION_FIELD:
        if predictions is None:
            raise SemanticError("prediction filter needs model predictions")
        target = np.asarray(predictions)
        want = _class_index_of(df.schema, cond.value)
    else:
        if not df.schema.has_feature(cond.field):
            raise SemanticError(f"unknown feature {cond.field!r}")
        col = df.columns[cond.field]
        if df.schema.kind_of(cond.field) == NUMERIC:
            target, want = col, float(cond.value)
        else:
            if cond.cmp not in ("=", "!="):
                raise SemanticError(
                    f"categorical feature {cond.field!r} only supports = and !="
                )
            eq = np.array([v == cond.value for v in col], dtype=bool)
            return eq if cond.cmp == "=" else ~eq
    ops = {
        "<": np.less,
        "<=": np.less_equal,
        ">": np.greater,
        ">=": np.greater_equal,
        "=": np.equal,
        "!=": np.not_equal,
    }
    return ops[cond.cmp](target, want)


def _eval_predicate(df: DataFrame, pred: Predicate, predictions) -> np.ndarray:
    if isinstance(pred, Cond):
        return _eval_leaf(df, pred, predictions)
    if isinstance(pred, And):
        mask = np.ones(len(df), dtype=bool)
        for p in pred.parts:
            mask &= _eval_predicate(df, p, predictions)
        return mask
    if isinstance(pred, Or):
        mask = np.zeros(len(df), dtype=bool)
        for p in pred.parts:
            mask |= _eval_predicate(df, p, predictions)
        return mask
    raise SemanticError(f"bad predicate node {pred!r}")


def apply_filter(df: DataFrame, sel: Selection, predictions=None) -> DataFrame:
    """Rows of df satisfying the selection predicate; ids preserved.

    predictions: optional per-row predicted class indices, required only
    when the predicate contains prediction leaves.
    """
    if sel.predicate is None:
        return df
    mask = _eval_predicate(df, sel.predicate, predictions)
    return df.take(np.nonzero(mask)[0])


def apply_change(df: DataFrame, feature: str, mode: str, value) -> DataFrame:
    """What-if edit: returns a copy with one feature set/shifted everywhere."""
    if not df.schema.has_feature(feature):
        raise SemanticError(f"unknown feature {feature!r}")
    kind = df.schema.kind_of(feature)
    if mode not in ("set", "increase", "decrease"):
        raise SemanticError(f"bad change mode {mode!r}")
    if kind == CATEGORICAL:
        if mode != "set":
            raise SemanticError(
                f"cannot {mode} categorical feature {feature!r}; use set"
            )
        if value not in df.schema.categorical_values[feature]:
            raise SemanticError(
                f"{value!r} is not a known value of feature {feature!r}"
            )
        col = np.array([value] * len(df), dtype=object)
    else:
        amount = float(value)
        base = df.columns[feature]
        if mode == "set":
            col = np.full(len(df), amount)
        elif mode == "increase":
            col = base + amount
        else:
            col = base - amount
    return df.with_column(feature, col)


# ---------------------------------------------------------------------------
# Statistics


@dataclass
class StatisticReport:
    stat: str
    per_feature: dict
    n: int


def _summary_block(df: DataFrame, feature: str) -> dict:
    col = df.columns[feature]
    if df.schema.kind_of(feature) == NUMERIC:
        if len(col) == 0:
            return {"kind": NUMERIC, "count": 0}
        return {
            "kind": NUMERIC,
            "count": int(len(col)),
            "mean": float(np.mean(col)),
            "min": float(np.min(col)),
            "max": float(np.max(col)),
        }
    values = {}
    for v in col:
        values[v] = values.get(v, 0) + 1
    return {"kind": CATEGORICAL, "count": int(len(col)), "values": values}


def compute_statistic(df: DataFrame, stat: str, feature: Optional[str] = None) -> StatisticReport:
    """Descriptive statistic over one feature or all of them.

    feature=None means all features. mean/min/max/range require a nonempty
    frame and numeric features; summary is legal anywhere.
    """
    if stat not in ("mean", "min", "max", "range", "summary"):
        raise SemanticError(f"unknown statistic {stat!r}")
    targets = [feature] if feature else list(df.schema.feature_names)
    for name in targets:
        if not df.schema.has_feature(name):
            raise SemanticError(f"unknown feature {name!r}")

    if stat == "summary":
        blocks = {name: _summary_block(df, name) for name in targets}
        return StatisticReport("summary", blocks, len(df))

    if len(df) == 0:
        raise SemanticError(f"cannot compute {stat} of an empty selection")
    out = {}
    for name in targets:
        if df.schema.kind_of(name) == CATEGORICAL:
            raise SemanticError(
                f"{stat} is undefined for categorical feature {name!r}; "
                "try the summary statistic"
            )
        col = df.columns[name]
        if stat == "mean":
            out[name] = float(np.mean(col))
        elif stat == "min":
            out[name] = float(np.min(col))
        elif stat == "max":
            out[name] = float(np.max(col))
        else:
            out[name] = float(np.max(col) - np.min(col))
    return StatisticReport(stat, out, len(df))


def count(df: DataFrame) -> int:
    return len(df)


# ---------------------------------------------------------------------------
# CSV ingestion


def _is_number(text: str) -> bool:
    try:
        float(text)
    except ValueError:
        return False
    return True


def load_csv(
    path: str,
    label_column: str,
    class_names: Optional[Iterable[str]] = None,
    id_column: Optional[str] = None,
) -> DataFrame:
    """Ingest a header-ed CSV into a typed frame.

    Schema inference: a column is categorical iff any value fails to parse
    as a number or the column has <= 10 distinct values. Rows get fresh
    sequential ids unless id_column names an integer column. Missing values
    are a load error, not imputed.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise LoadError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        rows = []
        for i, raw in enumerate(reader):
            if len(raw) != len(header):
                raise LoadError(
                    f"{path}: row {i + 1} has {len(raw)} fields, expected {len(header)}"
                )
            rows.append([v.strip() for v in raw])
    if not rows:
        raise LoadError(f"{path}: no data rows")
    if label_column not in header:
        raise LoadError(f"{path}: no column named {label_column!r}")
    if id_column is not None and id_column not in header:
        raise LoadError(f"{path}: no column named {id_column!r}")

    by_name = {name: [r[j] for r in rows] for j, name in enumerate(header)}
    for name, vals in by_name.items():
        for i, v in enumerate(vals):
            if v == "":
                raise LoadError(f"{path}: row {i + 1} has a missing value in {name!r}")

    label_values = by_name[label_column]
    if class_names is None:
        class_names = sorted(set(label_values))
    class_names = tuple(str(c) for c in class_names)
    class_to_idx = {c: i for i, c in enumerate(class_names)}
    labels = []
    for i, v in enumerate(label_values):
        if v not in class_to_idx:
            raise LoadError(f"{path}: row {i + 1} has unknown label {v!r}")
        labels.append(class_to_idx[v])

    if id_column is not None:
        try:
            ids = [int(v) for v in by_name[id_column]]
        except ValueError as e:
            raise LoadError(f"{path}: non-integer id: {e}") from None
    else:
        ids = list(range(len(rows)))

    features = []
    categorical_values: dict[str, tuple[str, ...]] = {}
    columns = {}
    for name in header:
        if name == label_column or name == id_column:
            continue
        vals = by_name[name]
        numeric = all(_is_number(v) for v in vals)
        if numeric and len(set(vals)) > CATEGORICAL_DISTINCT_THRESHOLD:
            features.append(Feature(name, NUMERIC))
            bad = [i for i, v in enumerate(vals) if not _is_number(v)]
            if bad:
                raise LoadError(f"{path}: row {bad[0] + 1} unparsable numeric in {name!r}")
            columns[name] = np.array([float(v) for v in vals])
        else:
            features.append(Feature(name, CATEGORICAL))
            categorical_values[name] = tuple(sorted(set(vals)))
            columns[name] = np.array(vals, dtype=object)

    schema = DatasetSchema(
        features=tuple(features),
        categorical_values=categorical_values,
        target_classes=class_names,
        id_column=id_column or "id",
    )
    return DataFrame(schema, ids, columns, labels)
