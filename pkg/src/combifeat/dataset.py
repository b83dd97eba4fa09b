"""Columnar dataset: load, dictionary-encode, sample and split raw log data.

Categorical columns are stored as int32 code vectors plus a per-field
dictionary (first-appearance order). The label is binary, the timestamp is an
integer in declared units, continuous indicators are finite floats. Datasets
are immutable after construction and safe to share across threads.
"""

from __future__ import annotations

import csv
import hashlib
import re
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .errors import ConfigError, ParseError, SchemaError

# Reserved pseudo-indicator: a column of ones, the only indicator `count` aggregates.
UNIT_INDICATOR = "unit"

# Dictionary entry assigned to empty categorical cells.
MISSING_TOKEN = "__MISSING__"

# Names must stay parseable inside canonical feature names.
_NAME_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_.:-]*$")


@dataclass(frozen=True)
class Schema:
    """Declares column roles for a log dataset.

    `indicator_set` lists the columns that may be aggregated; it must be a
    subset of {label, timestamp} + continuous_indicators + "unit".
    """

    categorical_fields: tuple[str, ...]
    label: str
    timestamp: str | None = None
    continuous_indicators: tuple[str, ...] = ()
    indicator_set: tuple[str, ...] = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "categorical_fields", tuple(self.categorical_fields))
        object.__setattr__(self, "continuous_indicators", tuple(self.continuous_indicators))
        indicators = tuple(self.indicator_set) or (self.label, UNIT_INDICATOR)
        object.__setattr__(self, "indicator_set", indicators)
        self._validate()

    def _validate(self):
        if len(self.categorical_fields) < 2:
            raise SchemaError("need at least two categorical fields")
        names = list(self.categorical_fields) + [self.label]
        names += list(self.continuous_indicators)
        if self.timestamp is not None:
            names.append(self.timestamp)
        if len(set(names)) != len(names):
            raise SchemaError("column names must be unique across roles")
        if self.label in self.categorical_fields:
            raise SchemaError("label cannot be a categorical field")
        for name in names:
            if not _NAME_RE.match(name):
                raise SchemaError(f"invalid column name {name!r}")
            if name == UNIT_INDICATOR:
                raise SchemaError(f"{UNIT_INDICATOR!r} is reserved for the count indicator")
        allowed = {self.label, UNIT_INDICATOR, *self.continuous_indicators}
        if self.timestamp is not None:
            allowed.add(self.timestamp)
        for ind in self.indicator_set:
            if ind not in allowed:
                raise SchemaError(f"indicator {ind!r} is not label/timestamp/continuous/unit")

    @property
    def n_fields(self) -> int:
        return len(self.categorical_fields)

    def field_index(self, name: str) -> int:
        try:
            return self.categorical_fields.index(name)
        except ValueError:
            raise SchemaError(f"unknown categorical field {name!r}") from None

    def per_row_indicators(self) -> frozenset[str]:
        """Indicators that exist as an observable value on every row.

        The label is excluded: it is unknown at prediction time, so distance
        paradigms must never reference it.
        """
        names = set(self.continuous_indicators)
        if self.timestamp is not None:
            names.add(self.timestamp)
        return frozenset(names)

    def to_dict(self) -> dict:
        return {
            "categorical_fields": list(self.categorical_fields),
            "label": self.label,
            "timestamp": self.timestamp,
            "continuous_indicators": list(self.continuous_indicators),
            "indicator_set": list(self.indicator_set),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Schema":
        return cls(
            categorical_fields=tuple(d["categorical_fields"]),
            label=d["label"],
            timestamp=d.get("timestamp"),
            continuous_indicators=tuple(d.get("continuous_indicators", ())),
            indicator_set=tuple(d.get("indicator_set", ())),
        )


class Dataset:
    """Immutable columnar view of a log file.

    Attributes:
        schema: the declaring Schema.
        codes: field name -> int32 code vector.
        dictionaries: field name -> tuple of raw strings, index = code.
        label: float64 vector of 0/1.
        timestamp: int64 vector or None.
        continuous: indicator name -> float64 vector.
    """

    def __init__(self, schema, codes, dictionaries, label, timestamp, continuous):
        self.schema = schema
        self.codes = {k: np.ascontiguousarray(v, dtype=np.int32) for k, v in codes.items()}
        self.dictionaries = {k: tuple(v) for k, v in dictionaries.items()}
        self.label = np.ascontiguousarray(label, dtype=np.float64)
        self.timestamp = None if timestamp is None else np.ascontiguousarray(timestamp, dtype=np.int64)
        self.continuous = {k: np.ascontiguousarray(v, dtype=np.float64) for k, v in continuous.items()}
        self.n_rows = len(self.label)
        self._check()

    def _check(self):
        for name in self.schema.categorical_fields:
            if name not in self.codes:
                raise SchemaError(f"missing encoded column {name!r}")
            if len(self.codes[name]) != self.n_rows:
                raise SchemaError(f"column {name!r} has wrong length")
            if self.n_rows and self.codes[name].max() >= len(self.dictionaries[name]):
                raise SchemaError(f"column {name!r} has a code outside its dictionary")
        if self.n_rows and not np.isin(self.label, (0.0, 1.0)).all():
            raise ParseError("label column must be binary")
        if self.timestamp is not None and len(self.timestamp) != self.n_rows:
            raise SchemaError("timestamp column has wrong length")
        for name, col in self.continuous.items():
            if len(col) != self.n_rows:
                raise SchemaError(f"indicator {name!r} has wrong length")
            if self.n_rows and not np.isfinite(col).all():
                raise ParseError(f"indicator {name!r} contains non-finite values")

    def cardinality(self, field_name: str) -> int:
        return len(self.dictionaries[field_name])

    def decode(self, field_name: str, codes=None) -> list[str]:
        codes = self.codes[field_name] if codes is None else np.asarray(codes)
        vocab = self.dictionaries[field_name]
        return [vocab[c] for c in codes]

    def indicator_values(self, name: str) -> np.ndarray:
        """Numeric column for an aggregation indicator ("unit" -> ones)."""
        if name == UNIT_INDICATOR:
            return np.ones(self.n_rows)
        if name == self.schema.label:
            return self.label
        if self.schema.timestamp is not None and name == self.schema.timestamp:
            return self.timestamp.astype(np.float64)
        if name in self.continuous:
            return self.continuous[name]
        raise SchemaError(f"unknown indicator {name!r}")

    def fingerprint(self) -> str:
        """Hash of field names plus dictionary cardinalities."""
        text = ";".join(
            f"{name}={self.cardinality(name)}" for name in self.schema.categorical_fields
        )
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    def take(self, indices) -> "Dataset":
        """Row subset; dictionaries are shared unchanged."""
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(
            schema=self.schema,
            codes={k: v[idx] for k, v in self.codes.items()},
            dictionaries=self.dictionaries,
            label=self.label[idx],
            timestamp=None if self.timestamp is None else self.timestamp[idx],
            continuous={k: v[idx] for k, v in self.continuous.items()},
        )


def _encode_categorical(raw: pd.Series) -> tuple[np.ndarray, list[str]]:
    values = raw.to_numpy(dtype=object)
    values = np.where(pd.isna(values) | (values == ""), MISSING_TOKEN, values)
    codes, vocab = pd.factorize(values)
    return codes.astype(np.int32), [str(v) for v in vocab]


def _parse_numeric(raw: pd.Series, column: str, integer: bool = False) -> np.ndarray:
    parsed = pd.to_numeric(raw, errors="coerce")
    bad = np.flatnonzero(parsed.isna().to_numpy())
    if bad.size:
        raise ParseError(f"column {column!r}: cannot parse value {raw.iloc[bad[0]]!r} at row {bad[0]}")
    out = parsed.to_numpy(dtype=np.float64)
    if integer:
        rounded = np.rint(out)
        if not np.array_equal(rounded, out):
            row = int(np.flatnonzero(rounded != out)[0])
            raise ParseError(f"column {column!r}: non-integer value at row {row}")
        return rounded.astype(np.int64)
    return out


def _parse_label(raw: pd.Series, column: str) -> np.ndarray:
    parsed = pd.to_numeric(raw, errors="coerce").to_numpy(dtype=np.float64)
    bad = ~np.isin(parsed, (0.0, 1.0))
    if bad.any():
        row = int(np.flatnonzero(bad)[0])
        raise ParseError(f"label column {column!r}: value {raw.iloc[row]!r} at row {row} is not 0/1")
    return parsed


def from_frame(frame: pd.DataFrame, schema: Schema, label=None) -> Dataset:
    """Build a Dataset from an in-memory table.

    `label` overrides the frame's label column (used by the sklearn facade,
    where y arrives separately).
    """
    required = list(schema.categorical_fields) + list(schema.continuous_indicators)
    if schema.timestamp is not None:
        required.append(schema.timestamp)
    if label is None:
        required.append(schema.label)
    for name in required:
        if name not in frame.columns:
            raise SchemaError(f"declared column {name!r} not found in input")

    codes, dictionaries = {}, {}
    for name in schema.categorical_fields:
        codes[name], dictionaries[name] = _encode_categorical(frame[name].astype(object))
    if label is None:
        label_col = _parse_label(frame[schema.label], schema.label)
    else:
        label_col = _parse_label(pd.Series(np.asarray(label)), schema.label)
        if len(label_col) != len(frame):
            raise SchemaError("label length does not match the input rows")
    timestamp = None
    if schema.timestamp is not None:
        timestamp = _parse_numeric(frame[schema.timestamp], schema.timestamp, integer=True)
    continuous = {
        name: _parse_numeric(frame[name], name) for name in schema.continuous_indicators
    }
    return Dataset(schema, codes, dictionaries, label_col, timestamp, continuous)


def load(path, schema: Schema, delimiter: str = ",", header: bool = True) -> Dataset:
    """Read a delimited text file into a Dataset, building dictionaries here.

    Rows keep file order. Every declared column must be present; the label
    must parse to {0,1} (errors name the offending row).
    """
    try:
        if header:
            frame = pd.read_csv(path, sep=delimiter, dtype=str, keep_default_na=False)
        else:
            names = list(schema.categorical_fields) + [schema.label]
            if schema.timestamp is not None:
                names.append(schema.timestamp)
            names += list(schema.continuous_indicators)
            frame = pd.read_csv(path, sep=delimiter, dtype=str, keep_default_na=False,
                                header=None, names=names)
    except FileNotFoundError:
        raise SchemaError(f"input file not found: {path}") from None
    except pd.errors.ParserError as exc:
        raise ParseError(f"cannot parse {path}: {exc}") from None
    return from_frame(frame, schema)


def sample(dataset: Dataset, rate: float, seed: int) -> Dataset:
    """Uniform row sample without replacement; n_out = round(rate * n).

    No class-ratio manipulation: negatives are kept at their natural rate so
    mean-type aggregates stay unbiased. Row order is preserved.
    """
    if not 0.0 < rate <= 1.0:
        raise ConfigError(f"sampling rate must be in (0, 1], got {rate}")
    if rate == 1.0:
        return dataset
    n_keep = int(round(rate * dataset.n_rows))
    rng = np.random.default_rng(seed)
    chosen = np.sort(rng.choice(dataset.n_rows, size=n_keep, replace=False))
    return dataset.take(chosen)


def split_holdout(dataset: Dataset, rate_valid: float, seed: int,
                  by_time: bool = False) -> tuple[Dataset, Dataset]:
    """Partition rows into (train, valid).

    Random mode permutes rows with the given seed. Time mode puts the rows
    with the largest timestamps into valid, keeping equal-timestamp groups on
    one side.
    """
    train_idx, valid_idx = split_indices(
        dataset.n_rows, rate_valid, seed,
        timestamps=dataset.timestamp if by_time else None,
    )
    return dataset.take(train_idx), dataset.take(valid_idx)


def split_indices(n_rows: int, rate_valid: float, seed: int,
                  timestamps=None) -> tuple[np.ndarray, np.ndarray]:
    """Index-level split shared by dataset and matrix splitting."""
    if not 0.0 < rate_valid < 1.0:
        raise ConfigError(f"rate_valid must be in (0, 1), got {rate_valid}")
    target = int(round(rate_valid * n_rows))
    if timestamps is None:
        rng = np.random.default_rng(seed)
        perm = rng.permutation(n_rows)
        valid_idx = np.sort(perm[:target])
        train_idx = np.sort(perm[target:])
    else:
        ts = np.asarray(timestamps)
        unique_desc = np.unique(ts)[::-1]
        taken = 0
        threshold = unique_desc[0]
        for value in unique_desc:
            taken += int((ts == value).sum())
            threshold = value
            if taken >= target:
                break
        valid_idx = np.flatnonzero(ts >= threshold)
        train_idx = np.flatnonzero(ts < threshold)
    if len(valid_idx) == 0 or len(train_idx) == 0:
        raise ConfigError("split produced an empty partition")
    return train_idx, valid_idx


def write_delimited(path, header: list[str], columns: list[np.ndarray], delimiter: str = ","):
    """Write aligned numeric columns as delimited text with a header line."""
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle, delimiter=delimiter)
        writer.writerow(header)
        for row in zip(*[np.asarray(c) for c in columns]):
            writer.writerow([repr(float(v)) if isinstance(v, float) else v for v in row])
