"""Per-row, leave-one-out, optionally time-windowed groupby aggregation.

For every target row the kernel aggregates an indicator over the reference
rows that share the row's key codes, excluding the row itself when target and
reference are the same dataset, and restricted to timestamps in
[ts - window, ts) when a window is set (the upper bound is always open, so
same-timestamp records never leak; `open_lower=True` switches the lower bound
to an open one).

Numerical contract: every output value is a function of the multiset of
in-group, in-window, non-self indicator values only. Reference rows are
sorted canonically (key, timestamp, value), window slices are resolved with
searchsorted, and leave-one-out statistics are recomputed without the row's
own value rather than subtracted, so perturbing a future row, an out-of-group
row, or the row's own indicator leaves the output bit-identical.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import Dataset, UNIT_INDICATOR
from .errors import ConfigError

OPERATORS = ("sum", "mean", "std", "max", "min", "count")
MISSING = np.nan


@dataclass(frozen=True)
class GroupKey:
    """One or two categorical fields whose codes form the composite key."""

    fields: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "fields", tuple(self.fields))
        if not 1 <= len(self.fields) <= 2:
            raise ConfigError("group key must use one or two fields")
        if len(set(self.fields)) != len(self.fields):
            raise ConfigError("group key fields must be distinct")


@dataclass(frozen=True)
class AggSpec:
    """Aggregation operator + indicator + optional window (timestamp units)."""

    operator: str
    indicator: str
    window: int | None = None

    def __post_init__(self):
        if self.operator not in OPERATORS:
            raise ConfigError(f"unknown operator {self.operator!r}")
        if self.window is not None and self.window <= 0:
            raise ConfigError("window must be a positive duration")
        if self.operator == "count" and self.indicator != UNIT_INDICATOR:
            raise ConfigError("count aggregates the unit indicator only")
        if self.operator != "count" and self.indicator == UNIT_INDICATOR:
            raise ConfigError("the unit indicator is only valid with count")


def aggregate_scalar(values, operator: str) -> float:
    """Aggregate a non-empty value list to a scalar (std is population std)."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        raise ValueError("aggregate_scalar requires non-empty input")
    if operator == "sum":
        return float(arr.sum())
    if operator == "mean":
        return float(arr.mean())
    if operator == "std":
        return float(arr.std())
    if operator == "max":
        return float(arr.max())
    if operator == "min":
        return float(arr.min())
    if operator == "count":
        return float(arr.size)
    raise ConfigError(f"unknown operator {operator!r}")


def _group_ids(dataset: Dataset, fields: tuple[str, ...]) -> np.ndarray:
    codes = dataset.codes[fields[0]].astype(np.int64)
    if len(fields) == 2:
        codes = codes * dataset.cardinality(fields[1]) + dataset.codes[fields[1]]
    return codes


def _validate(reference: Dataset, targets: Dataset, key: GroupKey, spec: AggSpec):
    for ds in (reference, targets):
        for name in key.fields:
            if name not in ds.schema.categorical_fields:
                raise ConfigError(f"key field {name!r} not in schema")
        ds.indicator_values(spec.indicator)  # raises SchemaError on unknown
        if spec.window is not None and ds.timestamp is None:
            raise ConfigError("windowed aggregation needs a timestamp column")
    for name in key.fields:
        if reference.dictionaries[name] != targets.dictionaries[name]:
            raise ConfigError(f"field {name!r} dictionaries differ between datasets")


def ga(reference: Dataset, targets: Dataset, key: GroupKey, spec: AggSpec,
       open_lower: bool = False) -> np.ndarray:
    """Groupby-then-aggregate one indicator over target rows.

    Returns a float64 column aligned to `targets`; empty groups yield NaN
    (count yields 0). Leave-one-out applies only when `targets is reference`.
    """
    _validate(reference, targets, key, spec)
    if spec.window is None:
        if targets is reference:
            return _plain_leave_one_out(reference, key, spec)
        return _plain_full_group(reference, targets, key, spec)
    return _windowed(reference, targets, key, spec, open_lower)


def _empty_result(n: int, operator: str) -> np.ndarray:
    return np.zeros(n) if operator == "count" else np.full(n, MISSING)


def _segment_starts(sorted_gids: np.ndarray) -> np.ndarray:
    return np.flatnonzero(np.r_[True, sorted_gids[1:] != sorted_gids[:-1]])


def _windowed(reference, targets, key, spec, open_lower):
    n_ref = reference.n_rows
    out = _empty_result(targets.n_rows, spec.operator)
    if n_ref == 0 or targets.n_rows == 0:
        return out

    gid_ref = _group_ids(reference, key.fields)
    gid_tgt = _group_ids(targets, key.fields)
    ts_ref = reference.timestamp
    ts_tgt = targets.timestamp
    vals = reference.indicator_values(spec.indicator)

    # Canonical order: key, then time, then value. Value as the last sort key
    # makes the kernel exactly invariant under reference-row shuffles.
    order = np.lexsort((vals, ts_ref, gid_ref))
    g_s, t_s, v_s = gid_ref[order], ts_ref[order], vals[order]

    starts = _segment_starts(g_s)
    group_gids = g_s[starts]
    base = int(t_s.min())
    span = int(t_s.max()) - base + 2

    pos = np.searchsorted(group_gids, gid_tgt)
    found = (pos < len(group_gids)) & (group_gids[np.minimum(pos, len(group_gids) - 1)] == gid_tgt)

    # Composite key folds (group rank, time offset) into one sortable int64.
    composite = np.repeat(np.arange(len(starts), dtype=np.int64), np.diff(np.r_[starts, n_ref])) * span
    composite += t_s - base

    lo_shift = 1 if open_lower else 0
    off_lo = np.clip(ts_tgt - spec.window - base + lo_shift, 0, span - 1)
    off_hi = np.clip(ts_tgt - base, 0, span - 1)
    lo = np.searchsorted(composite, pos * span + off_lo, side="left")
    hi = np.searchsorted(composite, pos * span + off_hi, side="left")
    lo = np.where(found, lo, 0)
    hi = np.where(found, hi, 0)
    counts = hi - lo
    nonempty = counts > 0

    if spec.operator == "count":
        return counts.astype(np.float64)
    if not nonempty.any():
        return out

    idx_lo = lo[nonempty]
    idx_hi = hi[nonempty]
    if spec.operator in ("sum", "mean"):
        reduced = _reduceat_pairs(np.add, v_s, idx_lo, idx_hi)
        if spec.operator == "mean":
            reduced = reduced / counts[nonempty]
        out[nonempty] = reduced
    elif spec.operator == "max":
        out[nonempty] = _reduceat_pairs(np.maximum, v_s, idx_lo, idx_hi)
    elif spec.operator == "min":
        out[nonempty] = _reduceat_pairs(np.minimum, v_s, idx_lo, idx_hi)
    elif spec.operator == "std":
        # Recompute per row: two-pass std over the slice matches the direct
        # definition even for constant windows at large magnitudes.
        values = np.empty(idx_lo.size)
        for i in range(idx_lo.size):
            values[i] = v_s[idx_lo[i]:idx_hi[i]].std()
        out[nonempty] = values
    return out


def _reduceat_pairs(ufunc, values, lo, hi):
    """Apply a ufunc reduction over [lo_i, hi_i) slices (all non-empty)."""
    padded = np.r_[values, values[-1:]]  # reduceat index may equal len(values)
    bounds = np.empty(lo.size * 2, dtype=np.int64)
    bounds[0::2] = lo
    bounds[1::2] = hi
    return ufunc.reduceat(padded, bounds)[0::2]


def _plain_full_group(reference, targets, key, spec):
    """No window, target rows not in the reference: whole-group aggregates."""
    out = _empty_result(targets.n_rows, spec.operator)
    if reference.n_rows == 0 or targets.n_rows == 0:
        return out
    gid_ref = _group_ids(reference, key.fields)
    vals = reference.indicator_values(spec.indicator)
    order = np.lexsort((vals, gid_ref))
    g_s, v_s = gid_ref[order], vals[order]
    starts = _segment_starts(g_s)
    ends = np.r_[starts[1:], len(g_s)]
    group_gids = g_s[starts]
    counts = ends - starts

    gid_tgt = _group_ids(targets, key.fields)
    pos = np.searchsorted(group_gids, gid_tgt)
    found = (pos < len(group_gids)) & (group_gids[np.minimum(pos, len(group_gids) - 1)] == gid_tgt)
    pos = np.minimum(pos, len(group_gids) - 1)

    if spec.operator == "count":
        out[found] = counts[pos[found]]
        return out
    if spec.operator == "sum" or spec.operator == "mean":
        sums = _reduceat_pairs(np.add, v_s, starts, ends)
        agg = sums / counts if spec.operator == "mean" else sums
    elif spec.operator == "max":
        agg = v_s[ends - 1]  # value-sorted within each group
    elif spec.operator == "min":
        agg = v_s[starts]
    elif spec.operator == "std":
        agg = np.empty(len(starts))
        for i in range(len(starts)):
            agg[i] = v_s[starts[i]:ends[i]].std()
    out[found] = agg[pos[found]]
    return out


def _plain_leave_one_out(reference, key, spec):
    """No window, targets are the reference rows: aggregate the group minus self.

    Each row's statistic is recomputed over the group values with the row's
    own slot deleted, so the result never depends on the row's own value.
    """
    n = reference.n_rows
    out = _empty_result(n, spec.operator)
    if n == 0:
        return out
    gid = _group_ids(reference, key.fields)
    vals = reference.indicator_values(spec.indicator)
    order = np.lexsort((vals, gid))
    g_s, v_s = gid[order], vals[order]
    starts = _segment_starts(g_s)
    ends = np.r_[starts[1:], n]

    sorted_pos = np.empty(n, dtype=np.int64)
    sorted_pos[order] = np.arange(n)
    group_of_sorted = np.repeat(np.arange(len(starts)), ends - starts)
    group_of_row = group_of_sorted[sorted_pos]
    counts = (ends - starts)[group_of_row] - 1

    if spec.operator == "count":
        return counts.astype(np.float64)

    singleton = counts == 0
    if spec.operator == "max" or spec.operator == "min":
        # Groups are value-sorted: dropping self only matters at the extreme slot.
        s = starts[group_of_row]
        e = ends[group_of_row]
        if spec.operator == "max":
            last = e - 1
            pick = np.where(sorted_pos == last, last - 1, last)
        else:
            pick = np.where(sorted_pos == starts[group_of_row], s + 1, s)
        res = v_s[np.clip(pick, 0, n - 1)]
        out[~singleton] = res[~singleton]
        return out

    for g in range(len(starts)):
        s, e = starts[g], ends[g]
        size = e - s
        if size < 2:
            continue
        block = v_s[s:e]
        rows = order[s:e]
        for local in range(size):
            rest = np.delete(block, local)
            if spec.operator == "sum":
                out[rows[local]] = rest.sum()
            elif spec.operator == "mean":
                out[rows[local]] = rest.mean()
            else:
                out[rows[local]] = rest.std()
    return out
