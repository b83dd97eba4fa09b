"""Shared test utilities: the naive aggregation oracle and data generators."""

import numpy as np
import pandas as pd

from combifeat.dataset import Schema, from_frame


def naive_ga(reference, targets, key_fields, operator, indicator, window=None,
             open_lower=False):
    """O(n^2) per-row scan defining groupby-then-aggregate semantics.

    Independent of the production kernel: selects each target row's reference
    set with boolean masks and aggregates it directly with numpy.
    """
    same = targets is reference
    vals = reference.indicator_values(indicator)
    out = np.zeros(targets.n_rows) if operator == "count" else np.full(targets.n_rows, np.nan)
    key_ref = [reference.codes[f] for f in key_fields]
    key_tgt = [targets.codes[f] for f in key_fields]
    for k in range(targets.n_rows):
        mask = np.ones(reference.n_rows, dtype=bool)
        for cr, ct in zip(key_ref, key_tgt):
            mask &= cr == ct[k]
        if same:
            mask[k] = False
        if window is not None:
            ts_k = targets.timestamp[k]
            lo = ts_k - window
            in_window = reference.timestamp < ts_k
            if open_lower:
                in_window &= reference.timestamp > lo
            else:
                in_window &= reference.timestamp >= lo
            mask &= in_window
        chosen = vals[mask]
        if operator == "count":
            out[k] = chosen.size
        elif chosen.size:
            out[k] = getattr(np, operator)(chosen) if operator != "mean" else chosen.mean()
    return out


def random_dataset(rng, n_rows, n_fields=3, max_card=6, with_ts=True,
                   ts_range=None, with_price=True):
    """Random log table wrapped in a Dataset (fields F0..Fk, label, ts, price)."""
    fields = tuple(f"F{i}" for i in range(n_fields))
    data = {}
    for name in fields:
        card = rng.integers(2, max_card + 1)
        data[name] = [f"v{c}" for c in rng.integers(0, card, size=n_rows)]
    data["click"] = rng.integers(0, 2, size=n_rows)
    columns = {"label": "click"}
    if with_ts:
        span = ts_range if ts_range is not None else max(10, n_rows * 2)
        data["ts"] = rng.integers(0, span, size=n_rows)
        columns["timestamp"] = "ts"
    continuous = ()
    if with_price:
        data["price"] = np.round(rng.normal(0.0, 1.0, size=n_rows), 6)
        continuous = ("price",)
    schema = Schema(
        categorical_fields=fields,
        label="click",
        timestamp="ts" if with_ts else None,
        continuous_indicators=continuous,
    )
    return from_frame(pd.DataFrame(data), schema)


def toy_reference():
    """The four-row table used by the worked aggregation examples."""
    schema = Schema(categorical_fields=("F1", "F2"), label="click", timestamp="ts")
    frame = pd.DataFrame({
        "F1": ["a", "a", "a", "b"],
        "F2": ["x", "y", "x", "x"],
        "ts": [1, 2, 3, 4],
        "click": [1, 0, 1, 0],
    })
    return from_frame(frame, schema)


def planted_pair_frame(rng, n_rows=20000, n_fields=8, cardinality=10, n_days=10,
                       day_units=86400, hot_rate=0.8, base_rate=0.05,
                       co_occurrence=0.05, pair=(0, 1), codes=(0, 0)):
    """Synthetic log where one designated code pair of one field pair lifts the
    click rate; all other fields are noise.

    The designated pair co-occurs on `co_occurrence` of rows; the remaining
    rows draw the pair uniformly from the other code combinations.
    """
    fields = [f"F{i}" for i in range(n_fields)]
    X = rng.integers(0, cardinality, size=(n_rows, n_fields))
    a, b = pair
    ca, cb = codes
    forced = rng.random(n_rows) < co_occurrence
    others = [(i, j) for i in range(cardinality) for j in range(cardinality)
              if (i, j) != (ca, cb)]
    drawn = np.asarray(others)[rng.integers(0, len(others), size=n_rows)]
    X[:, a] = np.where(forced, ca, drawn[:, 0])
    X[:, b] = np.where(forced, cb, drawn[:, 1])
    planted = (X[:, a] == ca) & (X[:, b] == cb)
    y = (rng.random(n_rows) < np.where(planted, hot_rate, base_rate)).astype(int)
    ts = rng.integers(0, n_days * day_units, size=n_rows)
    frame = pd.DataFrame({name: [f"c{v}" for v in X[:, i]]
                          for i, name in enumerate(fields)})
    frame["ts"] = ts
    frame["click"] = y
    return frame, fields


def planted_pair_dataset(rng, **kwargs):
    frame, fields = planted_pair_frame(rng, **kwargs)
    schema = Schema(categorical_fields=tuple(fields), label="click", timestamp="ts")
    return from_frame(frame, schema)
