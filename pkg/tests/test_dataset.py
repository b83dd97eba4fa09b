import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from combifeat.dataset import (
    MISSING_TOKEN,
    Dataset,
    Schema,
    from_frame,
    load,
    sample,
    split_holdout,
)
from combifeat.errors import ConfigError, ParseError, SchemaError

from helpers import random_dataset


def write_csv(tmp_path, text, name="data.csv"):
    path = tmp_path / name
    path.write_text(text)
    return path


def test_load_builds_dictionaries(tmp_path):
    path = write_csv(tmp_path, "F1,F2,click\na,x,1\nb,y,0\na,x,1\nb,x,0\n")
    schema = Schema(categorical_fields=("F1", "F2"), label="click")
    d = load(path, schema)
    assert d.n_rows == 4
    assert d.cardinality("F1") == 2
    assert d.cardinality("F2") == 2
    assert d.decode("F1") == ["a", "b", "a", "b"]


def test_load_missing_column_names_it(tmp_path):
    path = write_csv(tmp_path, "F1,click\na,1\n")
    schema = Schema(categorical_fields=("F1", "F2"), label="click")
    with pytest.raises(SchemaError, match="F2"):
        load(path, schema)


def test_load_nonbinary_label_reports_row(tmp_path):
    path = write_csv(tmp_path, "F1,F2,click\na,x,1\nb,y,2\n")
    schema = Schema(categorical_fields=("F1", "F2"), label="click")
    with pytest.raises(ParseError, match="row 1"):
        load(path, schema)


def test_load_bad_timestamp(tmp_path):
    path = write_csv(tmp_path, "F1,F2,ts,click\na,x,noon,1\n")
    schema = Schema(categorical_fields=("F1", "F2"), label="click", timestamp="ts")
    with pytest.raises(ParseError, match="ts"):
        load(path, schema)


def test_missing_categorical_gets_reserved_code(tmp_path):
    path = write_csv(tmp_path, "F1,F2,click\na,,1\nb,x,0\n")
    schema = Schema(categorical_fields=("F1", "F2"), label="click")
    d = load(path, schema)
    assert MISSING_TOKEN in d.dictionaries["F2"]


@settings(max_examples=25, deadline=None)
@given(st.lists(st.sampled_from("abcdefgh"), min_size=1, max_size=200))
def test_encode_decode_round_trip(values):
    frame = pd.DataFrame({"F1": values, "F2": ["k"] * len(values),
                          "click": [0] * len(values)})
    schema = Schema(categorical_fields=("F1", "F2"), label="click")
    d = from_frame(frame, schema)
    assert d.decode("F1") == values


def test_encode_decode_round_trip_large_random():
    rng = np.random.default_rng(11)
    values = [f"tok{v}" for v in rng.integers(0, 60, size=1000)]
    frame = pd.DataFrame({"F1": values, "F2": ["k"] * 1000, "click": [0] * 1000})
    d = from_frame(frame, Schema(categorical_fields=("F1", "F2"), label="click"))
    assert d.decode("F1") == values


def test_schema_validation():
    with pytest.raises(SchemaError):
        Schema(categorical_fields=("F1",), label="click")
    with pytest.raises(SchemaError):
        Schema(categorical_fields=("F1", "F1"), label="click")
    with pytest.raises(SchemaError):
        Schema(categorical_fields=("F1", "click"), label="click")
    with pytest.raises(SchemaError):
        Schema(categorical_fields=("F1", "F2"), label="click", indicator_set=("bogus",))
    with pytest.raises(SchemaError):
        Schema(categorical_fields=("F1", "unit"), label="click")


def test_sample_rate_one_is_identity():
    d = random_dataset(np.random.default_rng(0), 50)
    s = sample(d, 1.0, seed=3)
    assert s.n_rows == d.n_rows
    assert np.array_equal(s.codes["F0"], d.codes["F0"])


def test_sample_deterministic():
    d = random_dataset(np.random.default_rng(1), 1000)
    a = sample(d, 0.5, seed=7)
    b = sample(d, 0.5, seed=7)
    assert a.n_rows == 500
    assert np.array_equal(a.timestamp, b.timestamp)
    assert np.array_equal(a.label, b.label)


def test_sample_rejects_bad_rate():
    d = random_dataset(np.random.default_rng(2), 20)
    with pytest.raises(ConfigError):
        sample(d, 0.0, seed=1)
    with pytest.raises(ConfigError):
        sample(d, 1.5, seed=1)


def test_sample_preserves_positive_rate():
    # oracle: direct count on the sampled rows vs the full data
    rng = np.random.default_rng(5)
    n = 10000
    frame = pd.DataFrame({
        "F1": [f"a{v}" for v in rng.integers(0, 5, size=n)],
        "F2": [f"b{v}" for v in rng.integers(0, 5, size=n)],
        "click": (rng.random(n) < 0.09).astype(int),
    })
    d = from_frame(frame, Schema(categorical_fields=("F1", "F2"), label="click"))
    full_rate = d.label.mean()
    for seed in range(10):
        s = sample(d, 0.1, seed=seed)
        assert s.n_rows == 1000
        assert abs(s.label.mean() - full_rate) < 0.03


def test_split_random_sizes_and_determinism():
    d = random_dataset(np.random.default_rng(3), 10)
    train, valid = split_holdout(d, 0.2, seed=4)
    assert valid.n_rows == 2 and train.n_rows == 8
    train2, valid2 = split_holdout(d, 0.2, seed=4)
    assert np.array_equal(valid.timestamp, valid2.timestamp)
    assert np.array_equal(train.timestamp, train2.timestamp)


def test_split_by_time_takes_last_quantile():
    frame = pd.DataFrame({
        "F1": list("aaaaabbbbb"), "F2": list("xyxyxyxyxy"),
        "ts": list(range(1, 11)), "click": [0, 1] * 5,
    })
    d = from_frame(frame, Schema(categorical_fields=("F1", "F2"), label="click",
                                 timestamp="ts"))
    train, valid = split_holdout(d, 0.2, seed=0, by_time=True)
    assert sorted(valid.timestamp.tolist()) == [9, 10]
    assert max(train.timestamp) < 9


def test_split_by_time_keeps_tied_groups_together():
    frame = pd.DataFrame({
        "F1": list("aaaaaa"), "F2": list("xyxyxy"),
        "ts": [1, 2, 3, 9, 9, 9], "click": [0, 1, 0, 1, 0, 1],
    })
    d = from_frame(frame, Schema(categorical_fields=("F1", "F2"), label="click",
                                 timestamp="ts"))
    train, valid = split_holdout(d, 0.2, seed=0, by_time=True)
    assert sorted(valid.timestamp.tolist()) == [9, 9, 9]


def test_split_partitions_are_disjoint_and_exhaustive():
    d = random_dataset(np.random.default_rng(6), 137)
    marker = np.arange(d.n_rows)
    tagged = Dataset(d.schema, d.codes, d.dictionaries, d.label, marker, d.continuous)
    train, valid = split_holdout(tagged, 0.3, seed=9)
    together = np.sort(np.r_[train.timestamp, valid.timestamp])
    assert np.array_equal(together, marker)


def test_inputs_not_modified_by_operations():
    d = random_dataset(np.random.default_rng(7), 60)
    before = d.codes["F0"].copy()
    sample(d, 0.5, seed=0)
    split_holdout(d, 0.25, seed=0)
    assert np.array_equal(d.codes["F0"], before)
