import numpy as np
import pytest

from combifeat.construct import (
    DISTANCE,
    PAIR,
    PARADIGMS,
    RATIO,
    SINGLE,
    ConstructOptions,
    FeatureSpec,
    FeatureTemplate,
    apply_template,
    count_pair_specs,
    count_search_space,
    enumerate_specs,
    impute,
    materialize,
    materialize_matrix,
    parse_feature_name,
    training_means,
)
from combifeat.errors import ConfigError, TemplateError

from helpers import naive_ga, random_dataset, toy_reference


def options(windows=(None,), paradigms=PARADIGMS, per_row=("ts", "price")):
    return ConstructOptions(windows=tuple(windows), paradigms=tuple(paradigms),
                            per_row_indicators=frozenset(per_row))


def test_enumerate_all_paradigms_per_row_indicator():
    specs = enumerate_specs(("F1", "F2"), "price", "mean", options(windows=(5,)))
    kinds = [(s.paradigm, s.p, s.q, s.denominator) for s in specs]
    assert kinds == [
        (SINGLE, "F1", None, None),
        (SINGLE, "F2", None, None),
        (PAIR, "F1", "F2", None),
        (RATIO, "F1", "F2", "F1"),
        (RATIO, "F1", "F2", "F2"),
        (DISTANCE, "F1", "F2", None),
    ]
    assert len(specs) == 6


def test_enumerate_pair_only_two_windows():
    specs = enumerate_specs(("F1", "F2"), "click", "sum",
                            options(windows=(3, 5), paradigms=(PAIR,)))
    assert len(specs) == 2
    assert {s.window for s in specs} == {3, 5}


def test_enumerate_label_indicator_has_no_distance():
    specs = enumerate_specs(("F1", "F2"), "click", "mean", options(windows=(None,)))
    assert all(s.paradigm != DISTANCE for s in specs)


def test_enumerate_dedups_singles_across_pairs():
    opts = options(windows=(None,), paradigms=(SINGLE, PAIR))
    seen = set()
    first = enumerate_specs(("F1", "F2"), "click", "sum", opts, seen)
    second = enumerate_specs(("F1", "F3"), "click", "sum", opts, seen)
    assert sum(s.paradigm == SINGLE for s in first) == 2
    assert sum(s.paradigm == SINGLE for s in second) == 1  # F1 already emitted
    assert count_pair_specs(2, "click", "sum", opts) == len(first)
    assert count_pair_specs(1, "click", "sum", opts) == len(second)


def test_count_search_space_formula():
    opts = options(windows=(3, 5), paradigms=PARADIGMS)
    out = count_search_space(4, 2, 5, opts, tasks=(("click", "sum"),))
    assert out.nominal == 4 ** 2 / 2 * 2 * 2 * 5 * 4 == 640

    small = count_search_space(2, 1, 1, options(windows=(None,), paradigms=(PAIR,)),
                               tasks=(("click", "sum"),))
    assert small.nominal == 2
    assert small.exact == 1  # one pair, one window, pair paradigm only

    iqiyi_shaped = count_search_space(
        16, 3, 5, options(windows=(3, 5, 7, 14), paradigms=PARADIGMS), tasks=())
    assert iqiyi_shaped.nominal == 128 * 3 * 4 * 5 * 4 == 30720


def test_count_search_space_exact_matches_enumeration():
    opts = options(windows=(None, 4), paradigms=PARADIGMS)
    fields = ["F0", "F1", "F2"]
    tasks = (("click", "sum"), ("price", "mean"))
    total = 0
    for indicator, operator in tasks:
        seen = set()
        for i in range(len(fields) - 1):
            for j in range(i + 1, len(fields)):
                total += len(enumerate_specs((fields[i], fields[j]), indicator,
                                             operator, opts, seen))
    assert count_search_space(3, 2, 2, opts, tasks).exact == total


def test_materialize_ratio_on_toy():
    t = toy_reference()
    spec = FeatureSpec(RATIO, "F1", "F2", "click", "sum", denominator="F1")
    col = materialize(t, t, spec)
    assert col[2] == 1.0  # pair sum 1 (r1) over field sum 1 (r1+r2)


def test_materialize_distance_on_toy():
    t = toy_reference()
    spec = FeatureSpec(DISTANCE, "F1", None, "ts", "mean")
    col = materialize(t, t, spec)
    assert col[2] == pytest.approx(-1.5)  # mean(ts of r1,r2) - 3


def test_materialize_ratio_empty_denominator_is_missing():
    t = toy_reference().take([0, 3])  # lone (a,x) and (b,x) rows
    spec = FeatureSpec(RATIO, "F1", "F2", "click", "sum", denominator="F1")
    col = materialize(t, t, spec)
    assert np.isnan(col).all()


def test_ratio_equals_pair_over_single_where_defined():
    rng = np.random.default_rng(8)
    d = random_dataset(rng, 400, n_fields=3, max_card=5)
    pair = materialize(d, d, FeatureSpec(PAIR, "F0", "F1", "click", "sum"))
    single = materialize(d, d, FeatureSpec(SINGLE, "F1", None, "click", "sum"))
    ratio = materialize(d, d, FeatureSpec(RATIO, "F0", "F1", "click", "sum",
                                          denominator="F1"))
    ok = ~np.isnan(pair) & ~np.isnan(single) & (np.abs(single) >= 1e-12)
    np.testing.assert_allclose(ratio[ok], pair[ok] / single[ok], rtol=1e-12)
    assert np.isnan(ratio[~ok]).all()


def test_name_round_trip():
    specs = [
        FeatureSpec(SINGLE, "F1", None, "click", "sum", window=259200),
        FeatureSpec(PAIR, "F3", "F7", "click", "sum", window=432000),
        FeatureSpec(RATIO, "F3", "F7", "click", "sum", window=432000, denominator="F3"),
        FeatureSpec(RATIO, "F3", "F7", "click", "std", denominator="F7"),
        FeatureSpec(DISTANCE, "F2", "F5", "ts", "mean", window=86400),
        FeatureSpec(DISTANCE, "F2", None, "price", "max"),
    ]
    for spec in specs:
        assert parse_feature_name(spec.name) == spec


def test_name_round_trip_random():
    rng = np.random.default_rng(9)
    fields = [f"fld_{i}" for i in range(6)]
    for _ in range(200):
        paradigm = PARADIGMS[rng.integers(0, 4)]
        p, q = rng.choice(6, size=2, replace=False)
        operator = ("mean", "max", "min")[rng.integers(0, 3)] \
            if paradigm == DISTANCE else ("sum", "mean", "std", "max", "min")[rng.integers(0, 5)]
        window = None if rng.random() < 0.5 else int(rng.integers(1, 10 ** 6))
        spec = FeatureSpec(
            paradigm, fields[p],
            None if paradigm == SINGLE else fields[q],
            "price", operator, window,
            denominator=fields[p] if paradigm == RATIO else None,
        )
        assert parse_feature_name(spec.name) == spec


def test_spec_validation():
    with pytest.raises(ConfigError):
        FeatureSpec(SINGLE, "F1", "F2", "click", "sum")
    with pytest.raises(ConfigError):
        FeatureSpec(PAIR, "F1", None, "click", "sum")
    with pytest.raises(ConfigError):
        FeatureSpec(RATIO, "F1", "F2", "click", "sum", denominator="F9")
    with pytest.raises(ConfigError):
        FeatureSpec(DISTANCE, "F1", "F2", "click", "sum")
    with pytest.raises(ConfigError):
        FeatureSpec(PAIR, "F1", "F1", "click", "sum")


def _template_from_specs(dataset, specs):
    raw = materialize_matrix(dataset, dataset, specs)
    return FeatureTemplate(
        schema=dataset.schema,
        specs=specs,
        imputation=training_means(raw),
        fingerprint=dataset.fingerprint(),
    )


def test_apply_template_empty():
    d = toy_reference()
    template = _template_from_specs(d, [])
    out = apply_template(d, template)
    assert out.values.shape == (4, 0)


def test_apply_template_matches_oracle_and_is_idempotent():
    rng = np.random.default_rng(10)
    d = random_dataset(rng, 200, n_fields=3, max_card=4, ts_range=80)
    specs = [FeatureSpec(PAIR, "F0", "F1", "click", "sum", window=9)]
    template = _template_from_specs(d, specs)
    out = apply_template(d, template)
    want = naive_ga(d, d, ("F0", "F1"), "sum", "click", window=9)
    filled = np.where(np.isnan(want), template.imputation[0], want)
    np.testing.assert_allclose(out.values[:, 0], filled, rtol=1e-9, atol=1e-9)
    again = apply_template(d, template)
    np.testing.assert_array_equal(out.values, again.values)


def test_apply_template_fingerprint_mismatch():
    d = toy_reference()
    template = _template_from_specs(d, [FeatureSpec(PAIR, "F1", "F2", "click", "sum")])
    mismatched = FeatureTemplate(
        schema=template.schema, specs=template.specs,
        imputation=template.imputation, fingerprint="0badc0de0badc0de")
    with pytest.raises(TemplateError):
        apply_template(d, mismatched)


def test_imputation_means_and_fallback():
    d = toy_reference()
    specs = [FeatureSpec(PAIR, "F1", "F2", "click", "mean")]
    raw = materialize_matrix(d, d, specs)
    means = training_means(raw)
    observed = raw.values[~raw.missing_mask[:, 0], 0]
    assert means[0] == pytest.approx(observed.mean())
    lonely = d.take([0])
    raw_single = materialize_matrix(lonely, lonely, specs)
    assert training_means(raw_single) == [0.0]
    filled = impute(raw_single, [0.0])
    assert np.isfinite(filled.values).all()


def test_template_rejects_duplicates_and_nonfinite():
    d = toy_reference()
    spec = FeatureSpec(PAIR, "F1", "F2", "click", "sum")
    with pytest.raises(TemplateError):
        FeatureTemplate(schema=d.schema, specs=[spec, spec], imputation=[0.0, 0.0],
                        fingerprint=d.fingerprint())
    with pytest.raises(TemplateError):
        FeatureTemplate(schema=d.schema, specs=[spec], imputation=[np.nan],
                        fingerprint=d.fingerprint())


def test_materialized_columns_ignore_out_of_window_values():
    rng = np.random.default_rng(12)
    d = random_dataset(rng, 150, n_fields=2, max_card=3, ts_range=50)
    spec = FeatureSpec(PAIR, "F0", "F1", "click", "mean", window=8)
    base = materialize(d, d, spec)
    from combifeat.dataset import Dataset

    victim = int(np.argmax(d.timestamp))
    label2 = d.label.copy()
    label2[victim] = 1.0 - label2[victim]
    d2 = Dataset(d.schema, d.codes, d.dictionaries, label2, d.timestamp, d.continuous)
    after = materialize(d2, d2, spec)
    safe = d.timestamp <= d.timestamp[victim]
    np.testing.assert_array_equal(base[safe], after[safe])
