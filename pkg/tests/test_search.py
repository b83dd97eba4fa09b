import numpy as np
import pytest

from combifeat.construct import PAIR, RATIO, SINGLE, ConstructOptions
from combifeat.errors import ConfigError
from combifeat.learners import GBDTConfig
from combifeat.search import (
    PairSearchState,
    SearchConfig,
    factorize,
    info_gain_ratio,
    init_pair_matrix,
    next_pair,
    run_task,
    update,
)
from combifeat.selection import SelectionThresholds

from helpers import planted_pair_dataset, random_dataset

FAST_GBDT = GBDTConfig(n_trees=15, max_depth=3, min_samples_leaf=10, seed=0)
FAST_SEARCH = SearchConfig(latent_dim=3, patience=3, factorize_epochs=200)


def state_from(latent, eta=0.1):
    latent = np.asarray(latent, dtype=np.float64)
    return PairSearchState(n_fields=latent.shape[1], latent=latent.copy(),
                           learning_rate=eta)


# ---------------------------------------------------------------------------
# Information gain ratio and matrix init


def test_ig_ratio_hand_example():
    # joint code has 4 equally likely cells; the label is determined by F_j
    codes_i = [0, 0, 1, 1]
    codes_j = [0, 1, 0, 1]
    labels = [1, 0, 1, 0]
    assert info_gain_ratio(codes_i, codes_j, labels) == pytest.approx(0.5)


def test_ig_ratio_degenerate_cases():
    assert info_gain_ratio([0, 0, 1, 1], [0, 1, 0, 1], [1, 1, 1, 1]) == 0.0
    assert info_gain_ratio([0, 0, 0], [1, 1, 1], [1, 0, 1]) == 0.0


def test_ig_ratio_non_negative_random():
    rng = np.random.default_rng(1)
    for _ in range(20):
        n = int(rng.integers(4, 200))
        v = info_gain_ratio(rng.integers(0, 5, n), rng.integers(0, 4, n),
                            rng.integers(0, 2, n))
        assert 0.0 <= v <= 1.0 + 1e-12


def test_init_pair_matrix_minmax_and_symmetry():
    rng = np.random.default_rng(2)
    d = random_dataset(rng, 300, n_fields=4, max_card=4)
    scaled = init_pair_matrix(d)
    assert scaled.shape == (4, 4)
    np.testing.assert_array_equal(scaled, scaled.T)
    assert np.diag(scaled).tolist() == [0.0] * 4
    off = scaled[~np.eye(4, dtype=bool)]
    assert off.min() == 0.0 and off.max() == 1.0


def test_init_pair_matrix_degenerate_scales_to_half():
    rng = np.random.default_rng(3)
    d = random_dataset(rng, 50, n_fields=2, max_card=3)
    scaled = init_pair_matrix(d)  # single pair: min == max
    assert scaled[0, 1] == 0.5 and scaled[1, 0] == 0.5


def test_init_pair_matrix_three_values():
    # direct check of the min-max formula on raw ratios {0.2, 0.4, 0.6}
    raw = np.array([[0.0, 0.2, 0.4], [0.2, 0.0, 0.6], [0.4, 0.6, 0.0]])
    off = raw[~np.eye(3, dtype=bool)]
    scaled = (raw - off.min()) / (off.max() - off.min())
    np.fill_diagonal(scaled, 0.0)
    assert sorted(set(np.round(scaled[~np.eye(3, dtype=bool)], 12))) == [0.0, 0.5, 1.0]


# ---------------------------------------------------------------------------
# Factorization


def test_factorize_recovers_synthetic_gram():
    rng = np.random.default_rng(4)
    m, k = 6, 3
    truth = rng.uniform(0.1, 0.6, size=(k, m))
    matrix = truth.T @ truth
    np.fill_diagonal(matrix, 0.0)
    latent = factorize(matrix, k, epochs=3000, seed=0)
    recon = latent.T @ latent
    mask = ~np.eye(m, dtype=bool)
    rmse = np.sqrt(np.mean((matrix - recon)[mask] ** 2))
    assert rmse < 0.05


def test_factorize_full_rank_random_symmetric():
    rng = np.random.default_rng(5)
    for seed in range(3):
        m = 6
        matrix = rng.uniform(0.0, 1.0, size=(m, m))
        matrix = (matrix + matrix.T) / 2
        np.fill_diagonal(matrix, 0.0)
        latent = factorize(matrix, m, epochs=5000, seed=seed)
        mask = ~np.eye(m, dtype=bool)
        rmse = np.sqrt(np.mean((matrix - latent.T @ latent)[mask] ** 2))
        assert rmse < 0.01


def test_factorize_zero_matrix():
    latent = factorize(np.zeros((4, 4)), 2, epochs=2000, seed=1)
    recon = latent.T @ latent
    assert np.abs(recon[~np.eye(4, dtype=bool)]).max() < 1e-2


def test_factorize_reduces_rmse():
    rng = np.random.default_rng(6)
    matrix = rng.uniform(0, 1, size=(5, 5))
    matrix = (matrix + matrix.T) / 2
    np.fill_diagonal(matrix, 0.0)
    start = np.random.default_rng(7).uniform(0, 1 / np.sqrt(2), size=(2, 5))
    mask = ~np.eye(5, dtype=bool)
    initial = np.sqrt(np.mean((matrix - start.T @ start)[mask] ** 2))
    latent = factorize(matrix, 2, epochs=500, seed=7)
    final = np.sqrt(np.mean((matrix - latent.T @ latent)[mask] ** 2))
    assert final < initial


# ---------------------------------------------------------------------------
# Pair selection and updates


def test_next_pair_single_pair():
    state = state_from(np.ones((2, 2)))
    assert next_pair(state) == (0, 1)


def test_next_pair_dominant_dot_product():
    latent = np.array([[1.0, 0.9, 0.1], [0.0, 0.0, 0.0]])
    state = state_from(latent)
    assert next_pair(state) == (0, 1)
    state.used.add((0, 1))
    assert next_pair(state) == (0, 2)


def test_next_pair_tie_break_lexicographic():
    state = state_from(np.ones((2, 4)))
    assert next_pair(state) == (0, 1)


def test_next_pair_exhausted():
    state = state_from(np.ones((2, 2)))
    state.used.add((0, 1))
    assert next_pair(state) is None


def test_update_zero_error_is_noop():
    latent = np.array([[0.5, 0.4], [0.2, 0.3]])
    state = state_from(latent)
    p = state.pair_score(0, 1)
    update(state, 0, 1, p)
    np.testing.assert_allclose(state.latent, latent)


def test_update_hand_example_simultaneous():
    state = state_from(np.array([[1.0, 0.5], [0.0, 0.5]]), eta=0.1)
    update(state, 0, 1, 1.0)  # p = 0.5, error 0.5
    np.testing.assert_allclose(state.latent[:, 0], [1.025, 0.025])
    np.testing.assert_allclose(state.latent[:, 1], [0.55, 0.5])


def test_update_moves_score_toward_target():
    rng = np.random.default_rng(8)
    for _ in range(50):
        latent = rng.uniform(0.1, 0.8, size=(3, 2))
        state = state_from(latent, eta=0.01)
        before = state.pair_score(0, 1)
        target = float(rng.uniform(0, 1))
        update(state, 0, 1, target)
        after = state.pair_score(0, 1)
        if target < before:
            assert after < before
        elif target > before:
            assert after > before


def test_update_clamps_non_negative():
    state = state_from(np.array([[1.0, 1.0]]), eta=5.0)
    update(state, 0, 1, 0.0)
    assert (state.latent >= 0).all()


def test_update_validates_range():
    state = state_from(np.ones((2, 2)))
    with pytest.raises(ConfigError):
        update(state, 0, 1, 1.5)


# ---------------------------------------------------------------------------
# Full task runs


def _options():
    return ConstructOptions(windows=(None,), paradigms=(SINGLE, PAIR, RATIO),
                            per_row_indicators=frozenset())


def test_run_task_two_fields_single_iteration():
    rng = np.random.default_rng(9)
    d = random_dataset(rng, 300, n_fields=2, max_card=4)
    out = run_task(d, "click", "mean", _options(), SelectionThresholds(),
                   FAST_GBDT, FAST_SEARCH, seed=1)
    assert len(out.history) == 1


def test_run_task_planted_pair_found_early():
    hits = 0
    for seed in range(10):
        rng = np.random.default_rng(200 + seed)
        d = planted_pair_dataset(rng, n_rows=4000, n_fields=6, cardinality=6)
        out = run_task(d, "click", "mean", _options(), SelectionThresholds(),
                       FAST_GBDT, FAST_SEARCH, seed=seed)
        expanded = [rec.pair for rec in out.history[:3]]
        if ("F0", "F1") in expanded:
            hits += 1
    assert hits >= 8


def test_run_task_null_labels_stop_early():
    # iid labels: nothing real to find, so patience ends every task well
    # before the 15 possible pairs. Acceptance is bounded but not empty: at
    # min_improvement=0 any positive validation delta passes the wrapper, and
    # at this tiny scale a tree can even decode the leave-one-out lattice
    # (group-sum minus self), so scores inflate; the robust claim is the stop.
    from combifeat.dataset import Dataset

    for seed in range(3):
        rng = np.random.default_rng(600 + seed)
        d = random_dataset(rng, 400, n_fields=6, max_card=3)
        null = Dataset(d.schema, d.codes, d.dictionaries,
                       (rng.random(400) < 0.5).astype(float), d.timestamp,
                       d.continuous)
        out = run_task(null, "click", "mean", _options(), SelectionThresholds(),
                       FAST_GBDT, FAST_SEARCH, seed=seed)
        assert len(out.history) < 15  # early stop before exhausting C(6,2) pairs
        assert len(out.accepted) <= 2 * len(out.history)


def test_run_task_never_repeats_pairs_and_bounded():
    rng = np.random.default_rng(11)
    d = random_dataset(rng, 500, n_fields=5, max_card=3)
    out = run_task(d, "click", "sum", _options(), SelectionThresholds(),
                   FAST_GBDT, FAST_SEARCH, seed=3)
    pairs = [rec.pair for rec in out.history]
    assert len(pairs) == len(set(pairs))
    assert len(pairs) <= 10


def test_run_task_best_score_non_decreasing():
    rng = np.random.default_rng(12)
    d = planted_pair_dataset(rng, n_rows=3000, n_fields=5, cardinality=5)
    out = run_task(d, "click", "mean", _options(), SelectionThresholds(),
                   FAST_GBDT, FAST_SEARCH, seed=4)
    bests = [rec.best_score for rec in out.history]
    assert all(b2 >= b1 for b1, b2 in zip(bests, bests[1:]))


def test_run_task_exhaustive_mode_covers_all_pairs():
    rng = np.random.default_rng(13)
    d = random_dataset(rng, 300, n_fields=4, max_card=3)
    config = SearchConfig(latent_dim=2, patience=2, mf_enabled=False)
    out = run_task(d, "click", "mean", _options(), SelectionThresholds(),
                   FAST_GBDT, config, seed=5)
    assert [rec.pair for rec in out.history] == [
        ("F0", "F1"), ("F0", "F2"), ("F0", "F3"),
        ("F1", "F2"), ("F1", "F3"), ("F2", "F3"),
    ]


def test_migratability_unused_pair_scores_rise_with_positive_update():
    rng = np.random.default_rng(14)
    latent = rng.uniform(0.1, 0.5, size=(3, 5))
    state = state_from(latent, eta=0.2)
    before = {(i, j): state.pair_score(i, j) for i in range(4) for j in range(i + 1, 5)}
    p01 = state.pair_score(0, 1)
    update(state, 0, 1, min(1.0, p01 + 0.4))  # over-performing pair
    for (i, j), score in before.items():
        if (i, j) == (0, 1):
            continue
        if 0 in (i, j) or 1 in (i, j):
            assert state.pair_score(i, j) >= score - 1e-12
        else:
            assert state.pair_score(i, j) == pytest.approx(score)
