"""Field-pair combination search guided by matrix factorization.

The pair-effectiveness matrix is initialized from information-gain ratios of
the joint field codes against the label, min-max scaled to [0, 1], and
factorized into non-negative latent field vectors. Each iteration expands the
unused pair with the highest latent dot product, constructs and selects its
candidate features, feeds the survival fraction back into the latent vectors
by SGD, and stops early when the accumulated feature set's validation score
stalls. Disabling the guidance degrades to exhaustive lexicographic expansion
with no early stopping.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .construct import ConstructOptions, enumerate_specs, materialize_matrix, training_means, impute
from .dataset import Dataset, split_indices
from .errors import ConfigError
from .learners import GBDTConfig, auc, train_gbdt
from .selection import SelectionThresholds, fsa


@dataclass(frozen=True)
class SearchConfig:
    latent_dim: int = 4
    learning_rate: float = 0.1
    patience: int = 5
    factorize_epochs: int = 500
    mf_enabled: bool = True

    def __post_init__(self):
        if self.latent_dim < 1:
            raise ConfigError("latent dimension must be >= 1")
        if self.patience < 1:
            raise ConfigError("early-stop patience must be >= 1")


@dataclass
class PairSearchState:
    """Latent field vectors plus the set of already-expanded pairs."""

    n_fields: int
    latent: np.ndarray                 # (latent_dim, n_fields), columns are fields
    learning_rate: float
    used: set = field(default_factory=set)

    def pair_score(self, i: int, j: int) -> float:
        return float(self.latent[:, i] @ self.latent[:, j])


def info_gain_ratio(codes_i, codes_j, labels) -> float:
    """Mutual information of the joint code with the label, divided by the
    joint code's entropy (base 2). Zero-entropy joints return 0."""
    codes_i = np.asarray(codes_i, dtype=np.int64)
    codes_j = np.asarray(codes_j, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if len(codes_i) != len(codes_j) or len(codes_i) != len(labels):
        raise ConfigError("columns must have equal length")
    n = len(labels)
    if n == 0:
        return 0.0
    joint = codes_i * (codes_j.max() + 1) + codes_j
    _, joint = np.unique(joint, return_inverse=True)
    n_cells = joint.max() + 1

    counts_c = np.bincount(joint, minlength=n_cells).astype(np.float64)
    p_c = counts_c / n
    h_c = -np.sum(p_c[p_c > 0] * np.log2(p_c[p_c > 0]))
    if h_c <= 0.0:
        return 0.0

    mi = 0.0
    for label_value in (0, 1):
        mask = labels == label_value
        p_l = mask.mean()
        if p_l == 0:
            continue
        p_cl = np.bincount(joint[mask], minlength=n_cells) / n
        pos = p_cl > 0
        mi += np.sum(p_cl[pos] * np.log2(p_cl[pos] / (p_c[pos] * p_l)))
    return float(max(mi, 0.0) / h_c)


def init_pair_matrix(dataset: Dataset) -> np.ndarray:
    """Symmetric matrix of min-max scaled pair IG ratios, zero diagonal.

    When every off-diagonal entry is equal the scale is degenerate and all
    pairs are set to 0.5.
    """
    fields = dataset.schema.categorical_fields
    m = len(fields)
    if m < 2:
        raise ConfigError("pair search needs at least two fields")
    raw = np.zeros((m, m))
    for i in range(m - 1):
        for j in range(i + 1, m):
            value = info_gain_ratio(dataset.codes[fields[i]], dataset.codes[fields[j]],
                                    dataset.label)
            raw[i, j] = raw[j, i] = value
    off = raw[~np.eye(m, dtype=bool)]
    lo, hi = off.min(), off.max()
    if hi - lo <= 0:
        scaled = np.full((m, m), 0.5)
    else:
        scaled = (raw - lo) / (hi - lo)
    np.fill_diagonal(scaled, 0.0)
    return scaled


def factorize(matrix: np.ndarray, latent_dim: int, epochs: int = 500,
              seed: int = 0, step: float = 0.05) -> np.ndarray:
    """Gradient descent on the off-diagonal squared reconstruction error from
    a non-negative random start; returns the best latent matrix seen."""
    m = matrix.shape[0]
    rng = np.random.default_rng(seed)
    latent = rng.uniform(0.0, 1.0 / np.sqrt(latent_dim), size=(latent_dim, m))
    mask = ~np.eye(m, dtype=bool)

    def rmse(V):
        err = (matrix - V.T @ V)[mask]
        return float(np.sqrt(np.mean(err ** 2)))

    best = latent.copy()
    best_rmse = rmse(latent)
    prev = best_rmse
    for _ in range(epochs):
        error = (matrix - latent.T @ latent)
        error[~mask] = 0.0
        latent = latent + 2.0 * step * (latent @ error)
        current = rmse(latent)
        if current < best_rmse:
            best_rmse = current
            best = latent.copy()
        if prev > 0 and abs(prev - current) / max(prev, 1e-12) < 1e-4:
            break
        prev = current
    return best


def next_pair(state: PairSearchState):
    """Unused pair with the highest latent dot product; lexicographic
    tie-break; None once every pair has been expanded."""
    best = None
    best_score = -np.inf
    for i in range(state.n_fields - 1):
        for j in range(i + 1, state.n_fields):
            if (i, j) in state.used:
                continue
            score = state.pair_score(i, j)
            if score > best_score:
                best_score = score
                best = (i, j)
    return best


def update(state: PairSearchState, i: int, j: int, p_observed: float):
    """SGD feedback: move both fields' vectors along each other by the
    prediction error, simultaneously, then clamp at zero.

    Over-performing pairs (observed > predicted) grow both vectors, raising
    the predicted score of every unused pair that shares a field.
    """
    if not 0.0 <= p_observed <= 1.0:
        raise ConfigError("observed pair effectiveness must lie in [0, 1]")
    vi = state.latent[:, i].copy()
    vj = state.latent[:, j].copy()
    delta = p_observed - float(vi @ vj)
    state.latent[:, i] = np.maximum(vi + state.learning_rate * delta * vj, 0.0)
    state.latent[:, j] = np.maximum(vj + state.learning_rate * delta * vi, 0.0)


@dataclass
class IterationRecord:
    iteration: int
    pair: tuple[str, str]
    n_generated: int
    n_valid: int
    p_observed: float
    score: float
    best_score: float
    stopped: bool = False

    def to_dict(self) -> dict:
        return {
            "iteration": self.iteration,
            "pair": list(self.pair),
            "n_generated": self.n_generated,
            "n_valid": self.n_valid,
            "p_observed": self.p_observed,
            "score": self.score,
            "best_score": self.best_score,
            "stopped": self.stopped,
        }


@dataclass
class AcceptedFeature:
    spec: object
    column: np.ndarray
    provenance: dict


@dataclass
class TaskOutput:
    accepted: list[AcceptedFeature]
    history: list[IterationRecord]
    selection_reports: list


def run_task(sampled: Dataset, indicator: str, operator: str,
             options: ConstructOptions, thresholds: SelectionThresholds,
             learner_config: GBDTConfig, search_config: SearchConfig,
             seed: int, open_lower: bool = False,
             task_label: str = "") -> TaskOutput:
    """One (indicator, operator) task: expand pairs, construct, select,
    feed back, and early-stop on the accumulated validation score."""
    fields = sampled.schema.categorical_fields
    m = len(fields)
    max_iterations = m * (m - 1) // 2

    if search_config.mf_enabled:
        matrix = init_pair_matrix(sampled)
        latent = factorize(matrix, search_config.latent_dim,
                           search_config.factorize_epochs, seed)
    else:
        latent = np.zeros((search_config.latent_dim, m))
    state = PairSearchState(n_fields=m, latent=latent,
                            learning_rate=search_config.learning_rate)

    lex_pairs = [(i, j) for i in range(m - 1) for j in range(i + 1, m)]
    train_idx, valid_idx = split_indices(sampled.n_rows, thresholds.valid_fraction, seed)
    y = sampled.label

    accepted: list[AcceptedFeature] = []
    history: list[IterationRecord] = []
    reports = []
    seen_singles: set = set()
    best_score = 0.5
    stale = 0

    for iteration in range(1, max_iterations + 1):
        if search_config.mf_enabled:
            pair = next_pair(state)
        else:
            pair = lex_pairs[iteration - 1] if iteration - 1 < len(lex_pairs) else None
        if pair is None:
            break
        i, j = pair
        pair_names = (fields[i], fields[j])

        specs = enumerate_specs(pair_names, indicator, operator, options, seen_singles)
        n_generated = len(specs)
        n_valid = 0
        if n_generated:
            raw = materialize_matrix(sampled, sampled, specs, open_lower)
            filled = impute(raw, training_means(raw))
            result = fsa(filled.values, filled.names, y, thresholds, learner_config, seed)
            reports.append((iteration, pair_names, result.report))
            n_valid = len(result.kept_indices)
            for rank, col_idx in enumerate(result.kept_indices):
                accepted.append(AcceptedFeature(
                    spec=specs[col_idx],
                    column=filled.values[:, col_idx].copy(),
                    provenance={
                        "task": task_label,
                        "iteration": iteration,
                        "pair": list(pair_names),
                        "acceptance_rank": rank,
                    },
                ))
        p_observed = n_valid / n_generated if n_generated else 0.0
        if search_config.mf_enabled:
            update(state, i, j, p_observed)
        state.used.add((i, j))

        score = _evaluate(accepted, y, train_idx, valid_idx, learner_config)
        improved = score > best_score
        if improved:
            best_score = score
            stale = 0
        else:
            stale += 1
        stop = search_config.mf_enabled and stale >= search_config.patience
        history.append(IterationRecord(
            iteration=iteration, pair=pair_names, n_generated=n_generated,
            n_valid=n_valid, p_observed=p_observed, score=score,
            best_score=best_score, stopped=stop,
        ))
        if stop:
            break

    return TaskOutput(accepted=accepted, history=history, selection_reports=reports)


def _evaluate(accepted, y, train_idx, valid_idx, learner_config) -> float:
    """Validation AUC of the internal learner on the accumulated features;
    an empty set scores the 0.5 baseline."""
    if not accepted:
        return 0.5
    X = np.column_stack([a.column for a in accepted])
    model = train_gbdt(X[train_idx], y[train_idx], learner_config)
    return auc(y[valid_idx], model.decision_function(X[valid_idx]))
