"""Cascaded feature selection: variance filter, importance-based embedded
stage, then greedy forward wrapper on validation AUC.

The cascade splits the candidate matrix once per call, trains the embedded
learner on the training side, orders survivors by descending importance and
accepts a feature only when retraining on the grown set improves validation
AUC by strictly more than the improvement threshold.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dataset import split_indices
from .errors import ConfigError
from .learners import GBDTConfig, auc, train_gbdt


@dataclass(frozen=True)
class SelectionThresholds:
    min_variance: float = 1e-5
    min_importance: float = 0.02
    min_improvement: float = 0.0
    valid_fraction: float = 0.2
    scale_before_variance: bool = True

    def __post_init__(self):
        if self.min_variance < 0:
            raise ConfigError("variance threshold must be >= 0")
        if not 0.0 <= self.min_importance <= 1.0:
            raise ConfigError("importance threshold must be in [0, 1]")
        if self.min_improvement < 0:
            raise ConfigError("improvement threshold must be >= 0")
        if not 0.0 < self.valid_fraction < 1.0:
            raise ConfigError("valid fraction must be in (0, 1)")


@dataclass
class SelectionReport:
    filter_stage: list = field(default_factory=list)    # (name, variance, kept)
    embedded_stage: list = field(default_factory=list)  # (name, importance, kept)
    wrapper_stage: list = field(default_factory=list)   # (name, score, kept, best_after)
    initial_score: float = 0.5
    final_score: float = 0.5
    kept: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "filter": [
                {"name": n, "variance": v, "kept": k} for n, v, k in self.filter_stage
            ],
            "embedded": [
                {"name": n, "importance": v, "kept": k} for n, v, k in self.embedded_stage
            ],
            "wrapper": [
                {"name": n, "score": s, "kept": k, "best_after": b}
                for n, s, k, b in self.wrapper_stage
            ],
            "initial_score": self.initial_score,
            "final_score": self.final_score,
            "kept": list(self.kept),
        }


def scaled_variances(X: np.ndarray, scale: bool = True) -> np.ndarray:
    """Population variance per column, after min-max scaling when `scale`.

    Scaling makes one threshold meaningful across count-, ratio- and
    distance-valued columns; constant columns scale to variance 0.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.shape[0] == 0:
        return np.zeros(X.shape[1])
    if not scale:
        return X.var(axis=0)
    lo = X.min(axis=0)
    span = X.max(axis=0) - lo
    safe = np.where(span > 0, span, 1.0)
    return ((X - lo) / safe).var(axis=0)


def filter_variance(X: np.ndarray, min_variance: float,
                    scale: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Keep columns whose (scaled) variance is >= the threshold."""
    variances = scaled_variances(X, scale)
    kept = np.flatnonzero(variances >= min_variance)
    return kept, variances


def embedded_select(X_train: np.ndarray, y_train: np.ndarray, min_importance: float,
                    learner_config: GBDTConfig) -> tuple[np.ndarray, np.ndarray]:
    """Train the embedded learner on every candidate; drop the columns whose
    normalized importance falls below the threshold."""
    if X_train.shape[1] == 0:
        raise ConfigError("embedded stage needs at least one feature")
    model = train_gbdt(X_train, y_train, learner_config)
    kept = np.flatnonzero(model.importances >= min_importance)
    return kept, model.importances


def wrapper_select(X_train, y_train, X_valid, y_valid, order, min_improvement,
                   learner_config: GBDTConfig):
    """Greedy forward selection over `order`; a candidate stays only when the
    retrained model beats the best validation AUC by more than the threshold.

    The empty model scores the base rate for every row, which is AUC 0.5.
    """
    best = 0.5
    selected: list[int] = []
    trajectory = []
    for j in order:
        columns = selected + [int(j)]
        model = train_gbdt(X_train[:, columns], y_train, learner_config)
        score = auc(y_valid, model.decision_function(X_valid[:, columns]))
        accepted = score - best > min_improvement
        if accepted:
            best = score
            selected.append(int(j))
        trajectory.append((int(j), float(score), bool(accepted), float(best)))
    return selected, trajectory, best


@dataclass
class SelectionResult:
    kept_indices: list[int]
    report: SelectionReport


def fsa(X, names, y, thresholds: SelectionThresholds, learner_config: GBDTConfig,
        seed: int) -> SelectionResult:
    """Filter -> split -> Embedded -> sort by importance -> Wrapper.

    Returns surviving column indices in wrapper acceptance order plus a
    per-stage report with the drop reasons.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.shape[1] != len(names):
        raise ConfigError("names do not align with candidate columns")
    report = SelectionReport()

    kept_f, variances = filter_variance(X, thresholds.min_variance,
                                        thresholds.scale_before_variance)
    kept_set = set(kept_f.tolist())
    report.filter_stage = [
        (names[j], float(variances[j]), j in kept_set) for j in range(len(names))
    ]
    if kept_f.size == 0:
        return SelectionResult([], report)

    train_idx, valid_idx = split_indices(len(y), thresholds.valid_fraction, seed)
    X_train, X_valid = X[train_idx], X[valid_idx]
    y_train, y_valid = y[train_idx], y[valid_idx]

    kept_local, importances = embedded_select(
        X_train[:, kept_f], y_train, thresholds.min_importance, learner_config)
    kept_e = kept_f[kept_local]
    kept_set = set(kept_e.tolist())
    report.embedded_stage = [
        (names[j], float(importances[i]), j in kept_set)
        for i, j in enumerate(kept_f)
    ]
    if kept_e.size == 0:
        return SelectionResult([], report)

    # Descending importance; ties resolve to the earlier column for determinism.
    local_importance = importances[kept_local]
    order_local = np.argsort(-local_importance, kind="stable")
    order = kept_e[order_local]

    selected, trajectory, best = wrapper_select(
        X_train, y_train, X_valid, y_valid, order,
        thresholds.min_improvement, learner_config)
    report.wrapper_stage = [
        (names[j], score, accepted, running_best)
        for j, score, accepted, running_best in trajectory
    ]
    report.final_score = best
    report.kept = [names[j] for j in selected]
    return SelectionResult(selected, report)


def global_select(columns: np.ndarray, names: list, y, thresholds: SelectionThresholds,
                  learner_config: GBDTConfig, seed: int) -> SelectionResult:
    """The same cascade over the merged task outputs, after deduplicating
    columns by canonical name (first occurrence wins; merge order is task id
    then acceptance order, so the result is deterministic)."""
    seen = {}
    for j, name in enumerate(names):
        if name not in seen:
            seen[name] = j
    unique_idx = sorted(seen.values())
    deduped = columns[:, unique_idx]
    deduped_names = [names[j] for j in unique_idx]
    result = fsa(deduped, deduped_names, y, thresholds, learner_config, seed)
    result.kept_indices = [unique_idx[j] for j in result.kept_indices]
    return result
