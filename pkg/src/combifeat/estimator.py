"""Scikit-learn style facade over the whole engine.

`CombinatorialFeatureMiner.fit(X, y)` runs sampling, pair search and the
selection cascade on a pandas DataFrame of categorical log columns;
`transform(X)` materializes the learned template using X itself as the
aggregation history. The estimator composes with sklearn pipelines and
`get_params`/`set_params`/`clone`.
"""

from __future__ import annotations

import numpy as np
import pandas as pd
from sklearn.base import BaseEstimator, TransformerMixin

from .construct import PARADIGMS, apply_template
from .dataset import UNIT_INDICATOR, Schema, from_frame
from .errors import ConfigError, SchemaError
from .learners import FMConfig, GBDTConfig, LRConfig
from .pipeline import RunConfig, run_in_memory
from .search import SearchConfig
from .selection import SelectionThresholds

LABEL_TOKEN = "label"
_FALLBACK_LABEL = "y__"


def check_frame(X) -> pd.DataFrame:
    if not isinstance(X, pd.DataFrame):
        raise ConfigError("X must be a pandas DataFrame of log columns")
    if len(X) == 0:
        raise ConfigError("X must contain at least one row")
    return X


def check_binary_target(y, n_rows: int) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64).ravel()
    if len(y) != n_rows:
        raise ConfigError("y must align with X's rows")
    if not np.isin(y, (0.0, 1.0)).all():
        raise ConfigError("y must be binary 0/1")
    return y


class CombinatorialFeatureMiner(TransformerMixin, BaseEstimator):
    """Mine groupby-aggregate field-combination features from categorical logs.

    Parameters mirror the run configuration: which columns play which role,
    the window/operator/paradigm sets, sampling, selection thresholds and the
    pair-search knobs. After `fit`, `template_` holds the ordered surviving
    feature recipes and `transform` returns their materialized matrix.

    `indicators` entries are column names, the string "label" for the target,
    or "unit" for the row-count pseudo-indicator. Aggregates are computed over
    the rows of the frame being transformed (it is its own history), so when
    the template uses the label indicator, transform needs the history labels:
    either name a `label` column present in X, or pass y to `transform`.
    """

    def __init__(self, categorical_fields=None, label=None, timestamp=None,
                 continuous_indicators=(), indicators=(LABEL_TOKEN, UNIT_INDICATOR),
                 windows=(), window_unit=1, include_unwindowed=None,
                 operators=("sum", "mean", "std", "max", "min", "count"),
                 paradigms=PARADIGMS, sampling_rate=1.0,
                 min_variance=1e-5, min_importance=0.02, min_improvement=0.0,
                 valid_fraction=0.2, latent_dim=4, search_learning_rate=0.1,
                 patience=5, mf_enabled=True, selection_trees=50,
                 selection_depth=4, parallelism=1, window_open_lower=False,
                 random_state=0):
        self.categorical_fields = categorical_fields
        self.label = label
        self.timestamp = timestamp
        self.continuous_indicators = continuous_indicators
        self.indicators = indicators
        self.windows = windows
        self.window_unit = window_unit
        self.include_unwindowed = include_unwindowed
        self.operators = operators
        self.paradigms = paradigms
        self.sampling_rate = sampling_rate
        self.min_variance = min_variance
        self.min_importance = min_importance
        self.min_improvement = min_improvement
        self.valid_fraction = valid_fraction
        self.latent_dim = latent_dim
        self.search_learning_rate = search_learning_rate
        self.patience = patience
        self.mf_enabled = mf_enabled
        self.selection_trees = selection_trees
        self.selection_depth = selection_depth
        self.parallelism = parallelism
        self.window_open_lower = window_open_lower
        self.random_state = random_state

    # -- schema/config assembly ------------------------------------------

    def _label_name(self, X: pd.DataFrame) -> str:
        if self.label is not None:
            return self.label
        if _FALLBACK_LABEL in X.columns:
            raise SchemaError(
                f"column {_FALLBACK_LABEL!r} collides with the internal label name; "
                "pass label=<column> instead")
        return _FALLBACK_LABEL

    def _resolve_fields(self, X: pd.DataFrame, label_name: str) -> tuple[str, ...]:
        if self.categorical_fields is not None:
            return tuple(self.categorical_fields)
        special = {label_name, self.timestamp, *tuple(self.continuous_indicators)}
        inferred = [c for c in X.columns
                    if c not in special and not pd.api.types.is_float_dtype(X[c])]
        if len(inferred) < 2:
            raise SchemaError("could not infer two categorical fields; "
                              "pass categorical_fields explicitly")
        return tuple(inferred)

    def _build_schema(self, X: pd.DataFrame) -> Schema:
        label_name = self._label_name(X)
        indicators = tuple(
            label_name if name == LABEL_TOKEN else name for name in self.indicators
        )
        return Schema(
            categorical_fields=self._resolve_fields(X, label_name),
            label=label_name,
            timestamp=self.timestamp,
            continuous_indicators=tuple(self.continuous_indicators),
            indicator_set=indicators,
        )

    def _build_config(self, schema: Schema) -> RunConfig:
        include_unwindowed = self.include_unwindowed
        if include_unwindowed is None:
            include_unwindowed = not self.windows
        seed = int(self.random_state)
        return RunConfig(
            schema=schema,
            window_sizes=tuple(self.windows),
            window_unit=int(self.window_unit),
            include_unwindowed=bool(include_unwindowed),
            operators=tuple(self.operators),
            paradigms=tuple(self.paradigms),
            sampling_rate=float(self.sampling_rate),
            sampling_seed=seed,
            thresholds=SelectionThresholds(
                min_variance=self.min_variance,
                min_importance=self.min_importance,
                min_improvement=self.min_improvement,
                valid_fraction=self.valid_fraction,
            ),
            search=SearchConfig(
                latent_dim=self.latent_dim,
                learning_rate=self.search_learning_rate,
                patience=self.patience,
                mf_enabled=self.mf_enabled,
            ),
            selection_gbdt=GBDTConfig(n_trees=self.selection_trees,
                                      max_depth=self.selection_depth, seed=seed),
            lr=LRConfig(seed=seed),
            fm=FMConfig(seed=seed),
            seed=seed,
            parallelism=int(self.parallelism),
            window_open_lower=bool(self.window_open_lower),
        )

    def _history_labels(self, X: pd.DataFrame, y) -> np.ndarray:
        if y is not None:
            return check_binary_target(y, len(X))
        if self.schema_.label in X.columns:
            return check_binary_target(
                pd.to_numeric(X[self.schema_.label], errors="coerce"), len(X))
        uses_label = any(s.indicator == self.schema_.label for s in self.template_.specs)
        if uses_label:
            raise SchemaError(
                "the template aggregates the label; pass y to transform or include "
                f"the {self.schema_.label!r} column in X")
        return np.zeros(len(X))

    # -- sklearn surface ---------------------------------------------------

    def fit(self, X, y=None):
        X = check_frame(X)
        if y is None:
            if self.label is None or self.label not in X.columns:
                raise ConfigError("fit needs y, or a label column named by `label`")
            y = pd.to_numeric(X[self.label], errors="coerce")
        y = check_binary_target(y, len(X))
        schema = self._build_schema(X)
        config = self._build_config(schema)
        dataset = from_frame(X, schema, label=y)
        result = run_in_memory(config, dataset)
        self.schema_ = schema
        self.template_ = result.template
        self.report_ = result.report
        self.feature_names_out_ = list(result.template.names)
        self.n_features_out_ = len(self.feature_names_out_)
        return self

    def transform(self, X, y=None):
        if not hasattr(self, "template_"):
            raise ConfigError("transform called before fit")
        X = check_frame(X)
        for name in self.schema_.categorical_fields:
            if name not in X.columns:
                raise SchemaError(f"column {name!r} required by the template is missing")
        labels = self._history_labels(X, y)
        # X is its own aggregation history, so its dictionaries (and therefore
        # the cardinality fingerprint) may differ from the fit data; column
        # names and roles are still enforced above.
        dataset = from_frame(X, self.schema_, label=labels)
        matrix = apply_template(dataset, self.template_, check_fingerprint=False,
                                open_lower=self.template_.open_lower)
        return matrix.values

    def fit_transform(self, X, y=None, **fit_params):
        return self.fit(X, y).transform(X, y)

    def get_feature_names_out(self, input_features=None):
        if not hasattr(self, "template_"):
            raise ConfigError("get_feature_names_out called before fit")
        return np.asarray(self.feature_names_out_, dtype=object)
