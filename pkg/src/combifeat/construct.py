"""Turn (field pair, indicator, operator, window, paradigm) tuples into named
feature columns, and apply a saved template to a full dataset.

Four construction paradigms are supported:
    single    one-field group statistic
    pair      two-field group statistic
    ratio     pair statistic divided by a one-field marginal (guarded)
    distance  group statistic minus the row's own indicator value
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

from .aggregate import OPERATORS, AggSpec, GroupKey, ga
from .dataset import Dataset, Schema
from .errors import ConfigError, TemplateError

SINGLE = "single"
PAIR = "pair"
RATIO = "ratio"
DISTANCE = "distance"
PARADIGMS = (SINGLE, PAIR, RATIO, DISTANCE)

DISTANCE_OPERATORS = ("mean", "max", "min")
DIVISION_GUARD = 1e-12

_BASE_RE = re.compile(
    r"(?P<op>[a-z]+)\((?P<ind>[\w.:-]+)\)\|(?P<p>[\w.:-]+)(?:&(?P<q>[\w.:-]+))?(?:,W=(?P<w>\d+))?"
)


@dataclass(frozen=True)
class FeatureSpec:
    """Recipe for one constructed feature column.

    Field order is canonical: for two-field paradigms `p` precedes `q` in the
    schema's field order. `denominator` names the marginal field of a ratio.
    """

    paradigm: str
    p: str
    q: str | None
    indicator: str
    operator: str
    window: int | None = None
    denominator: str | None = None

    def __post_init__(self):
        if self.paradigm not in PARADIGMS:
            raise ConfigError(f"unknown paradigm {self.paradigm!r}")
        if self.operator not in OPERATORS:
            raise ConfigError(f"unknown operator {self.operator!r}")
        if self.paradigm == SINGLE and self.q is not None:
            raise ConfigError("single-field features take no second field")
        if self.paradigm in (PAIR, RATIO) and self.q is None:
            raise ConfigError(f"{self.paradigm} features need a second field")
        if self.q == self.p:
            raise ConfigError("feature fields must be distinct")
        if self.paradigm == RATIO:
            if self.denominator not in (self.p, self.q):
                raise ConfigError("ratio denominator must be one of the pair fields")
        elif self.denominator is not None:
            raise ConfigError("denominator only applies to ratio features")
        if self.window is not None and self.window <= 0:
            raise ConfigError("window must be positive")
        if self.paradigm == DISTANCE and self.operator not in DISTANCE_OPERATORS:
            raise ConfigError("distance features require mean/max/min")

    def key_fields(self) -> tuple[str, ...]:
        return (self.p,) if self.q is None else (self.p, self.q)

    @property
    def name(self) -> str:
        base = self._base_name(self.key_fields())
        if self.paradigm == RATIO:
            return f"ratio({base} / {self._base_name((self.denominator,))})"
        if self.paradigm == DISTANCE:
            return f"dist({base} - self({self.indicator}))"
        return base

    def _base_name(self, fields: tuple[str, ...]) -> str:
        joined = "&".join(fields)
        window = f",W={self.window}" if self.window is not None else ""
        return f"{self.operator}({self.indicator})|{joined}{window}"


def _parse_base(text: str):
    match = _BASE_RE.fullmatch(text)
    if match is None:
        raise TemplateError(f"cannot parse feature name part {text!r}")
    window = match.group("w")
    return (
        match.group("op"),
        match.group("ind"),
        match.group("p"),
        match.group("q"),
        None if window is None else int(window),
    )


def parse_feature_name(name: str) -> FeatureSpec:
    """Inverse of FeatureSpec.name."""
    if name.startswith("ratio(") and name.endswith(")"):
        inner = name[len("ratio("):-1]
        num_text, _, den_text = inner.partition(" / ")
        op, ind, p, q, window = _parse_base(num_text)
        d_op, d_ind, d_p, d_q, d_window = _parse_base(den_text)
        if (d_op, d_ind, d_window) != (op, ind, window) or d_q is not None:
            raise TemplateError(f"inconsistent ratio feature name {name!r}")
        return FeatureSpec(RATIO, p, q, ind, op, window, denominator=d_p)
    if name.startswith("dist(") and name.endswith(")"):
        inner = name[len("dist("):-1]
        base_text, _, self_text = inner.partition(" - self(")
        op, ind, p, q, window = _parse_base(base_text)
        if self_text[:-1] != ind:
            raise TemplateError(f"distance feature name {name!r} mixes indicators")
        return FeatureSpec(DISTANCE, p, q, ind, op, window)
    op, ind, p, q, window = _parse_base(name)
    paradigm = SINGLE if q is None else PAIR
    return FeatureSpec(paradigm, p, q, ind, op, window)


@dataclass(frozen=True)
class ConstructOptions:
    """Expansion knobs: window choices (None = unwindowed), paradigm subset,
    and the indicators observable per row (distance eligibility)."""

    windows: tuple[int | None, ...]
    paradigms: tuple[str, ...] = PARADIGMS
    per_row_indicators: frozenset[str] = frozenset()

    def __post_init__(self):
        if not self.windows:
            raise ConfigError("at least one window option (or unwindowed) is required")
        for p in self.paradigms:
            if p not in PARADIGMS:
                raise ConfigError(f"unknown paradigm {p!r}")
        if not self.paradigms:
            raise ConfigError("paradigm set cannot be empty")


def distance_eligible(indicator: str, operator: str, options: ConstructOptions) -> bool:
    return operator in DISTANCE_OPERATORS and indicator in options.per_row_indicators


def enumerate_specs(pair: tuple[str, str], indicator: str, operator: str,
                    options: ConstructOptions,
                    seen_singles: set | None = None) -> list[FeatureSpec]:
    """Expand one field pair into feature specs for a fixed indicator/operator.

    `seen_singles` carries the single-field specs already emitted for earlier
    pairs in the same task; matching specs are skipped and the set is updated
    in place.
    """
    p, q = pair
    if p == q:
        raise ConfigError("pair fields must be distinct")
    specs = []
    for window in options.windows:
        if SINGLE in options.paradigms:
            for f in (p, q):
                key = (f, indicator, operator, window)
                if seen_singles is not None and key in seen_singles:
                    continue
                if seen_singles is not None:
                    seen_singles.add(key)
                specs.append(FeatureSpec(SINGLE, f, None, indicator, operator, window))
        if PAIR in options.paradigms:
            specs.append(FeatureSpec(PAIR, p, q, indicator, operator, window))
        if RATIO in options.paradigms:
            specs.append(FeatureSpec(RATIO, p, q, indicator, operator, window, denominator=p))
            specs.append(FeatureSpec(RATIO, p, q, indicator, operator, window, denominator=q))
        if DISTANCE in options.paradigms and distance_eligible(indicator, operator, options):
            specs.append(FeatureSpec(DISTANCE, p, q, indicator, operator, window))
    return specs


def count_pair_specs(new_fields: int, indicator: str, operator: str,
                     options: ConstructOptions) -> int:
    """Closed form for len(enumerate_specs) given how many of the pair's
    fields have not yet emitted single-field specs in this task."""
    per_window = 0
    if SINGLE in options.paradigms:
        per_window += new_fields
    if PAIR in options.paradigms:
        per_window += 1
    if RATIO in options.paradigms:
        per_window += 2
    if DISTANCE in options.paradigms and distance_eligible(indicator, operator, options):
        per_window += 1
    return per_window * len(options.windows)


@dataclass(frozen=True)
class SearchSpaceCount:
    nominal: float
    exact: int


def count_search_space(n_fields: int, n_indicators: int, n_operators: int,
                       options: ConstructOptions,
                       tasks: tuple[tuple[str, str], ...]) -> SearchSpaceCount:
    """Nominal search-space size |F|^2/2 * |I| * |W| * |O| * |P| plus the exact
    number of candidate specs the engine enumerates across `tasks`."""
    nominal = (n_fields ** 2 / 2.0) * n_indicators * len(options.windows) \
        * n_operators * len(options.paradigms)
    n_pairs = n_fields * (n_fields - 1) // 2
    exact = 0
    for indicator, operator in tasks:
        per_window = 0
        if SINGLE in options.paradigms:
            per_window += n_fields
        if PAIR in options.paradigms:
            per_window += n_pairs
        if RATIO in options.paradigms:
            per_window += 2 * n_pairs
        if DISTANCE in options.paradigms and distance_eligible(indicator, operator, options):
            per_window += n_pairs
        exact += per_window * len(options.windows)
    return SearchSpaceCount(nominal=nominal, exact=exact)


def materialize(reference: Dataset, targets: Dataset, spec: FeatureSpec,
                open_lower: bool = False, cache: dict | None = None) -> np.ndarray:
    """Compute one feature column over target rows (NaN marks missing)."""

    def cached_ga(fields: tuple[str, ...]) -> np.ndarray:
        key = (fields, spec.indicator, spec.operator, spec.window)
        if cache is not None and key in cache:
            return cache[key]
        col = ga(reference, targets, GroupKey(fields),
                 AggSpec(spec.operator, spec.indicator, spec.window), open_lower)
        if cache is not None:
            cache[key] = col
        return col

    main = cached_ga(spec.key_fields())
    if spec.paradigm in (SINGLE, PAIR):
        return main.copy()
    if spec.paradigm == RATIO:
        denom = cached_ga((spec.denominator,))
        out = np.full(targets.n_rows, np.nan)
        with np.errstate(invalid="ignore"):
            valid = ~np.isnan(main) & ~np.isnan(denom) & (np.abs(denom) >= DIVISION_GUARD)
        out[valid] = main[valid] / denom[valid]
        return out
    # distance: statistic minus the row's own indicator value
    own = targets.indicator_values(spec.indicator)
    return main - own


@dataclass
class FeatureTemplate:
    """Ordered surviving FeatureSpecs plus everything needed to reapply them."""

    schema: Schema
    specs: list[FeatureSpec]
    imputation: list[float]
    fingerprint: str
    version: str = "combifeat-0.1.0"
    provenance: list[dict] = field(default_factory=list)
    open_lower: bool = False

    def __post_init__(self):
        names = [s.name for s in self.specs]
        if len(set(names)) != len(names):
            raise TemplateError("template contains duplicate feature specs")
        if len(self.imputation) != len(self.specs):
            raise TemplateError("imputation values must align with specs")
        if any(not np.isfinite(v) for v in self.imputation):
            raise TemplateError("imputation values must be finite")

    @property
    def names(self) -> list[str]:
        return [s.name for s in self.specs]


@dataclass
class FeatureMatrix:
    """Dense feature columns aligned to a dataset's rows."""

    values: np.ndarray
    names: list[str]
    missing_mask: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.missing_mask = np.asarray(self.missing_mask, dtype=bool)
        if self.values.shape != self.missing_mask.shape:
            raise ConfigError("feature values and missing mask disagree on shape")
        if self.values.shape[1] != len(self.names):
            raise ConfigError("feature names do not align with columns")

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def n_features(self) -> int:
        return self.values.shape[1]


def materialize_matrix(reference: Dataset, targets: Dataset, specs: list[FeatureSpec],
                       open_lower: bool = False) -> FeatureMatrix:
    """Materialize many specs with a shared aggregation cache (raw, unimputed)."""
    cache: dict = {}
    columns = np.empty((targets.n_rows, len(specs)))
    for j, spec in enumerate(specs):
        columns[:, j] = materialize(reference, targets, spec, open_lower, cache)
    mask = np.isnan(columns)
    return FeatureMatrix(columns, [s.name for s in specs], mask)


def impute(matrix: FeatureMatrix, fill_values) -> FeatureMatrix:
    values = matrix.values.copy()
    fill = np.asarray(fill_values, dtype=np.float64)
    for j in range(matrix.n_features):
        col = values[:, j]
        col[matrix.missing_mask[:, j]] = fill[j]
    return FeatureMatrix(values, list(matrix.names), matrix.missing_mask.copy())


def training_means(matrix: FeatureMatrix, rows=None) -> list[float]:
    """Per-feature mean over non-missing (optionally row-restricted) entries;
    0.0 when everything is missing."""
    values = matrix.values if rows is None else matrix.values[rows]
    mask = matrix.missing_mask if rows is None else matrix.missing_mask[rows]
    fills = []
    for j in range(matrix.n_features):
        col = values[~mask[:, j], j]
        fills.append(float(col.mean()) if col.size else 0.0)
    return fills


def apply_template(full: Dataset, template: FeatureTemplate,
                   check_fingerprint: bool = True,
                   open_lower: bool = False) -> FeatureMatrix:
    """Materialize every template spec against the full dataset and impute
    missing entries with the stored training means."""
    if check_fingerprint and full.fingerprint() != template.fingerprint:
        raise TemplateError(
            "dataset fingerprint does not match the template "
            f"({full.fingerprint()} != {template.fingerprint})"
        )
    raw = materialize_matrix(full, full, template.specs, open_lower)
    return impute(raw, template.imputation)
