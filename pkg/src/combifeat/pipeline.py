"""End-to-end orchestration: config, task planning, parallel task execution,
global selection, template persistence, transformation and final training.

Tasks are (indicator, operator) combinations filtered by a fixed
compatibility table; each runs the pair search independently over the shared
sampled dataset. Merged survivors pass a global selection round, and the
resulting template (specs + imputation statistics + schema fingerprint) is a
pure function of (config, data, seeds) regardless of worker scheduling.
"""

from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import pandas as pd

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import __version__
from .aggregate import OPERATORS
from .construct import (
    PARADIGMS,
    ConstructOptions,
    FeatureSpec,
    FeatureTemplate,
    SearchSpaceCount,
    apply_template,
    count_search_space,
    materialize_matrix,
    parse_feature_name,
    training_means,
)
from .dataset import (
    UNIT_INDICATOR,
    Dataset,
    Schema,
    load,
    sample,
    split_indices,
    write_delimited,
)
from .errors import CombifeatError, ConfigError, DataError, MetricError, TemplateError
from .learners import (
    FMConfig,
    GBDTConfig,
    LRConfig,
    auc,
    rela_impr,
    save_model,
    train_gbdt,
    train_lr,
)
from .search import SearchConfig, TaskOutput, run_task
from .selection import SelectionThresholds, global_select


@dataclass(frozen=True)
class RunConfig:
    schema: Schema
    window_sizes: tuple[int, ...] = ()
    window_unit: int = 1
    include_unwindowed: bool = False
    operators: tuple[str, ...] = OPERATORS
    paradigms: tuple[str, ...] = PARADIGMS
    sampling_rate: float = 1.0
    sampling_seed: int = 0
    thresholds: SelectionThresholds = SelectionThresholds()
    search: SearchConfig = SearchConfig()
    selection_gbdt: GBDTConfig = GBDTConfig()
    lr: LRConfig = LRConfig()
    fm: FMConfig = FMConfig()
    seed: int = 0
    parallelism: int = 1
    window_open_lower: bool = False
    delimiter: str = ","
    header: bool = True

    def __post_init__(self):
        if not self.window_sizes and not self.include_unwindowed:
            raise ConfigError("configure window sizes or allow unwindowed features")
        if self.window_sizes and self.schema.timestamp is None:
            raise ConfigError("time windows require a timestamp column")
        for w in self.window_sizes:
            if w <= 0:
                raise ConfigError("window sizes must be positive")
        if self.window_unit <= 0:
            raise ConfigError("window unit must be positive")
        if not self.operators:
            raise ConfigError("operator set cannot be empty")
        for op in self.operators:
            if op not in OPERATORS:
                raise ConfigError(f"unknown operator {op!r}")
        if not self.paradigms:
            raise ConfigError("paradigm set cannot be empty")
        for p in self.paradigms:
            if p not in PARADIGMS:
                raise ConfigError(f"unknown paradigm {p!r}")
        if not 0.0 < self.sampling_rate <= 1.0:
            raise ConfigError("sampling rate must be in (0, 1]")
        if self.parallelism < 1:
            raise ConfigError("parallelism must be >= 1")

    def window_options(self) -> tuple[int | None, ...]:
        options: list[int | None] = []
        if self.include_unwindowed:
            options.append(None)
        options.extend(w * self.window_unit for w in self.window_sizes)
        return tuple(options)

    def construct_options(self) -> ConstructOptions:
        return ConstructOptions(
            windows=self.window_options(),
            paradigms=self.paradigms,
            per_row_indicators=self.schema.per_row_indicators(),
        )


def _dataclass_from(cls, table: dict, context: str):
    try:
        return cls(**table)
    except TypeError as exc:
        raise ConfigError(f"bad [{context}] section: {exc}") from None


def config_from_dict(data: dict) -> RunConfig:
    """Build a validated RunConfig from nested plain dictionaries."""
    data = dict(data)
    try:
        schema_table = dict(data["schema"])
    except KeyError:
        raise ConfigError("config needs a [schema] section") from None
    indicators = schema_table.pop("indicators", None)
    if indicators is not None:
        schema_table["indicator_set"] = tuple(indicators)
    schema_table = {
        k: tuple(v) if isinstance(v, list) else v for k, v in schema_table.items()
    }
    schema = _dataclass_from(Schema, schema_table, "schema")

    windows = dict(data.get("windows", {}))
    framework = dict(data.get("framework", {}))
    sampling = dict(data.get("sampling", {}))
    run_table = dict(data.get("run", {}))
    data_table = dict(data.get("data", {}))
    learners = dict(data.get("learners", {}))

    thresholds = _dataclass_from(SelectionThresholds, dict(data.get("selection", {})),
                                 "selection")
    search = _dataclass_from(SearchConfig, dict(data.get("search", {})), "search")
    seed = int(run_table.get("seed", 0))
    gbdt_table = dict(learners.get("selection_gbdt", {}))
    gbdt_table.setdefault("seed", seed)
    lr_table = dict(learners.get("lr", {}))
    lr_table.setdefault("seed", seed)
    fm_table = dict(learners.get("fm", {}))
    fm_table.setdefault("seed", seed)

    return RunConfig(
        schema=schema,
        window_sizes=tuple(windows.get("sizes", ())),
        window_unit=int(windows.get("unit", 1)),
        include_unwindowed=bool(windows.get("include_unwindowed",
                                            not windows.get("sizes", ()))),
        operators=tuple(framework.get("operators", OPERATORS)),
        paradigms=tuple(framework.get("paradigms", PARADIGMS)),
        sampling_rate=float(sampling.get("rate", 1.0)),
        sampling_seed=int(sampling.get("seed", seed)),
        thresholds=thresholds,
        search=search,
        selection_gbdt=_dataclass_from(GBDTConfig, gbdt_table, "learners.selection_gbdt"),
        lr=_dataclass_from(LRConfig, lr_table, "learners.lr"),
        fm=_dataclass_from(FMConfig, fm_table, "learners.fm"),
        seed=seed,
        parallelism=int(run_table.get("parallelism", 1)),
        window_open_lower=bool(run_table.get("window_open_lower", False)),
        delimiter=str(data_table.get("delimiter", ",")),
        header=bool(data_table.get("header", True)),
    )


def _parse_override_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(data: dict, overrides: list[str]) -> dict:
    """Apply repeatable `section.key=value` overrides to a raw config dict."""
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        path, _, raw_value = item.partition("=")
        keys = path.strip().split(".")
        if not all(keys):
            raise ConfigError(f"override {item!r} has an empty key component")
        node = data
        for key in keys[:-1]:
            node = node.setdefault(key, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {item!r} traverses a non-table value")
        node[keys[-1]] = _parse_override_value(raw_value.strip())
    return data


def load_config(path, overrides: list[str] | None = None) -> RunConfig:
    try:
        with open(path, "rb") as handle:
            data = tomllib.load(handle)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from None
    if overrides:
        data = apply_overrides(data, list(overrides))
    return config_from_dict(data)


# ---------------------------------------------------------------------------
# Task planning


@dataclass(frozen=True)
class Task:
    task_id: int
    indicator: str
    operator: str
    seed: int

    @property
    def label(self) -> str:
        return f"{self.indicator}:{self.operator}"


def operator_compatible(indicator: str, operator: str, schema: Schema) -> bool:
    """Fixed compatibility table: count pairs only with the unit indicator;
    sum/std are meaningless on timestamps; max/min on a binary label."""
    if operator == "count":
        return indicator == UNIT_INDICATOR
    if indicator == UNIT_INDICATOR:
        return False
    if indicator == schema.label:
        return operator in ("sum", "mean", "std")
    if schema.timestamp is not None and indicator == schema.timestamp:
        return operator in ("mean", "max", "min")
    return True


def plan_tasks(config: RunConfig) -> list[Task]:
    tasks = []
    for indicator in config.schema.indicator_set:
        for operator in config.operators:
            if operator_compatible(indicator, operator, config.schema):
                task_id = len(tasks)
                tasks.append(Task(
                    task_id=task_id,
                    indicator=indicator,
                    operator=operator,
                    seed=config.seed + 1009 * (task_id + 1),
                ))
    if not tasks:
        raise ConfigError("no compatible (indicator, operator) tasks")
    return tasks


# ---------------------------------------------------------------------------
# The run itself


@dataclass
class RunResult:
    template: FeatureTemplate
    report: dict
    dataset: Dataset
    sampled: Dataset
    task_outputs: list[TaskOutput]


def _run_one_task(sampled, task: Task, config: RunConfig) -> TaskOutput:
    started = time.perf_counter()
    try:
        output = run_task(
            sampled, task.indicator, task.operator,
            options=config.construct_options(),
            thresholds=config.thresholds,
            learner_config=config.selection_gbdt,
            search_config=config.search,
            seed=task.seed,
            open_lower=config.window_open_lower,
            task_label=task.label,
        )
    except CombifeatError as exc:
        raise type(exc)(f"task {task.label}: {exc}") from exc
    logger.info("task %s: %d iterations, %d accepted (%.2fs)", task.label,
                len(output.history), len(output.accepted),
                time.perf_counter() - started)
    return output


logger = logging.getLogger("combifeat.pipeline")


def run(config: RunConfig, data_path) -> RunResult:
    """Load, sample, search per task in parallel, select globally, and build
    the reusable feature template.

    Wall-clock timings go to the log only; the report stays byte-identical
    across reruns and worker counts.
    """
    started = time.perf_counter()
    dataset = load(data_path, config.schema, config.delimiter, config.header)
    logger.info("loaded %d rows from %s (%.2fs)", dataset.n_rows, data_path,
                time.perf_counter() - started)
    result = run_in_memory(config, dataset)
    logger.info("search finished: %d template features (%.2fs total)",
                len(result.template.specs), time.perf_counter() - started)
    return result


def run_in_memory(config: RunConfig, dataset: Dataset, sampled: Dataset | None = None) -> RunResult:
    if sampled is None:
        sampled = sample(dataset, config.sampling_rate, config.sampling_seed)
    tasks = plan_tasks(config)
    options = config.construct_options()

    if config.parallelism > 1:
        with ThreadPoolExecutor(max_workers=config.parallelism) as pool:
            futures = [pool.submit(_run_one_task, sampled, t, config) for t in tasks]
            outputs = [f.result() for f in futures]
    else:
        outputs = [_run_one_task(sampled, t, config) for t in tasks]

    # Merge in (task id, acceptance order); first occurrence of a name wins.
    merged_specs: list[FeatureSpec] = []
    merged_cols: list[np.ndarray] = []
    merged_prov: list[dict] = []
    seen_names: set[str] = set()
    for output in outputs:
        for item in output.accepted:
            name = item.spec.name
            if name in seen_names:
                continue
            seen_names.add(name)
            merged_specs.append(item.spec)
            merged_cols.append(item.column)
            merged_prov.append(item.provenance)

    if merged_specs:
        merged = np.column_stack(merged_cols)
        names = [s.name for s in merged_specs]
        selection = global_select(merged, names, sampled.label, config.thresholds,
                                  config.selection_gbdt, config.seed)
        final_specs = [merged_specs[j] for j in selection.kept_indices]
        final_prov = [merged_prov[j] for j in selection.kept_indices]
        global_report = selection.report.to_dict()
    else:
        final_specs, final_prov, global_report = [], [], None

    # Imputation statistics come from the sampled training split, recomputed
    # on raw (unimputed) columns of the surviving specs.
    if final_specs:
        raw = materialize_matrix(sampled, sampled, final_specs, config.window_open_lower)
        train_idx, _ = split_indices(sampled.n_rows, config.thresholds.valid_fraction,
                                     config.seed)
        imputation = training_means(raw, rows=train_idx)
    else:
        imputation = []

    template = FeatureTemplate(
        schema=config.schema,
        specs=final_specs,
        imputation=imputation,
        fingerprint=dataset.fingerprint(),
        version=f"combifeat-{__version__}",
        provenance=final_prov,
        open_lower=config.window_open_lower,
    )

    space = count_search_space(
        config.schema.n_fields, len(config.schema.indicator_set),
        len(config.operators), options,
        tuple((t.indicator, t.operator) for t in tasks),
    )
    report = build_report(config, tasks, outputs, space, template, global_report,
                          dataset, sampled)
    return RunResult(template=template, report=report, dataset=dataset,
                     sampled=sampled, task_outputs=outputs)


def build_report(config, tasks, outputs, space: SearchSpaceCount, template,
                 global_report, dataset, sampled) -> dict:
    return {
        "engine": f"combifeat-{__version__}",
        "n_rows": dataset.n_rows,
        "n_rows_sampled": sampled.n_rows,
        "search_space": {"nominal_q": space.nominal, "exact_candidates": space.exact},
        "tasks": [
            {
                "task": task.label,
                "seed": task.seed,
                "iterations": [rec.to_dict() for rec in output.history],
                "n_accepted": len(output.accepted),
            }
            for task, output in zip(tasks, outputs)
        ],
        "global_selection": global_report,
        "features": [
            {
                "name": spec.name,
                "imputation": template.imputation[i],
                "provenance": template.provenance[i],
            }
            for i, spec in enumerate(template.specs)
        ],
        "fingerprint": template.fingerprint,
    }


# ---------------------------------------------------------------------------
# Template persistence


def template_to_dict(template: FeatureTemplate) -> dict:
    return {
        "version": template.version,
        "fingerprint": template.fingerprint,
        "window_open_lower": template.open_lower,
        "schema": template.schema.to_dict(),
        "features": [
            {
                "name": spec.name,
                "paradigm": spec.paradigm,
                "p": spec.p,
                "q": spec.q,
                "indicator": spec.indicator,
                "operator": spec.operator,
                "window": spec.window,
                "denominator": spec.denominator,
                "imputation": template.imputation[i],
                "provenance": template.provenance[i] if template.provenance else {},
            }
            for i, spec in enumerate(template.specs)
        ],
    }


def write_template(template: FeatureTemplate, path):
    with open(path, "w") as handle:
        json.dump(template_to_dict(template), handle, indent=1)
        handle.write("\n")


def read_template(path) -> FeatureTemplate:
    try:
        with open(path) as handle:
            data = json.load(handle)
    except FileNotFoundError:
        raise TemplateError(f"template file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise TemplateError(f"cannot parse template {path}: {exc}") from None
    try:
        schema = Schema.from_dict(data["schema"])
        specs, imputation, provenance = [], [], []
        for record in data["features"]:
            spec = FeatureSpec(
                paradigm=record["paradigm"],
                p=record["p"],
                q=record.get("q"),
                indicator=record["indicator"],
                operator=record["operator"],
                window=record.get("window"),
                denominator=record.get("denominator"),
            )
            if spec.name != record["name"]:
                raise TemplateError(
                    f"feature record {record['name']!r} does not match its parameters")
            if parse_feature_name(record["name"]) != spec:
                raise TemplateError(f"feature name {record['name']!r} fails to round-trip")
            specs.append(spec)
            imputation.append(float(record["imputation"]))
            provenance.append(record.get("provenance", {}))
        return FeatureTemplate(
            schema=schema,
            specs=specs,
            imputation=imputation,
            fingerprint=data["fingerprint"],
            version=data.get("version", "unknown"),
            provenance=provenance,
            open_lower=bool(data.get("window_open_lower", False)),
        )
    except KeyError as exc:
        raise TemplateError(f"template {path} is missing field {exc}") from None


# ---------------------------------------------------------------------------
# Transform and final training


def transform(data_path, template_path, out_path, delimiter: str = ",",
              header: bool = True):
    """Apply a saved template to a full data file and write the feature matrix."""
    template = read_template(template_path)
    dataset = load(data_path, template.schema, delimiter, header)
    matrix = apply_template(dataset, template, check_fingerprint=True,
                            open_lower=template.open_lower)
    write_delimited(out_path, matrix.names,
                    [matrix.values[:, j] for j in range(matrix.n_features)])
    return matrix


@dataclass(frozen=True)
class EvalOptions:
    test_fraction: float = 0.2
    by_time: bool = True
    valid_fraction: float = 0.2
    seed: int = 0
    baseline_auc: float | None = None


def read_feature_file(path, delimiter: str = ",") -> tuple[np.ndarray, list[str]]:
    try:
        frame = pd.read_csv(path, sep=delimiter, float_precision="round_trip")
    except FileNotFoundError:
        raise DataError(f"features file not found: {path}") from None
    return frame.to_numpy(dtype=np.float64), list(frame.columns)


def train_and_evaluate(features: np.ndarray, labels: np.ndarray, model_kind: str,
                       options: EvalOptions, lr_config: LRConfig = LRConfig(),
                       gbdt_config: GBDTConfig = GBDTConfig(),
                       timestamps=None):
    """Train LR or GBDT on a features/labels pair and report split AUCs.

    The test side is the last `test_fraction` (by time when timestamps are
    given), the validation side is a random fraction of the remainder.
    """
    labels = np.asarray(labels, dtype=np.float64)
    if len(labels) != len(features):
        raise DataError("labels do not align with the features file")
    rest_idx, test_idx = split_indices(
        len(labels), options.test_fraction, options.seed,
        timestamps=timestamps if options.by_time else None)
    tr_local, va_local = split_indices(len(rest_idx), options.valid_fraction,
                                       options.seed + 1)
    train_idx, valid_idx = rest_idx[tr_local], rest_idx[va_local]

    if model_kind == "lr":
        model = train_lr(features[train_idx], labels[train_idx], lr_config)
    elif model_kind == "gbdt":
        model = train_gbdt(features[train_idx], labels[train_idx], gbdt_config)
    else:
        raise ConfigError(f"unknown model kind {model_kind!r} (expected lr or gbdt)")

    scores = model.decision_function(features)
    metrics = {
        "model": model_kind,
        "train_auc": auc(labels[train_idx], scores[train_idx]),
        "valid_auc": auc(labels[valid_idx], scores[valid_idx]),
        "test_auc": auc(labels[test_idx], scores[test_idx]),
    }
    if options.baseline_auc is not None:
        if options.baseline_auc == 0.5:
            raise MetricError("relative improvement is undefined for baseline AUC 0.5")
        metrics["rela_impr_vs_baseline"] = rela_impr(metrics["test_auc"],
                                                     options.baseline_auc)
    return model, metrics


# ---------------------------------------------------------------------------
# File outputs used by the CLI


def write_report(report: dict, path):
    with open(path, "w") as handle:
        json.dump(report, handle, indent=1)
        handle.write("\n")


def write_history_csv(report: dict, path):
    rows = []
    for task in report["tasks"]:
        for rec in task["iterations"]:
            rows.append((task["task"], rec["iteration"], rec["pair"][0], rec["pair"][1],
                         rec["n_generated"], rec["n_valid"], rec["p_observed"],
                         rec["score"], rec["best_score"], int(rec["stopped"])))
    with open(path, "w") as handle:
        handle.write("task,iteration,field_i,field_j,n_generated,n_valid,"
                     "p_observed,score,best_score,stopped\n")
        for row in rows:
            handle.write(",".join(_format_cell(v) for v in row) + "\n")


def _format_cell(value) -> str:
    if isinstance(value, float):
        return format(value, ".17g")
    return str(value)


def save_importances(names: list[str], importances: np.ndarray, path):
    with open(path, "w") as handle:
        handle.write("feature,importance\n")
        for name, weight in zip(names, importances):
            handle.write(f"{name},{format(float(weight), '.17g')}\n")


def load_importances(path) -> tuple[list[str], np.ndarray]:
    names, weights = [], []
    with open(path) as handle:
        next(handle)
        for line in handle:
            name, _, weight = line.rstrip("\n").rpartition(",")
            names.append(name)
            weights.append(float(weight))
    return names, np.asarray(weights)
