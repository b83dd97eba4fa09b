"""Interpretability outputs: combination-strength matrices, the sampling
fidelity study over importance gaps, score-vs-iteration curves, and relative
improvement tables. Everything is plain delimited text, plot-ready.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .construct import FeatureTemplate, apply_template
from .dataset import Dataset, Schema, sample
from .errors import ConfigError, MetricError
from .learners import FMModel, GBDTConfig, GBDTModel, rela_impr, train_gbdt

DOWG_EPSILON = 1e-30


@dataclass
class CSMatrix:
    """Per-field-pair contribution strength: symmetric, zero diagonal.

    Single-field feature mass cannot be attributed to a pair, so it rides in
    `single_field` next to the matrix.
    """

    values: np.ndarray
    method: str
    fields: tuple[str, ...]
    single_field: np.ndarray | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        m = len(self.fields)
        if self.values.shape != (m, m):
            raise ConfigError("combination-strength matrix must be m x m")
        if not np.allclose(self.values, self.values.T):
            raise ConfigError("combination-strength matrix must be symmetric")
        if (self.values < 0).any():
            raise ConfigError("combination-strength entries must be non-negative")


def cs_aefe(model: GBDTModel, template: FeatureTemplate) -> CSMatrix:
    """Accumulate the model's normalized feature importances by field pair.

    Pairs that never produced a surviving feature keep weight 0.
    """
    if model.n_features != len(template.specs):
        raise ConfigError("model was not trained on this template's features")
    fields = template.schema.categorical_fields
    m = len(fields)
    matrix = np.zeros((m, m))
    single = np.zeros(m)
    for weight, spec in zip(model.importances, template.specs):
        if spec.q is None:
            single[template.schema.field_index(spec.p)] += weight
        else:
            i = template.schema.field_index(spec.p)
            j = template.schema.field_index(spec.q)
            matrix[i, j] += weight
            matrix[j, i] += weight
    return CSMatrix(values=matrix, method="engine", fields=fields, single_field=single)


def cs_fm(fm: FMModel, schema: Schema) -> CSMatrix:
    """Absolute dot products of field mean embeddings, zero diagonal."""
    fields = schema.categorical_fields
    if tuple(fm.field_names) != tuple(fields):
        raise ConfigError("factorization machine was trained on a different schema")
    means = np.vstack([fm.field_embedding_rows(i).mean(axis=0)
                       for i in range(len(fields))])
    matrix = np.abs(means @ means.T)
    np.fill_diagonal(matrix, 0.0)
    return CSMatrix(values=matrix, method="fm", fields=fields)


def dowg(weights_sampled, weights_full, pairs) -> np.ndarray:
    """Deviation of importance gaps between a sampled run and the full run.

    The denominator is signed exactly as defined (w_i - w_j + eps), so the
    value is asymmetric in (i, j); equal full-run weights produce huge values
    that are reported, not clamped.
    """
    ws = np.asarray(weights_sampled, dtype=np.float64)
    wf = np.asarray(weights_full, dtype=np.float64)
    if ws.shape != wf.shape:
        raise ConfigError("importance vectors must align")
    out = np.empty(len(pairs))
    for k, (i, j) in enumerate(pairs):
        gap_s = abs(ws[i] - ws[j])
        gap_f = abs(wf[i] - wf[j])
        out[k] = abs((gap_s - gap_f) / (wf[i] - wf[j] + DOWG_EPSILON))
    return out


def importance_quartile_features(weights_full) -> list[int]:
    """The top feature, the two trisection points and the last one, by
    descending full-run importance."""
    wf = np.asarray(weights_full, dtype=np.float64)
    if len(wf) < 2:
        raise ConfigError("need at least two features for the gap study")
    order = np.argsort(-wf, kind="stable")
    d = len(wf) - 1
    picks = [0, d // 3, (2 * d) // 3, d]
    return [int(order[p]) for p in dict.fromkeys(picks)]


def quartile_pairs(weights_full) -> list[tuple[int, int]]:
    chosen = importance_quartile_features(weights_full)
    return [(chosen[a], chosen[b])
            for a in range(len(chosen) - 1) for b in range(a + 1, len(chosen))]


def sampling_gap_study(dataset: Dataset, template: FeatureTemplate,
                       learner_config: GBDTConfig, rates, repeats: int,
                       seed: int = 0) -> dict:
    """Re-measure template-feature importances under data sampling.

    The full-rate model fixes the reference weights; every (rate, repeat)
    retrains on a fresh sample and reports the gap deviations for the
    quartile feature pairs.
    """
    full_matrix = apply_template(dataset, template, check_fingerprint=False,
                                 open_lower=template.open_lower)
    weights_full = _fit_importances(full_matrix.values, dataset.label, learner_config)
    pairs = quartile_pairs(weights_full)

    rows = []
    for rate in rates:
        for repeat in range(repeats):
            if rate == 1.0:
                weights = weights_full
            else:
                part = sample(dataset, rate, seed + 1000 * repeat + int(rate * 1e6))
                matrix = apply_template(part, template, check_fingerprint=False,
                                        open_lower=template.open_lower)
                weights = _fit_importances(matrix.values, part.label, learner_config)
            values = dowg(weights, weights_full, pairs)
            for (i, j), value in zip(pairs, values):
                rows.append({"rate": rate, "repeat": repeat,
                             "feature_i": i, "feature_j": j, "dowg": float(value)})
    return {"pairs": pairs, "weights_full": weights_full.tolist(), "rows": rows}


def _fit_importances(X, y, learner_config) -> np.ndarray:
    model = train_gbdt(X, y, learner_config)
    return model.importances


def relaimpr_table(entries: list[tuple[str, float, float]]) -> list[dict]:
    """(name, model AUC, baseline AUC) -> rows with the relative improvement."""
    rows = []
    for name, model_auc, baseline_auc in entries:
        if baseline_auc == 0.5:
            raise MetricError(f"baseline AUC 0.5 for {name!r} leaves the metric undefined")
        rows.append({
            "name": name,
            "model_auc": model_auc,
            "baseline_auc": baseline_auc,
            "rela_impr_pct": rela_impr(model_auc, baseline_auc),
        })
    return rows


def sparsity_fraction(matrix: CSMatrix, level: float = 0.1) -> float:
    """Fraction of off-diagonal cells below `level` times the maximum cell."""
    m = len(matrix.fields)
    off = matrix.values[~np.eye(m, dtype=bool)]
    peak = off.max() if off.size else 0.0
    if peak <= 0:
        return 1.0
    return float((off < level * peak).mean())


# ---------------------------------------------------------------------------
# File emission


def _fmt(value) -> str:
    if isinstance(value, float):
        return format(value, ".17g")
    return str(value)


def write_cs_matrix(matrix: CSMatrix, path):
    with open(path, "w") as handle:
        handle.write("field\t" + "\t".join(matrix.fields) + "\n")
        for i, name in enumerate(matrix.fields):
            cells = "\t".join(_fmt(float(v)) for v in matrix.values[i])
            handle.write(f"{name}\t{cells}\n")
        if matrix.single_field is not None:
            cells = "\t".join(_fmt(float(v)) for v in matrix.single_field)
            handle.write(f"__single_field__\t{cells}\n")


def write_dowg_table(study: dict, path):
    with open(path, "w") as handle:
        handle.write("rate,repeat,feature_i,feature_j,dowg\n")
        for row in study["rows"]:
            handle.write(",".join(_fmt(row[k]) for k in
                                  ("rate", "repeat", "feature_i", "feature_j", "dowg")) + "\n")


def write_curves(report: dict, path):
    """Score-vs-iteration series per task; the early-stop row is marked."""
    with open(path, "w") as handle:
        handle.write("task,iteration,score,best_score,early_stop\n")
        for task in report.get("tasks", ()):
            for rec in task["iterations"]:
                handle.write(
                    f"{task['task']},{rec['iteration']},{_fmt(rec['score'])},"
                    f"{_fmt(rec['best_score'])},{int(rec['stopped'])}\n")


def write_relaimpr_table(rows: list[dict], path):
    with open(path, "w") as handle:
        handle.write("name,model_auc,baseline_auc,rela_impr_pct\n")
        for row in rows:
            handle.write(",".join(_fmt(row[k]) for k in
                                  ("name", "model_auc", "baseline_auc", "rela_impr_pct")) + "\n")


def emit_reports(out_dir, cs_engine: CSMatrix | None = None,
                 cs_factorization: CSMatrix | None = None,
                 gap_study: dict | None = None,
                 run_report: dict | None = None,
                 relaimpr_rows: list[dict] | None = None) -> list[str]:
    """Write whichever artifacts are available; returns the files written."""
    os.makedirs(out_dir, exist_ok=True)
    written = []
    if cs_engine is not None:
        path = os.path.join(out_dir, "cs_engine.tsv")
        write_cs_matrix(cs_engine, path)
        written.append(path)
    if cs_factorization is not None:
        path = os.path.join(out_dir, "cs_fm.tsv")
        write_cs_matrix(cs_factorization, path)
        written.append(path)
    if gap_study is not None:
        path = os.path.join(out_dir, "dowg.csv")
        write_dowg_table(gap_study, path)
        written.append(path)
    if run_report is not None:
        path = os.path.join(out_dir, "curves.csv")
        write_curves(run_report, path)
        written.append(path)
    if relaimpr_rows is not None:
        path = os.path.join(out_dir, "relaimpr.csv")
        write_relaimpr_table(relaimpr_rows, path)
        written.append(path)
    return written
