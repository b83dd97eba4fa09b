"""Internal models used for selection, evaluation and baselines.

Logistic regression (mini-batch GD, L2), gradient-boosted trees (second-order
boosting on log loss over quantile-binned thresholds, gain importances), and a
factorization machine over one-hot categorical fields (SGD with the O(k*nnz)
pairwise reformulation). Plus rank-based AUC with midrank ties and the
relative-improvement metric. Everything is deterministic given its seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .dataset import Dataset
from .errors import ConfigError, MetricError

_EPS_GAIN = 1e-12


def _sigmoid(z):
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _check_training_input(X, y):
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2:
        raise ConfigError("feature matrix must be 2-D")
    if len(y) != X.shape[0]:
        raise ConfigError("labels do not align with the feature matrix")
    if not np.isfinite(X).all():
        raise ConfigError("feature matrix contains non-finite values")
    if not np.isin(y, (0.0, 1.0)).all():
        raise ConfigError("labels must be binary")
    return X, y


# ---------------------------------------------------------------------------
# Logistic regression


@dataclass(frozen=True)
class LRConfig:
    learning_rate: float = 0.1
    epochs: int = 60
    batch_size: int = 256
    l2: float = 1e-4
    seed: int = 0


@dataclass
class LRModel:
    weights: np.ndarray
    bias: float
    mean: np.ndarray
    scale: np.ndarray
    config: LRConfig

    def decision_function(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        Xs = (X - self.mean) / self.scale
        return Xs @ self.weights + self.bias

    def predict_proba(self, X) -> np.ndarray:
        return _sigmoid(self.decision_function(X))


def lr_loss_and_grad(weights, bias, X, y, l2):
    """L2-regularized mean log loss and its analytic gradient."""
    z = X @ weights + bias
    p = _sigmoid(z)
    zc = np.clip(p, 1e-12, 1 - 1e-12)
    loss = -np.mean(y * np.log(zc) + (1 - y) * np.log(1 - zc))
    loss += 0.5 * l2 * float(weights @ weights)
    resid = p - y
    grad_w = X.T @ resid / len(y) + l2 * weights
    grad_b = float(resid.mean())
    return float(loss), grad_w, grad_b


def train_lr(X, y, config: LRConfig = LRConfig()) -> LRModel:
    """Mini-batch gradient descent on L2-regularized log loss.

    Columns are z-scored on training statistics; constant columns collapse to
    zero and keep zero weight under the L2 penalty.
    """
    X, y = _check_training_input(X, y)
    mean = X.mean(axis=0) if len(X) else np.zeros(X.shape[1])
    scale = X.std(axis=0) if len(X) else np.ones(X.shape[1])
    scale = np.where(scale < 1e-12, 1.0, scale)
    Xs = (X - mean) / scale

    rng = np.random.default_rng(config.seed)
    n = len(y)
    w = np.zeros(X.shape[1])
    b = 0.0
    batch = max(1, min(config.batch_size, n))
    for _ in range(config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch):
            rows = order[start:start + batch]
            p = _sigmoid(Xs[rows] @ w + b)
            resid = p - y[rows]
            w -= config.learning_rate * (Xs[rows].T @ resid / len(rows) + config.l2 * w)
            b -= config.learning_rate * float(resid.mean())
    return LRModel(weights=w, bias=b, mean=mean, scale=scale, config=config)


# ---------------------------------------------------------------------------
# Gradient-boosted trees


@dataclass(frozen=True)
class GBDTConfig:
    n_trees: int = 50
    max_depth: int = 4
    learning_rate: float = 0.1
    min_samples_leaf: int = 20
    leaf_l2: float = 1.0
    max_bins: int = 64
    seed: int = 0


@dataclass
class GBDTModel:
    trees: list
    base_score: float
    importances: np.ndarray
    n_features: int
    config: GBDTConfig

    def decision_function(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        out = np.full(X.shape[0], self.base_score)
        for tree in self.trees:
            self._add_tree(tree, X, np.arange(X.shape[0]), out)
        return out

    def _add_tree(self, node, X, rows, out):
        if "value" in node:
            out[rows] += node["value"]
            return
        left = X[rows, node["feature"]] <= node["threshold"]
        self._add_tree(node["left"], X, rows[left], out)
        self._add_tree(node["right"], X, rows[~left], out)

    def predict_proba(self, X) -> np.ndarray:
        return _sigmoid(self.decision_function(X))


def _bin_features(X, max_bins):
    """Quantile-ish binning: per feature, cut points and uint8 codes with
    code(x) <= b  <=>  x <= cuts[b]."""
    n, f = X.shape
    cuts = []
    codes = np.empty((n, f), dtype=np.uint8)
    for j in range(f):
        col = X[:, j]
        uniq = np.unique(col)
        if len(uniq) <= max_bins:
            cj = uniq[:-1]
        else:
            qs = np.quantile(col, np.linspace(0, 1, max_bins + 1)[1:-1])
            cj = np.unique(qs)
        codes[:, j] = np.searchsorted(cj, col, side="left")
        cuts.append(cj)
    return codes, cuts


def train_gbdt(X, y, config: GBDTConfig = GBDTConfig()) -> GBDTModel:
    """Second-order gradient boosting on log loss with exact splits over
    binned thresholds; importance = per-feature total split gain."""
    X, y = _check_training_input(X, y)
    n, f = X.shape
    codes, cuts = _bin_features(X, config.max_bins)
    n_bins = [len(c) + 1 for c in cuts]

    base_rate = min(max(float(y.mean()), 1e-6), 1 - 1e-6) if n else 0.5
    base_score = float(np.log(base_rate / (1 - base_rate)))
    margin = np.full(n, base_score)
    gains = np.zeros(f)
    trees = []

    def grow(rows, g, h, depth):
        G = float(g[rows].sum())
        H = float(h[rows].sum())
        if depth >= config.max_depth or len(rows) < 2 * config.min_samples_leaf:
            return _leaf(rows, G, H)
        parent = G * G / (H + config.leaf_l2)
        best_gain = _EPS_GAIN
        best = None
        for j in range(f):
            if n_bins[j] < 2:
                continue
            cj = codes[rows, j]
            hist_g = np.bincount(cj, weights=g[rows], minlength=n_bins[j])
            hist_h = np.bincount(cj, weights=h[rows], minlength=n_bins[j])
            hist_c = np.bincount(cj, minlength=n_bins[j])
            GL = np.cumsum(hist_g)[:-1]
            HL = np.cumsum(hist_h)[:-1]
            CL = np.cumsum(hist_c)[:-1]
            ok = (CL >= config.min_samples_leaf) & (len(rows) - CL >= config.min_samples_leaf)
            if not ok.any():
                continue
            gain = GL ** 2 / (HL + config.leaf_l2) \
                + (G - GL) ** 2 / (H - HL + config.leaf_l2) - parent
            gain[~ok] = -np.inf
            b = int(np.argmax(gain))
            if gain[b] > best_gain:
                best_gain = float(gain[b])
                best = (j, b)
        if best is None:
            return _leaf(rows, G, H)
        j, b = best
        gains[j] += best_gain
        mask = codes[rows, j] <= b
        return {
            "feature": j,
            "threshold": float(cuts[j][b]),
            "left": grow(rows[mask], g, h, depth + 1),
            "right": grow(rows[~mask], g, h, depth + 1),
        }

    def _leaf(rows, G, H):
        value = -config.learning_rate * G / (H + config.leaf_l2)
        margin[rows] += value
        return {"value": value}

    for _ in range(config.n_trees):
        p = _sigmoid(margin)
        g = p - y
        h = np.maximum(p * (1 - p), 1e-12)
        trees.append(grow(np.arange(n), g, h, 0))

    total = gains.sum()
    importances = gains / total if total > 0 else np.zeros(f)
    return GBDTModel(trees=trees, base_score=base_score, importances=importances,
                     n_features=f, config=config)


# ---------------------------------------------------------------------------
# Factorization machine


@dataclass(frozen=True)
class FMConfig:
    k_emb: int = 8
    learning_rate: float = 0.05
    epochs: int = 10
    batch_size: int = 256
    l2: float = 1e-5
    init_scale: float = 0.01
    seed: int = 0


@dataclass
class FMModel:
    bias: float
    linear: np.ndarray
    latent: np.ndarray
    field_offsets: np.ndarray
    field_names: tuple
    config: FMConfig = field(default_factory=FMConfig)

    def margins_from_codes(self, codes: np.ndarray) -> np.ndarray:
        idx = self.field_offsets[None, :] + codes
        vi = self.latent[idx]
        summed = vi.sum(axis=1)
        pairwise = 0.5 * ((summed ** 2).sum(axis=1) - (vi ** 2).sum(axis=(1, 2)))
        return self.bias + self.linear[idx].sum(axis=1) + pairwise

    def predict_proba_from_codes(self, codes: np.ndarray) -> np.ndarray:
        return _sigmoid(self.margins_from_codes(codes))

    def field_embedding_rows(self, field_index: int) -> np.ndarray:
        start = int(self.field_offsets[field_index])
        if field_index + 1 < len(self.field_offsets):
            return self.latent[start:int(self.field_offsets[field_index + 1])]
        return self.latent[start:]


def fm_pairwise_naive(vi: np.ndarray) -> float:
    """Reference double-sum pairwise term for one row's active latent rows."""
    total = 0.0
    m = vi.shape[0]
    for a in range(m - 1):
        for b in range(a + 1, m):
            total += float(vi[a] @ vi[b])
    return total


def dataset_codes(dataset: Dataset) -> np.ndarray:
    return np.column_stack([dataset.codes[f] for f in dataset.schema.categorical_fields])


def train_fm(dataset: Dataset, config: FMConfig = FMConfig()) -> FMModel:
    """SGD on log loss over one-hot categorical fields only."""
    fields = dataset.schema.categorical_fields
    cards = [dataset.cardinality(f) for f in fields]
    offsets = np.r_[0, np.cumsum(cards)[:-1]].astype(np.int64)
    width = int(sum(cards))
    codes = dataset_codes(dataset)
    y = dataset.label

    rng = np.random.default_rng(config.seed)
    model = FMModel(
        bias=0.0,
        linear=np.zeros(width),
        latent=rng.normal(0.0, config.init_scale, size=(width, config.k_emb)),
        field_offsets=offsets,
        field_names=fields,
        config=config,
    )
    n = dataset.n_rows
    batch = max(1, min(config.batch_size, n))
    lr = config.learning_rate
    for _ in range(config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch):
            rows = order[start:start + batch]
            idx = offsets[None, :] + codes[rows]
            vi = model.latent[idx]
            summed = vi.sum(axis=1)
            margin = model.bias + model.linear[idx].sum(axis=1) \
                + 0.5 * ((summed ** 2).sum(axis=1) - (vi ** 2).sum(axis=(1, 2)))
            resid = (_sigmoid(margin) - y[rows]) / len(rows)
            model.bias -= lr * float(resid.sum())
            model.linear *= 1.0 - lr * config.l2
            np.subtract.at(model.linear, idx, lr * resid[:, None])
            model.latent *= 1.0 - lr * config.l2
            np.subtract.at(model.latent, idx,
                           lr * resid[:, None, None] * (summed[:, None, :] - vi))
    return model


# ---------------------------------------------------------------------------
# Metrics


def auc(labels, scores) -> float:
    """Probability a random positive outranks a random negative (ties count
    half), computed from midranks."""
    labels = np.asarray(labels, dtype=np.float64)
    scores = np.asarray(scores, dtype=np.float64)
    pos = int((labels == 1).sum())
    neg = int((labels == 0).sum())
    if pos + neg != len(labels):
        raise MetricError("labels must be binary")
    if pos == 0 or neg == 0:
        raise MetricError("AUC is undefined for single-class labels")
    order = np.argsort(scores, kind="mergesort")
    s = scores[order]
    bounds = np.flatnonzero(np.r_[True, s[1:] != s[:-1], True])
    sizes = np.diff(bounds)
    midranks_sorted = np.repeat(bounds[:-1] + (sizes + 1) / 2.0, sizes)
    ranks = np.empty(len(s))
    ranks[order] = midranks_sorted
    rank_sum = float(ranks[labels == 1].sum())
    return (rank_sum - pos * (pos + 1) / 2.0) / (pos * neg)


def rela_impr(auc_model: float, auc_baseline: float) -> float:
    """Relative AUC improvement over the 0.5 random baseline, in percent."""
    if auc_baseline == 0.5:
        raise MetricError("relative improvement is undefined for baseline AUC 0.5")
    return ((auc_model - 0.5) / (auc_baseline - 0.5) - 1.0) * 100.0


# ---------------------------------------------------------------------------
# Persistence (structured text)


def save_model(model, path):
    if isinstance(model, LRModel):
        payload = {
            "kind": "lr",
            "weights": model.weights.tolist(),
            "bias": model.bias,
            "mean": model.mean.tolist(),
            "scale": model.scale.tolist(),
            "config": model.config.__dict__,
        }
    elif isinstance(model, GBDTModel):
        payload = {
            "kind": "gbdt",
            "trees": model.trees,
            "base_score": model.base_score,
            "importances": model.importances.tolist(),
            "n_features": model.n_features,
            "config": model.config.__dict__,
        }
    elif isinstance(model, FMModel):
        payload = {
            "kind": "fm",
            "bias": model.bias,
            "linear": model.linear.tolist(),
            "latent": model.latent.tolist(),
            "field_offsets": model.field_offsets.tolist(),
            "field_names": list(model.field_names),
            "config": model.config.__dict__,
        }
    else:
        raise ConfigError(f"cannot save model of type {type(model).__name__}")
    with open(path, "w") as handle:
        json.dump(payload, handle, indent=1)
        handle.write("\n")


def load_model(path):
    with open(path) as handle:
        payload = json.load(handle)
    kind = payload.get("kind")
    if kind == "lr":
        return LRModel(
            weights=np.asarray(payload["weights"]),
            bias=float(payload["bias"]),
            mean=np.asarray(payload["mean"]),
            scale=np.asarray(payload["scale"]),
            config=LRConfig(**payload["config"]),
        )
    if kind == "gbdt":
        return GBDTModel(
            trees=payload["trees"],
            base_score=float(payload["base_score"]),
            importances=np.asarray(payload["importances"]),
            n_features=int(payload["n_features"]),
            config=GBDTConfig(**payload["config"]),
        )
    if kind == "fm":
        return FMModel(
            bias=float(payload["bias"]),
            linear=np.asarray(payload["linear"]),
            latent=np.asarray(payload["latent"]),
            field_offsets=np.asarray(payload["field_offsets"]),
            field_names=tuple(payload["field_names"]),
            config=FMConfig(**payload["config"]),
        )
    raise ConfigError(f"unknown model kind {kind!r} in {path}")
