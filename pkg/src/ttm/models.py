"""Trainable classifiers behind one prediction interface, plus metrics.

Both model kinds are built directly on numpy so everything from boosting
rounds to leaf values is reproducible from an explicit seed. The model
consumes a one-hot encoded matrix internally; callers only ever see schema
features.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .data import CATEGORICAL, DataFrame, DatasetSchema, Feature
from .errors import LoadError, SemanticError

MODEL_FORMAT_VERSION = 1

GBT_DEFAULTS = {"n_trees": 100, "max_depth": 3, "learning_rate": 0.1}
LOGISTIC_DEFAULTS = {"l2": 1e-3, "iters": 500, "lr": 0.5}


# ---------------------------------------------------------------------------
# Encoding: numeric features pass through, categoricals expand to one-hot.


class Encoder:
    def __init__(self, schema: DatasetSchema):
        self.schema = schema
        self.columns: list[tuple[str, Optional[str]]] = []
        for f in schema.features:
            if f.kind == CATEGORICAL:
                for v in schema.categorical_values[f.name]:
                    self.columns.append((f.name, v))
            else:
                self.columns.append((f.name, None))

    @property
    def width(self) -> int:
        return len(self.columns)

    def transform(self, df: DataFrame) -> np.ndarray:
        for f in self.schema.features:
            if f.name not in df.columns:
                raise SemanticError(f"frame is missing feature {f.name!r}")
        out = np.zeros((len(df), self.width))
        for j, (name, value) in enumerate(self.columns):
            col = df.columns[name]
            if value is None:
                out[:, j] = col
            else:
                out[:, j] = [1.0 if v == value else 0.0 for v in col]
        return out

    def group_slices(self) -> dict[str, list[int]]:
        """Encoded column indices per schema feature, for attribution rollup."""
        groups: dict[str, list[int]] = {}
        for j, (name, _) in enumerate(self.columns):
            groups.setdefault(name, []).append(j)
        return groups


def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-np.clip(z, -500, 500)))


def _softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


# ---------------------------------------------------------------------------
# Regression trees for boosting


@dataclass
class _TreeNode:
    feature: int = -1
    threshold: float = 0.0
    left: Optional["_TreeNode"] = None
    right: Optional["_TreeNode"] = None
    value: float = 0.0

    @property
    def is_leaf(self) -> bool:
        return self.left is None


def _fit_tree(X, grad, hess, depth, min_rows=2, l2=1.0):
    """Newton-style regression tree on gradients/hessians."""
    node = _TreeNode()
    node.value = float(-grad.sum() / (hess.sum() + l2))
    if depth == 0 or len(X) < min_rows:
        return node
    best_gain, best = 0.0, None
    total_g, total_h = grad.sum(), hess.sum()
    parent_score = total_g * total_g / (total_h + l2)
    for j in range(X.shape[1]):
        order = np.argsort(X[:, j], kind="stable")
        xs, gs, hs = X[order, j], grad[order], hess[order]
        g_left = np.cumsum(gs)[:-1]
        h_left = np.cumsum(hs)[:-1]
        # splits only between distinct adjacent values
        valid = xs[:-1] < xs[1:]
        if not valid.any():
            continue
        g_right = total_g - g_left
        h_right = total_h - h_left
        gain = (
            g_left * g_left / (h_left + l2)
            + g_right * g_right / (h_right + l2)
            - parent_score
        )
        gain = np.where(valid, gain, -np.inf)
        k = int(np.argmax(gain))
        if gain[k] > best_gain + 1e-12:
            best_gain = float(gain[k])
            best = (j, float((xs[k] + xs[k + 1]) / 2.0))
    if best is None:
        return node
    j, thr = best
    mask = X[:, j] <= thr
    node.feature, node.threshold = j, thr
    node.left = _fit_tree(X[mask], grad[mask], hess[mask], depth - 1, min_rows, l2)
    node.right = _fit_tree(X[~mask], grad[~mask], hess[~mask], depth - 1, min_rows, l2)
    return node


def _tree_predict(node: _TreeNode, X) -> np.ndarray:
    out = np.empty(len(X))
    stack = [(node, np.arange(len(X)))]
    while stack:
        nd, idx = stack.pop()
        if nd.is_leaf:
            out[idx] = nd.value
            continue
        mask = X[idx, nd.feature] <= nd.threshold
        stack.append((nd.left, idx[mask]))
        stack.append((nd.right, idx[~mask]))
    return out


def _tree_to_json(node: _TreeNode):
    if node.is_leaf:
        return {"value": node.value}
    return {
        "feature": node.feature,
        "threshold": node.threshold,
        "left": _tree_to_json(node.left),
        "right": _tree_to_json(node.right),
    }


def _tree_from_json(d) -> _TreeNode:
    if "value" in d and "feature" not in d:
        return _TreeNode(value=d["value"])
    return _TreeNode(
        feature=d["feature"],
        threshold=d["threshold"],
        left=_tree_from_json(d["left"]),
        right=_tree_from_json(d["right"]),
    )


# ---------------------------------------------------------------------------
# Model


class Model:
    """Uniform classifier facade over logistic or boosted-tree parameters."""

    def __init__(self, kind, schema, encoder, params, config):
        self.kind = kind
        self.schema = schema
        self.encoder = encoder
        self.params = params
        self.config = dict(config)

    @property
    def n_classes(self) -> int:
        return len(self.schema.target_classes)

    def fingerprint(self) -> str:
        """Cheap identity for caching: kind + config + a parameter digest."""
        import hashlib

        h = hashlib.sha256()
        h.update(self.kind.encode())
        h.update(json.dumps(self.config, sort_keys=True).encode())
        h.update(json.dumps(self._params_to_json(), sort_keys=True).encode())
        return h.hexdigest()[:16]

    # -- scoring

    def _raw_scores(self, X: np.ndarray) -> np.ndarray:
        """Per-class raw scores (log-odds space), shape n x C."""
        n = len(X)
        if self.kind == "logistic":
            W, b = self.params["weights"], self.params["bias"]
            return X @ W.T + b
        scores = np.tile(np.asarray(self.params["base"]), (n, 1))
        lr = self.config["learning_rate"]
        for c, trees in enumerate(self.params["trees"]):
            for t in trees:
                scores[:, c] += lr * _tree_predict(t, X)
        return scores

    def predict_proba(self, df: DataFrame) -> np.ndarray:
        return self.predict_proba_matrix(self.encoder.transform(df))

    def predict_proba_matrix(self, X: np.ndarray) -> np.ndarray:
        """Probabilities from an already-encoded matrix."""
        scores = self._raw_scores(X)
        if scores.shape[1] == 1:
            # binary boosting: one log-odds score for the positive class
            p1 = _sigmoid(scores[:, 0])
            return np.column_stack([1 - p1, p1])
        if self.kind == "gbt":
            # one-vs-rest: per-class sigmoids, normalized to the simplex
            s = _sigmoid(scores)
            return s / s.sum(axis=1, keepdims=True)
        return _softmax(scores)

    def predict(self, df: DataFrame) -> np.ndarray:
        return np.argmax(self.predict_proba(df), axis=1)

    # -- persistence

    def _params_to_json(self):
        if self.kind == "logistic":
            return {
                "weights": self.params["weights"].tolist(),
                "bias": self.params["bias"].tolist(),
            }
        return {
            "base": list(self.params["base"]),
            "trees": [[_tree_to_json(t) for t in trees] for trees in self.params["trees"]],
        }

    def save(self, path: str):
        doc = {
            "format_version": MODEL_FORMAT_VERSION,
            "kind": self.kind,
            "config": self.config,
            "schema": {
                "features": [[f.name, f.kind] for f in self.schema.features],
                "categorical_values": {
                    k: list(v) for k, v in self.schema.categorical_values.items()
                },
                "target_classes": list(self.schema.target_classes),
                "id_column": self.schema.id_column,
            },
            "params": self._params_to_json(),
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh)


def load_model(path: str) -> Model:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as e:
        raise LoadError(f"cannot read model file {path}: {e}") from None
    version = doc.get("format_version")
    if version != MODEL_FORMAT_VERSION:
        raise LoadError(
            f"model format version {version!r} unsupported (expected {MODEL_FORMAT_VERSION})"
        )
    s = doc["schema"]
    schema = DatasetSchema(
        features=tuple(Feature(n, k) for n, k in s["features"]),
        categorical_values={k: tuple(v) for k, v in s["categorical_values"].items()},
        target_classes=tuple(s["target_classes"]),
        id_column=s["id_column"],
    )
    encoder = Encoder(schema)
    kind = doc["kind"]
    pj = doc["params"]
    if kind == "logistic":
        params = {
            "weights": np.asarray(pj["weights"], dtype=np.float64),
            "bias": np.asarray(pj["bias"], dtype=np.float64),
        }
    elif kind == "gbt":
        params = {
            "base": np.asarray(pj["base"], dtype=np.float64),
            "trees": [[_tree_from_json(t) for t in trees] for trees in pj["trees"]],
        }
    else:
        raise LoadError(f"unknown model kind {kind!r}")
    return Model(kind, schema, encoder, params, doc["config"])


# ---------------------------------------------------------------------------
# Training


def _check_classes(df: DataFrame):
    present = np.unique(df.labels)
    if len(present) < 2:
        raise SemanticError("training data contains a single class")


def logistic_loss_and_grad(W, b, X, Y, l2):
    scores = X @ W.T + b
    P = _softmax(scores)
    n = len(X)
    loss = -np.log(np.clip(P[np.arange(n), Y], 1e-12, None)).mean()
    loss += 0.5 * l2 * float((W * W).sum())
    onehot = np.zeros_like(P)
    onehot[np.arange(n), Y] = 1.0
    G = (P - onehot) / n
    return loss, G.T @ X + l2 * W, G.sum(axis=0)


def train_logistic(train: DataFrame, config: Optional[dict] = None) -> Model:
    """Multinomial logistic regression by full-batch gradient descent."""
    cfg = dict(LOGISTIC_DEFAULTS)
    cfg.update(config or {})
    _check_classes(train)
    encoder = Encoder(train.schema)
    X = encoder.transform(train)
    # standardize internally for conditioning; fold back into weights after
    mu, sd = X.mean(axis=0), X.std(axis=0)
    sd[sd == 0] = 1.0
    Xs = (X - mu) / sd
    C = len(train.schema.target_classes)
    W = np.zeros((C, encoder.width))
    b = np.zeros(C)
    Y = train.labels
    for _ in range(int(cfg["iters"])):
        _, gW, gb = logistic_loss_and_grad(W, b, Xs, Y, cfg["l2"])
        W -= cfg["lr"] * gW
        b -= cfg["lr"] * gb
    W_orig = W / sd
    b_orig = b - W_orig @ mu
    return Model(
        "logistic",
        train.schema,
        encoder,
        {"weights": W_orig, "bias": b_orig},
        {"l2": cfg["l2"], "iters": int(cfg["iters"]), "lr": cfg["lr"], "seed": int(cfg.get("seed", 0))},
    )


def train_gbt(train: DataFrame, config: Optional[dict] = None) -> Model:
    """Gradient boosting on logistic loss, one-vs-rest for multiclass.

    Each round fits one regression tree per class to the loss gradient, with
    Newton leaf values. Deterministic given the data; seed recorded for
    provenance of any downstream sampling.
    """
    cfg = dict(GBT_DEFAULTS)
    cfg.update(config or {})
    _check_classes(train)
    encoder = Encoder(train.schema)
    X = encoder.transform(train)
    Y = train.labels
    C = len(train.schema.target_classes)
    n = len(X)
    lr = float(cfg["learning_rate"])
    n_trees = int(cfg["n_trees"])
    depth = int(cfg["max_depth"])

    # Binary task trains one log-odds score for the positive class;
    # multiclass trains one-vs-rest scores, one tree list per class.
    score_classes = [1] if C == 2 else list(range(C))
    onehot = np.zeros((n, C))
    onehot[np.arange(n), Y] = 1.0
    base = np.empty(len(score_classes))
    for k, c in enumerate(score_classes):
        p = np.clip(onehot[:, c].mean(), 1e-6, 1 - 1e-6)
        base[k] = np.log(p / (1 - p))

    scores = np.tile(base, (n, 1))
    trees: list[list[_TreeNode]] = [[] for _ in score_classes]
    for _ in range(n_trees):
        for k, c in enumerate(score_classes):
            p = _sigmoid(scores[:, k])
            grad = p - onehot[:, c]
            hess = np.maximum(p * (1 - p), 1e-6)
            t = _fit_tree(X, grad, hess, depth)
            trees[k].append(t)
            scores[:, k] += lr * _tree_predict(t, X)

    return Model(
        "gbt",
        train.schema,
        encoder,
        {"base": base, "trees": trees},
        {
            "n_trees": n_trees,
            "max_depth": depth,
            "learning_rate": lr,
            "seed": int(cfg.get("seed", 0)),
        },
    )


# ---------------------------------------------------------------------------
# Metrics


@dataclass
class MetricReport:
    metric: str
    value: float
    n: int
    undefined: bool = False
    positive_class: Optional[str] = None


def evaluate_metric(
    model: Model, df: DataFrame, metric: str, positive_class: Optional[str] = None
) -> MetricReport:
    """Standard classification metrics on a labeled frame.

    For binary precision/recall/f1 the positive class defaults to the last
    schema class. A metric with an empty denominator is reported with
    undefined=True instead of a silent zero.
    """
    if metric not in ("accuracy", "precision", "recall", "f1"):
        raise SemanticError(f"unknown metric {metric!r}")
    if len(df) == 0:
        raise SemanticError("cannot evaluate a metric on an empty selection")
    pred = model.predict(df)
    y = df.labels
    n = len(df)
    if metric == "accuracy":
        return MetricReport("accuracy", float((pred == y).mean()), n)

    if positive_class is None:
        positive_class = model.schema.target_classes[-1]
    pos = model.schema.class_index(positive_class)
    tp = int(((pred == pos) & (y == pos)).sum())
    fp = int(((pred == pos) & (y != pos)).sum())
    fn = int(((pred != pos) & (y == pos)).sum())

    def ratio(num, den):
        return (0.0, True) if den == 0 else (num / den, False)

    if metric == "precision":
        v, u = ratio(tp, tp + fp)
        return MetricReport("precision", v, n, u, positive_class)
    if metric == "recall":
        v, u = ratio(tp, tp + fn)
        return MetricReport("recall", v, n, u, positive_class)
    p, pu = ratio(tp, tp + fp)
    r, ru = ratio(tp, tp + fn)
    if pu or ru or (p + r) == 0:
        return MetricReport("f1", 0.0, n, True, positive_class)
    return MetricReport("f1", 2 * p * r / (p + r), n, False, positive_class)


def save_model(model: Model, path: str):
    model.save(path)
