"""Random forest and gradient-boosted tree classifiers over metric vectors.

Both learners share one array-backed tree representation.  Splits send
``x[feature] <= threshold`` to the left child.  Ties between candidate splits
go to the lowest feature index, then the lowest threshold.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .core import METRIC_FIELDS, FluencyError, FluencyLabel, Language, MetricVector, TaskType

FORMAT_VERSION = 1
FORMAT_NAME = "fluencyassess-ensemble"

CATEGORICAL_COLUMNS = (
    "language=malay",
    "language=tamil",
    "task=R",
    "task=P",
)
FEATURE_ORDER = METRIC_FIELDS + CATEGORICAL_COLUMNS


class TrainingError(FluencyError):
    pass


class FeatureError(FluencyError):
    pass


class ModelFormatError(FluencyError):
    pass


def _feature_value(vector: MetricVector, name: str) -> float:
    if name in METRIC_FIELDS:
        return float(getattr(vector, name))
    key, _, value = name.partition("=")
    if key == "language":
        return float(vector.language is Language(value))
    if key == "task":
        return float(vector.task is TaskType(value))
    raise FeatureError(f"unknown feature {name!r}")


def feature_matrix(vectors: Sequence[MetricVector], feature_order: Sequence[str] = FEATURE_ORDER) -> np.ndarray:
    X = np.array([[_feature_value(v, f) for f in feature_order] for v in vectors], dtype=float)
    X = X.reshape(len(vectors), len(feature_order))
    if not np.isfinite(X).all():
        raise FeatureError("feature matrix contains NaN or Inf")
    return X


def features_without(excluded: Sequence[str]) -> tuple[str, ...]:
    unknown = set(excluded) - set(FEATURE_ORDER)
    if unknown:
        raise FeatureError(f"unknown feature(s): {', '.join(sorted(unknown))}")
    return tuple(f for f in FEATURE_ORDER if f not in excluded)


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 100
    max_features: int | None = None  # None: ceil(sqrt(d))
    max_depth: int | None = None
    min_samples_leaf: int = 1


@dataclass(frozen=True)
class BoostConfig:
    n_rounds: int = 100
    learning_rate: float = 0.3
    max_depth: int = 6
    reg_lambda: float = 1.0
    min_child_weight: float = 1.0


@dataclass
class DecisionTree:
    """Flat binary tree; ``feature[i] == -1`` marks a leaf holding ``value[i]``."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray  # (n_nodes, k): class distribution (forest) or a score (k == 1)

    def apply(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(len(X), dtype=np.int64)
        active = np.arange(len(X))
        while active.size:
            feat = self.feature[node[active]]
            internal = feat >= 0
            active, feat = active[internal], feat[internal]
            if not active.size:
                break
            here = node[active]
            go_left = X[active, feat] <= self.threshold[here]
            node[active] = np.where(go_left, self.left[here], self.right[here])
        return node

    def predict_value(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(X)]

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def to_json(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "DecisionTree":
        tree = cls(
            feature=np.asarray(obj["feature"], dtype=np.int64),
            threshold=np.asarray(obj["threshold"], dtype=float),
            left=np.asarray(obj["left"], dtype=np.int64),
            right=np.asarray(obj["right"], dtype=np.int64),
            value=np.asarray(obj["value"], dtype=float),
        )
        n = tree.n_nodes
        if n == 0 or not (len(tree.threshold) == len(tree.left) == len(tree.right) == len(tree.value) == n):
            raise ModelFormatError("inconsistent tree arrays")
        internal = tree.feature >= 0
        for child in (tree.left[internal], tree.right[internal]):
            if child.size and (child.min() <= 0 or child.max() >= n):
                raise ModelFormatError("tree child index out of range")
        return tree


class _TreeBuilder:
    def __init__(self):
        self.feature, self.threshold, self.left, self.right, self.value = [], [], [], [], []

    def add(self, value) -> int:
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(np.atleast_1d(np.asarray(value, dtype=float)))
        return len(self.feature) - 1

    def split(self, node: int, feature: int, threshold: float, left: int, right: int):
        self.feature[node] = feature
        self.threshold[node] = threshold
        self.left[node] = left
        self.right[node] = right

    def build(self) -> DecisionTree:
        return DecisionTree(
            np.array(self.feature, dtype=np.int64),
            np.array(self.threshold, dtype=float),
            np.array(self.left, dtype=np.int64),
            np.array(self.right, dtype=np.int64),
            np.vstack(self.value),
        )


def _threshold(lo: float, hi: float) -> float:
    mid = (lo + hi) / 2.0
    return lo if mid >= hi else mid


def _gini_split(x: np.ndarray, y1h: np.ndarray, min_leaf: int):
    """Best split of one feature by weighted Gini impurity: ``(impurity, threshold)`` or None."""
    order = np.argsort(x, kind="stable")
    xs = x[order]
    n = len(xs)
    ys = y1h[order]
    cum = np.cumsum(ys, axis=0)[:-1]
    n_left = np.arange(1, n, dtype=float)
    n_right = n - n_left
    ok = (xs[:-1] < xs[1:]) & (n_left >= min_leaf) & (n_right >= min_leaf)
    if not ok.any():
        return None
    right = ys.sum(axis=0) - cum
    gini_l = n_left - (cum**2).sum(axis=1) / n_left
    gini_r = n_right - (right**2).sum(axis=1) / n_right
    impurity = np.where(ok, (gini_l + gini_r) / n, np.inf)
    i = int(np.argmin(impurity))
    return float(impurity[i]), _threshold(xs[i], xs[i + 1])


def _grow_classification_tree(X, y1h, rng, config: ForestConfig, max_features: int) -> DecisionTree:
    builder = _TreeBuilder()
    n_features = X.shape[1]
    root = builder.add(y1h.mean(axis=0))
    stack = [(root, np.arange(len(X)), 0)]
    while stack:
        node, ids, depth = stack.pop()
        counts = y1h[ids].sum(axis=0)
        if np.count_nonzero(counts) <= 1 or len(ids) < 2 * config.min_samples_leaf:
            continue
        if config.max_depth is not None and depth >= config.max_depth:
            continue
        perm = rng.permutation(n_features).tolist()
        best = None
        for f in sorted(perm[:max_features]):
            found = _gini_split(X[ids, f], y1h[ids], config.min_samples_leaf)
            if found is not None and (best is None or found[0] < best[0]):
                best = (found[0], f, found[1])
        # none of the drawn features can split: keep drawing, one at a time
        for f in perm[max_features:]:
            if best is not None:
                break
            found = _gini_split(X[ids, f], y1h[ids], config.min_samples_leaf)
            if found is not None:
                best = (found[0], f, found[1])
        if best is None:
            continue
        _, f, thr = best
        mask = X[ids, f] <= thr
        left_ids, right_ids = ids[mask], ids[~mask]
        left = builder.add(y1h[left_ids].mean(axis=0))
        right = builder.add(y1h[right_ids].mean(axis=0))
        builder.split(node, f, thr, left, right)
        stack.append((right, right_ids, depth + 1))
        stack.append((left, left_ids, depth + 1))
    return builder.build()


def _newton_split(x, g, h, reg_lambda, min_child_weight):
    order = np.argsort(x, kind="stable")
    xs = x[order]
    cg = np.cumsum(g[order])
    ch = np.cumsum(h[order])
    G, H = cg[-1], ch[-1]
    gl, hl = cg[:-1], ch[:-1]
    gr, hr = G - gl, H - hl
    ok = (xs[:-1] < xs[1:]) & (hl >= min_child_weight) & (hr >= min_child_weight)
    if not ok.any():
        return None
    gain = gl**2 / (hl + reg_lambda) + gr**2 / (hr + reg_lambda) - G**2 / (H + reg_lambda)
    gain = np.where(ok, gain, -np.inf)
    i = int(np.argmax(gain))
    return float(gain[i]), _threshold(xs[i], xs[i + 1])


def _grow_regression_tree(X, g, h, config: BoostConfig) -> DecisionTree:
    builder = _TreeBuilder()

    def leaf_weight(ids):
        return -g[ids].sum() / (h[ids].sum() + config.reg_lambda)

    all_ids = np.arange(len(X))
    root = builder.add(leaf_weight(all_ids))
    stack = [(root, all_ids, 0)]
    while stack:
        node, ids, depth = stack.pop()
        if depth >= config.max_depth or len(ids) < 2:
            continue
        best = None
        for f in range(X.shape[1]):
            found = _newton_split(X[ids, f], g[ids], h[ids], config.reg_lambda, config.min_child_weight)
            if found is not None and found[0] > 1e-12 and (best is None or found[0] > best[0]):
                best = (found[0], f, found[1])
        if best is None:
            continue
        _, f, thr = best
        mask = X[ids, f] <= thr
        left_ids, right_ids = ids[mask], ids[~mask]
        left = builder.add(leaf_weight(left_ids))
        right = builder.add(leaf_weight(right_ids))
        builder.split(node, f, thr, left, right)
        stack.append((right, right_ids, depth + 1))
        stack.append((left, left_ids, depth + 1))
    return builder.build()


@dataclass
class EnsembleModel:
    kind: str  # "forest" or "boosted"
    trees: list[DecisionTree]
    classes: tuple[FluencyLabel, ...]
    feature_order: tuple[str, ...]
    train_seed: int
    learning_rate: float = 1.0
    base_score: np.ndarray | None = None
    config: dict = field(default_factory=dict)
    train_loss: tuple[float, ...] = ()

    def __post_init__(self):
        if not self.trees:
            raise TrainingError("an ensemble needs at least one tree")
        if self.kind not in ("forest", "boosted"):
            raise ModelFormatError(f"unknown model kind {self.kind!r}")

    def _check(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != len(self.feature_order):
            raise FeatureError(
                f"row has {X.shape[1]} features, model expects {len(self.feature_order)} ({', '.join(self.feature_order)})"
            )
        return X

    def decision_scores(self, X: np.ndarray) -> np.ndarray:
        """Boosted models only: raw per-class scores before the softmax."""
        X = self._check(X)
        k = len(self.classes)
        scores = np.tile(self.base_score, (len(X), 1))
        for t, tree in enumerate(self.trees):
            scores[:, t % k] += self.learning_rate * tree.predict_value(X)[:, 0]
        return scores

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        X = self._check(X)
        if self.kind == "forest":
            total = np.zeros((len(X), len(self.classes)))
            for tree in self.trees:
                total += tree.predict_value(X)
            proba = total / len(self.trees)
        else:
            proba = _softmax(self.decision_scores(X))
        return proba / proba.sum(axis=1, keepdims=True)

    def predict_labels(self, X: np.ndarray) -> list[FluencyLabel]:
        return [self.classes[i] for i in np.argmax(self.predict_proba(X), axis=1)]


def _softmax(scores: np.ndarray) -> np.ndarray:
    z = np.exp(scores - scores.max(axis=1, keepdims=True))
    return z / z.sum(axis=1, keepdims=True)


def _prepare(X, labels):
    X = np.asarray(X, dtype=float)
    labels = list(labels)
    if len(labels) == 0 or len(X) == 0:
        raise TrainingError("no training rows")
    if len(X) != len(labels):
        raise TrainingError(f"{len(X)} rows but {len(labels)} labels")
    if any(lab is None for lab in labels):
        raise TrainingError("labels required for every training row")
    if not np.isfinite(X).all():
        raise FeatureError("training features contain NaN or Inf")
    classes = tuple(sorted(set(FluencyLabel(lab) for lab in labels)))
    if len(classes) < 2:
        raise TrainingError(f"need at least 2 distinct labels, got only {classes[0].text}")
    y = np.array([classes.index(FluencyLabel(lab)) for lab in labels])
    # canonical row order makes training independent of input row order
    order = np.lexsort(np.column_stack([X, y]).T[::-1])
    X, y = X[order], y[order]
    y1h = np.eye(len(classes))[y]
    return X, y, y1h, classes


def train_forest(
    X: np.ndarray,
    labels: Sequence[FluencyLabel],
    config: ForestConfig = ForestConfig(),
    seed: int = 42,
    feature_order: Sequence[str] = FEATURE_ORDER,
) -> EnsembleModel:
    """Bagged Gini trees with per-split feature subsampling."""
    X, _, y1h, classes = _prepare(X, labels)
    if X.shape[1] != len(feature_order):
        raise FeatureError(f"{X.shape[1]} columns but {len(feature_order)} feature names")
    max_features = config.max_features or math.ceil(math.sqrt(X.shape[1]))
    max_features = max(1, min(max_features, X.shape[1]))
    trees = []
    for child in np.random.SeedSequence(seed).spawn(config.n_trees):
        rng = np.random.default_rng(child)
        sample = rng.integers(0, len(X), len(X))
        trees.append(_grow_classification_tree(X[sample], y1h[sample], rng, config, max_features))
    return EnsembleModel(
        "forest", trees, classes, tuple(feature_order), seed, config=asdict(config)
    )


def train_boosted(
    X: np.ndarray,
    labels: Sequence[FluencyLabel],
    config: BoostConfig = BoostConfig(),
    seed: int = 42,
    feature_order: Sequence[str] = FEATURE_ORDER,
) -> EnsembleModel:
    """Softmax gradient boosting: each round fits one Newton-step tree per class.

    Scores start at the log class priors.  No row or column subsampling is
    done, so ``seed`` is recorded but does not affect the fit.
    """
    X, _, y1h, classes = _prepare(X, labels)
    if X.shape[1] != len(feature_order):
        raise FeatureError(f"{X.shape[1]} columns but {len(feature_order)} feature names")
    k = len(classes)
    base = np.log(y1h.mean(axis=0))
    scores = np.tile(base, (len(X), 1))
    trees, losses = [], []
    for _ in range(config.n_rounds):
        proba = _softmax(scores)
        round_trees = []
        for c in range(k):
            g = proba[:, c] - y1h[:, c]
            h = np.maximum(proba[:, c] * (1.0 - proba[:, c]), 1e-16)
            round_trees.append(_grow_regression_tree(X, g, h, config))
        for c, tree in enumerate(round_trees):
            scores[:, c] += config.learning_rate * tree.predict_value(X)[:, 0]
        trees.extend(round_trees)
        losses.append(_log_loss(_softmax(scores), y1h))
    return EnsembleModel(
        "boosted",
        trees,
        classes,
        tuple(feature_order),
        seed,
        learning_rate=config.learning_rate,
        base_score=base,
        config=asdict(config),
        train_loss=tuple(losses),
    )


def _log_loss(proba: np.ndarray, y1h: np.ndarray) -> float:
    picked = np.clip((proba * y1h).sum(axis=1), 1e-15, 1.0)
    return float(-np.log(picked).mean())


def predict(model: EnsembleModel, row) -> tuple[FluencyLabel, dict[FluencyLabel, float]]:
    """Label and class probabilities for one row (a MetricVector or a feature array)."""
    if isinstance(row, MetricVector):
        x = feature_matrix([row], model.feature_order)
    else:
        x = np.asarray(row, dtype=float).reshape(1, -1)
    proba = model.predict_proba(x)[0]
    label = model.classes[int(np.argmax(proba))]
    return label, {cls: float(p) for cls, p in zip(model.classes, proba)}


def save_model(model: EnsembleModel) -> bytes:
    obj = {
        "format": FORMAT_NAME,
        "format_version": FORMAT_VERSION,
        "kind": model.kind,
        "classes": [c.text for c in model.classes],
        "feature_order": list(model.feature_order),
        "train_seed": model.train_seed,
        "learning_rate": model.learning_rate,
        "base_score": None if model.base_score is None else model.base_score.tolist(),
        "config": model.config,
        "train_loss": list(model.train_loss),
        "trees": [tree.to_json() for tree in model.trees],
    }
    return (json.dumps(obj, separators=(",", ":")) + "\n").encode("utf-8")


def load_model(data: bytes | str) -> EnsembleModel:
    try:
        obj = json.loads(data)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ModelFormatError(f"model file is not valid JSON: {exc}") from None
    if not isinstance(obj, dict) or obj.get("format") != FORMAT_NAME:
        raise ModelFormatError("not a fluencyassess model file")
    version = obj.get("format_version")
    if str(version) != str(FORMAT_VERSION):
        raise ModelFormatError(f"unsupported model format version {version!r} (supported: {FORMAT_VERSION})")
    try:
        classes = tuple(FluencyLabel.parse(c) for c in obj["classes"])
        trees = [DecisionTree.from_json(t) for t in obj["trees"]]
        base = obj.get("base_score")
        model = EnsembleModel(
            kind=obj["kind"],
            trees=trees,
            classes=classes,
            feature_order=tuple(obj["feature_order"]),
            train_seed=int(obj["train_seed"]),
            learning_rate=float(obj["learning_rate"]),
            base_score=None if base is None else np.asarray(base, dtype=float),
            config=dict(obj.get("config") or {}),
            train_loss=tuple(obj.get("train_loss") or ()),
        )
    except ModelFormatError:
        raise
    except (KeyError, TypeError, ValueError, FluencyError) as exc:
        raise ModelFormatError(f"malformed model file: {exc}") from None
    k = len(model.classes)
    width = k if model.kind == "forest" else 1
    if any(t.value.ndim != 2 or t.value.shape[1] != width for t in model.trees):
        raise ModelFormatError("leaf values do not match the class count")
    if model.kind == "boosted" and (model.base_score is None or len(model.base_score) != k or len(model.trees) % k):
        raise ModelFormatError("boosted model has inconsistent base scores or tree count")
    return model
