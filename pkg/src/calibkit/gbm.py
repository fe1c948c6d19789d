"""Gradient-boosted decision trees with a binary logistic objective.

Second-order (Newton) boosting: each round fits one regression tree to the
per-sample gradient g = p - y and hessian h = p (1 - p), with exact greedy
splits over sorted unique feature values and L2-regularized leaves.  Split
gain follows the familiar formula

    gain = 1/2 [ G_L^2/(H_L+lambda) + G_R^2/(H_R+lambda)
                 - (G_L+G_R)^2/(H_L+H_R+lambda) ] - gamma

and the leaf value is -lr * G / (H + lambda).  Ties in gain resolve to the
lowest feature index, then the lowest threshold, so training is bit-for-bit
deterministic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .data_model import FeatureVector
from .errors import CompatibilityError, DegenerateDataError

PROB_CLAMP = 1e-12


@dataclass(frozen=True)
class TreeNode:
    """Internal node (left/right >= 0) or leaf (left == right == -1).

    gain is kept for inspection and tests; it is not serialized.
    """

    feature_index: int = -1
    threshold: float = 0.0
    left: int = -1
    right: int = -1
    leaf_value: float = 0.0
    gain: float = 0.0

    @property
    def is_leaf(self) -> bool:
        return self.left < 0


@dataclass(frozen=True)
class DecisionTree:
    nodes: tuple[TreeNode, ...]

    def _arrays(self):
        cached = getattr(self, "_node_arrays", None)
        if cached is None:
            cached = (
                np.array([n.feature_index for n in self.nodes], dtype=np.int64),
                np.array([n.threshold for n in self.nodes]),
                np.array([n.left for n in self.nodes], dtype=np.int64),
                np.array([n.right for n in self.nodes], dtype=np.int64),
                np.array([n.leaf_value for n in self.nodes]),
                np.array([n.is_leaf for n in self.nodes]),
            )
            object.__setattr__(self, "_node_arrays", cached)
        return cached

    def predict(self, X: np.ndarray) -> np.ndarray:
        fi, thr, left, right, leaf, is_leaf = self._arrays()
        idx = np.zeros(X.shape[0], dtype=np.int64)
        while True:
            active = np.nonzero(~is_leaf[idx])[0]
            if active.size == 0:
                break
            cur = idx[active]
            go_left = X[active, fi[cur]] < thr[cur]
            idx[active] = np.where(go_left, left[cur], right[cur])
        return leaf[idx]

    def num_internal(self) -> int:
        return sum(not n.is_leaf for n in self.nodes)


@dataclass(frozen=True)
class GbmConfig:
    num_rounds: int = 100
    max_depth: int = 3
    learning_rate: float = 0.1
    l2_leaf_regularization: float = 1.0
    min_split_gain: float = 0.0
    min_child_weight: float = 1.0
    rng_seed: int = 0
    row_subsample: float = 1.0
    early_stopping_rounds: int | None = None

    def __post_init__(self):
        if self.num_rounds < 0:
            raise ValueError("num_rounds must be >= 0")
        if self.max_depth < 0:
            raise ValueError("max_depth must be >= 0")
        if not (0.0 < self.learning_rate <= 1.0):
            raise ValueError("learning_rate must be in (0, 1]")
        if self.l2_leaf_regularization < 0 or self.min_split_gain < 0 or self.min_child_weight < 0:
            raise ValueError("regularization parameters must be >= 0")
        if not (0.0 < self.row_subsample <= 1.0):
            raise ValueError("row_subsample must be in (0, 1]")


@dataclass(frozen=True)
class GbmEnsemble:
    trees: tuple[DecisionTree, ...]
    base_score_logit: float
    feature_names: tuple[str, ...]

    def predict_logit(self, X: np.ndarray) -> np.ndarray:
        out = np.full(X.shape[0], self.base_score_logit)
        for tree in self.trees:
            out += tree.predict(X)
        return out


def split_gain(g_left: float, h_left: float, g_right: float, h_right: float,
               lam: float, gamma: float = 0.0) -> float:
    """Gain of splitting one node into (left, right) given gradient/hessian
    sums on each side."""
    def score(g, h):
        return g * g / (h + lam)

    return 0.5 * (score(g_left, h_left) + score(g_right, h_right)
                  - score(g_left + g_right, h_left + h_right)) - gamma


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def _logistic_nll(logits: np.ndarray, y: np.ndarray) -> float:
    p = np.clip(_sigmoid(logits), PROB_CLAMP, 1.0 - PROB_CLAMP)
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)))


def _best_split(X, g, h, rows, feature_order, cfg):
    """Best (feature, threshold, gain, left_rows, right_rows) for one node, or
    None when no admissible positive-gain split exists."""
    lam = cfg.l2_leaf_regularization
    gamma = cfg.min_split_gain
    in_node = np.zeros(X.shape[0], dtype=bool)
    in_node[rows] = True
    g_total = float(g[rows].sum())
    h_total = float(h[rows].sum())
    best = None
    for f in range(X.shape[1]):
        order = feature_order[f][in_node[feature_order[f]]]
        v = X[order, f]
        if v[0] == v[-1]:
            continue
        gc = np.cumsum(g[order])
        hc = np.cumsum(h[order])
        cut = np.nonzero(v[:-1] < v[1:])[0]
        gl = gc[cut]
        hl = hc[cut]
        gr = g_total - gl
        hr = h_total - hl
        with np.errstate(divide="ignore", invalid="ignore"):
            gains = 0.5 * (gl * gl / (hl + lam) + gr * gr / (hr + lam)
                           - g_total * g_total / (h_total + lam)) - gamma
        ok = (hl >= cfg.min_child_weight) & (hr >= cfg.min_child_weight)
        gains = np.where(ok, gains, -np.inf)
        if gains.size == 0:
            continue
        j = int(np.argmax(gains))  # first max -> lowest threshold
        if gains[j] < 0.0 or not np.isfinite(gains[j]):
            continue
        if best is None or gains[j] > best[2]:  # strict -> lowest feature index
            thr = 0.5 * (v[cut[j]] + v[cut[j] + 1])
            best = (f, float(thr), float(gains[j]), order[: cut[j] + 1], order[cut[j] + 1:])
    return best


def _grow_tree(X, g, h, rows, feature_order, cfg) -> DecisionTree | None:
    """One regression tree on (g, h); None when the root cannot usefully split.

    Splits with zero gain are explored (they can unlock positive-gain splits
    below, as on XOR-like data) and then pruned away whenever the subtree
    never finds a strictly positive gain.
    """
    lam = cfg.l2_leaf_regularization
    lr = cfg.learning_rate
    nodes: list[TreeNode] = []
    node_rows: list[np.ndarray] = []

    def leaf_value(rows) -> float:
        return -lr * float(g[rows].sum()) / (float(h[rows].sum()) + lam)

    def build(rows, depth) -> int:
        idx = len(nodes)
        nodes.append(TreeNode(leaf_value=leaf_value(rows)))
        node_rows.append(rows)
        if depth >= cfg.max_depth:
            return idx
        found = _best_split(X, g, h, rows, feature_order, cfg)
        if found is None:
            return idx
        f, thr, gain, left_rows, right_rows = found
        left = build(left_rows, depth + 1)
        right = build(right_rows, depth + 1)
        nodes[idx] = TreeNode(feature_index=f, threshold=thr, left=left, right=right, gain=gain)
        return idx

    build(rows, 0)

    def subtree_positive(idx) -> bool:
        node = nodes[idx]
        if node.is_leaf:
            return False
        return node.gain > 0.0 or subtree_positive(node.left) or subtree_positive(node.right)

    pruned: list[TreeNode] = []

    def emit(idx) -> int:
        node = nodes[idx]
        out = len(pruned)
        if node.is_leaf or not subtree_positive(idx):
            pruned.append(TreeNode(leaf_value=leaf_value(node_rows[idx])))
            return out
        pruned.append(node)  # placeholder; children indices fixed below
        left = emit(node.left)
        right = emit(node.right)
        pruned[out] = TreeNode(feature_index=node.feature_index, threshold=node.threshold,
                               left=left, right=right, gain=node.gain)
        return out

    emit(0)
    if pruned[0].is_leaf:
        return None
    return DecisionTree(nodes=tuple(pruned))


def fit_gbm(X: np.ndarray, y: Sequence[int], cfg: GbmConfig = GbmConfig(),
            feature_names: Sequence[str] | None = None,
            eval_set: tuple[np.ndarray, np.ndarray] | None = None) -> GbmEnsemble:
    """Boost trees on the logistic loss.

    The base score is logit(mean(y)).  Training NLL is asserted non-increasing
    after every round (exact with no subsampling).  Rounds stop early when no
    tree can improve, or when eval_set NLL has not improved for
    early_stopping_rounds rounds.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise ValueError("X must be [n, d] with one label per row")
    if X.shape[0] < 2:
        raise ValueError("need at least 2 samples")
    if np.isnan(X).any():
        raise ValueError("features must not contain NaN")
    if not np.isin(y, (0, 1)).all():
        raise ValueError("labels must be binary 0/1")
    ybar = y.mean()
    if ybar == 0.0 or ybar == 1.0:
        raise DegenerateDataError("labels contain a single class")
    if feature_names is None:
        feature_names = tuple(f"f{i}" for i in range(X.shape[1]))
    else:
        feature_names = tuple(feature_names)
        if len(feature_names) != X.shape[1]:
            raise ValueError("one feature name per column required")

    base = float(math.log(ybar / (1.0 - ybar)))
    logits = np.full(X.shape[0], base)
    feature_order = [np.argsort(X[:, f], kind="stable") for f in range(X.shape[1])]
    all_rows = np.arange(X.shape[0])
    rng = np.random.default_rng(cfg.rng_seed)

    trees: list[DecisionTree] = []
    nll = _logistic_nll(logits, y)
    if eval_set is not None:
        Xe = np.asarray(eval_set[0], dtype=float)
        ye = np.asarray(eval_set[1], dtype=float)
        eval_logits = np.full(Xe.shape[0], base)
    best_eval = math.inf
    stale = 0
    for _ in range(cfg.num_rounds):
        p = _sigmoid(logits)
        g = p - y
        h = p * (1.0 - p)
        if cfg.row_subsample < 1.0:
            m = max(1, int(round(cfg.row_subsample * X.shape[0])))
            rows = np.sort(rng.choice(all_rows, size=m, replace=False))
        else:
            rows = all_rows
        tree = _grow_tree(X, g, h, rows, feature_order, cfg)
        if tree is None:
            break
        trees.append(tree)
        logits += tree.predict(X)
        if cfg.row_subsample >= 1.0:
            new_nll = _logistic_nll(logits, y)
            assert new_nll <= nll + 1e-9, f"training NLL increased: {nll} -> {new_nll}"
            nll = new_nll
        if eval_set is not None and cfg.early_stopping_rounds is not None:
            eval_logits += tree.predict(Xe)
            e = _logistic_nll(eval_logits, ye)
            if e < best_eval - 1e-12:
                best_eval = e
                stale = 0
            else:
                stale += 1
                if stale >= cfg.early_stopping_rounds:
                    break
    return GbmEnsemble(trees=tuple(trees), base_score_logit=base, feature_names=feature_names)


def predict_gbm_matrix(m: GbmEnsemble, X: np.ndarray, logit: bool = False) -> np.ndarray:
    """Predict a whole matrix of rows ordered like m.feature_names."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != len(m.feature_names):
        raise CompatibilityError(
            f"matrix has {X.shape[1] if X.ndim == 2 else '?'} columns, model expects {len(m.feature_names)}"
        )
    z = m.predict_logit(X)
    if logit:
        return z
    return np.clip(_sigmoid(z), PROB_CLAMP, 1.0 - PROB_CLAMP)


def predict_gbm(m: GbmEnsemble, x: FeatureVector) -> float:
    """Calibrated probability for one feature vector; names must match."""
    if tuple(x.names) != tuple(m.feature_names):
        raise CompatibilityError("feature names do not match the model's feature_names")
    return float(predict_gbm_matrix(m, x.values[None, :])[0])


def feature_importance(m: GbmEnsemble) -> list[tuple[str, int]]:
    """(feature name, split count) over all trees, sorted by count descending
    (ties by feature order).  Features never split on are omitted."""
    counts = np.zeros(len(m.feature_names), dtype=int)
    for tree in m.trees:
        for node in tree.nodes:
            if not node.is_leaf:
                counts[node.feature_index] += 1
    ranked = sorted(range(len(counts)), key=lambda i: (-counts[i], i))
    return [(m.feature_names[i], int(counts[i])) for i in ranked if counts[i] > 0]


def gbm_to_dict(m: GbmEnsemble) -> dict:
    trees = []
    for tree in m.trees:
        nodes = []
        for node in tree.nodes:
            if node.is_leaf:
                nodes.append({"leaf_value": node.leaf_value})
            else:
                nodes.append({
                    "feature_index": node.feature_index,
                    "threshold": node.threshold,
                    "left": node.left,
                    "right": node.right,
                })
        trees.append({"nodes": nodes})
    return {
        "type": "gbm",
        "base_score_logit": m.base_score_logit,
        "feature_names": list(m.feature_names),
        "trees": trees,
    }


def gbm_from_dict(d: dict) -> GbmEnsemble:
    trees = []
    for td in d["trees"]:
        nodes = []
        for nd in td["nodes"]:
            if "leaf_value" in nd:
                nodes.append(TreeNode(leaf_value=float(nd["leaf_value"])))
            else:
                nodes.append(TreeNode(
                    feature_index=int(nd["feature_index"]),
                    threshold=float(nd["threshold"]),
                    left=int(nd["left"]),
                    right=int(nd["right"]),
                ))
        trees.append(DecisionTree(nodes=tuple(nodes)))
    return GbmEnsemble(
        trees=tuple(trees),
        base_score_logit=float(d["base_score_logit"]),
        feature_names=tuple(d["feature_names"]),
    )
