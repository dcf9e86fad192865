"""Histogram-based gradient boosted trees with pluggable gradients.

One tree grower serves three losses: squared error and log-loss for the
nuisance models, and the incomplete squared loss of the final stage (per-row
gradient/hessian callbacks supply the difference). Split gains and leaf values
follow the second-order (Newton) form ``value = -sum(g) / (sum(h) + floor)``;
a child must carry at least ``min_child_hessian`` of hessian mass, which for
the final stage means every leaf contains treated rows and the floor stays a
pure numerical guard.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit
from sklearn.base import BaseEstimator

from .validation import as_binary_vector, as_float_matrix, as_float_vector

MAX_BINS = 256
#: Additive guard on hessian mass in leaf values and split gains.
HESSIAN_FLOOR = 1e-6
MIN_GAIN = 1e-12


class FeatureBins:
    """Per-feature quantile thresholds mapping raw values to small int codes.

    ``code = searchsorted(thresholds, x, side="right")``, so bin code <= t is
    exactly the raw rule x < thresholds[t]; trees trained on codes therefore
    predict identically from raw values.
    """

    def __init__(self, max_bins: int = MAX_BINS):
        self.max_bins = max_bins

    def fit(self, x: np.ndarray) -> "FeatureBins":
        self.thresholds_ = []
        for j in range(x.shape[1]):
            uniq = np.unique(x[:, j])
            if uniq.size <= 1:
                thr = np.empty(0)
            elif uniq.size <= self.max_bins:
                thr = (uniq[:-1] + uniq[1:]) / 2.0
            else:
                qs = np.linspace(0.0, 1.0, self.max_bins + 1)[1:-1]
                thr = np.unique(np.quantile(x[:, j], qs))
            self.thresholds_.append(thr)
        return self

    def transform(self, x: np.ndarray) -> np.ndarray:
        """Return codes transposed to (n_features, n_rows) for fast column access."""
        codes = np.empty((x.shape[1], x.shape[0]), dtype=np.int32)
        for j, thr in enumerate(self.thresholds_):
            codes[j] = np.searchsorted(thr, x[:, j], side="right")
        return codes


@dataclass
class Tree:
    """Flat node-array encoding; leaves have feature == -1."""

    feature: np.ndarray       # int32, -1 on leaves
    bin_threshold: np.ndarray  # int32 (train-time code split)
    threshold: np.ndarray     # float (raw-value split, rule: x < threshold)
    left: np.ndarray          # int32
    right: np.ndarray        # int32
    value: np.ndarray        # float leaf values

    def apply_codes(self, codes_t: np.ndarray) -> np.ndarray:
        n = codes_t.shape[1]
        node = np.zeros(n, dtype=np.int32)
        while True:
            feat = self.feature[node]
            active = feat >= 0
            if not active.any():
                return node
            rows = np.nonzero(active)[0]
            cur = node[rows]
            go_left = codes_t[feat[rows], rows] <= self.bin_threshold[cur]
            node[rows] = np.where(go_left, self.left[cur], self.right[cur])

    def apply_raw(self, x: np.ndarray) -> np.ndarray:
        n = x.shape[0]
        node = np.zeros(n, dtype=np.int32)
        while True:
            feat = self.feature[node]
            active = feat >= 0
            if not active.any():
                return node
            rows = np.nonzero(active)[0]
            cur = node[rows]
            go_left = x[rows, feat[rows]] < self.threshold[cur]
            node[rows] = np.where(go_left, self.left[cur], self.right[cur])

    def predict_codes(self, codes_t: np.ndarray) -> np.ndarray:
        return self.value[self.apply_codes(codes_t)]

    def predict_raw(self, x: np.ndarray) -> np.ndarray:
        return self.value[self.apply_raw(x)]


def _grow_tree(codes_t: np.ndarray, bins: FeatureBins, grad: np.ndarray,
               hess: np.ndarray, rows: np.ndarray, max_depth: int,
               min_samples_leaf: int, min_child_hessian: float) -> Tree:
    feature, bin_thr, raw_thr, left, right, value = [], [], [], [], [], []

    def new_node():
        feature.append(-1)
        bin_thr.append(-1)
        raw_thr.append(np.nan)
        left.append(-1)
        right.append(-1)
        value.append(0.0)
        return len(feature) - 1

    def leaf_value(g_sum: float, h_sum: float) -> float:
        return -g_sum / (h_sum + HESSIAN_FLOOR)

    stack = [(new_node(), rows, 0)]
    n_features = codes_t.shape[0]
    while stack:
        node_id, node_rows, depth = stack.pop()
        g_sum = float(grad[node_rows].sum())
        h_sum = float(hess[node_rows].sum())
        if depth >= max_depth or node_rows.size < 2 * min_samples_leaf:
            value[node_id] = leaf_value(g_sum, h_sum)
            continue
        best_gain = MIN_GAIN
        best = None
        parent_score = g_sum * g_sum / (h_sum + HESSIAN_FLOOR)
        g_node = grad[node_rows]
        h_node = hess[node_rows]
        for f in range(n_features):
            thr = bins.thresholds_[f]
            if thr.size == 0:
                continue
            c = codes_t[f, node_rows]
            n_bins = thr.size + 1
            gh = np.bincount(c, weights=g_node, minlength=n_bins)
            hh = np.bincount(c, weights=h_node, minlength=n_bins)
            ch = np.bincount(c, minlength=n_bins)
            gl = np.cumsum(gh)[:-1]
            hl = np.cumsum(hh)[:-1]
            cl = np.cumsum(ch)[:-1]
            gr = g_sum - gl
            hr = h_sum - hl
            cr = node_rows.size - cl
            valid = (
                (cl >= min_samples_leaf) & (cr >= min_samples_leaf)
                & (hl >= min_child_hessian) & (hr >= min_child_hessian)
            )
            if not valid.any():
                continue
            gain = np.where(
                valid,
                gl * gl / (hl + HESSIAN_FLOOR) + gr * gr / (hr + HESSIAN_FLOOR)
                - parent_score,
                -np.inf,
            )
            t = int(np.argmax(gain))
            if gain[t] > best_gain:
                best_gain = float(gain[t])
                best = (f, t)
        if best is None:
            value[node_id] = leaf_value(g_sum, h_sum)
            continue
        f, t = best
        mask = codes_t[f, node_rows] <= t
        left_rows = node_rows[mask]
        right_rows = node_rows[~mask]
        feature[node_id] = f
        bin_thr[node_id] = t
        raw_thr[node_id] = float(bins.thresholds_[f][t])
        left[node_id] = new_node()
        right[node_id] = new_node()
        stack.append((right[node_id], right_rows, depth + 1))
        stack.append((left[node_id], left_rows, depth + 1))

    return Tree(
        feature=np.asarray(feature, dtype=np.int32),
        bin_threshold=np.asarray(bin_thr, dtype=np.int32),
        threshold=np.asarray(raw_thr, dtype=float),
        left=np.asarray(left, dtype=np.int32),
        right=np.asarray(right, dtype=np.int32),
        value=np.asarray(value, dtype=float),
    )


class BoostedTrees:
    """Generic Newton boosting over histogram trees.

    ``grad_hess(pred) -> (g, h)`` supplies per-row loss derivatives;
    ``loss(pred, rows) -> float`` evaluates the loss on a row subset (used for
    the training path and, when ``patience`` is set, early stopping on an
    internal validation split).
    """

    def __init__(self, n_rounds: int = 200, learning_rate: float = 0.1,
                 max_depth: int = 3, min_samples_leaf: int = 1,
                 min_child_hessian: float = 1.0, patience: int | None = None,
                 val_fraction: float = 0.1, seed: int = 0):
        self.n_rounds = n_rounds
        self.learning_rate = learning_rate
        self.max_depth = max_depth
        self.min_samples_leaf = min_samples_leaf
        self.min_child_hessian = min_child_hessian
        self.patience = patience
        self.val_fraction = val_fraction
        self.seed = seed

    def fit(self, x: np.ndarray, grad_hess, loss, init_value: float) -> "BoostedTrees":
        n = x.shape[0]
        self.bins_ = FeatureBins().fit(x)
        codes_t = self.bins_.transform(x)
        if self.patience is not None:
            rng = np.random.default_rng(self.seed)
            n_val = max(1, int(round(self.val_fraction * n)))
            perm = rng.permutation(n)
            val_rows, train_rows = np.sort(perm[:n_val]), np.sort(perm[n_val:])
        else:
            val_rows = np.empty(0, dtype=np.int64)
            train_rows = np.arange(n)
        pred = np.full(n, float(init_value))
        self.init_value_ = float(init_value)
        self.trees_ = []
        self.train_loss_path_ = []
        best_val, best_round, stale = np.inf, 0, 0
        for _ in range(self.n_rounds):
            g, h = grad_hess(pred)
            tree = _grow_tree(
                codes_t, self.bins_, g, h, train_rows, self.max_depth,
                self.min_samples_leaf, self.min_child_hessian,
            )
            pred = pred + self.learning_rate * tree.predict_codes(codes_t)
            self.trees_.append(tree)
            self.train_loss_path_.append(loss(pred, train_rows))
            if self.patience is not None:
                val_loss = loss(pred, val_rows)
                if val_loss < best_val - 1e-12:
                    best_val, best_round, stale = val_loss, len(self.trees_), 0
                else:
                    stale += 1
                    if stale >= self.patience:
                        self.trees_ = self.trees_[:best_round]
                        self.train_loss_path_ = self.train_loss_path_[:best_round]
                        break
        return self

    def raw_predict(self, x: np.ndarray) -> np.ndarray:
        pred = np.full(x.shape[0], self.init_value_)
        for tree in self.trees_:
            pred += self.learning_rate * tree.predict_raw(x)
        return pred


class GradientBoostedRegressor(BaseEstimator):
    """Squared-error boosting: per-row g = pred - y, h = 1.

    Each round's leaf value is the (guarded) mean residual, so the training
    loss is non-increasing round over round for learning rates in (0, 1].
    """

    def __init__(self, n_rounds: int = 200, learning_rate: float = 0.1,
                 max_depth: int = 3, min_samples_leaf: int = 1,
                 patience: int | None = None, seed: int = 0):
        self.n_rounds = n_rounds
        self.learning_rate = learning_rate
        self.max_depth = max_depth
        self.min_samples_leaf = min_samples_leaf
        self.patience = patience
        self.seed = seed

    def fit(self, features, labels):
        x = as_float_matrix(features, "features")
        y = as_float_vector(labels, "labels")
        if x.shape[0] != y.shape[0]:
            raise ValueError("features and labels are misaligned")
        if x.shape[0] < 2:
            raise ValueError("need at least two rows to fit")

        def grad_hess(pred):
            return pred - y, np.ones_like(pred)

        def loss(pred, rows):
            return float(np.mean((pred[rows] - y[rows]) ** 2))

        self.booster_ = BoostedTrees(
            n_rounds=self.n_rounds, learning_rate=self.learning_rate,
            max_depth=self.max_depth, min_samples_leaf=self.min_samples_leaf,
            patience=self.patience, seed=self.seed,
        ).fit(x, grad_hess, loss, init_value=float(y.mean()))
        self.train_loss_path_ = self.booster_.train_loss_path_
        return self

    def predict(self, features) -> np.ndarray:
        x = as_float_matrix(features, "features")
        return self.booster_.raw_predict(x)


class GradientBoostedClassifier(BaseEstimator):
    """Log-loss boosting on the logit scale: g = p - y, h = p(1 - p)."""

    def __init__(self, n_rounds: int = 200, learning_rate: float = 0.1,
                 max_depth: int = 3, min_samples_leaf: int = 1,
                 patience: int | None = None, seed: int = 0):
        self.n_rounds = n_rounds
        self.learning_rate = learning_rate
        self.max_depth = max_depth
        self.min_samples_leaf = min_samples_leaf
        self.patience = patience
        self.seed = seed

    def fit(self, features, labels):
        x = as_float_matrix(features, "features")
        y = as_binary_vector(labels, "labels").astype(float)
        if x.shape[0] != y.shape[0]:
            raise ValueError("features and labels are misaligned")
        if y.min() == y.max():
            raise ValueError("labels contain a single class; cannot fit a propensity")
        base = float(y.mean())
        init = float(np.log(base / (1.0 - base)))

        def grad_hess(pred):
            p = expit(pred)
            return p - y, p * (1.0 - p)

        def loss(pred, rows):
            z = pred[rows]
            return float(np.mean(np.logaddexp(0.0, z) - y[rows] * z))

        self.booster_ = BoostedTrees(
            n_rounds=self.n_rounds, learning_rate=self.learning_rate,
            max_depth=self.max_depth, min_samples_leaf=self.min_samples_leaf,
            patience=self.patience, seed=self.seed,
        ).fit(x, grad_hess, loss, init_value=init)
        self.train_loss_path_ = self.booster_.train_loss_path_
        return self

    def decision_function(self, features) -> np.ndarray:
        x = as_float_matrix(features, "features")
        return self.booster_.raw_predict(x)

    def predict_proba(self, features) -> np.ndarray:
        """Probability of the positive class (unclipped)."""
        return expit(self.decision_function(features))
