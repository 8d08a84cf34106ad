"""Decision-tree machinery shared by the boosted and forest ensembles.

Trees are grown greedily with exact split enumeration over the sorted unique
values of each candidate feature (no histogram approximation).  Missing
numeric cells are NaN in the ordinal encoding; at every internal node the rows
with a missing value are routed to whichever side scores better, and that
direction is stored for prediction time.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..errors import DataError
from ..util import logit, rng_for, sigmoid

log = logging.getLogger(__name__)

_LEAF = -1
_PROB_EPS = 1e-15


@dataclass
class Tree:
    """Flat-array binary tree; node 0 is the root, feature == -1 marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    miss_left: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    def apply(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(X.shape[0], dtype=np.int64)
        while True:
            feat = self.feature[node]
            active = np.flatnonzero(feat != _LEAF)
            if active.size == 0:
                break
            nd = node[active]
            v = X[active, self.feature[nd]]
            go_left = np.where(np.isnan(v), self.miss_left[nd], v < self.threshold[nd])
            node[active] = np.where(go_left, self.left[nd], self.right[nd])
        return self.value[node]

    @property
    def n_nodes(self) -> int:
        return int(self.feature.shape[0])

    def to_doc(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "miss_left": self.miss_left.astype(int).tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
        }

    @staticmethod
    def from_doc(doc: dict) -> "Tree":
        return Tree(
            feature=np.asarray(doc["feature"], dtype=np.int64),
            threshold=np.asarray(doc["threshold"], dtype=np.float64),
            miss_left=np.asarray(doc["miss_left"], dtype=bool),
            left=np.asarray(doc["left"], dtype=np.int64),
            right=np.asarray(doc["right"], dtype=np.int64),
            value=np.asarray(doc["value"], dtype=np.float64),
        )


class _Builder:
    """Accumulates nodes during growth; children patched in as they are built."""

    def __init__(self):
        self.feature: list[int] = []
        self.threshold: list[float] = []
        self.miss_left: list[bool] = []
        self.left: list[int] = []
        self.right: list[int] = []
        self.value: list[float] = []

    def add(self, value: float) -> int:
        self.feature.append(_LEAF)
        self.threshold.append(0.0)
        self.miss_left.append(True)
        self.left.append(_LEAF)
        self.right.append(_LEAF)
        self.value.append(value)
        return len(self.feature) - 1

    def split(self, node: int, feature: int, threshold: float, miss_left: bool, left: int, right: int) -> None:
        self.feature[node] = feature
        self.threshold[node] = threshold
        self.miss_left[node] = miss_left
        self.left[node] = left
        self.right[node] = right

    def build(self) -> Tree:
        return Tree(
            feature=np.asarray(self.feature, dtype=np.int64),
            threshold=np.asarray(self.threshold, dtype=np.float64),
            miss_left=np.asarray(self.miss_left, dtype=bool),
            left=np.asarray(self.left, dtype=np.int64),
            right=np.asarray(self.right, dtype=np.int64),
            value=np.asarray(self.value, dtype=np.float64),
        )


def _gain_terms(gl, hl, gr, hr, lam):
    dl = hl + lam
    dr = hr + lam
    with np.errstate(divide="ignore", invalid="ignore"):
        score = np.where(dl > 0, gl * gl / dl, -np.inf) + np.where(dr > 0, gr * gr / dr, -np.inf)
    return score


def _best_newton_split_cols(Xn, gn, hn, lam, min_leaf, parent_score):
    """Best (gain, column, threshold, miss_left) across all columns of Xn.

    Columns are sorted in one call (NaN sorts last); gain is measured against
    the unsplit node as 0.5 * (score_children - score_parent).
    """
    m, d = Xn.shape
    order = np.argsort(Xn, axis=0, kind="stable")
    g_total = float(gn.sum())
    h_total = float(hn.sum())

    best = None
    for c in range(d):
        o = order[:, c]
        sv = Xn[o, c]
        n_miss = int(np.isnan(sv).sum()) if np.isnan(sv[-1]) else 0
        n_present = m - n_miss
        if n_present < 2:
            continue
        svp = sv[:n_present]
        boundaries = np.flatnonzero(svp[:-1] != svp[1:])
        if boundaries.size == 0:
            continue
        sg = gn[o]
        sh = hn[o]
        cg = np.cumsum(sg[:n_present])
        ch = np.cumsum(sh[:n_present])
        g_miss = g_total - float(cg[-1])
        h_miss = h_total - float(ch[-1])

        gl0 = cg[boundaries]
        hl0 = ch[boundaries]
        nl0 = boundaries + 1

        for miss_left in (True, False):
            gl = gl0 + (g_miss if miss_left else 0.0)
            hl = hl0 + (h_miss if miss_left else 0.0)
            nl = nl0 + (n_miss if miss_left else 0)
            gr = g_total - gl
            hr = h_total - hl
            nr = m - nl
            score = _gain_terms(gl, hl, gr, hr, lam)
            score = np.where((nl >= min_leaf) & (nr >= min_leaf), score, -np.inf)
            i = int(np.argmax(score))
            if not np.isfinite(score[i]):
                continue
            gain = 0.5 * (float(score[i]) - parent_score)
            if gain > 1e-12 and (best is None or gain > best[0]):
                b = boundaries[i]
                best = (gain, c, float((svp[b] + svp[b + 1]) / 2.0), miss_left)
            if n_miss == 0:
                break  # both directions identical without missing rows
    return best


def grow_newton_tree(X, g, h, *, max_depth, lam, min_leaf, feature_indices=None) -> Tree:
    """Greedy second-order tree on gradients/hessians with logistic-loss leaves.

    Leaf weight is -sum(g)/(sum(h)+lam).  Splits are accepted only with
    strictly positive gain.
    """
    builder = _Builder()
    features = np.arange(X.shape[1]) if feature_indices is None else np.asarray(feature_indices)
    Xsub = X if feature_indices is None else X[:, features]

    def grow(idx, depth):
        gn = g[idx]
        hn = h[idx]
        gs = float(gn.sum())
        hs = float(hn.sum())
        denom = hs + lam
        node = builder.add(-gs / denom if denom > 0 else 0.0)
        if depth >= max_depth or idx.size < 2 * min_leaf:
            return node
        parent_score = gs * gs / denom if denom > 0 else 0.0
        best = _best_newton_split_cols(Xsub[idx], gn, hn, lam, min_leaf, parent_score)
        if best is None:
            return node
        _, c, threshold, miss_left = best
        j = int(features[c])
        v = X[idx, j]
        go_left = np.where(np.isnan(v), miss_left, v < threshold)
        left = grow(idx[go_left], depth + 1)
        right = grow(idx[~go_left], depth + 1)
        builder.split(node, j, threshold, miss_left, left, right)
        return node

    grow(np.arange(X.shape[0]), 0)
    return builder.build()


def _weighted_gini(pos_l, n_l, pos_r, n_r):
    pos_l, n_l = np.asarray(pos_l, dtype=np.float64), np.asarray(n_l, dtype=np.float64)
    pos_r, n_r = np.asarray(pos_r, dtype=np.float64), np.asarray(n_r, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        pl = np.where(n_l > 0, pos_l / np.maximum(n_l, 1.0), 0.0)
        pr = np.where(n_r > 0, pos_r / np.maximum(n_r, 1.0), 0.0)
    return n_l * 2.0 * pl * (1.0 - pl) + n_r * 2.0 * pr * (1.0 - pr)


def _best_gini_split_exact(Xcol, y, min_leaf):
    miss = np.isnan(Xcol)
    n_miss = int(miss.sum())
    vp = Xcol[~miss]
    if vp.size < 2:
        return None
    order = np.argsort(vp, kind="stable")
    sv = vp[order]
    boundaries = np.flatnonzero(sv[:-1] != sv[1:])
    if boundaries.size == 0:
        return None
    yp = y[~miss][order].astype(np.float64)
    cpos = np.cumsum(yp)
    n = Xcol.shape[0]
    pos_total = float(y.sum())
    pos_miss = float(y[miss].sum()) if n_miss else 0.0

    pos_l0 = cpos[boundaries]
    n_l0 = (boundaries + 1).astype(np.float64)

    best = None
    for miss_left in (True, False):
        pos_l = pos_l0 + (pos_miss if miss_left else 0.0)
        n_l = n_l0 + (n_miss if miss_left else 0.0)
        pos_r = pos_total - pos_l
        n_r = n - n_l
        cost = _weighted_gini(pos_l, n_l, pos_r, n_r)
        valid = (n_l >= min_leaf) & (n_r >= min_leaf)
        cost = np.where(valid, cost, np.inf)
        i = int(np.argmin(cost))
        if not np.isfinite(cost[i]):
            continue
        if best is None or cost[i] < best[0]:
            b = boundaries[i]
            best = (float(cost[i]), float((sv[b] + sv[b + 1]) / 2.0), miss_left)
    return best


def _gini_cost_at(Xcol, y, threshold, min_leaf):
    miss = np.isnan(Xcol)
    out = []
    for miss_left in (True, False):
        go_left = np.where(miss, miss_left, Xcol < threshold)
        n_l = float(go_left.sum())
        n_r = float(Xcol.shape[0] - n_l)
        if n_l < min_leaf or n_r < min_leaf:
            out.append((np.inf, miss_left))
            continue
        pos_l = float(y[go_left].sum())
        pos_r = float(y.sum()) - pos_l
        out.append((float(_weighted_gini(pos_l, n_l, pos_r, n_r)), miss_left))
    return min(out, key=lambda t: t[0])


def grow_gini_tree(X, y, rng, *, max_depth, min_leaf, mtry, random_threshold) -> Tree:
    """Classification tree with Laplace-smoothed leaf fractions.

    random_threshold=False enumerates exact splits (random forest);
    random_threshold=True draws one uniform threshold per candidate feature
    (extremely randomized trees).
    """
    builder = _Builder()
    n_features = X.shape[1]
    mtry = max(1, min(mtry, n_features))

    def grow(idx, depth):
        yn = y[idx]
        pos = float(yn.sum())
        node = builder.add((pos + 1.0) / (idx.size + 2.0))  # Laplace-smoothed fraction
        if depth >= max_depth or idx.size < 2 * min_leaf or pos == 0 or pos == idx.size:
            return node
        candidates = rng.choice(n_features, size=mtry, replace=False) if mtry < n_features else np.arange(n_features)
        parent_cost = _weighted_gini(pos, float(idx.size), 0.0, 0.0)
        best = None
        for j in candidates:
            col = X[idx, j]
            if random_threshold:
                present = col[~np.isnan(col)]
                if present.size < 2:
                    continue
                lo, hi = float(present.min()), float(present.max())
                if lo == hi:
                    continue
                threshold = float(rng.uniform(lo, hi))
                cost, miss_left = _gini_cost_at(col, yn, threshold, min_leaf)
                if not np.isfinite(cost):
                    continue
                cand = (cost, int(j), threshold, miss_left)
            else:
                found = _best_gini_split_exact(col, yn, min_leaf)
                if found is None:
                    continue
                cand = (found[0], int(j), found[1], found[2])
            if cand[0] < parent_cost - 1e-12 and (best is None or cand[0] < best[0]):
                best = cand
        if best is None:
            return node
        _, j, threshold, miss_left = best
        v = X[idx, j]
        go_left = np.where(np.isnan(v), miss_left, v < threshold)
        left = grow(idx[go_left], depth + 1)
        right = grow(idx[~go_left], depth + 1)
        builder.split(node, j, threshold, miss_left, left, right)
        return node

    grow(np.arange(X.shape[0]), 0)
    return builder.build()


# --- gradient boosted trees ----------------------------------------------------

@dataclass
class GbtModel:
    base_score: float
    learning_rate: float
    trees: list[Tree]
    n_features: int
    params: dict = field(default_factory=dict)
    train_losses: list[float] = field(default_factory=list)

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise DataError(f"expected {self.n_features} columns, got {X.shape}")
        score = np.full(X.shape[0], self.base_score, dtype=np.float64)
        for tree in self.trees:
            score += self.learning_rate * tree.apply(X)
        return np.clip(sigmoid(score), _PROB_EPS, 1.0 - _PROB_EPS)

    def to_doc(self) -> dict:
        return {
            "kind": "gbt",
            "base_score": self.base_score,
            "learning_rate": self.learning_rate,
            "n_features": self.n_features,
            "params": dict(self.params),
            "trees": [t.to_doc() for t in self.trees],
        }

    @staticmethod
    def from_doc(doc: dict) -> "GbtModel":
        return GbtModel(
            base_score=float(doc["base_score"]),
            learning_rate=float(doc["learning_rate"]),
            trees=[Tree.from_doc(t) for t in doc["trees"]],
            n_features=int(doc["n_features"]),
            params=dict(doc.get("params", {})),
        )


def _train_log_loss(p, y):
    p = np.clip(p, _PROB_EPS, 1.0 - _PROB_EPS)
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)))


def fit_gbt(X, y, params: dict, seed: int) -> GbtModel:
    """Second-order boosting with logistic loss.

    Per round: g = p - y, h = p(1-p); each tree is grown to max_depth with
    exact split enumeration; leaves apply the Newton step -G/(H+lambda).
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n, d = X.shape
    rounds = int(params["trees"])
    lr = float(params["learning_rate"])
    lam = float(params["l2_lambda"])
    max_depth = int(params["max_depth"])
    min_leaf = int(params["min_leaf"])
    subsample = params.get("feature_subsample")

    prior = float(np.clip(y.mean() if n else 0.5, 1e-6, 1.0 - 1e-6))
    base = float(params["base_score"]) if params.get("base_score") is not None else logit(prior)

    model = GbtModel(base_score=base, learning_rate=lr, trees=[], n_features=d, params=dict(params))
    if n == 0 or len(np.unique(y)) < 2:
        log.warning("gbt: single-class training data; model degenerates to base score")
        return model

    score = np.full(n, base, dtype=np.float64)
    for t in range(rounds):
        p = sigmoid(score)
        g = p - y
        h = p * (1.0 - p)
        if subsample is not None and float(subsample) < 1.0:
            rng = rng_for(seed, t)
            m = max(1, int(round(float(subsample) * d)))
            feature_indices = np.sort(rng.choice(d, size=m, replace=False))
        else:
            feature_indices = None
        tree = grow_newton_tree(
            X, g, h, max_depth=max_depth, lam=lam, min_leaf=min_leaf, feature_indices=feature_indices
        )
        score += lr * tree.apply(X)
        model.trees.append(tree)
        model.train_losses.append(_train_log_loss(sigmoid(score), y))
    return model


# --- forests --------------------------------------------------------------------

@dataclass
class ForestModel:
    variant: str  # "random_forest" | "extra_trees"
    trees: list[Tree]
    n_features: int
    params: dict = field(default_factory=dict)

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise DataError(f"expected {self.n_features} columns, got {X.shape}")
        outputs = np.stack([t.apply(X) for t in self.trees], axis=0)
        # Sorted summation keeps the mean exactly invariant to tree order.
        outputs.sort(axis=0)
        return outputs.sum(axis=0) / len(self.trees)

    def to_doc(self) -> dict:
        return {
            "kind": self.variant,
            "n_features": self.n_features,
            "params": dict(self.params),
            "trees": [t.to_doc() for t in self.trees],
        }

    @staticmethod
    def from_doc(doc: dict) -> "ForestModel":
        return ForestModel(
            variant=doc["kind"],
            trees=[Tree.from_doc(t) for t in doc["trees"]],
            n_features=int(doc["n_features"]),
            params=dict(doc.get("params", {})),
        )


def fit_forest(X, y, params: dict, seed: int, variant: str) -> ForestModel:
    """Bagged Gini trees (random_forest) or extremely randomized trees.

    Each tree draws from its own RNG stream derived from (seed, tree index)
    so the fit is independent of scheduling.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int8)
    n, d = X.shape
    n_trees = int(params["trees"])
    max_depth = int(params["max_depth"])
    min_leaf = int(params["min_leaf"])
    subsample = params.get("feature_subsample")
    mtry = max(1, int(round(float(subsample) * d))) if subsample is not None else max(1, int(round(np.sqrt(d))))
    bootstrap = variant == "random_forest"
    random_threshold = variant == "extra_trees"

    if len(np.unique(y)) < 2:
        log.warning("%s: single-class training data; leaves collapse to the prior", variant)

    trees = []
    for t in range(n_trees):
        rng = rng_for(seed, t)
        rows = rng.integers(0, n, size=n) if bootstrap else np.arange(n)
        tree = grow_gini_tree(
            X[rows],
            y[rows],
            rng,
            max_depth=max_depth,
            min_leaf=min_leaf,
            mtry=mtry,
            random_threshold=random_threshold,
        )
        trees.append(tree)
    return ForestModel(variant=variant, trees=trees, n_features=d, params=dict(params))
