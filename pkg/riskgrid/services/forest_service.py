"""
Random forest service
- Regression trees grown by recursive binary splitting on residual sum of squares
- Bootstrap forests with m features drawn per split, predictions averaged over trees
- Impurity (RSS-decrease) importance
- Standalone CART diagnostics: weakest-link cost-complexity pruning, text dump
"""

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
import pandas as pd

from ..utils import constants
from ..utils.errors import ParameterError, SchemaMismatchError
from ..utils.parallel import run_parallel, stream_rng

logger = logging.getLogger(__name__)

LEAF = -1


@dataclass
class Tree:
    """Flat node arrays in preorder; feature == -1 marks a leaf"""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    n_node: np.ndarray
    rss: np.ndarray
    n_features: int
    importance: np.ndarray

    @property
    def n_nodes(self):
        return len(self.feature)

    @property
    def is_leaf(self):
        return self.feature == LEAF

    @property
    def n_leaves(self):
        return int(np.count_nonzero(self.is_leaf))

    def apply(self, X):
        """Leaf id reached by each row (x <= threshold goes left)"""
        X = np.asarray(X, dtype=float)
        node = np.zeros(len(X), dtype=np.int64)
        active = ~self.is_leaf[node]
        while np.any(active):
            rows = np.flatnonzero(active)
            current = node[rows]
            go_left = X[rows, self.feature[current]] <= self.threshold[current]
            node[rows] = np.where(go_left, self.left[current], self.right[current])
            active = ~self.is_leaf[node]
        return node

    def predict(self, X):
        return self.value[self.apply(X)]


@dataclass
class Forest:
    trees: List[Tree]
    m: int
    min_node: int
    seed: int
    bootstrap: bool
    importance: np.ndarray
    names: List[str] = field(default_factory=list)

    @property
    def B(self):
        return len(self.trees)

    @property
    def n_features(self):
        return len(self.names)

    def metadata(self):
        return {
            'n_trees': self.B,
            'm': self.m,
            'min_node': self.min_node,
            'seed': self.seed,
            'bootstrap': self.bootstrap,
            'n_features': self.n_features,
        }


def _best_split(X, y, idx, features, min_node):
    """Lowest total child RSS over (feature, midpoint) pairs; ties keep the earlier pair"""
    best = (np.inf, LEAF, 0.0)
    n = len(idx)
    yc = y[idx] - y[idx].mean()
    for f in features:
        x = X[idx, f]
        order = np.argsort(x, kind='stable')
        xs, ys = x[order], yc[order]
        csum = np.cumsum(ys)
        csq = np.cumsum(ys * ys)
        total, total_sq = csum[-1], csq[-1]

        sizes = np.arange(1, n)
        valid = (xs[1:] > xs[:-1]) & (sizes >= min_node) & (n - sizes >= min_node)
        if not np.any(valid):
            continue
        left_sum, left_sq = csum[:-1], csq[:-1]
        right_sum, right_sq = total - left_sum, total_sq - left_sq
        rss = (left_sq - left_sum ** 2 / sizes) + (right_sq - right_sum ** 2 / (n - sizes))
        rss = np.where(valid, rss, np.inf)
        pos = int(np.argmin(rss))
        if rss[pos] < best[0]:
            best = (float(rss[pos]), int(f), float((xs[pos] + xs[pos + 1]) / 2.0))
    return best


def grow_tree(X, y, row_indices, m, min_node, rng):
    """
    Grow one unpruned regression tree on the given (possibly repeated) rows.

    A node becomes a leaf when it has fewer than 2*min_node rows, is pure, or
    no admissible split lowers its RSS.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    row_indices = np.asarray(row_indices, dtype=np.int64)
    p = X.shape[1]
    if len(row_indices) == 0:
        raise ParameterError("grow_tree needs at least one row", stage='forest')
    m = max(1, min(int(m), p)) if p else 0

    feature, threshold, left, right, value, n_node, rss_list = [], [], [], [], [], [], []
    importance = np.zeros(p)
    stack = [(row_indices, -1, False)]
    while stack:
        idx, parent, is_left = stack.pop()
        node_id = len(feature)
        if parent >= 0:
            if is_left:
                left[parent] = node_id
            else:
                right[parent] = node_id

        ys = y[idx]
        mean = float(ys.mean())
        node_rss = float(np.sum((ys - mean) ** 2))
        feature.append(LEAF)
        threshold.append(0.0)
        left.append(LEAF)
        right.append(LEAF)
        value.append(mean)
        n_node.append(len(idx))
        rss_list.append(node_rss)

        if len(idx) < 2 * min_node or np.ptp(ys) == 0 or p == 0:
            continue
        features = np.arange(p) if m >= p else np.sort(rng.choice(p, size=m, replace=False))
        split_rss, f, thr = _best_split(X, y, idx, features, min_node)
        if f == LEAF or not split_rss < node_rss - 1e-12 * max(node_rss, 1.0):
            continue

        feature[node_id] = f
        threshold[node_id] = thr
        importance[f] += node_rss - split_rss
        goes_left = X[idx, f] <= thr
        stack.append((idx[~goes_left], node_id, False))
        stack.append((idx[goes_left], node_id, True))

    return Tree(
        feature=np.array(feature, dtype=np.int64),
        threshold=np.array(threshold, dtype=float),
        left=np.array(left, dtype=np.int64),
        right=np.array(right, dtype=np.int64),
        value=np.array(value, dtype=float),
        n_node=np.array(n_node, dtype=np.int64),
        rss=np.array(rss_list, dtype=float),
        n_features=p,
        importance=importance,
    )


def default_m(p):
    return max(1, int(math.ceil(math.sqrt(p)))) if p else 0


def fit_forest(X, y, B=constants.DEFAULT_N_TREES, m=None, min_node=constants.DEFAULT_MIN_NODE,
               seed=0, names=None, bootstrap=True, threads=None):
    """B trees on n-row bootstrap samples, each with its own (seed, tree) random stream"""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, p = X.shape
    if B < 1:
        raise ParameterError(f"B must be >= 1, got {B}", stage='forest')
    if n < 2:
        raise ParameterError("A forest needs at least 2 rows", stage='forest')
    m = default_m(p) if m is None else int(m)
    if p and not 1 <= m <= p:
        raise ParameterError(f"m must lie in [1, {p}], got {m}", stage='forest')
    names = list(names) if names is not None else [f"x{j}" for j in range(p)]

    def grow(b):
        rng = stream_rng(seed, b)
        rows = rng.integers(0, n, size=n) if bootstrap else np.arange(n)
        return grow_tree(X, y, rows, m, min_node, rng)

    trees = run_parallel(grow, range(B), threads)
    importance = np.mean([tree.importance for tree in trees], axis=0) if p else np.zeros(0)
    logger.info(f"Random forest: B={B}, m={m}, min_node={min_node}, "
                f"mean leaves per tree {np.mean([t.n_leaves for t in trees]):.1f}")
    return Forest(trees=trees, m=m, min_node=int(min_node), seed=int(seed), bootstrap=bool(bootstrap),
                  importance=importance, names=names)


def predict_forest(forest, X):
    """Per-row mean of the tree predictions"""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != forest.n_features:
        raise SchemaMismatchError(f"Expected {forest.n_features} feature columns, got shape {X.shape}")
    return np.mean([tree.predict(X) for tree in forest.trees], axis=0)


def forest_importance(forest):
    """Features by mean RSS decrease, descending; ties broken by name"""
    ranked = sorted(zip(forest.names, forest.importance), key=lambda item: (-item[1], item[0]))
    return [(name, float(score), rank) for rank, (name, score) in enumerate(ranked, start=1)]


def importance_frame(forest):
    rows = forest_importance(forest)
    return pd.DataFrame(rows, columns=['feature', 'importance', 'rank'])


def fit_cart(X, y, min_node=1):
    """Deterministic CART: all rows, every feature tried at every split"""
    X = np.asarray(X, dtype=float)
    return grow_tree(X, y, np.arange(len(X)), X.shape[1], min_node, np.random.default_rng(0))


def _subtree_stats(tree, collapsed):
    """Leaf count and leaf RSS of the subtree below each node, honouring collapsed nodes"""
    leaves = np.zeros(tree.n_nodes, dtype=np.int64)
    leaf_rss = np.zeros(tree.n_nodes)
    # preorder ids: children always have larger ids than their parent
    for node in range(tree.n_nodes - 1, -1, -1):
        if tree.is_leaf[node] or collapsed[node]:
            leaves[node] = 1
            leaf_rss[node] = tree.rss[node]
        else:
            leaves[node] = leaves[tree.left[node]] + leaves[tree.right[node]]
            leaf_rss[node] = leaf_rss[tree.left[node]] + leaf_rss[tree.right[node]]
    return leaves, leaf_rss


def _reachable_internal(tree, collapsed):
    out, stack = [], [0]
    while stack:
        node = stack.pop()
        if tree.is_leaf[node] or collapsed[node]:
            continue
        out.append(node)
        stack.extend([tree.left[node], tree.right[node]])
    return out


def pruning_path(tree):
    """Weakest-link sequence of (alpha, n_leaves, total leaf RSS), starting from the full tree"""
    collapsed = np.zeros(tree.n_nodes, dtype=bool)
    leaves, leaf_rss = _subtree_stats(tree, collapsed)
    path = [(0.0, int(leaves[0]), float(leaf_rss[0]))]
    while True:
        internal = _reachable_internal(tree, collapsed)
        if not internal:
            break
        g = np.array([(tree.rss[t] - leaf_rss[t]) / (leaves[t] - 1) for t in internal])
        weakest = g.min()
        for t, gt in zip(internal, g):
            if gt <= weakest + 1e-12 * max(abs(weakest), 1.0):
                collapsed[t] = True
        leaves, leaf_rss = _subtree_stats(tree, collapsed)
        path.append((float(max(weakest, 0.0)), int(leaves[0]), float(leaf_rss[0])))
    return path


def cost_complexity_prune(tree, alpha):
    """Smallest subtree minimizing leaf RSS + alpha * |leaves| (weakest-link pruning)"""
    if alpha < 0:
        raise ParameterError("alpha must be non-negative", stage='forest')
    collapsed = np.zeros(tree.n_nodes, dtype=bool)
    while True:
        leaves, leaf_rss = _subtree_stats(tree, collapsed)
        internal = _reachable_internal(tree, collapsed)
        if not internal:
            break
        g = np.array([(tree.rss[t] - leaf_rss[t]) / (leaves[t] - 1) for t in internal])
        weakest = g.min()
        if weakest > alpha:
            break
        for t, gt in zip(internal, g):
            if gt <= weakest + 1e-12 * max(abs(weakest), 1.0):
                collapsed[t] = True
    return _rebuild(tree, collapsed)


def _rebuild(tree, collapsed):
    """Copy the reachable part of a tree, turning collapsed nodes into leaves"""
    feature, threshold, left, right, value, n_node, rss = [], [], [], [], [], [], []
    importance = np.zeros(tree.n_features)
    stack = [(0, -1, False)]
    while stack:
        old, parent, is_left = stack.pop()
        new = len(feature)
        if parent >= 0:
            if is_left:
                left[parent] = new
            else:
                right[parent] = new
        leaf = tree.is_leaf[old] or collapsed[old]
        feature.append(LEAF if leaf else int(tree.feature[old]))
        threshold.append(0.0 if leaf else float(tree.threshold[old]))
        left.append(LEAF)
        right.append(LEAF)
        value.append(float(tree.value[old]))
        n_node.append(int(tree.n_node[old]))
        rss.append(float(tree.rss[old]))
        if not leaf:
            l_old, r_old = tree.left[old], tree.right[old]
            importance[tree.feature[old]] += tree.rss[old] - tree.rss[l_old] - tree.rss[r_old]
            stack.append((r_old, new, False))
            stack.append((l_old, new, True))
    return Tree(
        feature=np.array(feature, dtype=np.int64), threshold=np.array(threshold),
        left=np.array(left, dtype=np.int64), right=np.array(right, dtype=np.int64),
        value=np.array(value), n_node=np.array(n_node, dtype=np.int64), rss=np.array(rss),
        n_features=tree.n_features, importance=importance,
    )


def dump_tree(tree, names: Optional[List[str]] = None):
    """Indented text rendering for audit"""
    names = names or [f"x{j}" for j in range(tree.n_features)]
    lines = []
    stack = [(0, 0)]
    while stack:
        node, depth = stack.pop()
        pad = '  ' * depth
        if tree.is_leaf[node]:
            lines.append(f"{pad}leaf value={tree.value[node]:.6g} n={tree.n_node[node]}")
            continue
        lines.append(f"{pad}{names[tree.feature[node]]} <= {tree.threshold[node]:.6g} "
                     f"(n={tree.n_node[node]}, rss={tree.rss[node]:.6g})")
        stack.append((tree.right[node], depth + 1))
        stack.append((tree.left[node], depth + 1))
    return '\n'.join(lines) + '\n'
