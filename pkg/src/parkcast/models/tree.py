"""Multi-output CART regression trees and a bagged random forest.

Trees are grown level by level. For each candidate feature, all samples of the
current frontier are grouped by node and sorted by feature value, and the
best split of every node is found from running sums in a single vectorized
pass. The split criterion is the summed squared deviation of the two children
over all outputs, which is minimized by maximizing

    |S_left|^2 / n_left + |S_right|^2 / n_right

where ``S`` are per-output target sums. Thresholds are midpoints between
consecutive distinct values; ties go to the lowest feature index, then the
lowest threshold.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

TIE_RTOL = 1e-10


@dataclass
class RegressionTree:
    feature: np.ndarray    # -1 for leaves
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray      # (nodes, outputs)
    n_samples: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def n_leaves(self) -> int:
        return int(np.count_nonzero(self.feature < 0))

    @property
    def depth(self) -> int:
        depth = np.zeros(self.n_nodes, dtype=int)
        for i in range(self.n_nodes):
            if self.feature[i] >= 0:
                depth[self.left[i]] = depth[self.right[i]] = depth[i] + 1
        return int(depth.max())

    def apply(self, X) -> np.ndarray:
        """Leaf index reached by every row of ``X``."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        node = np.zeros(len(X), dtype=np.int64)
        rows = np.arange(len(X))
        while True:
            feat = self.feature[node]
            internal = feat >= 0
            if not internal.any():
                return node
            r = rows[internal]
            n = node[internal]
            go_left = X[r, feat[internal]] <= self.threshold[n]
            node[internal] = np.where(go_left, self.left[n], self.right[n])

    def predict(self, X) -> np.ndarray:
        return self.value[self.apply(X)]


def _resolve_max_features(max_features, n_features) -> int:
    if max_features in (None, "all"):
        return n_features
    if max_features == "sqrt":
        return max(1, int(np.sqrt(n_features)))
    if max_features == "half":
        return max(1, n_features // 2)
    if isinstance(max_features, float) and 0 < max_features <= 1:
        return max(1, int(max_features * n_features))
    k = int(max_features)
    if not 1 <= k <= n_features:
        raise ValueError(f"max_features {max_features} outside [1, {n_features}]")
    return k


def _segment_sums(values, group, n_groups):
    """Sum rows of ``values`` per group id (groups need not be sorted)."""
    out = np.zeros((n_groups,) + values.shape[1:])
    np.add.at(out, group, values)
    return out


def tree_fit(X, Y, max_depth=None, min_samples_leaf=1, max_features=None,
             rng=None) -> RegressionTree:
    """Greedy CART fit; ``Y`` may be 1-D or (samples, outputs)."""
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    n, n_feat = X.shape
    if n < 1:
        raise ValueError("need at least one sample")
    k_feat = _resolve_max_features(max_features, n_feat)
    if k_feat < n_feat and rng is None:
        rng = np.random.default_rng(0)
    min_leaf = max(1, int(min_samples_leaf))
    depth_limit = np.inf if max_depth is None else int(max_depth)

    order = np.argsort(X, axis=0, kind="stable")
    node_of = np.zeros(n, dtype=np.int64)
    feature = [-1]
    threshold = [np.nan]
    left = [-1]
    right = [-1]
    value = [Y.mean(axis=0)]
    counts = [n]
    frontier = np.array([0])
    depth = 0

    while frontier.size and depth < depth_limit:
        # which frontier nodes may still split: enough samples and not pure
        sizes = np.asarray(counts)[frontier]
        by_node = np.argsort(node_of, kind="stable")
        srt_nodes = node_of[by_node]
        starts = np.searchsorted(srt_nodes, frontier, side="left")
        ends = np.searchsorted(srt_nodes, frontier, side="right")
        ys = Y[by_node]
        pure = np.array([np.all(ys[a:b] == ys[a]) for a, b in zip(starts, ends)])
        splittable = (sizes >= 2 * min_leaf) & ~pure
        nodes = frontier[splittable]
        if nodes.size == 0:
            break
        A = nodes.size
        compact = np.full(len(feature), -1, dtype=np.int64)
        compact[nodes] = np.arange(A)
        cnode = compact[node_of]
        node_n = np.asarray(counts)[nodes]

        if k_feat < n_feat:
            cand = np.zeros((A, n_feat), dtype=bool)
            for a in range(A):
                cand[a, rng.choice(n_feat, k_feat, replace=False)] = True
        else:
            cand = None

        best_gain = np.full(A, -np.inf)
        best_feat = np.full(A, -1, dtype=np.int64)
        best_thr = np.zeros(A)
        for f in range(n_feat):
            idx = order[:, f]
            g = cnode[idx]
            sel = g >= 0
            idx, g = idx[sel], g[sel]
            perm = np.argsort(g, kind="stable")
            idx, g = idx[perm], g[perm]
            m = idx.size
            xs = X[idx, f]
            cs = np.cumsum(Y[idx], axis=0)
            seg_start = np.searchsorted(g, np.arange(A), side="left")
            seg_end = np.r_[seg_start[1:], m]
            before = np.zeros((A, Y.shape[1]))
            has = seg_start > 0
            before[has] = cs[seg_start[has] - 1]
            total = cs[seg_end - 1] - before
            pos = np.arange(m)
            n_left = pos - seg_start[g] + 1
            n_right = node_n[g] - n_left
            s_left = cs - before[g]
            s_right = total[g] - s_left
            x_next = np.empty(m)
            x_next[:-1] = xs[1:]
            x_next[-1] = np.inf
            valid = (n_left >= min_leaf) & (n_right >= min_leaf) & (pos < seg_end[g] - 1)
            valid &= x_next > xs
            if cand is not None:
                valid &= cand[g, f]
            if not valid.any():
                continue
            with np.errstate(divide="ignore", invalid="ignore"):
                gain = (np.einsum("ij,ij->i", s_left, s_left) / n_left
                        + np.einsum("ij,ij->i", s_right, s_right) / n_right)
            gain = np.where(valid, gain, -np.inf)
            seg_max = np.maximum.reduceat(gain, seg_start)
            # gains within TIE_RTOL of the best count as ties: lowest threshold wins
            hit = np.flatnonzero(valid & (gain >= seg_max[g] - TIE_RTOL * np.abs(seg_max[g])))
            seg_ids, first = np.unique(g[hit], return_index=True)
            p = hit[first]
            cur = best_gain[seg_ids]
            better = np.isneginf(cur)
            better[~better] = seg_max[seg_ids][~better] > cur[~better] * (1 + TIE_RTOL)
            seg_ids, p = seg_ids[better], p[better]
            lo, hi = xs[p], x_next[p]
            thr = (lo + hi) / 2.0
            thr = np.where(thr < hi, thr, lo)
            best_gain[seg_ids] = seg_max[seg_ids]
            best_feat[seg_ids] = f
            best_thr[seg_ids] = thr

        split = best_feat >= 0
        if not split.any():
            break
        split_nodes = nodes[split]
        n_new = 2 * split_nodes.size
        first_child = len(feature)
        child_left = first_child + 2 * np.arange(split_nodes.size)
        for j, node in enumerate(split_nodes):
            feature[node] = int(best_feat[split][j])
            threshold[node] = float(best_thr[split][j])
            left[node] = int(child_left[j])
            right[node] = int(child_left[j] + 1)
        feature.extend([-1] * n_new)
        threshold.extend([np.nan] * n_new)
        left.extend([-1] * n_new)
        right.extend([-1] * n_new)

        # route samples of split nodes to their children
        split_compact = np.full(A, -1, dtype=np.int64)
        split_compact[np.flatnonzero(split)] = np.arange(split_nodes.size)
        moving = np.flatnonzero(cnode >= 0)
        moving = moving[split_compact[cnode[moving]] >= 0]
        sc = split_compact[cnode[moving]]
        go_left = X[moving, best_feat[split][sc]] <= best_thr[split][sc]
        node_of[moving] = child_left[sc] + (~go_left)

        child_ids = np.arange(first_child, first_child + n_new)
        rel = node_of[moving] - first_child
        child_n = np.bincount(rel, minlength=n_new)
        child_sum = _segment_sums(Y[moving], rel, n_new)
        value.extend(child_sum / child_n[:, None])
        counts.extend(child_n.tolist())
        frontier = child_ids
        depth += 1

    return RegressionTree(np.asarray(feature, dtype=np.int64), np.asarray(threshold, dtype=float),
                          np.asarray(left, dtype=np.int64), np.asarray(right, dtype=np.int64),
                          np.vstack(value), np.asarray(counts, dtype=np.int64))


def tree_predict(tree: RegressionTree, X) -> np.ndarray:
    return tree.predict(X)


class RandomForestRegressor:
    """Bagged multi-output CART ensemble; prediction is the mean tree output."""

    kind = "forest"

    def __init__(self, n_trees=50, max_depth=12, max_features="all", min_samples_leaf=1,
                 bootstrap=True, seed=0):
        if n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if max_depth is not None and max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        self.n_trees = int(n_trees)
        self.max_depth = max_depth
        self.max_features = max_features
        self.min_samples_leaf = min_samples_leaf
        self.bootstrap = bootstrap
        self.seed = seed
        self.trees = []

    def tree_seeds(self):
        return np.random.SeedSequence(self.seed).spawn(self.n_trees)

    def fit(self, X, Y, X_val=None, Y_val=None):
        self.trees = forest_fit(X, Y, self).trees
        return self

    def predict(self, X) -> np.ndarray:
        return forest_predict(self, X)

    def get_state(self):
        config = {"n_trees": self.n_trees, "max_depth": self.max_depth,
                  "max_features": self.max_features, "min_samples_leaf": self.min_samples_leaf,
                  "bootstrap": self.bootstrap, "seed": self.seed}
        sizes = np.array([t.n_nodes for t in self.trees], dtype=np.int64)
        offsets = np.concatenate([[0], np.cumsum(sizes)[:-1]])
        # child indices become global so that the concatenated arrays stay valid
        def glob(arr, off):
            return np.where(arr >= 0, arr + off, -1)
        arrays = {
            "sizes": sizes,
            "feature": np.concatenate([t.feature for t in self.trees]),
            "threshold": np.concatenate([t.threshold for t in self.trees]),
            "left": np.concatenate([glob(t.left, o) for t, o in zip(self.trees, offsets)]),
            "right": np.concatenate([glob(t.right, o) for t, o in zip(self.trees, offsets)]),
            # only leaf values are ever read, so internal rows are not stored
            "leaf_value": np.concatenate([t.value[t.left < 0] for t in self.trees]),
            "n_samples": np.concatenate([t.n_samples for t in self.trees]),
        }
        return config, arrays

    @classmethod
    def from_state(cls, config, arrays):
        model = cls(**config)
        offsets = np.concatenate([[0], np.cumsum(arrays["sizes"])])
        is_leaf = arrays["left"] < 0
        value = np.full((len(is_leaf), arrays["leaf_value"].shape[1]), np.nan)
        value[is_leaf] = arrays["leaf_value"]
        trees = []
        for lo, hi in zip(offsets[:-1], offsets[1:]):
            def loc(arr):
                a = arr[lo:hi]
                return np.where(a >= 0, a - lo, -1)
            trees.append(RegressionTree(arrays["feature"][lo:hi].copy(),
                                        arrays["threshold"][lo:hi].copy(),
                                        loc(arrays["left"]), loc(arrays["right"]),
                                        value[lo:hi].copy(),
                                        arrays["n_samples"][lo:hi].copy()))
        model.trees = trees
        return model


def forest_fit(X, Y, params: RandomForestRegressor) -> RandomForestRegressor:
    """Grow ``params.n_trees`` trees, each from its own seed spawned off the master seed."""
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    n = len(X)
    if n < 1:
        raise ValueError("need at least one sample")
    trees = []
    for ss in params.tree_seeds():
        rng = np.random.default_rng(ss)
        if params.bootstrap:
            idx = rng.integers(0, n, n)
            Xt, Yt = X[idx], Y[idx]
        else:
            Xt, Yt = X, Y
        trees.append(tree_fit(Xt, Yt, params.max_depth, params.min_samples_leaf,
                              params.max_features, rng))
    params.trees = trees
    return params


def forest_predict(forest: RandomForestRegressor, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    single = X.ndim == 1
    preds = np.stack([t.predict(np.atleast_2d(X)) for t in forest.trees])
    out = preds.mean(axis=0)
    return out[0] if single else out
