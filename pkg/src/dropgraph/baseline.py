"""Tabular random-forest baseline: Gini decision trees on bootstrap
samples with sqrt(D) feature subsampling, stratified 5-fold CV, and a
small random hyperparameter search.

Tree growth is compiled with numba; split ties break toward the lowest
feature index, then the lowest threshold, so identical seeds give
identical forests.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit

from . import metrics


class BaselineError(ValueError):
    pass


@dataclass
class ForestParams:
    n_trees: int = 100
    max_depth: int | None = None
    min_samples_leaf: int = 1
    features_per_split: int | None = None  # default ceil(sqrt(D))
    bootstrap: bool = True

    def to_dict(self) -> dict:
        return {
            "n_trees": self.n_trees,
            "max_depth": self.max_depth,
            "min_samples_leaf": self.min_samples_leaf,
            "features_per_split": self.features_per_split,
            "bootstrap": self.bootstrap,
        }


@dataclass
class DecisionTree:
    feature: np.ndarray    # split feature per node, -1 for leaves
    threshold: np.ndarray  # split threshold per node
    left: np.ndarray
    right: np.ndarray
    counts: np.ndarray     # class histogram per node
    max_depth: int | None
    min_samples_leaf: int

    def predict(self, x: np.ndarray) -> np.ndarray:
        return _tree_predict(self.feature, self.threshold, self.left, self.right,
                             self.counts, np.asarray(x, dtype=np.float64))


@dataclass
class RandomForestModel:
    trees: list[DecisionTree]
    tree_seeds: list[int]
    params: ForestParams
    n_classes: int

    def tree_votes(self, x: np.ndarray) -> np.ndarray:
        """Per-tree predicted class, shape (n_trees, n_samples)."""
        x = np.asarray(x, dtype=np.float64)
        return np.stack([t.predict(x) for t in self.trees])

    def predict(self, x: np.ndarray) -> np.ndarray:
        """Mode of the per-tree votes; ties go to the lowest class id."""
        votes = self.tree_votes(x)
        n = votes.shape[1]
        out = np.empty(n, dtype=np.int64)
        for i in range(n):
            out[i] = np.bincount(votes[:, i], minlength=self.n_classes).argmax()
        return out


@njit(cache=True)
def _grow_tree(x, y, n_classes, max_depth, min_samples_leaf, n_subset, seed, bootstrap):
    n_total = x.shape[0]
    d = x.shape[1]
    np.random.seed(seed)
    if bootstrap:
        idx = np.random.randint(0, n_total, n_total)
    else:
        idx = np.arange(n_total)
    n = idx.shape[0]

    max_nodes = 2 * n + 1
    feature = np.full(max_nodes, -1, dtype=np.int64)
    threshold = np.zeros(max_nodes)
    left = np.full(max_nodes, -1, dtype=np.int64)
    right = np.full(max_nodes, -1, dtype=np.int64)
    counts = np.zeros((max_nodes, n_classes), dtype=np.int64)

    stack_node = np.empty(max_nodes, dtype=np.int64)
    stack_start = np.empty(max_nodes, dtype=np.int64)
    stack_end = np.empty(max_nodes, dtype=np.int64)
    stack_depth = np.empty(max_nodes, dtype=np.int64)
    stack_node[0], stack_start[0], stack_end[0], stack_depth[0] = 0, 0, n, 0
    top = 1
    node_count = 1
    subset = np.empty(n_subset, dtype=np.int64)
    buffer = np.empty(n, dtype=np.int64)

    while top > 0:
        top -= 1
        node = stack_node[top]
        start = stack_start[top]
        end = stack_end[top]
        depth = stack_depth[top]
        m = end - start

        c = np.zeros(n_classes, dtype=np.int64)
        for i in range(start, end):
            c[y[idx[i]]] += 1
        counts[node] = c

        if c.max() == m or m < 2 * min_samples_leaf:
            continue
        if max_depth >= 0 and depth >= max_depth:
            continue

        # sample a feature subset without replacement, then scan in
        # ascending feature order so ties resolve to the lowest index
        pool = np.arange(d)
        for j in range(n_subset):
            swap = j + np.random.randint(0, d - j)
            pool[j], pool[swap] = pool[swap], pool[j]
            subset[j] = pool[j]
        subset[:n_subset].sort()

        best_score = -1.0
        best_feature = -1
        best_threshold = 0.0
        best_nl = 0
        vals = np.empty(m)
        for fj in range(n_subset):
            f = subset[fj]
            for i in range(m):
                vals[i] = x[idx[start + i], f]
            order = np.argsort(vals, kind="mergesort")
            lc = np.zeros(n_classes, dtype=np.int64)
            for i in range(m - 1):
                lc[y[idx[start + order[i]]]] += 1
                if vals[order[i + 1]] <= vals[order[i]]:
                    continue
                nl = i + 1
                nr = m - nl
                if nl < min_samples_leaf or nr < min_samples_leaf:
                    continue
                sl = 0.0
                sr = 0.0
                for k in range(n_classes):
                    sl += lc[k] * lc[k]
                    sr += (c[k] - lc[k]) * (c[k] - lc[k])
                score = sl / nl + sr / nr
                if score > best_score:
                    best_score = score
                    best_feature = f
                    best_threshold = 0.5 * (vals[order[i]] + vals[order[i + 1]])
                    best_nl = nl

        if best_feature < 0:
            continue

        # stable partition: left block keeps <= threshold in original order
        pos_l = 0
        pos_r = best_nl
        for i in range(start, end):
            if x[idx[i], best_feature] <= best_threshold:
                buffer[pos_l] = idx[i]
                pos_l += 1
            else:
                buffer[pos_r] = idx[i]
                pos_r += 1
        for i in range(m):
            idx[start + i] = buffer[i]

        feature[node] = best_feature
        threshold[node] = best_threshold
        left[node] = node_count
        right[node] = node_count + 1
        stack_node[top], stack_start[top], stack_end[top], stack_depth[top] = \
            node_count, start, start + best_nl, depth + 1
        top += 1
        stack_node[top], stack_start[top], stack_end[top], stack_depth[top] = \
            node_count + 1, start + best_nl, end, depth + 1
        top += 1
        node_count += 2

    return (feature[:node_count].copy(), threshold[:node_count].copy(),
            left[:node_count].copy(), right[:node_count].copy(),
            counts[:node_count].copy())


@njit(cache=True)
def _tree_predict(feature, threshold, left, right, counts, x):
    n = x.shape[0]
    out = np.empty(n, dtype=np.int64)
    for i in range(n):
        node = 0
        while feature[node] >= 0:
            if x[i, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        best = 0
        for k in range(1, counts.shape[1]):
            if counts[node, k] > counts[node, best]:
                best = k
        out[i] = best
    return out


def random_forest_fit(x: np.ndarray, y: np.ndarray, params: ForestParams,
                      seed: int = 0) -> RandomForestModel:
    x = np.ascontiguousarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64).reshape(-1)
    if x.shape[0] < 2:
        raise BaselineError("need at least 2 samples")
    n_classes = int(y.max()) + 1
    d = x.shape[1]
    n_subset = params.features_per_split or int(np.ceil(np.sqrt(d)))
    n_subset = min(n_subset, d)
    depth = -1 if params.max_depth is None else int(params.max_depth)
    rng = np.random.default_rng(seed)
    tree_seeds = [int(s) for s in rng.integers(0, 2**31 - 1, size=params.n_trees)]
    trees = []
    for ts in tree_seeds:
        arrays = _grow_tree(x, y, n_classes, depth, params.min_samples_leaf,
                            n_subset, ts, params.bootstrap)
        trees.append(DecisionTree(*arrays, max_depth=params.max_depth,
                                  min_samples_leaf=params.min_samples_leaf))
    return RandomForestModel(trees=trees, tree_seeds=tree_seeds, params=params,
                             n_classes=n_classes)


# -- cross-validated random search ------------------------------------------


@dataclass
class CvResult:
    fold_reports: list  # per-fold MetricsReport for the chosen params
    mean_macro_f1: float
    std_macro_f1: float
    chosen: dict
    all_combos: list = field(default_factory=list)  # (params dict, mean macro F1)


def stratified_folds(y: np.ndarray, folds: int, seed: int) -> np.ndarray:
    """Fold id per sample: shuffled round-robin within each class."""
    y = np.asarray(y, dtype=np.int64)
    rng = np.random.default_rng(seed)
    fold_of = np.full(y.shape[0], -1, dtype=np.int64)
    for c in np.unique(y):
        idx = np.flatnonzero(y == c)
        idx = idx[rng.permutation(idx.size)]
        fold_of[idx] = np.arange(idx.size) % folds
    return fold_of


def sample_forest_params(rng: np.random.Generator) -> ForestParams:
    depth_options = list(range(4, 33)) + [None]
    return ForestParams(
        n_trees=int(rng.integers(100, 501)),
        max_depth=depth_options[int(rng.integers(len(depth_options)))],
        min_samples_leaf=int(rng.integers(1, 9)),
    )


def cross_validate_search(x: np.ndarray, y: np.ndarray, masks, n_combos: int = 5,
                          folds: int = 5, seed: int = 0):
    """Random search over forest params, scored by mean macro F1 across
    stratified folds of the training split (train + val masks); the best
    combo is refit on the whole training split and scored on the test mask.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    train_idx = np.flatnonzero(masks.train | masks.val)
    test_idx = np.flatnonzero(masks.test)
    y_train = y[train_idx]

    fold_of = stratified_folds(y_train, folds, seed)
    classes = np.unique(y_train)
    for f in range(folds):
        present = np.unique(y_train[fold_of == f])
        if present.size < classes.size:
            raise BaselineError(f"fold {f} is missing a class; reduce folds")

    rng = np.random.default_rng(seed)
    combos = [sample_forest_params(rng) for _ in range(n_combos)]
    combo_seeds = [int(s) for s in rng.integers(0, 2**31 - 1, size=n_combos)]

    scored = []
    for combo, cseed in zip(combos, combo_seeds):
        fold_f1 = []
        for f in range(folds):
            fit_rows = train_idx[fold_of != f]
            val_rows = train_idx[fold_of == f]
            model = random_forest_fit(x[fit_rows], y[fit_rows], combo,
                                      seed=cseed + f)
            pred = model.predict(x[val_rows])
            fold_f1.append(metrics.evaluate(y[val_rows], pred).macro_f1)
        scored.append((combo, float(np.mean(fold_f1))))

    best_i = max(range(n_combos), key=lambda i: (scored[i][1], -i))
    best_params = scored[best_i][0]

    fold_reports = []
    for f in range(folds):
        fit_rows = train_idx[fold_of != f]
        val_rows = train_idx[fold_of == f]
        model = random_forest_fit(x[fit_rows], y[fit_rows], best_params,
                                  seed=combo_seeds[best_i] + f)
        fold_reports.append(metrics.evaluate(y[val_rows], model.predict(x[val_rows])))

    final_model = random_forest_fit(x[train_idx], y[train_idx], best_params,
                                    seed=combo_seeds[best_i])
    test_report = metrics.evaluate(y[test_idx], final_model.predict(x[test_idx]))

    f1s = [r.macro_f1 for r in fold_reports]
    cv = CvResult(
        fold_reports=fold_reports,
        mean_macro_f1=float(np.mean(f1s)),
        std_macro_f1=float(np.std(f1s)),
        chosen=best_params.to_dict(),
        all_combos=[(c.to_dict(), s) for c, s in scored],
    )
    return best_params, cv, test_report, final_model
