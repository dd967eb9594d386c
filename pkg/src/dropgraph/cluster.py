"""Clustering: K-Means, HDBSCAN, silhouette validation, and the
reduction-x-clustering sweep that picks the graph-construction setup.

HDBSCAN is the full pipeline: core distances, mutual reachability,
exact MST (Prim over the dense mutual-reachability matrix),
single-linkage dendrogram, condensation at min_cluster_size, and flat
extraction by excess-of-mass stability. Noise points get label -1.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .reduce import reduce_features


class ClusterError(ValueError):
    pass


@dataclass
class ClusterAssignment:
    labels: np.ndarray  # N ints, 0..K-1 or -1 for noise
    k: int

    @property
    def noise_count(self) -> int:
        return int((self.labels < 0).sum())


@dataclass
class KMeansModel:
    centroids: np.ndarray
    inertia: float
    iterations_run: int
    inertia_history: list = field(default_factory=list)


@dataclass
class CondensedTree:
    # rows: (parent id, child id, lambda = 1/distance at split, child size)
    edges: list[tuple[int, int, float, int]]
    stabilities: dict[int, float]
    root: int


@dataclass
class SilhouetteResult:
    overall: float
    per_point: np.ndarray  # NaN for excluded noise points
    excluded_noise: int


def _pairwise_sq(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    d2 = (x * x).sum(axis=1)[:, None] + (y * y).sum(axis=1)[None, :] - 2.0 * (x @ y.T)
    return np.maximum(d2, 0.0)


# -- K-Means -------------------------------------------------------------


def _kmeanspp_seed(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    centroids = np.empty((k, x.shape[1]))
    first = int(rng.integers(n))
    centroids[0] = x[first]
    closest = _pairwise_sq(x, centroids[:1]).reshape(-1)
    for j in range(1, k):
        total = closest.sum()
        if total <= 0.0:
            idx = int(rng.integers(n))
        else:
            r = rng.random() * total
            idx = int(np.searchsorted(np.cumsum(closest), r))
            idx = min(idx, n - 1)
        centroids[j] = x[idx]
        d = _pairwise_sq(x, centroids[j:j + 1]).reshape(-1)
        np.minimum(closest, d, out=closest)
    return centroids


def kmeans(x: np.ndarray, k: int, seed: int = 0, max_iter: int = 300,
           tol: float = 1e-6) -> tuple[ClusterAssignment, KMeansModel]:
    """Lloyd iterations from a k-means++ seeding.

    Nearest-centroid ties break toward the lowest centroid index. An
    empty cluster is re-seeded at the point farthest from its assigned
    centroid. Converges when the assignment stops changing (exact Lloyd
    fixed point) or the max centroid shift drops below tol.
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    if not 1 <= k <= n:
        raise ClusterError(f"k={k} must be in 1..{n}")
    rng = np.random.default_rng(seed)
    centroids = _kmeanspp_seed(x, k, rng)
    d2 = _pairwise_sq(x, centroids)
    labels = d2.argmin(axis=1)
    inertia_history = [float(d2[np.arange(n), labels].sum())]
    iterations = 0
    for iterations in range(1, max_iter + 1):
        new_centroids = centroids.copy()
        for j in range(k):
            members = labels == j
            if members.any():
                new_centroids[j] = x[members].mean(axis=0)
            else:
                per_point = d2[np.arange(n), labels]
                far = int(per_point.argmax())
                new_centroids[j] = x[far]
                labels[far] = j
        shift = np.sqrt(((new_centroids - centroids) ** 2).sum(axis=1)).max()
        centroids = new_centroids
        d2 = _pairwise_sq(x, centroids)
        new_labels = d2.argmin(axis=1)
        inertia_history.append(float(d2[np.arange(n), new_labels].sum()))
        stable = bool((new_labels == labels).all())
        labels = new_labels
        if stable or shift < tol:
            break
    inertia = inertia_history[-1]
    return (
        ClusterAssignment(labels=labels, k=k),
        KMeansModel(centroids=centroids, inertia=inertia, iterations_run=iterations,
                    inertia_history=inertia_history),
    )


# -- HDBSCAN -------------------------------------------------------------


def _prim_mst(weights: np.ndarray) -> np.ndarray:
    """Exact MST of a dense symmetric weight matrix; rows (u, v, w)."""
    n = weights.shape[0]
    in_tree = np.zeros(n, dtype=bool)
    in_tree[0] = True
    best = weights[0].copy()
    parent = np.zeros(n, dtype=np.int64)
    best[0] = np.inf
    edges = np.empty((n - 1, 3))
    for step in range(n - 1):
        masked = np.where(in_tree, np.inf, best)
        nxt = int(masked.argmin())
        edges[step] = (parent[nxt], nxt, masked[nxt])
        in_tree[nxt] = True
        improve = (weights[nxt] < best) & ~in_tree
        best[improve] = weights[nxt][improve]
        parent[improve] = nxt
    return edges


def _single_linkage(mst_edges: np.ndarray, n: int) -> np.ndarray:
    """Union MST edges by ascending weight into scipy-style linkage rows.

    Row i merges two current dendrogram roots into node n + i and
    records (left node, right node, distance, size). Roots double as
    node ids, so find() of a point yields its current dendrogram node.
    """
    order = np.argsort(mst_edges[:, 2], kind="stable")
    parent = np.arange(2 * n - 1, dtype=np.int64)
    size = np.ones(2 * n - 1, dtype=np.int64)

    def find(i):
        root = i
        while parent[root] != root:
            root = parent[root]
        while parent[i] != root:
            parent[i], i = root, parent[i]
        return root

    linkage = np.empty((n - 1, 4))
    for row, e in enumerate(order):
        u, v, w = mst_edges[e]
        ru, rv = find(int(u)), find(int(v))
        node = n + row
        linkage[row] = (ru, rv, w, size[ru] + size[rv])
        size[node] = size[ru] + size[rv]
        parent[ru] = node
        parent[rv] = node
    return linkage


def _bfs_leaves(linkage: np.ndarray, n: int, start: int) -> list[int]:
    out = []
    queue = [start]
    while queue:
        node = queue.pop()
        if node < n:
            out.append(node)
        else:
            row = linkage[node - n]
            queue.append(int(row[0]))
            queue.append(int(row[1]))
    return out


def _condense(linkage: np.ndarray, n: int, min_cluster_size: int) -> CondensedTree:
    root = 2 * n - 2
    relabel = {root: n}
    next_label = n + 1
    edges: list[tuple[int, int, float, int]] = []
    ignore = set()
    queue = [root]
    while queue:
        node = queue.pop(0)
        if node in ignore or node < n:
            continue
        left, right, dist, _ = linkage[node - n]
        left, right = int(left), int(right)
        lam = 1.0 / dist if dist > 0.0 else np.inf
        left_count = int(linkage[left - n][3]) if left >= n else 1
        right_count = int(linkage[right - n][3]) if right >= n else 1
        label = relabel[node]

        if left_count >= min_cluster_size and right_count >= min_cluster_size:
            for child, count in ((left, left_count), (right, right_count)):
                relabel[child] = next_label
                edges.append((label, next_label, lam, count))
                next_label += 1
            queue.extend([left, right])
        else:
            big = [c for c, cnt in ((left, left_count), (right, right_count))
                   if cnt >= min_cluster_size]
            small = [c for c, cnt in ((left, left_count), (right, right_count))
                     if cnt < min_cluster_size]
            for child in big:
                relabel[child] = label
                queue.append(child)
            for child in small:
                for leaf in _bfs_leaves(linkage, n, child):
                    edges.append((label, leaf, lam, 1))
                    ignore.add(leaf)
                if child >= n:
                    ignore.update(
                        node for node in _bfs_nodes(linkage, n, child)
                    )
    stabilities = _compute_stability(edges, n)
    return CondensedTree(edges=edges, stabilities=stabilities, root=n)


def _bfs_nodes(linkage: np.ndarray, n: int, start: int) -> list[int]:
    out = []
    queue = [start]
    while queue:
        node = queue.pop()
        out.append(node)
        if node >= n:
            row = linkage[node - n]
            queue.append(int(row[0]))
            queue.append(int(row[1]))
    return out


def _compute_stability(edges, n: int) -> dict[int, float]:
    births: dict[int, float] = {n: 0.0}
    for parent, child, lam, _ in edges:
        if child >= n:
            births[child] = lam
    stability: dict[int, float] = {}
    for parent, child, lam, size in edges:
        birth = births[parent]
        lam_capped = lam if np.isfinite(lam) else birth
        stability[parent] = stability.get(parent, 0.0) + (lam_capped - birth) * size
    for cluster in births:
        stability.setdefault(cluster, 0.0)
    return stability


def _extract_eom(tree: CondensedTree, n: int) -> np.ndarray:
    children_of: dict[int, list[int]] = {}
    for parent, child, _, size in tree.edges:
        if child >= n:
            children_of.setdefault(parent, []).append(child)
    stability = dict(tree.stabilities)
    is_cluster = {c: True for c in stability}
    # leaves first; root excluded (a single all-points cluster is not allowed)
    for node in sorted(stability, reverse=True):
        if node == tree.root:
            continue
        subtree = sum(stability[c] for c in children_of.get(node, []))
        if subtree > stability[node] and children_of.get(node):
            is_cluster[node] = False
            stability[node] = subtree
        else:
            stack = list(children_of.get(node, []))
            while stack:
                c = stack.pop()
                is_cluster[c] = False
                stack.extend(children_of.get(c, []))
    selected = sorted(c for c in stability
                      if is_cluster.get(c, False) and c != tree.root)
    cluster_ids = {c: i for i, c in enumerate(selected)}

    cluster_parent = {child: parent for parent, child, _, size in tree.edges if child >= n}
    labels = np.full(n, -1, dtype=np.int64)
    for parent, child, _, _ in tree.edges:
        if child < n:
            node = parent
            while node is not None:
                if node in cluster_ids:
                    labels[child] = cluster_ids[node]
                    break
                node = cluster_parent.get(node)
    return labels


def hdbscan(x: np.ndarray, min_cluster_size: int = 15,
            min_samples: int = 15) -> tuple[ClusterAssignment, CondensedTree]:
    """Density-based clustering with noise; euclidean metric."""
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    if n < 2:
        raise ClusterError("need at least 2 points")
    if min_samples > n - 1:
        raise ClusterError(f"min_samples={min_samples} exceeds n-1={n - 1}")
    if min_cluster_size < 2:
        raise ClusterError("min_cluster_size must be >= 2")

    d = np.sqrt(_pairwise_sq(x, x))
    np.fill_diagonal(d, np.inf)
    core = np.partition(d, min_samples - 1, axis=1)[:, min_samples - 1]
    np.fill_diagonal(d, 0.0)
    mreach = np.maximum(d, np.maximum(core[:, None], core[None, :]))
    np.fill_diagonal(mreach, 0.0)

    mst = _prim_mst(mreach)
    linkage = _single_linkage(mst, n)
    tree = _condense(linkage, n, min_cluster_size)
    labels = _extract_eom(tree, n)
    k = int(labels.max() + 1) if labels.max() >= 0 else 0
    return ClusterAssignment(labels=labels, k=k), tree


def mutual_reachability(x: np.ndarray, min_samples: int) -> np.ndarray:
    """Dense mutual-reachability matrix (exposed for oracle checks)."""
    x = np.asarray(x, dtype=np.float64)
    d = np.sqrt(_pairwise_sq(x, x))
    np.fill_diagonal(d, np.inf)
    core = np.partition(d, min_samples - 1, axis=1)[:, min_samples - 1]
    np.fill_diagonal(d, 0.0)
    out = np.maximum(d, np.maximum(core[:, None], core[None, :]))
    np.fill_diagonal(out, 0.0)
    return out


def mst_total_weight(x: np.ndarray, min_samples: int) -> float:
    return float(_prim_mst(mutual_reachability(x, min_samples))[:, 2].sum())


# -- silhouette ----------------------------------------------------------


def silhouette(x: np.ndarray, assignment: ClusterAssignment,
               chunk: int = 512) -> SilhouetteResult:
    """Mean of (b - a) / max(a, b) over non-noise points.

    Singleton clusters contribute 0; noise points are excluded both from
    the average and from the b(i) candidate clusters.
    """
    x = np.asarray(x, dtype=np.float64)
    labels = assignment.labels
    include = labels >= 0
    kept = np.flatnonzero(include)
    kept_labels = labels[kept]
    uniq = np.unique(kept_labels)
    if uniq.size < 2:
        raise ClusterError("silhouette undefined for fewer than 2 clusters")
    remap = {c: i for i, c in enumerate(uniq)}
    lab = np.array([remap[c] for c in kept_labels])
    k = uniq.size
    sizes = np.bincount(lab, minlength=k)

    xs = x[kept]
    m = xs.shape[0]
    onehot = np.zeros((m, k))
    onehot[np.arange(m), lab] = 1.0
    s = np.empty(m)
    for start in range(0, m, chunk):
        stop = min(start + chunk, m)
        db = np.sqrt(_pairwise_sq(xs[start:stop], xs))
        sums = db @ onehot  # rows x clusters: sum of distances into each cluster
        for i in range(stop - start):
            c = lab[start + i]
            if sizes[c] == 1:
                s[start + i] = 0.0
                continue
            a = sums[i, c] / (sizes[c] - 1)
            others = [sums[i, cc] / sizes[cc] for cc in range(k) if cc != c]
            b = min(others)
            denom = max(a, b)
            s[start + i] = 0.0 if denom == 0.0 else (b - a) / denom
    per_point = np.full(labels.shape[0], np.nan)
    per_point[kept] = s
    return SilhouetteResult(
        overall=float(s.mean()),
        per_point=per_point,
        excluded_noise=int((~include).sum()),
    )


# -- configuration sweep ---------------------------------------------------


@dataclass
class SweepEntry:
    reduction: dict
    clustering: dict
    silhouette: float
    n_clusters: int
    noise: int
    seed: int
    grid_index: int


def default_sweep_grid() -> list[tuple[dict, dict]]:
    reductions = [
        {"method": "pca", "dims": 10},
        {"method": "umap", "dims": 10},
        {"method": "pca_then_umap", "dims": 10, "pca_dims": 50},
    ]
    clusterings: list[dict] = [{"method": "kmeans", "k": k} for k in range(2, 11)]
    clusterings.append({"method": "hdbscan", "min_cluster_size": 15, "min_samples": 15})
    return [(r, c) for r in reductions for c in clusterings]


def run_clustering(x: np.ndarray, spec: dict, seed: int) -> ClusterAssignment:
    if spec["method"] == "kmeans":
        assignment, _ = kmeans(x, int(spec["k"]), seed=seed,
                               max_iter=int(spec.get("max_iter", 300)),
                               tol=float(spec.get("tol", 1e-6)))
        return assignment
    if spec["method"] == "hdbscan":
        assignment, _ = hdbscan(x, int(spec.get("min_cluster_size", 15)),
                                int(spec.get("min_samples", 15)))
        return assignment
    raise ClusterError(f"unknown clustering method {spec['method']!r}")


def sweep_configurations(x: np.ndarray, grid: list[tuple[dict, dict]] | None,
                         seed: int = 0) -> list[SweepEntry]:
    """Score every (reduction, clustering) pair by silhouette, sort descending.

    Reductions are embedded once per distinct spec with a seed derived
    from the spec's first grid position; clustering seeds derive from the
    grid index. Undefined silhouettes (K < 2) record -inf but never abort.
    """
    if grid is None:
        grid = default_sweep_grid()
    if not grid:
        raise ClusterError("sweep grid is empty")
    embeddings: dict[str, np.ndarray] = {}
    entries = []
    for gi, (red, clus) in enumerate(grid):
        key = repr(sorted(red.items()))
        if key not in embeddings:
            embeddings[key] = reduce_features(x, red, seed=_derive(seed, len(embeddings))).values
        emb = embeddings[key]
        assignment = run_clustering(emb, clus, seed=_derive(seed, 1000 + gi))
        try:
            score = silhouette(emb, assignment).overall
        except ClusterError:
            score = float("-inf")
        entries.append(SweepEntry(
            reduction=dict(red), clustering=dict(clus), silhouette=score,
            n_clusters=assignment.k, noise=assignment.noise_count,
            seed=seed, grid_index=gi,
        ))
    entries.sort(key=lambda e: (-e.silhouette, e.grid_index))
    return entries


def _derive(seed: int, offset: int) -> int:
    return (seed * 100003 + offset * 7919 + 12345) % (2**31)
