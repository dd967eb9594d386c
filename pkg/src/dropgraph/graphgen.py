"""Graph construction from clusterings and embeddings, plus structure stats.

Two builders mirror the two pipeline strategies: a co-membership graph
(clique per cluster, noise isolated) and a k-NN proximity graph over an
embedding (mutual by default, union behind a flag). Graphs are stored
as CSR with sorted, deduplicated, symmetric neighbor lists and no
self-loops.
"""

from __future__ import annotations

import heapq
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class GraphError(ValueError):
    pass


@dataclass
class Graph:
    n_nodes: int
    indptr: np.ndarray   # n_nodes + 1
    indices: np.ndarray  # sorted neighbor ids per row

    @property
    def n_edges(self) -> int:
        return self.indices.shape[0] // 2

    def neighbors(self, v: int) -> np.ndarray:
        return self.indices[self.indptr[v]:self.indptr[v + 1]]

    def degrees(self) -> np.ndarray:
        return np.diff(self.indptr)


@dataclass
class GraphStats:
    n_nodes: int
    n_edges: int
    n_components: int
    density: float
    degree_min: int
    degree_mean: float
    degree_max: int
    isolated: int

    def to_dict(self) -> dict:
        return {
            "n_nodes": self.n_nodes,
            "n_edges": self.n_edges,
            "n_components": self.n_components,
            "density": self.density,
            "degree_min": self.degree_min,
            "degree_mean": self.degree_mean,
            "degree_max": self.degree_max,
            "isolated": self.isolated,
        }


def graph_from_edges(n_nodes: int, edges) -> Graph:
    """Build CSR from an iterable of (u, v) pairs; symmetrizes and dedups."""
    pairs = set()
    for u, v in edges:
        u, v = int(u), int(v)
        if u == v:
            continue
        if not (0 <= u < n_nodes and 0 <= v < n_nodes):
            raise GraphError(f"edge ({u}, {v}) outside 0..{n_nodes - 1}")
        pairs.add((min(u, v), max(u, v)))
    rows = np.empty(2 * len(pairs), dtype=np.int64)
    cols = np.empty(2 * len(pairs), dtype=np.int64)
    for i, (u, v) in enumerate(pairs):
        rows[2 * i], cols[2 * i] = u, v
        rows[2 * i + 1], cols[2 * i + 1] = v, u
    order = np.lexsort((cols, rows))
    rows, cols = rows[order], cols[order]
    indptr = np.zeros(n_nodes + 1, dtype=np.int64)
    np.add.at(indptr, rows + 1, 1)
    indptr = np.cumsum(indptr)
    return Graph(n_nodes=n_nodes, indptr=indptr, indices=cols)


def build_cluster_graph(labels: np.ndarray, edge_cap: int = 50_000_000) -> Graph:
    """Clique per cluster: (i, j) is an edge iff labels match and are not -1.

    Predicted edge count is checked against edge_cap before any
    allocation, since a single huge cluster materializes as n^2/2 edges.
    """
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    n = labels.shape[0]
    uniq, counts = np.unique(labels[labels >= 0], return_counts=True)
    predicted = int((counts * (counts - 1) // 2).sum())
    if predicted > edge_cap:
        raise GraphError(
            f"cluster graph would hold {predicted} edges (cap {edge_cap}); "
            "largest cluster sizes: "
            + ", ".join(str(c) for c in sorted(counts, reverse=True)[:5])
        )
    rows_parts = []
    cols_parts = []
    for c in uniq:
        members = np.flatnonzero(labels == c)
        m = members.shape[0]
        if m < 2:
            continue
        # full clique in CSR form: every member adjacent to all others
        rows_parts.append(np.repeat(members, m - 1))
        tiled = np.tile(members, m).reshape(m, m)
        mask = ~np.eye(m, dtype=bool)
        cols_parts.append(tiled[mask])
    if rows_parts:
        rows = np.concatenate(rows_parts)
        cols = np.concatenate(cols_parts)
        order = np.lexsort((cols, rows))
        rows, cols = rows[order], cols[order]
    else:
        rows = np.empty(0, dtype=np.int64)
        cols = np.empty(0, dtype=np.int64)
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.add.at(indptr, rows + 1, 1)
    indptr = np.cumsum(indptr)
    return Graph(n_nodes=n, indptr=indptr, indices=cols)


# -- KD-tree -------------------------------------------------------------


class KdTree:
    """Exact k-NN over points in R^d; split on the widest-extent axis."""

    def __init__(self, points: np.ndarray, leaf_size: int = 16):
        self.points = np.asarray(points, dtype=np.float64)
        self.leaf_size = leaf_size
        n = self.points.shape[0]
        self._nodes: list[tuple] = []  # (axis, threshold, left, right) or (-1, idx_array, None, None)
        self._build(np.arange(n, dtype=np.int64))

    def _build(self, idx: np.ndarray) -> int:
        node_id = len(self._nodes)
        self._nodes.append(None)
        if idx.shape[0] <= self.leaf_size:
            self._nodes[node_id] = (-1, idx, None, None)
            return node_id
        pts = self.points[idx]
        spans = pts.max(axis=0) - pts.min(axis=0)
        axis = int(spans.argmax())
        order = np.argsort(pts[:, axis], kind="stable")
        mid = idx.shape[0] // 2
        threshold = float(pts[order[mid], axis])
        left_idx = idx[order[:mid]]
        right_idx = idx[order[mid:]]
        if left_idx.shape[0] == 0 or right_idx.shape[0] == 0:
            self._nodes[node_id] = (-1, idx, None, None)
            return node_id
        left = self._build(left_idx)
        right = self._build(right_idx)
        self._nodes[node_id] = (axis, threshold, left, right)
        return node_id

    def query(self, q: np.ndarray, k: int, exclude: int = -1) -> tuple[np.ndarray, np.ndarray]:
        """k nearest points to q; ties broken by lower point index."""
        # max-heap of the k best candidates, keyed worst-first
        heap: list[tuple[float, int]] = []

        def consider(i: int):
            if i == exclude:
                return
            diff = self.points[i] - q
            d2 = float(diff @ diff)
            entry = (-d2, -i)  # heap pops largest distance, then largest index
            if len(heap) < k:
                heapq.heappush(heap, entry)
            elif entry > heap[0]:
                heapq.heapreplace(heap, entry)

        def worst() -> float:
            return -heap[0][0] if len(heap) == k else np.inf

        def visit(node_id: int):
            axis, a, b, c = self._nodes[node_id]
            if axis == -1:
                for i in a:
                    consider(int(i))
                return
            threshold, left, right = a, b, c
            delta = q[axis] - threshold
            near, far = (right, left) if delta >= 0 else (left, right)
            visit(near)
            if delta * delta <= worst():
                visit(far)

        visit(0)
        out = sorted(((-d2, -ni) for d2, ni in heap))
        dists = np.sqrt(np.array([d for d, _ in out]))
        idx = np.array([i for _, i in out], dtype=np.int64)
        return idx, dists


def knn_indices(points: np.ndarray, k: int, leaf_size: int = 16) -> np.ndarray:
    """Exact k nearest neighbors per point, self excluded."""
    points = np.asarray(points, dtype=np.float64)
    n = points.shape[0]
    if k >= n:
        raise GraphError(f"k={k} must be smaller than n={n}")
    tree = KdTree(points, leaf_size=leaf_size)
    out = np.empty((n, k), dtype=np.int64)
    for i in range(n):
        idx, _ = tree.query(points[i], k, exclude=i)
        out[i] = idx
    return out


def build_knn_graph(embedding: np.ndarray, k: int = 5, mode: str = "mutual",
                    leaf_size: int = 16) -> Graph:
    """Proximity graph over an embedding.

    mutual: edge iff each point is in the other's k-NN set.
    union:  edge iff either is in the other's k-NN set.
    """
    embedding = np.asarray(embedding, dtype=np.float64)
    if not np.all(np.isfinite(embedding)):
        raise GraphError("embedding contains non-finite values")
    if mode not in ("mutual", "union"):
        raise GraphError(f"unknown mode {mode!r}")
    nn = knn_indices(embedding, k, leaf_size=leaf_size)
    n = embedding.shape[0]
    neighbor_sets = [set(row.tolist()) for row in nn]
    edges = []
    for i in range(n):
        for j in nn[i]:
            j = int(j)
            if mode == "union" or i in neighbor_sets[j]:
                edges.append((i, j))
    return graph_from_edges(n, edges)


# -- stats and io ----------------------------------------------------------


def graph_stats(graph: Graph) -> GraphStats:
    n = graph.n_nodes
    parent = np.arange(n, dtype=np.int64)

    def find(i):
        root = i
        while parent[root] != root:
            root = parent[root]
        while parent[i] != root:
            parent[i], i = root, parent[i]
        return root

    for u in range(n):
        for v in graph.neighbors(u):
            ru, rv = find(u), find(int(v))
            if ru != rv:
                parent[max(ru, rv)] = min(ru, rv)
    n_components = sum(1 for i in range(n) if find(i) == i)
    deg = graph.degrees()
    m = graph.n_edges
    density = 0.0 if n < 2 else 2.0 * m / (n * (n - 1))
    return GraphStats(
        n_nodes=n,
        n_edges=m,
        n_components=n_components,
        density=density,
        degree_min=int(deg.min()) if n else 0,
        degree_mean=float(deg.mean()) if n else 0.0,
        degree_max=int(deg.max()) if n else 0,
        isolated=int((deg == 0).sum()),
    )


def save_edge_list(graph: Graph, path):
    """Text edge list, one "u v" per line with u < v, plus a node-count header."""
    with open(path, "w") as fh:
        fh.write(f"# nodes {graph.n_nodes}\n")
        for u in range(graph.n_nodes):
            for v in graph.neighbors(u):
                if u < v:
                    fh.write(f"{u} {int(v)}\n")


def load_edge_list(path) -> Graph:
    path = Path(path)
    n_nodes = None
    edges = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                parts = line[1:].split()
                if len(parts) == 2 and parts[0] == "nodes":
                    n_nodes = int(parts[1])
                continue
            parts = line.split()
            if len(parts) != 2:
                raise GraphError(f"malformed edge line in {path}: {line!r}")
            edges.append((int(parts[0]), int(parts[1])))
    if n_nodes is None:
        n_nodes = 1 + max((max(u, v) for u, v in edges), default=-1)
    return graph_from_edges(n_nodes, edges)


def save_stats(stats: GraphStats, path):
    Path(path).write_text(json.dumps(stats.to_dict(), indent=1))
