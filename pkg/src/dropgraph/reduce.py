"""Dimensionality reduction: exact PCA and a self-contained UMAP.

PCA diagonalizes the sample covariance with a cyclic Jacobi sweep
(deterministic, exact at these sizes). UMAP follows the standard
pipeline: exact k-NN, smoothed-distance bandwidth search, fuzzy graph
symmetrization, spectral (or seeded-random) initialization, and a
sequential SGD layout pass with negative sampling. Everything is a pure
function of (input, params, seed); the SGD update order is fixed so
repeated runs are bit-identical.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from numba import njit
from scipy.optimize import curve_fit
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import ArpackError, ArpackNoConvergence, eigsh


class ReduceError(ValueError):
    pass


@dataclass
class PcaModel:
    mean: np.ndarray          # D
    components: np.ndarray    # D x d_out, orthonormal columns
    eigenvalues: np.ndarray   # d_out, descending

    def transform(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.mean) @ self.components

    def inverse_transform(self, z: np.ndarray) -> np.ndarray:
        return z @ self.components.T + self.mean


@dataclass
class Embedding:
    values: np.ndarray
    method: str  # pca | umap | pca_then_umap
    params: dict = field(default_factory=dict)


@dataclass
class UmapParams:
    n_neighbors: int = 15
    min_dist: float = 0.1
    spread: float = 1.0
    n_components: int = 2
    n_epochs: int = 200
    negative_sample_rate: int = 5
    a: float | None = None
    b: float | None = None
    seed: int = 0
    initial_alpha: float = 1.0
    repulsion_strength: float = 1.0

    def validate(self):
        if self.n_neighbors < 2:
            raise ReduceError(f"n_neighbors must be >= 2, got {self.n_neighbors}")
        if not 0.0 < self.min_dist < self.spread:
            raise ReduceError(
                f"min_dist must lie in (0, spread): {self.min_dist} vs {self.spread}"
            )
        if (self.a is not None and self.a <= 0) or (self.b is not None and self.b <= 0):
            raise ReduceError("curve coefficients a, b must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


# -- PCA ----------------------------------------------------------------


@njit(cache=True)
def _jacobi_eigh(a):
    """Cyclic Jacobi diagonalization of a symmetric matrix (in place)."""
    d = a.shape[0]
    v = np.eye(d)
    scale = 0.0
    for i in range(d):
        for j in range(d):
            if abs(a[i, j]) > scale:
                scale = abs(a[i, j])
    if scale == 0.0:
        return np.zeros(d), v
    for _ in range(100):
        off = 0.0
        for i in range(d - 1):
            for j in range(i + 1, d):
                off += a[i, j] * a[i, j]
        if np.sqrt(2.0 * off) <= 1e-13 * scale * d:
            break
        for p in range(d - 1):
            for q in range(p + 1, d):
                apq = a[p, q]
                if abs(apq) <= 1e-300:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                if theta == 0.0:
                    t = 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                app = a[p, p]
                aqq = a[q, q]
                a[p, p] = c * c * app - 2.0 * s * c * apq + s * s * aqq
                a[q, q] = s * s * app + 2.0 * s * c * apq + c * c * aqq
                a[p, q] = 0.0
                a[q, p] = 0.0
                for i in range(d):
                    if i != p and i != q:
                        aip = a[i, p]
                        aiq = a[i, q]
                        a[i, p] = c * aip - s * aiq
                        a[p, i] = a[i, p]
                        a[i, q] = s * aip + c * aiq
                        a[q, i] = a[i, q]
                for i in range(d):
                    vip = v[i, p]
                    viq = v[i, q]
                    v[i, p] = c * vip - s * viq
                    v[i, q] = s * vip + c * viq
    return np.diag(a).copy(), v


def pca_fit_transform(x: np.ndarray, d_out: int) -> tuple[PcaModel, Embedding]:
    """Project onto the top d_out eigenvectors of the sample covariance.

    Components follow the sign convention that each one's
    largest-magnitude entry is positive.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ReduceError(f"expected a 2-D matrix, got shape {x.shape}")
    n, d = x.shape
    achievable = min(n - 1, d)
    if d_out < 1 or d_out > achievable:
        raise ReduceError(
            f"d_out={d_out} exceeds achievable rank {achievable} (n={n}, d={d})"
        )
    mean = x.mean(axis=0)
    xc = x - mean
    cov = (xc.T @ xc) / (n - 1)
    eigvals, eigvecs = _jacobi_eigh(cov.copy())
    order = np.argsort(-eigvals, kind="stable")[:d_out]
    vals = np.maximum(eigvals[order], 0.0)
    comps = eigvecs[:, order].copy()
    for j in range(comps.shape[1]):
        i = int(np.argmax(np.abs(comps[:, j])))
        if comps[i, j] < 0:
            comps[:, j] = -comps[:, j]
    model = PcaModel(mean=mean, components=comps, eigenvalues=vals)
    emb = Embedding(values=xc @ comps, method="pca", params={"d_out": d_out})
    return model, emb


# -- UMAP ---------------------------------------------------------------


def fit_curve_params(spread: float, min_dist: float) -> tuple[float, float]:
    """Least-squares fit of 1/(1 + a d^(2b)) to the target membership curve."""

    def curve(x, a, b):
        return 1.0 / (1.0 + a * x ** (2.0 * b))

    xv = np.linspace(0.0, spread * 3.0, 300)
    yv = np.zeros_like(xv)
    yv[xv < min_dist] = 1.0
    tail = xv >= min_dist
    yv[tail] = np.exp(-(xv[tail] - min_dist) / spread)
    (a, b), _ = curve_fit(curve, xv, yv)
    return float(a), float(b)


def exact_knn(x: np.ndarray, k: int, chunk: int = 512) -> tuple[np.ndarray, np.ndarray]:
    """Brute-force k nearest neighbors (self excluded), ties by lower index."""
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    if k >= n:
        raise ReduceError(f"k={k} must be smaller than the number of points {n}")
    sq = (x * x).sum(axis=1)
    idx_out = np.empty((n, k), dtype=np.int64)
    dist_out = np.empty((n, k))
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        d2 = sq[start:stop, None] + sq[None, :] - 2.0 * (x[start:stop] @ x.T)
        np.maximum(d2, 0.0, out=d2)
        d2[np.arange(start, stop) - start, np.arange(start, stop)] = np.inf
        part = np.argpartition(d2, k, axis=1)[:, :k]
        for i in range(stop - start):
            cand = part[i]
            order = np.lexsort((cand, d2[i, cand]))
            idx_out[start + i] = cand[order]
            dist_out[start + i] = np.sqrt(d2[i, cand[order]])
    return idx_out, dist_out


@njit(cache=True)
def _smooth_knn_calibration(dists, target, n_iter=64, tol=1e-5, min_scale=1e-3):
    """Per-point bandwidth sigma and connectivity offset rho.

    Solves sum_j exp(-max(0, d_ij - rho_i) / sigma_i) = target by binary
    search, with rho_i the distance to the nearest neighbor.
    """
    n, k = dists.shape
    rho = np.zeros(n)
    sigma = np.zeros(n)
    mean_all = np.mean(dists)
    for i in range(n):
        nonzero = dists[i][dists[i] > 0.0]
        if nonzero.shape[0] > 0:
            rho[i] = nonzero.min()
        lo = 0.0
        hi = np.inf
        mid = 1.0
        for _ in range(n_iter):
            psum = 0.0
            for j in range(k):
                d = dists[i, j] - rho[i]
                if d > 0.0:
                    psum += np.exp(-d / mid)
                else:
                    psum += 1.0
            if abs(psum - target) < tol:
                break
            if psum > target:
                hi = mid
                mid = (lo + hi) / 2.0
            else:
                lo = mid
                if hi == np.inf:
                    mid *= 2.0
                else:
                    mid = (lo + hi) / 2.0
        sigma[i] = mid
        if rho[i] > 0.0:
            mean_i = np.mean(dists[i])
            if sigma[i] < min_scale * mean_i:
                sigma[i] = min_scale * mean_i
        else:
            if sigma[i] < min_scale * mean_all:
                sigma[i] = min_scale * mean_all
    return sigma, rho


def membership_graph(knn_idx: np.ndarray, knn_dist: np.ndarray,
                     sigma: np.ndarray, rho: np.ndarray) -> sp.csr_matrix:
    """Directed membership weights, then fuzzy-union symmetrization."""
    n, k = knn_idx.shape
    rows = np.repeat(np.arange(n), k)
    cols = knn_idx.reshape(-1)
    d = knn_dist.reshape(-1) - np.repeat(rho, k)
    vals = np.where(d <= 0.0, 1.0, np.exp(-np.maximum(d, 0.0) / np.repeat(sigma, k)))
    w = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    sym = w + w.T - w.multiply(w.T)
    sym = sym.tocsr()
    sym.eliminate_zeros()
    return sym


def spectral_init(graph: sp.csr_matrix, n_components: int,
                  rng: np.random.Generator) -> np.ndarray | None:
    """Laplacian eigenmap layout; None when ARPACK fails to converge."""
    n = graph.shape[0]
    deg = np.asarray(graph.sum(axis=1)).reshape(-1)
    inv_sqrt = 1.0 / np.sqrt(np.maximum(deg, 1e-12))
    d_half = sp.diags(inv_sqrt)
    lap = sp.identity(n, format="csr") - d_half @ graph @ d_half
    shifted = 2.0 * sp.identity(n, format="csr") - lap
    k = n_components + 1
    try:
        vals, vecs = eigsh(
            shifted, k=k, which="LM",
            v0=np.full(n, 1.0 / np.sqrt(n)),
            tol=1e-4, maxiter=max(2000, n * 5),
        )
    except (ArpackError, ArpackNoConvergence):
        return None
    order = np.argsort(-vals)  # descending in 2 - lambda == ascending laplacian
    coords = vecs[:, order[1:k]]
    expansion = 10.0 / max(np.abs(coords).max(), 1e-12)
    return coords * expansion + rng.normal(scale=1e-4, size=coords.shape)


def _make_epochs_per_sample(weights: np.ndarray, n_epochs: int) -> np.ndarray:
    result = -1.0 * np.ones(weights.shape[0])
    n_samples = n_epochs * (weights / weights.max())
    result[n_samples > 0] = float(n_epochs) / n_samples[n_samples > 0]
    return result


@njit(cache=True)
def _xorshift(state):
    s = state[0]
    s ^= s >> np.uint64(12)
    s ^= (s << np.uint64(25)) & np.uint64(0xFFFFFFFFFFFFFFFF)
    s ^= s >> np.uint64(27)
    state[0] = s
    return (s * np.uint64(2685821657736338717)) >> np.uint64(32)


@njit(cache=True)
def _optimize_layout(emb, head, tail, epochs_per_sample, n_epochs, a, b,
                     gamma, initial_alpha, negative_sample_rate, rng_state):
    """Sequential SGD over the fuzzy cross-entropy with negative sampling."""
    n_vertices = emb.shape[0]
    dim = emb.shape[1]
    n_edges = epochs_per_sample.shape[0]
    epochs_per_negative = epochs_per_sample / negative_sample_rate
    next_sample = epochs_per_sample.copy()
    next_negative = epochs_per_negative.copy()
    for epoch in range(n_epochs):
        alpha = initial_alpha * (1.0 - epoch / n_epochs)
        for i in range(n_edges):
            if next_sample[i] > epoch:
                continue
            j = head[i]
            k = tail[i]
            d2 = 0.0
            for d in range(dim):
                diff = emb[j, d] - emb[k, d]
                d2 += diff * diff
            if d2 > 0.0:
                coeff = (-2.0 * a * b * d2 ** (b - 1.0)) / (a * d2**b + 1.0)
            else:
                coeff = 0.0
            for d in range(dim):
                g = coeff * (emb[j, d] - emb[k, d])
                if g > 4.0:
                    g = 4.0
                elif g < -4.0:
                    g = -4.0
                emb[j, d] += g * alpha
                emb[k, d] -= g * alpha
            next_sample[i] += epochs_per_sample[i]
            n_neg = int((epoch - next_negative[i]) / epochs_per_negative[i])
            for _ in range(n_neg):
                other = int(_xorshift(rng_state) % np.uint64(n_vertices))
                if other == j:
                    continue
                d2 = 0.0
                for d in range(dim):
                    diff = emb[j, d] - emb[other, d]
                    d2 += diff * diff
                if d2 > 0.0:
                    coeff = 2.0 * gamma * b / ((0.001 + d2) * (a * d2**b + 1.0))
                else:
                    coeff = 0.0
                for d in range(dim):
                    if coeff > 0.0:
                        g = coeff * (emb[j, d] - emb[other, d])
                        if g > 4.0:
                            g = 4.0
                        elif g < -4.0:
                            g = -4.0
                    else:
                        g = 4.0
                    emb[j, d] += g * alpha
            next_negative[i] += n_neg * epochs_per_negative[i]
    return emb


def umap_embed(x: np.ndarray, params: UmapParams) -> Embedding:
    """Embed points into R^{n_components} preserving local structure."""
    params.validate()
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ReduceError("input contains non-finite values")
    n = x.shape[0]
    if params.n_neighbors >= n:
        raise ReduceError(f"n_neighbors={params.n_neighbors} must be < n={n}")

    a, b = params.a, params.b
    if a is None or b is None:
        a, b = fit_curve_params(params.spread, params.min_dist)

    knn_idx, knn_dist = exact_knn(x, params.n_neighbors)
    sigma, rho = _smooth_knn_calibration(knn_dist, np.log2(params.n_neighbors))
    graph = membership_graph(knn_idx, knn_dist, sigma, rho)

    rng = np.random.default_rng(params.seed)
    n_comp, _ = connected_components(graph, directed=False)
    init = None
    if n_comp == 1:
        init = spectral_init(graph, params.n_components, rng)
    if init is None:
        init = rng.uniform(-10.0, 10.0, size=(n, params.n_components))
    emb = np.ascontiguousarray(init, dtype=np.float64)

    coo = graph.tocoo()
    weights = coo.data.copy()
    keep = weights >= weights.max() / float(params.n_epochs)
    head = coo.row[keep].astype(np.int64)
    tail = coo.col[keep].astype(np.int64)
    eps = _make_epochs_per_sample(weights[keep], params.n_epochs)

    mixed = (params.seed * 2862933555777941757 + 3037000493) % (1 << 64)
    rng_state = np.array([mixed if mixed else 1], dtype=np.uint64)
    _optimize_layout(
        emb, head, tail, eps, params.n_epochs, a, b,
        params.repulsion_strength, params.initial_alpha,
        params.negative_sample_rate, rng_state,
    )
    out_params = params.to_dict()
    out_params["a"], out_params["b"] = a, b
    return Embedding(values=emb, method="umap", params=out_params)


# -- strategy dispatcher -------------------------------------------------


def reduce_features(x: np.ndarray, spec: dict, seed: int) -> Embedding:
    """Run a reduction spec: {"method": pca|umap|pca_then_umap, "dims": ..}.

    pca_then_umap first projects to `pca_dims` components (or full rank,
    whichever is lower) and records the intermediate width used.
    """
    method = spec["method"]
    dims = int(spec["dims"])
    if method == "pca":
        _, emb = pca_fit_transform(x, dims)
        return emb
    umap_keys = ("n_neighbors", "min_dist", "spread", "n_epochs",
                 "negative_sample_rate", "a", "b")
    overrides = {k: spec[k] for k in umap_keys if k in spec}
    params = UmapParams(n_components=dims, seed=seed, **overrides)
    if method == "umap":
        return umap_embed(x, params)
    if method == "pca_then_umap":
        n, d = np.asarray(x).shape
        width = min(int(spec.get("pca_dims", 50)), n - 1, d)
        _, mid = pca_fit_transform(x, width)
        emb = umap_embed(mid.values, params)
        emb.method = "pca_then_umap"
        emb.params["pca_dims"] = width
        return emb
    raise ReduceError(f"unknown reduction method {method!r}")


# -- persistence ---------------------------------------------------------


def save_embedding(emb: Embedding, csv_path):
    csv_path = Path(csv_path)
    d = emb.values.shape[1]
    with open(csv_path, "w") as fh:
        fh.write("index," + ",".join(f"c{j}" for j in range(d)) + "\n")
        for i, row in enumerate(emb.values):
            fh.write(str(i) + "," + ",".join(repr(v) for v in row) + "\n")
    sidecar = csv_path.with_suffix(".params.json")
    sidecar.write_text(json.dumps({"method": emb.method, "params": emb.params}, indent=1))


def load_embedding(csv_path) -> Embedding:
    csv_path = Path(csv_path)
    with open(csv_path) as fh:
        next(fh)
        values = np.array([[float(v) for v in line.split(",")[1:]] for line in fh])
    sidecar = csv_path.with_suffix(".params.json")
    meta = json.loads(sidecar.read_text()) if sidecar.exists() else {"method": "unknown", "params": {}}
    return Embedding(values=values, method=meta["method"], params=meta["params"])
