"""Spatial dependency basis extraction.

The covariate rows are turned into a fuzzy neighbour graph, a low
dimensional layout is optimised against the fuzzy-set cross entropy between
that graph and the layout's own kernel, and new covariate rows are placed by
a kernel-weighted barycentre of their training neighbours.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numba
import numpy as np
import scipy.sparse as sp
from scipy import linalg
from scipy.optimize import least_squares
from scipy.special import xlogy

from .errors import CurveFitError, DegenerateGeometryError, EmbeddingDivergedError
from .observations import CovariateMatrix, NeighborGraph, Scaling, knn_search

log = logging.getLogger(__name__)

SIGMA_MIN = 1e-12
CALIBRATION_TOL = 1e-5
CALIBRATION_ITERS = 64
# distances at or below this count as an exact match in transform()
ZERO_DISTANCE = 1e-12
GRADIENT_CLIP = 4.0


@dataclass
class EmbeddingConfig:
    d: int = 4
    n_epochs: int = 500
    initial_lr: float = 1.0
    min_dist: float = 0.1
    spread: float = 1.0
    negative_sample_rate: int = 5
    rng_seed: int = 0

    def validate(self):
        from .errors import ConfigError
        if self.d < 1:
            raise ConfigError("embedding d must be >= 1")
        for name in ("n_epochs", "initial_lr", "min_dist", "spread", "negative_sample_rate"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"embedding {name} must be positive")


@dataclass(frozen=True, eq=False)
class FuzzyGraph:
    """Directed neighbour weights plus their symmetrised edge list.

    ``W[i, j]`` is the weight from point i to its j-th neighbour
    ``indices[i, j]``; ``rows``, ``cols``, ``weights`` hold the undirected
    graph (both directions of every edge).
    """

    features: np.ndarray
    indices: np.ndarray
    distances: np.ndarray
    W: np.ndarray
    rho: np.ndarray
    sigma: np.ndarray
    rows: np.ndarray
    cols: np.ndarray
    weights: np.ndarray

    @property
    def n(self) -> int:
        return int(self.features.shape[0])

    @property
    def m(self) -> int:
        return int(self.indices.shape[1])

    def symmetric_matrix(self) -> sp.csr_matrix:
        return sp.csr_matrix((self.weights, (self.rows, self.cols)), shape=(self.n, self.n))


@dataclass(frozen=True)
class EmbeddingCurve:
    a: float
    b: float

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        return 1.0 / (1.0 + self.a * t ** (2.0 * self.b))


@dataclass(eq=False)
class SdbModel:
    d: int
    Y: np.ndarray
    graph: FuzzyGraph
    curve: EmbeddingCurve
    rng_seed: int
    train_covariates: CovariateMatrix | None = None
    loss_history: list = field(default_factory=list)

    @property
    def features(self) -> np.ndarray:
        return self.graph.features

    @property
    def k(self) -> int:
        return self.graph.m


def calibrate(distances: np.ndarray, target: float | None = None):
    """Per-row (rho, sigma) so that sum_j exp(-(d_ij - rho_i)/sigma_i) hits ``target``.

    ``target`` defaults to log2 of the row length. Rows where the target
    cannot be met from above (it is below the number of neighbours tied at
    rho) drive sigma down to ``SIGMA_MIN``.
    """
    distances = np.asarray(distances, dtype=float)
    n, m = distances.shape
    if target is None:
        target = np.log2(m)
    if n == 0:
        return np.empty(0), np.empty(0)
    rho = distances.min(axis=1)
    gap = np.maximum(distances - rho[:, None], 0.0)

    lo = np.zeros(n)
    hi = np.full(n, np.inf)
    mid = np.ones(n)
    done = np.zeros(n, dtype=bool)
    for _ in range(CALIBRATION_ITERS):
        psum = np.exp(-gap / mid[:, None]).sum(axis=1)
        done |= np.abs(psum - target) < CALIBRATION_TOL
        active = ~done
        if not active.any():
            break
        over = active & (psum > target)
        under = active & ~over
        hi[over] = mid[over]
        lo[under] = mid[under]
        bounded = np.isfinite(hi)
        mid = np.where(active & bounded, 0.5 * (lo + hi), mid)
        mid = np.where(active & ~bounded, mid * 2.0, mid)
    sigma = np.maximum(mid, SIGMA_MIN)
    return rho, sigma


def membership(distances: np.ndarray, rho: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    gap = np.maximum(distances - rho[:, None], 0.0)
    return np.exp(-gap / sigma[:, None])


def symmetrize(W: np.ndarray, indices: np.ndarray):
    """Probabilistic t-conorm w_ij + w_ji - w_ij * w_ji as a COO edge list."""
    n, m = W.shape
    P = sp.csr_matrix((W.ravel(), (np.repeat(np.arange(n), m), indices.ravel())), shape=(n, n))
    P.sum_duplicates()
    Pt = P.T.tocsr()
    S = (P + Pt - P.multiply(Pt)).tocoo()
    keep = S.data > 0
    rows, cols, weights = S.row[keep], S.col[keep], S.data[keep]
    order = np.lexsort((cols, rows))
    return rows[order].astype(np.int64), cols[order].astype(np.int64), weights[order]


def fuzzy_graph_from_features(features: np.ndarray, indices: np.ndarray) -> FuzzyGraph:
    """Weight a fixed neighbour structure by distances in feature space."""
    features = np.asarray(features, dtype=float)
    indices = np.asarray(indices, dtype=np.int64)
    n = features.shape[0]
    if n < 2 or np.all(features == features[0]):
        raise DegenerateGeometryError("all covariate rows are identical")
    diff = features[:, None, :] - features[indices]
    distances = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    rho, sigma = calibrate(distances)
    W = membership(distances, rho, sigma)
    rows, cols, weights = symmetrize(W, indices)
    return FuzzyGraph(features, indices, distances, W, rho, sigma, rows, cols, weights)


def build_fuzzy_graph(cov: CovariateMatrix, graph: NeighborGraph) -> FuzzyGraph:
    """Fuzzy graph over the spatial neighbour graph, distances in covariate space."""
    if cov.n != graph.n or cov.m != graph.m:
        raise ValueError("covariates and neighbour graph disagree on N or m")
    return fuzzy_graph_from_features(cov.rows, graph.indices)


def _target_curve(t, min_dist, spread):
    return np.where(t <= min_dist, 1.0, np.exp(-(t - min_dist) / spread))


def fit_curve(min_dist: float = 0.1, spread: float = 1.0) -> EmbeddingCurve:
    """Least-squares fit of 1 / (1 + a t^(2b)) to the offset exponential kernel."""
    if not (0 < min_dist < 3 * spread):
        raise ValueError("need 0 < min_dist < 3 * spread")
    t = np.linspace(0.0, 3.0 * spread, 301)[1:]
    target = _target_curve(t, min_dist, spread)

    def resid(p):
        a, b = p
        return 1.0 / (1.0 + a * t ** (2.0 * b)) - target

    res = least_squares(resid, x0=[1.0, 1.0], method="lm", gtol=1e-8, xtol=1e-12,
                        ftol=1e-12, max_nfev=200 * 3)
    a, b = res.x
    if not res.success or a <= 0 or b <= 0:
        raise CurveFitError(f"curve fit did not converge: {res.message}",
                            residual=float(np.sum(res.fun ** 2)))
    return EmbeddingCurve(float(a), float(b))


def cross_entropy(w, mu, eps: float = 1e-12) -> float:
    """Fuzzy-set cross entropy between weights ``w`` and ``mu``; 0 log 0 = 0."""
    w = np.asarray(w, dtype=float)
    mu = np.asarray(mu, dtype=float)
    mu = np.where(w == mu, mu, np.clip(mu, eps, 1.0 - eps))
    terms = (xlogy(w, w) - xlogy(w, mu)
             + xlogy(1.0 - w, 1.0 - w) - xlogy(1.0 - w, 1.0 - mu))
    return float(np.sum(terms))


def embedding_loss(graph: FuzzyGraph, Y: np.ndarray, curve: EmbeddingCurve) -> float:
    diff = Y[graph.rows] - Y[graph.cols]
    dist = np.sqrt(np.einsum("ij,ij->i", diff, diff))
    return cross_entropy(graph.weights, curve(dist))


def spectral_layout(graph: FuzzyGraph, d: int, rng: np.random.Generator) -> np.ndarray:
    """Eigenvectors 1..d of the normalised graph Laplacian, scaled to +-10."""
    n = graph.n
    if n < d + 2:
        raise linalg.LinAlgError("too few points for a spectral layout")
    A = graph.symmetric_matrix().toarray()
    deg = A.sum(axis=1)
    inv_sqrt = 1.0 / np.sqrt(deg)
    L = np.eye(n) - inv_sqrt[:, None] * A * inv_sqrt[None, :]
    _, vecs = linalg.eigh(L, subset_by_index=[0, d])
    Y = vecs[:, 1:d + 1]
    # fix the sign ambiguity of each eigenvector
    pivot = np.argmax(np.abs(Y), axis=0)
    Y = Y * np.sign(Y[pivot, np.arange(d)])
    Y = 10.0 * Y / np.max(np.abs(Y))
    return Y + rng.normal(scale=1e-4, size=Y.shape)


@numba.njit(cache=True)
def _next_random(state):
    # splitmix64 step, state is a length-1 uint64 array
    state[0] += np.uint64(0x9E3779B97F4A7C15)
    z = state[0]
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


@numba.njit(cache=True)
def _clip(v):
    if v > 4.0:
        return 4.0
    if v < -4.0:
        return -4.0
    return v


@numba.njit(cache=True)
def _sgd_epochs(Y, head, tail, epochs_per_sample, epoch_next, epochs_per_neg, epoch_next_neg,
                a, b, initial_lr, n_epochs, start, stop, state):
    """Run epochs [start, stop); returns -1 or the epoch of a non-finite gradient."""
    n_vertices, dim = Y.shape
    n_edges = head.shape[0]
    for n in range(start, stop):
        alpha = initial_lr * (1.0 - n / n_epochs)
        for e in range(n_edges):
            if epoch_next[e] > n:
                continue
            j = head[e]
            k = tail[e]
            dist_sq = 0.0
            for c in range(dim):
                diff = Y[j, c] - Y[k, c]
                dist_sq += diff * diff
            if dist_sq > 0.0:
                coeff = -2.0 * a * b * dist_sq ** (b - 1.0) / (a * dist_sq ** b + 1.0)
            else:
                coeff = 0.0
            for c in range(dim):
                g = coeff * (Y[j, c] - Y[k, c])
                if not np.isfinite(g):
                    return n
                g = _clip(g)
                Y[j, c] += g * alpha
                Y[k, c] -= g * alpha
            epoch_next[e] += epochs_per_sample[e]

            n_neg = int((n - epoch_next_neg[e]) / epochs_per_neg[e])
            for _ in range(n_neg):
                k = np.int64(_next_random(state) % np.uint64(n_vertices))
                if j == k:
                    continue
                dist_sq = 0.0
                for c in range(dim):
                    diff = Y[j, c] - Y[k, c]
                    dist_sq += diff * diff
                if dist_sq > 0.0:
                    coeff = 2.0 * b / ((0.001 + dist_sq) * (a * dist_sq ** b + 1.0))
                else:
                    coeff = 0.0
                for c in range(dim):
                    if coeff > 0.0:
                        g = coeff * (Y[j, c] - Y[k, c])
                        if not np.isfinite(g):
                            return n
                        g = _clip(g)
                    else:
                        g = 4.0
                    Y[j, c] += g * alpha
            epoch_next_neg[e] += n_neg * epochs_per_neg[e]
    return -1


def optimize_embedding(graph: FuzzyGraph, cfg: EmbeddingConfig | None = None,
                       loss_every: int = 50) -> SdbModel:
    """Optimise a d-dimensional layout of ``graph`` by negative-sampling SGD.

    Deterministic for a given ``cfg.rng_seed``. ``loss_history`` holds
    (epoch, cross entropy) pairs, starting at epoch 0 and ending at
    ``n_epochs``.
    """
    cfg = cfg or EmbeddingConfig()
    cfg.validate()
    width = graph.features.shape[1]
    if not cfg.d < width:
        raise ValueError(f"embedding d={cfg.d} must be below the covariate width {width}")
    curve = fit_curve(cfg.min_dist, cfg.spread)
    rng = np.random.default_rng(cfg.rng_seed)

    try:
        Y = spectral_layout(graph, cfg.d, rng)
    except (linalg.LinAlgError, ValueError, FloatingPointError) as exc:
        log.warning("spectral initialisation failed (%s); using random layout", exc)
        Y = rng.uniform(-10.0, 10.0, size=(graph.n, cfg.d))
    lo, hi = Y.min(axis=0), Y.max(axis=0)
    Y = 10.0 * (Y - lo) / np.where(hi > lo, hi - lo, 1.0)
    Y = np.ascontiguousarray(Y, dtype=np.float64)

    n_epochs = int(cfg.n_epochs)
    weights = graph.weights
    epochs_per_sample = weights.max() / weights
    keep = epochs_per_sample <= n_epochs
    order = rng.permutation(int(keep.sum()))
    head = np.ascontiguousarray(graph.rows[keep][order])
    tail = np.ascontiguousarray(graph.cols[keep][order])
    eps = np.ascontiguousarray(epochs_per_sample[keep][order])
    epochs_per_neg = eps / cfg.negative_sample_rate
    epoch_next = eps.copy()
    epoch_next_neg = epochs_per_neg.copy()
    state = np.array([rng.integers(0, 2 ** 63)], dtype=np.uint64)

    history = [(0, embedding_loss(graph, Y, curve))]
    step = max(1, int(loss_every))
    for start in range(0, n_epochs, step):
        stop = min(start + step, n_epochs)
        bad = _sgd_epochs(Y, head, tail, eps, epoch_next, epochs_per_neg, epoch_next_neg,
                          curve.a, curve.b, float(cfg.initial_lr), n_epochs, start, stop, state)
        if bad >= 0:
            raise EmbeddingDivergedError(int(bad))
        history.append((stop, embedding_loss(graph, Y, curve)))
    if not np.all(np.isfinite(Y)):
        raise EmbeddingDivergedError(n_epochs)
    return SdbModel(cfg.d, Y, graph, curve, cfg.rng_seed, loss_history=history)


def fit_sdb(cov: CovariateMatrix, graph: NeighborGraph, cfg: EmbeddingConfig | None = None) -> SdbModel:
    model = optimize_embedding(build_fuzzy_graph(cov, graph), cfg)
    model.train_covariates = cov
    return model


def transform_rows(features: np.ndarray, Y: np.ndarray, k: int, rows: np.ndarray) -> np.ndarray:
    rows = np.asarray(rows, dtype=float).reshape(-1, features.shape[1])
    out = np.empty((rows.shape[0], Y.shape[1]))
    if rows.shape[0] == 0:
        return out
    k = min(int(k), features.shape[0])
    idx, dist = knn_search(rows, features, k, exclude_self=False)
    rho, sigma = calibrate(dist)
    w = membership(dist, rho, sigma)
    out[:] = np.einsum("qk,qkd->qd", w, Y[idx]) / w.sum(axis=1)[:, None]
    exact = dist[:, 0] <= ZERO_DISTANCE
    out[exact] = Y[idx[exact, 0]]
    if not np.all(np.isfinite(out)):
        raise DegenerateGeometryError("non-finite transform output")
    return out


def transform(model: SdbModel, query_cov) -> np.ndarray:
    """Embed query covariate rows (already scaled with the training scaling).

    Each row lands at the kernel-weighted mean of the embedded positions of
    its k = m nearest training rows in covariate space; a row matching a
    training row exactly returns that row's embedding.
    """
    rows = query_cov.rows if isinstance(query_cov, CovariateMatrix) else query_cov
    return transform_rows(model.features, model.Y, model.k, rows)


def knn_preservation(features: np.ndarray, Y: np.ndarray, m: int) -> float:
    """Fraction of embedded 1-NN pairs that are m-NN pairs in feature space."""
    nn_y, _ = knn_search(Y, Y, 1, exclude_self=True)
    nn_x, _ = knn_search(features, features, m, exclude_self=True)
    hits = [nn_y[i, 0] in nn_x[i] for i in range(len(Y))]
    return float(np.mean(hits))


def sdb_to_dict(model: SdbModel) -> dict:
    g = model.graph
    out = {
        "d": model.d,
        "rng_seed": model.rng_seed,
        "a": model.curve.a,
        "b": model.curve.b,
        "Y": model.Y.tolist(),
        "features": g.features.tolist(),
        "indices": g.indices.tolist(),
        "rho": g.rho.tolist(),
        "sigma": g.sigma.tolist(),
        "loss_history": [[int(e), float(v)] for e, v in model.loss_history],
    }
    if model.train_covariates is not None:
        cov = model.train_covariates
        out["covariates"] = {
            "m": cov.m,
            "raw": cov.raw.tolist(),
            "minimum": cov.scaling.minimum.tolist(),
            "maximum": cov.scaling.maximum.tolist(),
        }
    return out


def sdb_from_dict(data: dict) -> SdbModel:
    features = np.array(data["features"], dtype=float)
    indices = np.array(data["indices"], dtype=np.int64).reshape(features.shape[0], -1)
    diff = features[:, None, :] - features[indices]
    distances = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    rho = np.array(data["rho"], dtype=float)
    sigma = np.array(data["sigma"], dtype=float)
    W = membership(distances, rho, sigma)
    rows, cols, weights = symmetrize(W, indices)
    graph = FuzzyGraph(features, indices, distances, W, rho, sigma, rows, cols, weights)
    cov = None
    if "covariates" in data:
        c = data["covariates"]
        scaling = Scaling(np.array(c["minimum"], dtype=float), np.array(c["maximum"], dtype=float))
        cov = CovariateMatrix(int(c["m"]), np.array(c["raw"], dtype=float), features, scaling)
    return SdbModel(int(data["d"]), np.array(data["Y"], dtype=float),
                    graph, EmbeddingCurve(float(data["a"]), float(data["b"])),
                    int(data["rng_seed"]), cov,
                    [tuple(x) for x in data.get("loss_history", [])])
