"""Reference interpolators: inverse distance weighting, ordinary Kriging with
a fitted variogram, and Gaussian process regression."""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np
from scipy import linalg
from scipy.optimize import least_squares
from scipy.spatial.distance import cdist, pdist

from .errors import InsufficientDataError, NumericalError
from .observations import ObservationSet, knn_search

log = logging.getLogger(__name__)

ZERO_DISTANCE = 1e-12
VARIOGRAM_KINDS = ("spherical", "exponential", "gaussian")
GP_KERNELS = ("squared-exponential", "exponential")


def _queries(queries) -> np.ndarray:
    return np.asarray(queries, dtype=float).reshape(-1, 2)


# -- inverse distance weighting ------------------------------------------------

@dataclass
class IdwConfig:
    power: float = 2.0
    max_neighbors: int | None = None


def idw_predict(obs: ObservationSet, queries, cfg: IdwConfig | None = None) -> np.ndarray:
    """Shepard interpolation, sum(w_i v_i) / sum(w_i) with w_i = d_i^-power."""
    cfg = cfg or IdwConfig()
    if obs.n == 0:
        raise InsufficientDataError("IDW needs at least one observation")
    if not (np.isfinite(cfg.power) and cfg.power > 0):
        raise ValueError("IDW power must be finite and positive")
    q = _queries(queries)
    if q.shape[0] == 0:
        return np.empty(0)
    k = obs.n if cfg.max_neighbors is None else min(int(cfg.max_neighbors), obs.n)
    idx, dist = knn_search(q, obs.xy, k, exclude_self=False)
    vals = obs.values[idx]
    out = np.empty(q.shape[0])
    exact = dist[:, 0] < ZERO_DISTANCE
    out[exact] = vals[exact, 0]
    d = dist[~exact]
    # relative to the nearest distance: same ratios, no overflow, leading weight exactly 1
    w = (d[:, :1] / d) ** cfg.power
    out[~exact] = (w * vals[~exact]).sum(axis=1) / w.sum(axis=1)
    return out


# -- variogram and ordinary Kriging --------------------------------------------

@dataclass(frozen=True)
class VariogramModel:
    """Isotropic variogram; gamma(0) = 0, the nugget is a jump at h > 0.

    ``range`` is the scale parameter ``r`` of the model:
    spherical reaches the sill at h = r, exponential uses exp(-h/r),
    gaussian uses exp(-(h/r)^2).
    """

    kind: str
    nugget: float
    sill: float
    range: float
    n_lags: int = 15
    lags: tuple = ()
    semivariance: tuple = ()
    counts: tuple = ()

    def __call__(self, h):
        h = np.asarray(h, dtype=float)
        psill = self.sill - self.nugget
        r = self.range
        if self.kind == "spherical":
            s = np.minimum(h / r, 1.0)
            shape = 1.5 * s - 0.5 * s ** 3
        elif self.kind == "exponential":
            shape = 1.0 - np.exp(-h / r)
        elif self.kind == "gaussian":
            shape = 1.0 - np.exp(-(h / r) ** 2)
        else:
            raise ValueError(f"unknown variogram kind {self.kind!r}")
        return np.where(h > 0, self.nugget + psill * shape, 0.0)

    def lag_table(self) -> str:
        lines = ["lag,semivariance,pairs,model"]
        for h, g, c in zip(self.lags, self.semivariance, self.counts):
            lines.append(f"{h!r},{g!r},{int(c)},{float(self(h))!r}")
        return "\n".join(lines) + "\n"


def empirical_variogram(obs: ObservationSet, n_lags: int = 15):
    """Binned semivariance up to half the largest pairwise distance."""
    h = pdist(obs.xy)
    dv = pdist(obs.values[:, None])
    gamma = 0.5 * dv ** 2
    max_lag = 0.5 * h.max()
    edges = np.linspace(0.0, max_lag, n_lags + 1)
    which = np.digitize(h, edges[1:-1])
    inside = h <= max_lag
    counts = np.bincount(which[inside], minlength=n_lags).astype(float)
    sums = np.bincount(which[inside], weights=gamma[inside], minlength=n_lags)
    hsum = np.bincount(which[inside], weights=h[inside], minlength=n_lags)
    keep = counts > 0
    return hsum[keep] / counts[keep], sums[keep] / counts[keep], counts[keep]


def fit_variogram(obs: ObservationSet, kind: str = "spherical", n_lags: int = 15) -> VariogramModel:
    """Fit nugget, sill and range by least squares weighted with pair counts."""
    if kind not in VARIOGRAM_KINDS:
        raise ValueError(f"unknown variogram kind {kind!r}")
    if obs.n < 10:
        raise InsufficientDataError(f"variogram fitting needs at least 10 observations, got {obs.n}")
    lags, semi, counts = empirical_variogram(obs, n_lags)
    table = dict(lags=tuple(lags.tolist()), semivariance=tuple(semi.tolist()),
                 counts=tuple(counts.tolist()))
    if np.ptp(obs.values) == 0:
        log.warning("all observed values are identical; using a pure-nugget variogram")
        return VariogramModel(kind, 0.0, 0.0, float(lags.max()), n_lags, **table)

    gmax = float(semi.max())
    hmax = float(lags.max())
    sw = np.sqrt(counts / counts.sum())

    def resid(p):
        nugget, psill, r = p
        model = VariogramModel(kind, nugget, nugget + psill, r)
        return sw * (model(lags) - semi)

    x0 = [min(float(semi.min()), 0.5 * gmax), max(gmax - float(semi.min()), 1e-12 * gmax), 0.5 * hmax]
    res = least_squares(resid, x0, bounds=([0.0, 0.0, 1e-6 * hmax], [gmax, 2.0 * gmax, 4.0 * hmax]),
                        method="trf", xtol=1e-12, ftol=1e-12, gtol=1e-12)
    nugget, psill, r = res.x
    return VariogramModel(kind, float(nugget), float(nugget + psill), float(r), n_lags, **table)


@dataclass
class KrigingResult:
    values: np.ndarray
    variance: np.ndarray
    weights: np.ndarray  # (Q, N), each row sums to 1


def kriging_predict(obs: ObservationSet, queries, vgm: VariogramModel, return_weights: bool = False):
    """Ordinary Kriging with the unbiasedness constraint as a Lagrange multiplier.

    Returns ``(values, variance)``, or a KrigingResult with the weights when
    ``return_weights`` is set.
    """
    q = _queries(queries)
    n = obs.n
    mean = float(obs.values.mean())
    K = np.ones((n + 1, n + 1))
    K[:n, :n] = vgm(cdist(obs.xy, obs.xy))
    K[n, n] = 0.0
    rhs = np.ones((n + 1, q.shape[0]))
    rhs[:n] = vgm(cdist(obs.xy, q))

    if not np.isfinite(np.linalg.cond(K)) or np.linalg.cond(K) > 1e14:
        log.warning("ordinary Kriging system is singular; adding 1e-10 to the diagonal")
        K[np.arange(n), np.arange(n)] += 1e-10
    sol = linalg.solve(K, rhs, assume_a="sym")
    lam, mu = sol[:n], sol[n]
    values = lam.T @ (obs.values - mean) + mean
    variance = np.maximum(np.einsum("nq,nq->q", lam, rhs[:n]) + mu, 0.0)
    if return_weights:
        return KrigingResult(values, variance, lam.T)
    return values, variance


# -- Gaussian process regression -----------------------------------------------

@dataclass
class GpConfig:
    kernel: str = "squared-exponential"
    length_scale: float = 1.0
    signal_variance: float = 1.0
    noise_variance: float = 1e-6
    hyperparameter_fit: str = "grid-ML"
    grid_size: int = 10


def kernel_matrix(kind: str, d: np.ndarray, length_scale: float, signal_variance: float) -> np.ndarray:
    if kind == "squared-exponential":
        return signal_variance * np.exp(-0.5 * (d / length_scale) ** 2)
    if kind == "exponential":
        return signal_variance * np.exp(-d / length_scale)
    raise ValueError(f"unknown kernel {kind!r}")


def _cholesky(K: np.ndarray, noise: float):
    """Cholesky of K + noise I, escalating the jitter x10 up to 1e-2."""
    jitter = noise
    n = K.shape[0]
    while True:
        try:
            return linalg.cho_factor(K + max(jitter, 0.0) * np.eye(n), lower=True), jitter
        except linalg.LinAlgError:
            jitter = max(jitter * 10.0, 1e-12)
            if jitter > 1e-2:
                raise NumericalError("GP covariance is not positive definite even with 1e-2 jitter") from None
            log.warning("GP Cholesky failed; raising jitter to %g", jitter)


def log_marginal_likelihood(kind, d, y, length_scale, signal_variance, noise) -> float:
    K = kernel_matrix(kind, d, length_scale, signal_variance)
    (c, lower), _ = _cholesky(K, noise)
    alpha = linalg.cho_solve((c, lower), y)
    return float(-0.5 * y @ alpha - np.log(np.diag(c)).sum() - 0.5 * len(y) * np.log(2 * np.pi))


@dataclass
class GpModel:
    cfg: GpConfig
    xy: np.ndarray
    mean: float
    alpha: np.ndarray
    factor: tuple
    noise: float

    def predict(self, queries):
        q = _queries(queries)
        cfg = self.cfg
        Ks = kernel_matrix(cfg.kernel, cdist(self.xy, q), cfg.length_scale, cfg.signal_variance)
        mean = Ks.T @ self.alpha + self.mean
        v = linalg.solve_triangular(self.factor[0], Ks, lower=True)
        var = np.maximum(cfg.signal_variance - np.einsum("nq,nq->q", v, v), 0.0)
        return mean, var


def gp_fit(obs: ObservationSet, cfg: GpConfig | None = None) -> GpModel:
    cfg = cfg or GpConfig()
    if cfg.kernel not in GP_KERNELS:
        raise ValueError(f"unknown kernel {cfg.kernel!r}")
    mean = float(obs.values.mean())
    y = obs.values - mean
    d = cdist(obs.xy, obs.xy)
    if cfg.hyperparameter_fit == "grid-ML":
        pair = d[np.triu_indices(obs.n, 1)]
        pair = pair[pair > 0]
        ls_grid = np.geomspace(pair.min(), pair.max(), cfg.grid_size)
        var0 = float(y.var()) if y.var() > 0 else 1.0
        sv_grid = np.geomspace(0.1 * var0, 10.0 * var0, cfg.grid_size)
        best = (-np.inf, None)
        for ls in ls_grid:
            for sv in sv_grid:
                try:
                    ll = log_marginal_likelihood(cfg.kernel, d, y, ls, sv, cfg.noise_variance)
                except NumericalError:
                    continue
                if ll > best[0]:
                    best = (ll, (ls, sv))
        if best[1] is None:
            raise NumericalError("no GP hyperparameters on the grid gave a valid factorisation")
        cfg = replace(cfg, length_scale=float(best[1][0]), signal_variance=float(best[1][1]),
                      hyperparameter_fit="fixed")
    elif cfg.hyperparameter_fit != "fixed":
        raise ValueError(f"unknown hyperparameter_fit {cfg.hyperparameter_fit!r}")
    K = kernel_matrix(cfg.kernel, d, cfg.length_scale, cfg.signal_variance)
    factor, noise = _cholesky(K, cfg.noise_variance)
    alpha = linalg.cho_solve(factor, y)
    return GpModel(cfg, obs.xy.copy(), mean, alpha, factor, noise)


def gp_predict(obs: ObservationSet, queries, cfg: GpConfig | None = None):
    """Posterior mean and latent variance at the query points."""
    return gp_fit(obs, cfg).predict(queries)
