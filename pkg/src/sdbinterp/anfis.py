"""Takagi-Sugeno fuzzy inference network with hybrid training.

Every input dimension carries two generalised bell membership functions

    mu(s) = 1 / (1 + ((s - g) / e)^(2f))

and every combination of one label per dimension is a rule, so d inputs give
2^d rules. Rule t fires with the product of its memberships; the firing
strengths are normalised and each rule contributes a linear function of the
inputs.

Premise vector layout: [e11, f11, g11, e12, f12, g12, ..., ed1, fd1, gd1, ed2, fd2, gd2].
Rule t uses label ``RULE_TABLE[t, l]`` on dimension l, enumerated in
``itertools.product`` order (first dimension varies slowest).

Shapes used below:

    X       (n, d)          inputs
    logmu   (n, d, 2)       log memberships
    wbar    (n, T)          normalised firing strengths
    f       (n, T)          rule outputs C_t . [x, 1]
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, logsumexp

from .errors import DataError, DegenerateDimensionError, DivergedError, InsufficientDataError

log = logging.getLogger(__name__)

N_LABELS = 2
PARAM_FLOOR = 1e-4
MAX_DIM = 10
_BETA1, _BETA2 = 0.9, 0.999
_MAX_HALVINGS = 20


def rule_table(d: int) -> np.ndarray:
    return np.array(list(itertools.product(range(N_LABELS), repeat=d)), dtype=np.int64).reshape(-1, d)


@dataclass(eq=False)
class RuleBase:
    d: int
    premise: np.ndarray
    consequents: np.ndarray

    def __post_init__(self):
        self.premise = np.asarray(self.premise, dtype=float).reshape(6 * self.d)
        self.consequents = np.asarray(self.consequents, dtype=float).reshape(self.n_rules, self.d + 1)

    @property
    def n_rules(self) -> int:
        return N_LABELS ** self.d

    @property
    def params(self) -> np.ndarray:
        """Premise as a (d, 2, 3) view of (e, f, g)."""
        return self.premise.reshape(self.d, N_LABELS, 3)

    @property
    def e(self):
        return self.params[:, :, 0]

    @property
    def f(self):
        return self.params[:, :, 1]

    @property
    def g(self):
        return self.params[:, :, 2]

    def copy(self) -> "RuleBase":
        return RuleBase(self.d, self.premise.copy(), self.consequents.copy())

    def to_dict(self) -> dict:
        return {"d": self.d, "premise": self.premise.tolist(),
                "consequents": self.consequents.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "RuleBase":
        return cls(int(data["d"]), data["premise"], data["consequents"])


@dataclass
class TrainConfig:
    epochs: int = 200
    lr: float = 0.03
    rls_forgetting: float = 1.0
    rls_init_cov: float = 1e6
    early_stop_tol: float = 1e-6
    early_stop_window: int = 10
    # "adam": gradient scaled by running moment estimates; "gd": raw gradient
    optimizer: str = "adam"
    rng_seed: int = 0

    def validate(self):
        from .errors import ConfigError
        if self.epochs < 1 or self.lr <= 0 or self.rls_init_cov <= 0 or self.early_stop_tol < 0:
            raise ConfigError("train epochs, lr and rls_init_cov must be positive")
        if not 0.9 < self.rls_forgetting <= 1.0:
            raise ConfigError("rls_forgetting must lie in (0.9, 1]")
        if self.optimizer not in ("adam", "gd"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")


@dataclass
class FitReport:
    rmse: list = field(default_factory=list)
    premise: np.ndarray | None = None
    consequents: np.ndarray | None = None
    epochs_run: int = 0
    final_rmse: float = float("nan")
    d: int = 0

    @property
    def rulebase(self) -> RuleBase:
        return RuleBase(self.d, self.premise.copy(), self.consequents.copy())


def init_rulebase(sdb_train, k: int = N_LABELS) -> RuleBase:
    """Centres at the 25th/75th percentiles, widths range/(2k), slopes 2."""
    X = np.asarray(sdb_train, dtype=float)
    if X.ndim != 2 or X.shape[0] < 2:
        raise InsufficientDataError("need at least 2 training rows")
    if k != N_LABELS:
        raise ValueError("exactly two membership functions per input are supported")
    n, d = X.shape
    if d > MAX_DIM:
        log.warning("d=%d gives %d rules; beyond the practical ceiling of d=%d", d, 2 ** d, MAX_DIM)
    lo, hi = X.min(axis=0), X.max(axis=0)
    span = hi - lo
    for l in range(d):
        if not span[l] > 0:
            raise DegenerateDimensionError(l)
    params = np.empty((d, N_LABELS, 3))
    params[:, :, 0] = (span / (2 * k))[:, None]
    params[:, :, 1] = 2.0
    params[:, :, 2] = np.percentile(X, [25, 75], axis=0).T
    return RuleBase(d, params.ravel(), np.zeros((N_LABELS ** d, d + 1)))


def _log_memberships(rb: RuleBase, X: np.ndarray):
    u = (X[:, :, None] - rb.g[None]) / rb.e[None]
    with np.errstate(divide="ignore"):
        L = rb.f[None] * np.log(u * u)
    return u, L, -np.logaddexp(0.0, L)


def _normalized_weights(logmu: np.ndarray, rules: np.ndarray):
    d = rules.shape[1]
    logw = logmu[:, np.arange(d)[None, :], rules].sum(axis=2)
    # log-domain normalisation: identical to w / sum(w) and immune to underflow
    return np.exp(logw - logsumexp(logw, axis=1, keepdims=True))


def _forward(rb: RuleBase, X: np.ndarray, rules: np.ndarray | None = None):
    if rules is None:
        rules = rule_table(rb.d)
    u, L, logmu = _log_memberships(rb, X)
    wbar = _normalized_weights(logmu, rules)
    X1 = np.hstack([X, np.ones((X.shape[0], 1))])
    f = X1 @ rb.consequents.T
    yhat = np.einsum("nt,nt->n", wbar, f)
    return yhat, wbar, f, X1, u, L


def forward(rb: RuleBase, sdb):
    """Estimate and normalised rule weights for one input vector."""
    x = np.asarray(sdb, dtype=float).reshape(1, rb.d)
    if not np.all(np.isfinite(x)):
        raise DataError("non-finite input")
    yhat, wbar, *_ = _forward(rb, x)
    return float(yhat[0]), wbar[0]


def predict(rb: RuleBase, sdb_batch) -> np.ndarray:
    X = np.asarray(sdb_batch, dtype=float).reshape(-1, rb.d)
    if X.shape[0] == 0:
        return np.empty(0)
    if not np.all(np.isfinite(X)):
        raise DataError("non-finite input")
    return _forward(rb, X)[0]


def premise_gradient(rb: RuleBase, X, targets, rules=None) -> np.ndarray:
    """Gradient of the summed squared error with respect to the premise vector."""
    X = np.asarray(X, dtype=float).reshape(-1, rb.d)
    targets = np.asarray(targets, dtype=float).reshape(-1)
    if rules is None:
        rules = rule_table(rb.d)
    yhat, wbar, f, _, u, L = _forward(rb, X, rules)
    resid = yhat - targets
    # d yhat / d log w_t
    G = wbar * (f - yhat[:, None])
    onehot = np.zeros((rules.shape[0], rb.d, N_LABELS))
    onehot[np.arange(rules.shape[0])[:, None], np.arange(rb.d)[None, :], rules] = 1.0
    S = np.einsum("nt,tlk->nlk", G, onehot)

    s = expit(L)  # mu * (u^2)^f
    e, fpow = rb.e[None], rb.f[None]
    with np.errstate(divide="ignore", invalid="ignore"):
        dg = np.where(u != 0.0, 2.0 * fpow * s / (u * e), 0.0)
        df = np.where(u != 0.0, -s * np.log(u * u), 0.0)
    de = 2.0 * fpow * s / e

    w = 2.0 * resid[:, None, None] * S
    grad = np.stack([(w * de).sum(axis=0), (w * df).sum(axis=0), (w * dg).sum(axis=0)], axis=-1)
    return grad.ravel()


def sse(rb: RuleBase, X, targets) -> float:
    r = predict(rb, X) - np.asarray(targets, dtype=float)
    return float(r @ r)


def rls(A, y, forgetting: float = 1.0, init_cov: float = 1e6, theta0=None) -> np.ndarray:
    """One recursive least squares sweep over the rows of ``A``.

    Starts from covariance ``init_cov * I``; with forgetting 1 and a large
    ``init_cov`` this converges to the ordinary least squares solution.
    """
    A = np.asarray(A, dtype=float)
    y = np.asarray(y, dtype=float)
    n, p = A.shape
    theta = np.zeros(p) if theta0 is None else np.array(theta0, dtype=float)
    P = np.eye(p) * init_cov
    for i in range(n):
        a = A[i]
        Pa = P @ a
        innov = forgetting + a @ Pa
        if not innov > 0:
            log.warning("RLS covariance lost positive definiteness at row %d; reinitialising", i)
            P = np.eye(p) * init_cov
            Pa = P @ a
            innov = forgetting + a @ Pa
        gain = Pa / innov
        theta += gain * (y[i] - a @ theta)
        P = (P - np.outer(gain, Pa)) / forgetting
        P = 0.5 * (P + P.T)
    return theta


def regressors(wbar: np.ndarray, X1: np.ndarray) -> np.ndarray:
    """Rows [wbar_1 * (x, 1), ..., wbar_T * (x, 1)] for the consequent fit."""
    return (wbar[:, :, None] * X1[:, None, :]).reshape(wbar.shape[0], -1)


def fit(rb: RuleBase, sdb_train, targets, cfg: TrainConfig | None = None) -> FitReport:
    """Hybrid training; ``rb`` is left untouched, the result is in the report.

    Each epoch holds the premise fixed and fits the consequents by one RLS
    sweep, records the training RMSE, then takes one full-batch gradient step
    on the premise (summed squared error). With ``optimizer="adam"`` the
    gradient is rescaled per parameter by running moment estimates; with
    ``"gd"`` the raw gradient times ``lr`` is used. A step is halved until the
    refitted error drops, and an Adam step that never does is retried along
    the plain gradient, so the recorded RMSE never increases.
    """
    cfg = cfg or TrainConfig()
    cfg.validate()
    X = np.asarray(sdb_train, dtype=float).reshape(-1, rb.d)
    y = np.asarray(targets, dtype=float).reshape(-1)
    n = X.shape[0]
    if n <= rb.d + 1:
        raise InsufficientDataError(f"need more than d+1={rb.d + 1} training rows, got {n}")
    if not np.all(np.isfinite(y)):
        raise DataError("targets must be finite")
    rb = rb.copy()
    rules = rule_table(rb.d)
    report = FitReport(d=rb.d)

    X1 = np.hstack([X, np.ones((n, 1))])

    def refit(candidate):
        _, _, logmu = _log_memberships(candidate, X)
        A = regressors(_normalized_weights(logmu, rules), X1)
        # warm start: the prior pull is towards the current C, not towards 0
        theta = rls(A, y, cfg.rls_forgetting, cfg.rls_init_cov, candidate.consequents.ravel())
        candidate.consequents = theta.reshape(candidate.n_rules, candidate.d + 1)
        r = A @ theta - y
        return float(r @ r)

    current = refit(rb)
    w = cfg.early_stop_window
    m1 = np.zeros_like(rb.premise)
    m2 = np.zeros_like(rb.premise)
    for epoch in range(cfg.epochs):
        rmse = float(np.sqrt(current / n))
        if not np.isfinite(rmse):
            raise DivergedError(epoch)
        report.rmse.append(rmse)
        report.epochs_run = epoch + 1
        hist = report.rmse
        if rmse < 1e-14:
            break
        if len(hist) > w and (hist[-w - 1] - rmse) / hist[-w - 1] < cfg.early_stop_tol:
            break

        grad = premise_gradient(rb, X, y, rules)
        if not np.all(np.isfinite(grad)):
            raise DivergedError(epoch)
        gnorm = np.linalg.norm(grad)
        if gnorm == 0.0:
            break
        if cfg.optimizer == "adam":
            m1 = _BETA1 * m1 + (1 - _BETA1) * grad
            m2 = _BETA2 * m2 + (1 - _BETA2) * grad * grad
            t = epoch + 1
            step = cfg.lr * (m1 / (1 - _BETA1 ** t)) / (np.sqrt(m2 / (1 - _BETA2 ** t)) + 1e-12)
            # fallback: steepest descent at the same step length
            directions = (step, grad * (np.linalg.norm(step) / gnorm))
        else:
            directions = (cfg.lr * grad,)
        for delta in directions:
            accepted = _descend(rb, delta, refit, current)
            if accepted is not None:
                rb, current = accepted
                break

    report.final_rmse = float(np.sqrt(current / n))
    report.premise = rb.premise.copy()
    report.consequents = rb.consequents.copy()
    return report


def _descend(rb: RuleBase, delta, refit, current_sse):
    """Try premise - delta, halving delta until the refitted error drops."""
    for _ in range(_MAX_HALVINGS):
        trial = rb.copy()
        trial.premise = rb.premise - delta
        p = trial.params
        p[:, :, :2] = np.maximum(p[:, :, :2], PARAM_FLOOR)
        err = refit(trial)
        if err < current_sse:
            return trial, err
        delta = 0.5 * delta
    return None


def format_rules(rb: RuleBase, names=None) -> str:
    """IF-THEN listing of every rule with its membership parameters."""
    names = names or [f"SDB{l + 1}" for l in range(rb.d)]
    lines = ["# membership functions: mu(s) = 1 / (1 + ((s - g) / e)^(2f))"]
    for l in range(rb.d):
        for k in range(N_LABELS):
            e, f, g = (float(v) for v in rb.params[l, k])
            lines.append(f"Rule{l + 1}{k + 1}: e={e!r} f={f!r} g={g!r}")
    lines.append(f"# {rb.n_rules} rules")
    for t, labels in enumerate(rule_table(rb.d)):
        cond = " and ".join(f"{names[l]} is Rule{l + 1}{k + 1}" for l, k in enumerate(labels))
        c = [float(v) for v in rb.consequents[t]]
        terms = " + ".join(f"{c[l]!r}*{names[l]}" for l in range(rb.d))
        lines.append(f"R{t + 1}: IF {cond} THEN Phi = {terms} + {c[-1]!r}")
    return "\n".join(lines) + "\n"
