"""Error metrics, k-fold cross-validation and method comparison tables.

MAPE follows the porosity literature convention used here: the mean absolute
error divided by the largest actual value, (1/n) sum |y - yhat| / max(y),
not the per-sample percentage. The conventional form is available with
``per_sample_mape=True``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, SdbError
from .observations import ObservationSet

log = logging.getLogger(__name__)

METRICS = ("mse", "rmse", "mae", "mape", "r2")


@dataclass
class MetricsReport:
    mse: float
    rmse: float
    mae: float
    mape: float | None
    r2: float | None
    n: int
    notes: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {name: getattr(self, name) for name in METRICS}


def compute_metrics(actual, predicted, per_sample_mape: bool = False) -> MetricsReport:
    y = np.asarray(actual, dtype=float).reshape(-1)
    yhat = np.asarray(predicted, dtype=float).reshape(-1)
    if y.shape != yhat.shape:
        raise ValueError("actual and predicted differ in length")
    n = y.size
    if n < 2:
        raise ValueError("metrics need at least 2 samples")
    err = y - yhat
    sq = float(np.sum(err * err))
    mse = sq / n
    abs_err = np.abs(err)
    notes = {}

    if per_sample_mape:
        if np.any(y == 0):
            mape, notes["mape"] = None, "zero actual value"
        else:
            mape = float(np.mean(abs_err / np.abs(y)))
    else:
        ymax = float(y.max())
        if ymax == 0:
            mape, notes["mape"] = None, "max(actual) is zero"
        else:
            with np.errstate(over="ignore"):
                mape = float(np.sum(abs_err) / ymax / n)

    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0:
        r2, notes["r2"] = None, "actual values are constant"
    else:
        r2 = 1.0 - sq / ss_tot
    return MetricsReport(mse, math.sqrt(mse), float(np.mean(abs_err)), mape, r2, n, notes)


def mean_report(reports: Sequence[MetricsReport]) -> MetricsReport:
    """Arithmetic mean of each metric over folds; absent values are skipped."""
    out = {}
    notes = {}
    for name in METRICS:
        vals = [getattr(r, name) for r in reports if getattr(r, name) is not None]
        out[name] = float(np.mean(vals)) if vals else None
        if len(vals) < len(reports):
            notes[name] = f"averaged over {len(vals)} of {len(reports)} folds"
    return MetricsReport(n=sum(r.n for r in reports), notes=notes, **out)


@dataclass
class Method:
    """An interpolator as seen by the evaluation code.

    ``fit_predict(train, query_xy)`` returns predictions at ``query_xy``;
    ``min_train`` is the smallest training set the method accepts.
    """

    name: str
    fit_predict: Callable[[ObservationSet, np.ndarray], np.ndarray]
    min_train: int = 1


@dataclass
class CvResult:
    k: int
    folds: list          # validation index arrays, in fold order
    per_fold: list       # MetricsReport per fold
    mean_report: MetricsReport

    def to_csv(self) -> str:
        lines = ["fold,n," + ",".join(METRICS)]
        for i, r in enumerate(self.per_fold):
            lines.append(_csv_row(str(i + 1), r))
        lines.append(_csv_row("mean", self.mean_report))
        return "\n".join(lines) + "\n"


def _fmt(v):
    return "" if v is None else repr(float(v))


def _csv_row(label, r):
    return ",".join([label, str(r.n)] + [_fmt(getattr(r, m)) for m in METRICS])


def fold_indices(n: int, k: int, rng_seed: int = 0) -> list:
    """Seeded shuffle split into k contiguous folds (sizes differ by at most 1)."""
    perm = np.random.default_rng(rng_seed).permutation(n)
    return [np.sort(part) for part in np.array_split(perm, k)]


def k_fold_cv(obs: ObservationSet, method: Method, k: int = 10, rng_seed: int = 0) -> CvResult:
    if k < 2:
        raise ConfigError("k must be at least 2")
    if obs.n < k:
        raise ConfigError(f"cannot split {obs.n} observations into {k} folds")
    if k < obs.n and obs.n < 2 * k:
        raise ConfigError(f"k-fold CV needs N >= 2k (N={obs.n}, k={k})")
    folds = fold_indices(obs.n, k, rng_seed)
    smallest_train = obs.n - max(len(f) for f in folds)
    if smallest_train < method.min_train:
        raise ConfigError(f"{method.name} needs {method.min_train} training points; "
                          f"the smallest fold leaves {smallest_train}")

    reports = []
    for val in folds:
        train = np.setdiff1d(np.arange(obs.n), val)
        pred = method.fit_predict(obs.subset(train), obs.xy[val])
        truth = obs.values[val]
        if len(val) == 1:
            # single-point folds: MSE/MAE are defined, R2 is not
            err = float(truth[0] - pred[0])
            ymax = float(truth[0])
            reports.append(MetricsReport(err * err, abs(err), abs(err),
                                         abs(err) / ymax if ymax != 0 else None, None, 1,
                                         {"r2": "single validation point"}))
        else:
            reports.append(compute_metrics(truth, pred))
    return CvResult(k, folds, reports, mean_report(reports))


@dataclass
class ComparisonRow:
    name: str
    report: MetricsReport | None
    error: str | None = None


@dataclass
class ComparisonTable:
    rows: list

    def to_csv(self) -> str:
        lines = ["method,status,n," + ",".join(METRICS)]
        for row in self.rows:
            if row.report is None:
                lines.append(f"{row.name},failed: {row.error},," + "," * (len(METRICS) - 1))
            else:
                lines.append(",".join([row.name, "ok", str(row.report.n)]
                                      + [_fmt(getattr(row.report, m)) for m in METRICS]))
        return "\n".join(lines) + "\n"

    def render(self) -> str:
        header = ["method"] + [m.upper() if m != "r2" else "R2" for m in METRICS]
        body = []
        for row in self.rows:
            if row.report is None:
                body.append([row.name, f"FAILED: {row.error}"] + [""] * (len(METRICS) - 1))
            else:
                body.append([row.name] + ["-" if getattr(row.report, m) is None
                                          else f"{getattr(row.report, m):.6g}" for m in METRICS])
        widths = [max(len(str(r[i])) for r in [header] + body) for i in range(len(header))]
        fmt = lambda r: "  ".join(str(c).ljust(w) for c, w in zip(r, widths)).rstrip()
        rule = "  ".join("-" * w for w in widths)
        return "\n".join([fmt(header), rule] + [fmt(r) for r in body]) + "\n"


def compare_methods(obs: ObservationSet, methods: Sequence[Method], truth=None,
                    k: int = 10, rng_seed: int = 0) -> ComparisonTable:
    """One metrics row per method.

    With ``truth`` as ``(query_xy, values)`` every method is fitted on all of
    ``obs`` and scored at the query points; otherwise k-fold CV mean reports
    are used. A failing method gets a failed row and the others still run.
    """
    rows = []
    for method in methods:
        try:
            if truth is not None:
                qxy, qv = truth
                pred = method.fit_predict(obs, np.asarray(qxy, dtype=float))
                report = compute_metrics(qv, pred)
            else:
                report = k_fold_cv(obs, method, k, rng_seed).mean_report
            rows.append(ComparisonRow(method.name, report))
        except (SdbError, ValueError, np.linalg.LinAlgError) as exc:
            log.warning("%s failed: %s", method.name, exc)
            rows.append(ComparisonRow(method.name, None, str(exc)))
    return ComparisonTable(rows)
