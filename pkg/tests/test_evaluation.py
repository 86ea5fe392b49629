import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sdbinterp.baselines import idw_predict
from sdbinterp.errors import ConfigError, NumericalError
from sdbinterp.evaluation import (Method, compare_methods, compute_metrics, fold_indices,
                                  k_fold_cv)


def scalar_metrics(y, yhat):
    """Plain-Python evaluation of the five metrics, one term at a time."""
    n = len(y)
    sq = ab = 0.0
    for a, b in zip(y, yhat):
        sq += (a - b) ** 2
        ab += abs(a - b)
    ybar = sum(y) / n
    tot = sum((a - ybar) ** 2 for a in y)
    ymax = max(y)
    mape = sum(abs(a - b) / ymax for a, b in zip(y, yhat)) / n
    return sq / n, math.sqrt(sq / n), ab / n, mape, 1 - sq / tot


def test_hand_example():
    r = compute_metrics([1, 2, 3], [1, 2, 6])
    assert r.mse == pytest.approx(3.0, abs=1e-15)
    assert r.rmse == pytest.approx(math.sqrt(3), abs=1e-15)
    assert r.mae == pytest.approx(1.0, abs=1e-15)
    assert r.mape == pytest.approx(1 / 3, abs=1e-15)
    assert r.r2 == pytest.approx(-3.5, abs=1e-15)


def test_identity_and_mean_prediction():
    y = np.array([0.2, 0.5, 0.9, 0.4])
    r = compute_metrics(y, y)
    assert (r.mse, r.rmse, r.mae, r.mape, r.r2) == (0, 0, 0, 0, 1)
    assert compute_metrics(y, np.full(4, y.mean())).r2 == pytest.approx(0.0, abs=1e-15)


def test_scalar_oracle():
    rng = np.random.default_rng(0)
    for _ in range(50):
        n = int(rng.integers(2, 60))
        y = rng.uniform(0.05, 0.35, n)
        yhat = y + rng.normal(0, 0.05, n)
        r = compute_metrics(y, yhat)
        for got, want in zip((r.mse, r.rmse, r.mae, r.mape, r.r2), scalar_metrics(y.tolist(), yhat.tolist())):
            assert abs(got - want) <= 1e-12


def test_undefined_metrics_are_absent():
    r = compute_metrics([2, 2, 2], [1, 2, 3])
    assert r.r2 is None and "constant" in r.notes["r2"]
    r = compute_metrics([0, -1, -2], [0, 0, 0])
    assert r.mape is None


def test_per_sample_mape_flag():
    r = compute_metrics([1, 2, 4], [2, 2, 2], per_sample_mape=True)
    assert r.mape == pytest.approx((1 + 0 + 0.5) / 3)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.floats(-1e3, 1e3), st.floats(-1e3, 1e3)), min_size=2, max_size=40))
def test_report_invariants(pairs):
    y, yhat = map(np.array, zip(*pairs))
    r = compute_metrics(y, yhat)
    assert r.rmse ** 2 == pytest.approx(r.mse, rel=1e-12, abs=1e-300)
    assert r.mse >= 0 and r.mae >= 0
    if r.r2 is not None:
        assert r.r2 <= 1
        ss = ((y - y.mean()) ** 2).sum()
        assert r.r2 == pytest.approx(1 - r.mse * len(y) / ss, rel=1e-12, abs=1e-12)


idw = Method("IDW", lambda train, q: idw_predict(train, q), 1)


@pytest.mark.parametrize("n,k", [(20, 10), (37, 5), (100, 10)])
def test_folds_partition(n, k):
    folds = fold_indices(n, k, 3)
    allidx = np.concatenate(folds)
    assert sorted(allidx.tolist()) == list(range(n))
    assert max(map(len, folds)) - min(map(len, folds)) <= 1


def test_cv_deterministic(small_obs):
    a = k_fold_cv(small_obs, idw, 5, rng_seed=2)
    b = k_fold_cv(small_obs, idw, 5, rng_seed=2)
    assert all(np.array_equal(x, y) for x, y in zip(a.folds, b.folds))
    assert a.to_csv() == b.to_csv()
    c = k_fold_cv(small_obs, idw, 5, rng_seed=3)
    assert not all(np.array_equal(x, y) for x, y in zip(a.folds, c.folds))


def test_cv_report_shape(small_obs):
    res = k_fold_cv(small_obs, idw, 4)
    lines = res.to_csv().strip().splitlines()
    assert lines[0] == "fold,n,mse,rmse,mae,mape,r2"
    assert len(lines) == 6 and lines[-1].startswith("mean,40,")
    assert res.mean_report.mse == pytest.approx(np.mean([r.mse for r in res.per_fold]))


def test_leave_one_out(small_obs):
    tiny = small_obs.subset(np.arange(6))
    res = k_fold_cv(tiny, idw, 6)
    assert all(len(f) == 1 for f in res.folds)
    assert res.mean_report.r2 is None and res.mean_report.mse >= 0


def test_cv_preconditions(small_obs):
    with pytest.raises(ConfigError):
        k_fold_cv(small_obs.subset(np.arange(15)), idw, 10)
    picky = Method("picky", lambda t, q: pytest.fail("must not fit"), 39)
    with pytest.raises(ConfigError):
        k_fold_cv(small_obs, picky, 10)


def test_comparison_table(small_obs):
    def boom(train, q):
        raise NumericalError("no luck")

    truth_vals = idw_predict(small_obs.subset(np.arange(30)), small_obs.xy[30:])
    table = compare_methods(small_obs.subset(np.arange(30)),
                            [idw, idw, Method("broken", boom)],
                            truth=(small_obs.xy[30:], truth_vals))
    a, b, c = table.rows
    assert a.report == b.report
    assert a.report.r2 == 1.0
    assert c.report is None and "no luck" in c.error
    csv = table.to_csv().splitlines()
    assert len(csv) == 4 and all(line.count(",") == csv[0].count(",") for line in csv)
    rendered = table.render().splitlines()
    assert rendered[0].split() == ["method", "MSE", "RMSE", "MAE", "MAPE", "R2"]
    assert "FAILED: no luck" in rendered[-1]
