import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from sdbinterp import embedding as E
from sdbinterp.errors import DegenerateGeometryError
from sdbinterp.observations import ObservationSet, build_covariates, build_neighbor_graph, knn_search


def grid_search_curve(min_dist, spread):
    """Brute-force (a, b) minimising squared error on a dense grid."""
    t = np.linspace(0.0, 3.0 * spread, 301)[1:]
    target = np.where(t <= min_dist, 1.0, np.exp(-(t - min_dist) / spread))
    a_grid = np.arange(0.05, 3.0, 0.005)
    b_grid = np.arange(0.4, 1.6, 0.0025)
    best = (np.inf, None, None)
    tb = t[None, :] ** (2.0 * b_grid[:, None])
    for a in a_grid:
        err = ((1.0 / (1.0 + a * tb) - target) ** 2).sum(axis=1)
        i = int(np.argmin(err))
        if err[i] < best[0]:
            best = (err[i], a, b_grid[i])
    return best[1], best[2]


def two_clusters(seed, m=10, per=20):
    rng = np.random.default_rng(seed)
    X = np.vstack([rng.normal(0, 1, (per, 3 * m + 2)), rng.normal(10, 1, (per, 3 * m + 2))])
    idx, _ = knn_search(X, X, m, exclude_self=True)
    return X, E.fuzzy_graph_from_features(X, idx)


def test_tconorm_example():
    W = np.array([[0.5], [0.4]])
    rows, cols, w = E.symmetrize(W, np.array([[1], [0]]))
    assert rows.tolist() == [0, 1] and cols.tolist() == [1, 0]
    np.testing.assert_allclose(w, [0.7, 0.7], rtol=0, atol=1e-15)


def test_tconorm_one_sided_edge():
    # 0 -> 1 only; the reverse weight is 0 so the union keeps 0.3
    W = np.array([[0.3], [1.0], [1.0]])
    rows, cols, w = E.symmetrize(W, np.array([[1], [2], [1]]))
    S = dict(zip(zip(rows.tolist(), cols.tolist()), w.tolist()))
    assert S[(0, 1)] == S[(1, 0)] == pytest.approx(0.3)
    assert S[(1, 2)] == S[(2, 1)] == pytest.approx(1.0)


def test_m2_calibration_collapses_sigma():
    # target log2(2) = 1 is met by the nearest neighbour alone
    rho, sigma = E.calibrate(np.array([[1.0, 2.0], [0.5, 3.0]]))
    assert rho.tolist() == [1.0, 0.5]
    W = E.membership(np.array([[1.0, 2.0], [0.5, 3.0]]), rho, sigma)
    np.testing.assert_allclose(W.sum(axis=1), 1.0, atol=1e-4)
    assert np.all(sigma < 0.2)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 20), st.integers(3, 30)),
              elements=st.floats(0.01, 50.0)))
def test_calibration_hits_log2_m(dist):
    dist = np.sort(dist, axis=1)
    rho, sigma = E.calibrate(dist)
    W = E.membership(dist, rho, sigma)
    reachable = (dist == rho[:, None]).sum(axis=1) <= np.log2(dist.shape[1])
    err = np.abs(W.sum(axis=1) - np.log2(dist.shape[1]))
    assert np.all(err[reachable] < 1e-4)
    assert np.all((W >= 0) & (W <= 1))


def test_graph_calibration(small_obs):
    g = build_neighbor_graph(small_obs, 8)
    fg = E.build_fuzzy_graph(build_covariates(small_obs, g), g)
    assert np.max(np.abs(fg.W.sum(axis=1) - np.log2(8))) < 1e-4
    assert np.all(fg.W.max(axis=1) == 1.0)
    S = fg.symmetric_matrix()
    assert abs(S - S.T).max() < 1e-15


def test_identical_rows_are_degenerate():
    with pytest.raises(DegenerateGeometryError):
        E.fuzzy_graph_from_features(np.ones((5, 4)), np.array([[1], [2], [3], [4], [0]]))


def test_curve_matches_grid_search():
    fitted = E.fit_curve(0.1, 1.0)
    a, b = grid_search_curve(0.1, 1.0)
    assert abs(fitted.a - a) <= 0.05 and abs(fitted.b - b) <= 0.05


@pytest.mark.parametrize("min_dist,spread", [(0.05, 1.0), (0.5, 1.0), (0.25, 2.0)])
def test_curve_other_settings(min_dist, spread):
    fitted = E.fit_curve(min_dist, spread)
    a, b = grid_search_curve(min_dist, spread)
    assert abs(fitted.a - a) <= 0.05 and abs(fitted.b - b) <= 0.05


def test_cross_entropy_zero_on_match():
    w = np.array([0.0, 0.3, 1.0])
    assert E.cross_entropy(w, w) == 0.0
    assert E.cross_entropy(w, np.array([0.1, 0.3, 0.9])) > 0


@pytest.mark.parametrize("seed", range(4))
def test_loss_decreases(seed):
    _, fg = two_clusters(seed)
    mdl = E.optimize_embedding(fg, E.EmbeddingConfig(d=2, rng_seed=seed))
    assert mdl.loss_history[0][0] == 0 and mdl.loss_history[-1][0] == 500
    assert mdl.loss_history[-1][1] < mdl.loss_history[0][1]


def test_clusters_stay_apart():
    for seed in range(5):
        _, fg = two_clusters(seed)
        Y = E.optimize_embedding(fg, E.EmbeddingConfig(d=2, rng_seed=seed)).Y
        nn, _ = knn_search(Y, Y, 1, exclude_self=True)
        assert np.array_equal(nn[:, 0] < 20, np.arange(40) < 20)


def test_seed_determinism():
    _, fg = two_clusters(3)
    cfg = E.EmbeddingConfig(d=3, n_epochs=80, rng_seed=11)
    a, b = E.optimize_embedding(fg, cfg), E.optimize_embedding(fg, cfg)
    assert np.array_equal(a.Y, b.Y)
    c = E.optimize_embedding(fg, E.EmbeddingConfig(d=3, n_epochs=80, rng_seed=12))
    assert not np.array_equal(a.Y, c.Y)


def test_d_must_be_below_width():
    _, fg = two_clusters(0, m=2)
    with pytest.raises(ValueError):
        E.optimize_embedding(fg, E.EmbeddingConfig(d=8))


def test_transform_training_rows_are_exact(small_obs):
    g = build_neighbor_graph(small_obs, 5)
    mdl = E.fit_sdb(build_covariates(small_obs, g), g, E.EmbeddingConfig(d=2, n_epochs=50))
    assert np.array_equal(E.transform(mdl, mdl.features), mdl.Y)


def test_transform_midpoint():
    F = np.array([[0.0, 0.0], [2.0, 0.0], [9.0, 9.0]])
    Y = np.array([[1.0, 1.0], [3.0, 5.0], [-7.0, 2.0]])
    out = E.transform_rows(F, Y, 2, np.array([[1.0, 0.0]]))
    np.testing.assert_allclose(out, [[2.0, 3.0]], atol=1e-12)


def test_transform_is_convex_combination(small_obs):
    g = build_neighbor_graph(small_obs, 5)
    mdl = E.fit_sdb(build_covariates(small_obs, g), g, E.EmbeddingConfig(d=2, n_epochs=50))
    rows = np.random.default_rng(1).uniform(0, 1, size=(30, mdl.features.shape[1]))
    z = E.transform(mdl, rows)
    assert np.all(z >= mdl.Y.min(axis=0) - 1e-12) and np.all(z <= mdl.Y.max(axis=0) + 1e-12)


def test_serialization_roundtrip(small_obs):
    g = build_neighbor_graph(small_obs, 5)
    mdl = E.fit_sdb(build_covariates(small_obs, g), g, E.EmbeddingConfig(d=2, n_epochs=50))
    back = E.sdb_from_dict(E.sdb_to_dict(mdl))
    assert np.array_equal(back.Y, mdl.Y)
    assert np.array_equal(back.graph.weights, mdl.graph.weights)
    assert back.curve == mdl.curve
    q = np.random.default_rng(2).uniform(0, 1, size=(10, mdl.features.shape[1]))
    assert np.array_equal(E.transform(back, q), E.transform(mdl, q))
