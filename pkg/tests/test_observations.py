import io

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from sdbinterp.errors import InsufficientDataError, ParseError, RejectionError
from sdbinterp.observations import (ObservationSet, build_covariates, build_neighbor_graph,
                                    build_query_covariates, knn_search, load_observations)


def brute_neighbors(xy, i, m):
    d = np.hypot(*(xy - xy[i]).T)
    d[i] = np.inf
    order = sorted(range(len(xy)), key=lambda j: (d[j], j))
    return order[:m]


def test_line_example():
    obs = ObservationSet([[0, 0], [1, 0], [2, 0], [3, 0]], [1, 2, 3, 4])
    g = build_neighbor_graph(obs, 2)
    cov = build_covariates(obs, g, normalize=False)
    assert g.indices[0].tolist() == [1, 2]
    assert g.indices[3].tolist() == [2, 1]
    assert cov.raw[0].tolist() == [0, 0, 1, 0, 2, 2, 0, 3]
    assert cov.width == 8


def test_ties_go_to_lower_index():
    obs = ObservationSet([[0, 0], [1, 0], [-1, 0], [0, 1], [0, -1]], [0, 1, 2, 3, 4])
    g = build_neighbor_graph(obs, 4)
    assert g.indices[0].tolist() == [1, 2, 3, 4]


def test_graph_matches_brute_force(small_obs):
    g = build_neighbor_graph(small_obs, 6)
    for i in range(small_obs.n):
        assert g.indices[i].tolist() == brute_neighbors(small_obs.xy, i, 6)
        assert i not in g.indices[i]
        assert np.all(np.diff(g.distances[i]) >= 0)


def test_normalized_columns_in_unit_interval(small_obs):
    cov = build_covariates(small_obs, build_neighbor_graph(small_obs, 5))
    assert cov.rows.shape == (40, 17)
    assert cov.rows.min() >= 0 and cov.rows.max() <= 1
    np.testing.assert_allclose(cov.denormalize(), cov.raw, atol=1e-12)


def test_constant_column_normalizes_to_zero():
    obs = ObservationSet([[0, 5], [1, 5], [2, 5], [4, 5]], [1, 2, 3, 4])
    cov = build_covariates(obs, build_neighbor_graph(obs, 1))
    assert np.all(cov.rows[:, 1] == 0)


def test_m_too_large():
    obs = ObservationSet([[0, 0], [1, 1], [2, 0]], [1, 2, 3])
    with pytest.raises(InsufficientDataError):
        build_neighbor_graph(obs, 3)


def test_query_on_observation_keeps_it(small_obs):
    cov = build_covariates(small_obs, build_neighbor_graph(small_obs, 4))
    q = build_query_covariates(small_obs.xy[3:4], small_obs, 4, cov.scaling)
    assert q.raw[0, 2:5].tolist() == [*small_obs.xy[3], small_obs.values[3]]


def test_load_csv_roundtrip(tmp_path):
    text = "x,y,value\n0,0,1.5\n1,2,2.5\n3,1,0.25\n"
    path = tmp_path / "obs.csv"
    path.write_text(text)
    obs = load_observations(path)
    assert obs.n == 3
    assert obs.values.tolist() == [1.5, 2.5, 0.25]
    assert load_observations(io.StringIO(text)).xy.tolist() == obs.xy.tolist()


def test_load_schema_and_z_column():
    obs = load_observations("a,b,z,por\n0,0,9,1\n1,1,9,2\n", schema={"x": "a", "y": "b", "value": "por"})
    assert obs.values.tolist() == [1, 2]


def test_duplicates_are_averaged(caplog):
    with caplog.at_level("WARNING", logger="sdbinterp"):
        obs = load_observations("x,y,value\n0,0,1\n1,1,5\n0,0,3\n")
    assert "share coordinates" in caplog.text
    assert obs.n == 2
    assert obs.values.tolist() == [2.0, 5.0]


@pytest.mark.parametrize("text,exc,line", [
    ("x,y,value\n0,0,1\n1,oops,2\n", ParseError, 3),
    ("x,y,value\n0,0,1\n1,1,nan\n", RejectionError, 3),
    ("x,y,value\n0,0,1\n1,1\n", ParseError, 3),
])
def test_load_errors_report_line(text, exc, line):
    with pytest.raises(exc) as info:
        load_observations(text)
    assert info.value.line == line


def test_single_row_is_insufficient():
    with pytest.raises(InsufficientDataError):
        load_observations("x,y,value\n0,0,1\n")


# quarter-unit grid keeps distances exact enough to compare and makes ties common
coords = arrays(np.int64, st.tuples(st.integers(8, 30), st.just(2)),
                elements=st.integers(-400, 400)).map(lambda a: a / 4.0)


@settings(max_examples=40, deadline=None)
@given(coords, st.integers(1, 6))
def test_neighbor_sets_match_brute_force(xy, m):
    xy = np.unique(xy, axis=0)
    if len(xy) <= m:
        return
    obs = ObservationSet(xy, np.arange(len(xy), dtype=float))
    g = build_neighbor_graph(obs, m)
    for i in range(obs.n):
        d = np.hypot(*(xy - xy[i]).T)
        d[i] = np.inf
        kth = np.sort(d)[m - 1]
        np.testing.assert_allclose(np.sort(d[g.indices[i]]), np.sort(d)[:m])
        assert np.all(d[g.indices[i]] <= kth)


@settings(max_examples=30, deadline=None)
@given(coords, st.randoms(use_true_random=False))
def test_permutation_equivariance(xy, rnd):
    xy = np.unique(xy, axis=0)
    n, m = len(xy), 3
    if n <= m:
        return
    obs = ObservationSet(xy, np.arange(n, dtype=float))
    perm = np.array(rnd.sample(range(n), n))
    a = build_covariates(obs, build_neighbor_graph(obs, m), normalize=False).raw
    b = build_covariates(obs.subset(perm), build_neighbor_graph(obs.subset(perm), m), normalize=False).raw
    # rows follow the permutation; neighbour distances are identical
    dist = lambda raw: np.hypot(raw[:, 2::3] - raw[:, [0]], raw[:, 3::3] - raw[:, [1]])
    np.testing.assert_allclose(dist(b), dist(a)[perm])


def test_knn_search_chunks_agree():
    rng = np.random.default_rng(0)
    src = rng.normal(size=(700, 2))
    idx, dist = knn_search(src, src, 3, exclude_self=True)
    for i in (0, 511, 512, 699):
        d = np.hypot(*(src - src[i]).T)
        d[i] = np.inf
        assert idx[i].tolist() == np.argsort(d, kind="stable")[:3].tolist()
