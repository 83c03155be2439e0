import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conjnngp.exceptions import InvalidInputError
from conjnngp.quant.geometry import (
    LocationSet,
    build_prediction_neighbors,
    build_training_neighbors,
    great_circle_distance,
    order_locations,
    project_sinusoidal,
    projection_qq,
)

from tests.oracles import brute_force_prediction_parents, brute_force_training_parents, haversine_km


def test_sinusoidal_equator_arc():
    locs = project_sinusoidal(np.array([[90.0, 0.0]]))
    assert locs.provenance == "projected"
    assert np.allclose(locs.coords[0], [6.371 * np.pi / 2, 0.0])


def test_sinusoidal_rejects_out_of_range_latitude():
    with pytest.raises(InvalidInputError) as err:
        project_sinusoidal(np.array([[0.0, 10.0], [0.0, 95.0]]))
    assert err.value.index == 1


def test_great_circle_matches_haversine(rng):
    a = np.column_stack([rng.uniform(-140, 0, 50), rng.uniform(0, 60, 50)])
    b = np.column_stack([rng.uniform(-140, 0, 50), rng.uniform(0, 60, 50)])
    assert np.allclose(great_circle_distance(a, b), haversine_km(a, b))


def test_projection_qq_near_diagonal():
    rng = np.random.default_rng(3)
    ll = np.column_stack([rng.uniform(-140, 0, 2000), rng.uniform(0, 60, 2000)])
    planar, sphere = projection_qq(ll, n_pairs=4000, seed=1)
    assert planar.shape == sphere.shape == (4000,)
    mid = slice(400, 3600)
    assert np.median(np.abs(planar[mid] / sphere[mid] - 1.0)) < 0.25


def test_order_keeps_raw_mapping(rng):
    raw = rng.uniform(size=(40, 2))
    locs = LocationSet.from_coords(raw, ids=np.arange(100, 140))
    once = order_locations(locs, "coord")
    twice = order_locations(once, "y")
    for o in (once, twice):
        assert np.array_equal(raw[o.order], o.coords)
        assert np.array_equal(o.id_map, o.order + 100)
    assert np.all(np.diff(once.coords[:, 0]) >= 0)


def test_order_callable_and_unknown_strategy(rng):
    locs = LocationSet.from_coords(rng.uniform(size=(5, 2)))
    rev = order_locations(locs, lambda c: np.arange(c.shape[0])[::-1])
    assert np.array_equal(rev.order, [4, 3, 2, 1, 0])
    with pytest.raises(InvalidInputError):
        order_locations(locs, "hilbert")
    with pytest.raises(InvalidInputError):
        order_locations(locs, lambda c: np.zeros(c.shape[0], dtype=int))


def test_training_graph_small_cases():
    locs = LocationSet.from_coords(np.array([[0.0, 0.0], [1.0, 0.0], [0.1, 0.0]]))
    g = build_training_neighbors(locs, 2)
    assert g.parents(0).size == 0
    assert list(g.parents(1)) == [0]
    assert list(g.parents(2)) == [0, 1]
    assert g.nnz() == 3


def test_training_graph_width_capped_by_n():
    locs = LocationSet.from_coords(np.random.default_rng(0).uniform(size=(4, 2)))
    g = build_training_neighbors(locs, 10)
    assert list(g.counts) == [0, 1, 2, 3]


def test_training_graph_rejects_bad_input():
    with pytest.raises(InvalidInputError):
        build_training_neighbors(LocationSet.from_coords(np.zeros((1, 2))), 3)
    with pytest.raises(InvalidInputError):
        build_training_neighbors(LocationSet.from_coords(np.zeros((4, 2))), 0)


def test_training_graph_matches_exhaustive_scan():
    coords = np.random.default_rng(11).uniform(size=(500, 2))
    g = build_training_neighbors(LocationSet.from_coords(coords), 10, workers=2)
    expected = brute_force_training_parents(coords, 10)
    for i in range(coords.shape[0]):
        assert np.array_equal(g.parents(i), expected[i])


def test_training_graph_ties_on_lattice():
    xs, ys = np.meshgrid(np.arange(12.0), np.arange(12.0))
    coords = np.column_stack([xs.ravel(), ys.ravel()])
    g = build_training_neighbors(LocationSet.from_coords(coords), 8)
    expected = brute_force_training_parents(coords, 8)
    for i in range(coords.shape[0]):
        assert np.array_equal(g.parents(i), expected[i])


@settings(max_examples=25, deadline=None)
@given(n=st.integers(min_value=2, max_value=120), m=st.integers(min_value=1, max_value=20),
       seed=st.integers(min_value=0, max_value=2**16), snap=st.booleans())
def test_training_graph_property(n, m, seed, snap):
    coords = np.random.default_rng(seed).uniform(size=(n, 2))
    if snap:
        coords = np.round(coords * 4) / 4
    g = build_training_neighbors(LocationSet.from_coords(coords), m)
    expected = brute_force_training_parents(coords, m)
    for i in range(n):
        assert np.array_equal(g.parents(i), expected[i])
        assert np.all(g.parents(i) < i)
        assert np.all(np.diff(g.parent_distances(i)) >= 0)


def test_prediction_graph_matches_exhaustive_scan():
    rng = np.random.default_rng(5)
    train = rng.uniform(size=(300, 2))
    pred = rng.uniform(size=(200, 2))
    g = build_prediction_neighbors(LocationSet.from_coords(train), LocationSet.from_coords(pred), 10)
    assert g.kind == "prediction"
    expected = brute_force_prediction_parents(train, pred, 10)
    for u in range(pred.shape[0]):
        assert np.array_equal(g.parents(u), expected[u])


def test_prediction_graph_coincident_site_first():
    train = np.random.default_rng(2).uniform(size=(30, 2))
    g = build_prediction_neighbors(LocationSet.from_coords(train), LocationSet.from_coords(train[[7]]), 3)
    assert g.parents(0)[0] == 7
    assert g.parent_distances(0)[0] == 0.0


def test_prediction_graph_bounds():
    train = LocationSet.from_coords(np.zeros((3, 2)))
    with pytest.raises(InvalidInputError):
        build_prediction_neighbors(train, LocationSet.from_coords(np.ones((1, 2))), 4)


def test_training_graph_collinear_sites():
    coords = np.column_stack([np.arange(5.0), np.zeros(5)])
    g = build_training_neighbors(LocationSet.from_coords(coords), 2)
    assert [list(g.parents(i)) for i in range(5)] == [[], [0], [1, 0], [2, 1], [3, 2]]


@pytest.mark.slow
def test_training_graph_matches_exhaustive_scan_many_instances():
    for instance in range(100):
        rng = np.random.default_rng(1000 + instance)
        n = int(rng.integers(2, 2001))
        m = int(rng.integers(1, 21))
        coords = rng.uniform(size=(n, 2))
        if instance % 2:
            coords = np.round(coords * 20) / 20
        g = build_training_neighbors(LocationSet.from_coords(coords), m, workers=2)
        expected = brute_force_training_parents(coords, m)
        for i in range(n):
            assert np.array_equal(g.parents(i), expected[i]), (instance, n, m, i)
