import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gebo.local_model import (
    TrustRegionConfig,
    TrustRegionState,
    circular_tr_value,
    select_data_region,
    update_circular_bound,
    update_sigma_bound,
    update_trust_region,
)

CFG = TrustRegionConfig()


# --- data region ----------------------------------------------------------


def test_small_history_returns_everything():
    X = np.random.default_rng(0).normal(size=(5, 3))
    region = select_data_region(X, X[2])
    np.testing.assert_array_equal(region.indices, np.arange(5))
    assert region.radius == pytest.approx(np.max(np.linalg.norm(X - X[2], axis=1)))


def test_recent_far_points_widen_the_region():
    rng = np.random.default_rng(1)
    near = rng.uniform(-0.1, 0.1, (27, 2))
    far = np.array([[5.0, 0.0], [0.0, -6.0], [3.0, 3.0]])
    X = np.vstack([near, far])
    region = select_data_region(X, near[0])
    assert region.radius == pytest.approx(np.max(np.linalg.norm(far - near[0], axis=1)))
    assert set(range(27, 30)) <= set(region.indices)
    assert region.n_data == 30


def test_closest_points_set_radius_when_recent_are_near():
    X = np.array([[float(i), 0.0] for i in range(30)])
    X = np.vstack([X, [[0.5, 0.0], [1.5, 0.0], [0.2, 0.0]]])
    region = select_data_region(X, X[0])
    # 20th smallest distance from the origin among 0, 0.2, 0.5, 1, 1.5, 2, ...
    d = np.sort(np.linalg.norm(X, axis=1))
    assert region.radius == pytest.approx(d[19])
    assert region.n_data == 20


def test_duplicate_of_incumbent_is_included():
    X = np.random.default_rng(2).normal(size=(25, 2))
    X[10] = X[3]
    region = select_data_region(X, X[3])
    assert {3, 10} <= set(region.indices)


@given(
    n_x=st.integers(1, 60),
    n_close=st.integers(1, 25),
    n_last=st.integers(0, 5),
    best=st.integers(0, 59),
    seed=st.integers(0, 2**16),
)
def test_region_invariants(n_x, n_close, n_last, best, seed):
    X = np.random.default_rng(seed).normal(size=(n_x, 3))
    b = best % n_x
    region = select_data_region(X, X[b], n_close, n_last)
    idx = set(region.indices.tolist())
    dist = np.linalg.norm(X - X[b], axis=1)
    assert b in idx
    assert set(range(n_x - min(n_last, n_x), n_x)) <= idx
    assert set(np.argsort(dist, kind="stable")[: min(n_close, n_x)].tolist()) <= idx | {
        i for i in range(n_x) if dist[i] == np.sort(dist)[min(n_close, n_x) - 1]
    }
    assert len(idx) >= min(n_close, n_x)
    assert np.all(dist[region.indices] <= region.radius)
    assert list(region.indices) == sorted(idx)


def test_region_rejects_empty_history():
    with pytest.raises(ValueError):
        select_data_region(np.zeros((0, 2)), np.zeros(2))


# --- circular constraint value --------------------------------------------


def test_circular_value_examples():
    assert circular_tr_value([1.0, 2.0], [1.0, 2.0])[0] == 0.0
    assert circular_tr_value([4.0, 6.0], [1.0, 2.0])[0] == 25.0


@given(st.lists(st.floats(-5, 5), min_size=3, max_size=3), st.lists(st.floats(-5, 5), min_size=3, max_size=3))
def test_circular_gradient_matches_fd(x, xb):
    x, xb = np.array(x), np.array(xb)
    _, g = circular_tr_value(x, xb)
    h = 1e-6
    fd = [(circular_tr_value(x + h * e, xb)[0] - circular_tr_value(x - h * e, xb)[0]) / (2 * h) for e in np.eye(3)]
    np.testing.assert_allclose(g, fd, atol=1e-7)


# --- circular bound -------------------------------------------------------


def test_circular_single_point_default():
    assert update_circular_bound(0.3, 1.0, None, 2.0, 0.1, n_data=1, radius=0.0) == 1.0


def test_circular_progress_grows():
    assert update_circular_bound(0.5, 1.0, 3.0, 2.0, 0.3, n_data=3, radius=10.0) == pytest.approx(0.6)


def test_circular_keeps_after_recent_progress():
    # newest point did not improve, the one before did
    assert update_circular_bound(0.5, 3.0, 2.0, 2.0, 0.3, n_data=3, radius=10.0) == 0.5


def test_circular_two_stalls_shrink():
    assert update_circular_bound(0.5, 3.0, 2.5, 2.0, 0.3, n_data=3, radius=10.0) == pytest.approx(0.25)


def test_circular_capped_by_data_radius():
    assert update_circular_bound(0.5, 1.0, 3.0, 2.0, 5.0, n_data=5, radius=2.0) == pytest.approx(1.8)
    assert update_circular_bound(0.5, 1.0, 3.0, 2.0, 5.0, n_data=4, radius=2.0) == pytest.approx(10.0)


@given(k=st.integers(1, 30), u0=st.floats(1e-3, 10.0))
def test_circular_geometric_contraction(k, u0):
    u = u0
    for _ in range(k):
        u = update_circular_bound(u, 3.0, 2.5, 2.0, 0.1, n_data=3, radius=1e6)
    assert u == pytest.approx(0.5**k * u0, rel=1e-12)
    assert u > 0


# --- sigma bound ----------------------------------------------------------


def test_sigma_inactive_below_activation():
    assert update_sigma_bound(math.inf, 1.0, 2.0, 2.0, 0.1, n_data=9) == math.inf


def test_sigma_starts_at_default():
    assert update_sigma_bound(math.inf, 1.0, 2.0, 2.0, 0.1, n_data=10) == pytest.approx(0.04)


def test_sigma_stall_clamps_below():
    assert update_sigma_bound(0.01, 3.0, 2.5, 2.0, 0.1, n_data=12) == pytest.approx(0.005)
    assert update_sigma_bound(0.004, 3.0, 2.5, 2.0, 0.1, n_data=12) == pytest.approx(0.0025)


def test_sigma_progress_clamps_above():
    assert update_sigma_bound(0.05, 1.0, 3.0, 2.0, 0.3, n_data=12) == pytest.approx(0.16)
    assert update_sigma_bound(0.05, 1.0, 3.0, 2.0, 0.03, n_data=12) == pytest.approx(0.06)


@given(
    u=st.floats(CFG.u_sigma_min, CFG.u_sigma_max),
    J=st.lists(st.floats(-5, 5), min_size=3, max_size=3),
    g=st.floats(0.0, 1.0),
    n=st.integers(11, 40),
)
def test_sigma_stays_in_bounds(u, J, g, n):
    out = update_sigma_bound(u, J[0], J[1], J[2], g, n_data=n)
    assert CFG.u_sigma_min <= out <= CFG.u_sigma_max
    assert out == update_sigma_bound(u, J[0], J[1], J[2], g, n_data=n)


def test_combined_update():
    from gebo.local_model import DataRegion

    region = DataRegion(np.arange(12), 10.0)
    s = update_trust_region(TrustRegionState(0.5, 0.04), 1.0, 3.0, 2.0, 0.3, 0.03, region)
    assert s.u_c == pytest.approx(0.6)
    assert s.u_sigma == pytest.approx(0.06)
    assert s.sigma_active


def test_config_validation():
    with pytest.raises(ValueError):
        TrustRegionConfig(rho_dec=1.5)
    with pytest.raises(ValueError):
        TrustRegionConfig(u_sigma_min=0.5)
    assert CFG.u_sigma0 == pytest.approx(0.04)
