import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from memrgs._validation import ParameterError
from memrgs.plant import EPS0, scalar_drift_map, lyapunov_rate_matrix, ppa_drift_rates, ppa_map
from memrgs.uncertainty import (
    PPA_BOXES,
    ParamBox,
    VertexPolytope,
    convex_hull,
    scalar_drift_param_box,
    scalar_drift_rate_bounds,
    hull_residual,
    lambda_max_P_bound,
    load_vertices,
    map_box_to_cloud,
    ppa_param_box,
    ppa_rate_bounds,
    save_vertices,
)

P_REFERENCE = np.array([[0.9937, 0.0757], [0.0757, 0.0895]])


@pytest.fixture(scope="module")
def ppa_cloud():
    return map_box_to_cloud(ppa_map, ppa_param_box(), 6)


def test_identity_map_corners():
    cloud = map_box_to_cloud(lambda th: np.asarray(th), ParamBox([(0, 1), (0, 1)]), 2)
    assert sorted(map(tuple, cloud)) == [(0, 0), (0, 1), (1, 0), (1, 1)]


def test_grid_too_coarse():
    with pytest.raises(ParameterError):
        map_box_to_cloud(lambda th: th, ParamBox([(0, 1)]), 1)
    with pytest.raises(ParameterError):
        ParamBox([(1, 0)])


def test_ppa_cloud_size_and_hull(ppa_cloud):
    assert ppa_cloud.shape == (1296, 3)
    poly = convex_hull(ppa_cloud)
    # a2 = -b_damp/m is fixed, so the cloud is planar in R^3
    assert poly.affine_dim == 2
    assert np.all(poly.vertices[:, -1] > 0)
    assert hull_residual(poly.vertices, ppa_cloud) <= 1e-9


def test_square_with_centre_drops_interior():
    cloud = np.array([[0, 0, 1.0], [1, 0, 1.0], [0, 1, 1.0], [1, 1, 1.0], [0.5, 0.5, 1.0]])
    # third coordinate plays the role of b (constant, positive)
    poly = convex_hull(cloud)
    assert poly.m == 4
    assert poly.affine_dim == 2


def test_collinear_cloud_gives_endpoints():
    t = np.linspace(0, 1, 11)
    cloud = np.column_stack([2 * t - 1, 1 + t])
    poly = convex_hull(cloud)
    assert poly.m == 2 and poly.affine_dim == 1
    assert {tuple(r) for r in poly.vertices} == {(-1.0, 1.0), (1.0, 2.0)}


def test_scalar_drift_hull_sound_and_small():
    cloud = map_box_to_cloud(scalar_drift_map, scalar_drift_param_box(1.0, 1.0, 1.0), 6)
    poly = convex_hull(cloud)
    assert 4 <= poly.m <= cloud.shape[0]
    assert hull_residual(poly.vertices, cloud) <= 1e-9
    # points outside the hull are detected
    assert hull_residual(poly.vertices, cloud.max(axis=0) * 1.5) > 1e-3


@settings(deadline=None, max_examples=20)
@given(st.integers(0, 10_000))
def test_hull_soundness_random_clouds(seed):
    rng = np.random.default_rng(seed)
    cloud = np.column_stack([rng.normal(size=(40, 2)), rng.uniform(0.5, 2.0, 40)])
    poly = convex_hull(cloud)
    assert hull_residual(poly.vertices, cloud) <= 1e-9


def test_lambda_bound_scalar():
    poly = VertexPolytope([[-1.0, 1.0]])
    # Q = 2(-1 - K) with P = 1; worst at K = 0.5
    assert lambda_max_P_bound(poly, [[1.0]], 0.5, 2.0) == pytest.approx(-3.0)


@given(st.floats(0.01, 100))
def test_lambda_bound_homogeneous_in_P(c):
    poly = VertexPolytope([[80.0, -6.0, 2e-3], [160.0, -6.0, 6e-3]])
    base = lambda_max_P_bound(poly, P_REFERENCE, 1e4, 8e4)
    assert lambda_max_P_bound(poly, c * P_REFERENCE, 1e4, 8e4) == pytest.approx(c * base, rel=1e-9)


def test_lambda_bound_ppa_reference_order(ppa_cloud):
    poly = convex_hull(ppa_cloud)
    val = lambda_max_P_bound(poly, P_REFERENCE, 8600.0, 86000.0)
    assert 10 < val < 100
    assert val == pytest.approx(29.1, rel=0.05)


def test_lambda_bound_dominates_cloud(ppa_cloud):
    poly = convex_hull(ppa_cloud)
    k_m, k_M = 8600.0, 86000.0
    bound = lambda_max_P_bound(poly, P_REFERENCE, k_m, k_M)
    rng = np.random.default_rng(0)
    for row in ppa_cloud[rng.choice(len(ppa_cloud), 150, replace=False)]:
        K = rng.uniform(k_m, k_M)
        lam = np.linalg.eigvalsh(lyapunov_rate_matrix(row[:-1], row[-1], K, P_REFERENCE))[-1]
        assert lam <= bound + 1e-9


def test_vertex_extremality_in_K(ppa_cloud):
    poly = convex_hull(ppa_cloud)
    Ks = np.linspace(8600.0, 86000.0, 401)
    for a, b in poly.pairs():
        vals = [np.linalg.eigvalsh(lyapunov_rate_matrix(a, b, K, P_REFERENCE))[-1] for K in Ks]
        assert int(np.argmax(vals)) in (0, len(Ks) - 1)


def test_ppa_rate_bounds_reference():
    kdot, edot = ppa_drift_rates()
    rb = ppa_rate_bounds(**PPA_BOXES, max_kappa_dot=kdot, max_eps_dot=edot, k_M=86000.0, m=3e-3)
    assert rb.delta_A == pytest.approx(69.6, rel=1e-12)
    assert rb.delta_B == pytest.approx(1.49e-2, rel=1e-2)
    assert rb.delta == pytest.approx(1351.0, rel=1e-2)


def test_ppa_rate_bounds_trivial_cases():
    rb = ppa_rate_bounds(**PPA_BOXES, max_kappa_dot=0.0, max_eps_dot=0.0, k_M=86000.0, m=3e-3)
    assert rb.delta == 0.0
    one = ppa_rate_bounds(**PPA_BOXES, max_kappa_dot=0.1, max_eps_dot=0.0, k_M=1.0, m=3e-3)
    two = ppa_rate_bounds(**PPA_BOXES, max_kappa_dot=0.2, max_eps_dot=0.0, k_M=1.0, m=3e-3)
    assert two.delta_A == pytest.approx(2 * one.delta_A)
    assert EPS0 > 0


@pytest.mark.parametrize("form", ["compact", "exact"])
def test_scalar_drift_rate_bounds(form):
    assert scalar_drift_rate_bounds(1, 1, 1, 1, 1, form=form).delta_A == pytest.approx(1.5)
    frozen = scalar_drift_rate_bounds(1, 1, 1, 1e12, 1e12, form=form)
    assert frozen.delta_A < 1e-11 and frozen.delta_B < 1e-11
    assert (scalar_drift_rate_bounds(2, 1, 1, 1, 1, form=form).delta_A
            == pytest.approx(8 * scalar_drift_rate_bounds(1, 1, 1, 1, 1, form=form).delta_A))


def test_scalar_drift_exact_bounds_true_rates():
    """The exact form dominates finite-difference rates of the drifting example."""
    a_s, b_s, c_s, ta, tc = 1.3, 0.7, 2.0, 0.5, 0.8
    rb = scalar_drift_rate_bounds(a_s, b_s, c_s, ta, tc, form="exact")
    t = np.linspace(0, 10, 20001)
    a = a_s - a_s / 2 * np.exp(-t / ta)
    c = c_s / 2 + c_s / 2 * np.exp(-t / tc)
    for bp in (b_s, 1.5 * b_s):
        a1, b = scalar_drift_map((a, bp, c))
        assert np.max(np.abs(np.gradient(a1, t))) <= rb.delta_A * 1.001
        assert np.max(np.abs(np.gradient(b, t))) <= rb.delta_B * 1.001


def test_vertex_csv_roundtrip(tmp_path, ppa_cloud):
    poly = convex_hull(ppa_cloud)
    path = tmp_path / "v.csv"
    save_vertices(path, poly)
    assert path.read_text().splitlines()[0] == "a1,a2,b"
    back = load_vertices(path)
    np.testing.assert_array_equal(back.vertices, poly.vertices)


@pytest.mark.parametrize("text", ["", "x,y\n1,2\n", "a1,b\n1,2,3\n", "a1,b\n1,oops\n", "a1,b\n1,1\n2,-1\n"])
def test_malformed_vertex_csv(tmp_path, text):
    path = tmp_path / "bad.csv"
    path.write_text(text)
    with pytest.raises(ParameterError):
        load_vertices(path)
