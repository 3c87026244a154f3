from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.linalg import expm

from memrgs._validation import ParameterError
from memrgs.plant import (
    EPS0,
    CompanionLtv,
    PpaParams,
    PullIn,
    closed_loop_matrix,
    companion_matrices,
    scalar_drift_map,
    kappa_drift,
    ppa_bias_voltage,
    ppa_linearize,
    ppa_map,
    ppa_step_nonlinear,
    step_ltv,
)


def test_companion_structure():
    A, B, C = companion_matrices([1.0, 2.0, 3.0], 4.0)
    np.testing.assert_array_equal(A, [[0, 1, 0], [0, 0, 1], [1, 2, 3]])
    np.testing.assert_array_equal(B, [0, 0, 4])
    np.testing.assert_array_equal(C, [1, 0, 0])


def test_ppa_linearize_true_params():
    a1, a2, b = ppa_linearize(PpaParams())
    # G_o = 2G/3 collapses a1 to 3 kappa / m
    assert a1 == pytest.approx(3 * 0.08 / 3e-3, rel=1e-12)
    assert a1 == pytest.approx(80.0, rel=1e-12)
    assert a2 == pytest.approx(-5.9667, abs=1e-3)
    # sqrt(2 * 5 eps0 * 1.6e-3 * 0.08 * (2e-3/3)) / (3e-3 * 1e-3/3)
    expected_b = np.sqrt(2 * 5 * EPS0 * 1.6e-3 * 0.08 * 2e-3 / 3) / (3e-3 * 1e-3 / 3)
    assert b == pytest.approx(expected_b, rel=1e-12)
    assert b == pytest.approx(2.75e-3, rel=2e-3)


def test_ppa_linearize_marginal_and_invalid():
    p = PpaParams(G_o=1e-3 / 3)
    assert ppa_linearize(p)[0] == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(ParameterError):
        PpaParams(G_o=2e-3)


def test_ppa_rest_and_bias_fixed_point():
    p = PpaParams()
    assert ppa_step_nonlinear(0.0, 0.0, 0.0, 1e-5, p) == (0.0, 0.0)
    Vb = ppa_bias_voltage(p)
    # static balance eps A Vb^2 / (2 (G - G_o)^2) = kappa G_o
    assert p.eps * p.A_plate * Vb ** 2 / (2 * (p.G - p.G_o) ** 2) == pytest.approx(p.kappa * p.G_o, rel=1e-12)
    y, v = ppa_step_nonlinear(p.G_o, 0.0, Vb, 1e-5, p)
    assert abs(y - p.G_o) < 1e-15 and abs(v) < 1e-12


def test_pull_in_detected():
    with pytest.raises(PullIn):
        ppa_step_nonlinear(1e-3, 0.0, 0.0, 1e-6, PpaParams())


def test_linear_matches_nonlinear_near_operating_point():
    p = PpaParams()
    a1, a2, b = ppa_linearize(p)
    Vb = ppa_bias_voltage(p)
    dx0 = 1e-3 * p.G_o
    # stabilise with a constant gain so both models stay near G_o over a period
    K = 3 * a1 / b
    Acl = closed_loop_matrix([a1, a2], b, K)
    wn = np.sqrt(abs(np.linalg.det(Acl)))
    period = 2 * np.pi / wn
    dt = period / 4000
    y, yd = p.G_o + dx0, 0.0
    lin = CompanionLtv.lti([a1, a2], b, [dx0, 0.0])
    worst, scale = 0.0, dx0
    for k in range(4000):
        u = -K * lin.x[0]
        lin, _ = step_ltv(lin, u, k * dt, dt)
        y, yd = ppa_step_nonlinear(y, yd, Vb - K * (y - p.G_o), dt, p)
        worst = max(worst, abs((y - p.G_o) - lin.x[0]))
    assert worst <= 0.05 * scale


def test_step_ltv_exponential_and_equilibrium():
    sys = CompanionLtv.lti([-1.0], 0.0, [1.0])
    dt = 1e-2
    for k in range(100):
        sys, _ = step_ltv(sys, 0.0, k * dt, dt)
    assert sys.x[0] == pytest.approx(np.exp(-1.0), rel=1e-9)
    z = CompanionLtv.lti([1.0, 2.0], 1.0, [0.0, 0.0])
    z, dx = step_ltv(z, 0.0, 0.0, 0.1)
    assert np.all(z.x == 0) and np.all(dx == 0)


@settings(deadline=None, max_examples=25)
@given(st.floats(-5, 5), st.floats(-5, 5), st.floats(-2, 2), st.floats(-2, 2))
def test_step_ltv_matches_matrix_exponential(a1, a2, x1, x2):
    A, _, _ = companion_matrices([a1, a2], 1.0)
    lam = np.abs(np.linalg.eigvals(A))
    fastest = max(lam.max(), 1.0)
    dt = 1e-3 / fastest
    n = 200
    sys = CompanionLtv.lti([a1, a2], 1.0, [x1, x2])
    for k in range(n):
        sys, _ = step_ltv(sys, 0.0, k * dt, dt)
    exact = expm(A * n * dt) @ np.array([x1, x2])
    assert np.linalg.norm(sys.x - exact) <= 1e-8 * max(np.linalg.norm(exact), 1e-300) + 1e-300


def test_ppa_vertex_with_stabilising_gain_decays():
    a1, a2, b = ppa_linearize(PpaParams())
    K = 2 * a1 / b
    assert np.all(np.linalg.eigvals(closed_loop_matrix([a1, a2], b, K)).real < 0)
    sys = CompanionLtv.lti([a1, a2], b, [1e-6, 0.0])
    dt = 1e-4
    for k in range(30000):
        sys, _ = step_ltv(sys, -K * sys.x[0], k * dt, dt)
    # slowest closed-loop mode decays like exp(a2 t / 2), about e^-9 over 3 s
    assert abs(sys.x[0]) < 1e-2 * 1e-6


def test_step_ltv_uses_time_varying_coefficients():
    sys = CompanionLtv(lambda t: np.array([t]), lambda t: 0.0, [1.0])
    # x' = t x  =>  x(1) = exp(1/2)
    dt = 1e-3
    for k in range(1000):
        sys, _ = step_ltv(sys, 0.0, k * dt, dt)
    assert sys.x[0] == pytest.approx(np.exp(0.5), rel=1e-10)


def test_scalar_drift_map():
    np.testing.assert_allclose(scalar_drift_map((1, 1, 1)), [1, 1])
    np.testing.assert_allclose(scalar_drift_map((2, 1, 1)), [8, 2 ** (-2 / 3)])
    assert scalar_drift_map((2, 1, 1))[1] == pytest.approx(0.63, abs=5e-3)


def test_ppa_map_and_drift():
    p = PpaParams()
    np.testing.assert_allclose(ppa_map((p.G, p.A_plate, p.eps, p.kappa)), ppa_linearize(p))
    assert kappa_drift(0.0) == pytest.approx(0.167)
    assert kappa_drift(1e9) == pytest.approx(0.08)
    assert replace(p, kappa=0.1).kappa == 0.1
