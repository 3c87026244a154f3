import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from memrgs._validation import ParameterError
from memrgs.plant import CompanionLtv, PpaParams, ppa_linearize, ppa_ltv
from memrgs.rgs import (
    REST,
    SCAN,
    Divergence,
    RgsParams,
    RgsState,
    analyse_trace,
    certificate,
    certified_instance,
    drift_check,
    hysteresis_step,
    rgs_step,
    simulate_closed_loop,
    simulate_ppa_fast,
)
from memrgs.uncertainty import RateBounds


def _params(**kw):
    base = dict(k_m=1.0, k_M=3.0, T=1.0, alpha=2.0, gamma=0.5, P=np.eye(2))
    base.update(kw)
    return RgsParams(**base)


@pytest.fixture(scope="module")
def lti_design():
    """True-parameter actuator with P certifying K* = 5e4 at s = 1."""
    a1, a2, b = ppa_linearize(PpaParams())
    A, B, P = certified_instance([a1, a2], b, 5e4, 1.0)
    lam_M = np.linalg.eigvalsh(P)[-1]
    p = RgsParams(k_m=1e4, k_M=1e5, T=0.05, alpha=0.9 / lam_M, gamma=0.5, P=P)
    return (a1, a2, b), p


def test_params_validation():
    with pytest.raises(ParameterError):
        _params(gamma=1.0)
    with pytest.raises(ParameterError):
        _params(k_m=3.0)
    with pytest.raises(ParameterError):
        _params(P=[[1, 0], [0, -1]])


def test_hysteresis_examples():
    p = _params()
    rest, scan = RgsState(K=1.0, mode=REST), RgsState(K=1.0, mode=SCAN)
    assert hysteresis_step(-p.gamma * p.alpha / 2, rest, p).mode == SCAN
    assert hysteresis_step(-2 * p.alpha, scan, p).mode == REST
    band = -(p.alpha + p.gamma * p.alpha) / 2
    assert hysteresis_step(band, rest, p).mode == REST
    assert hysteresis_step(band, scan, p).mode == SCAN


def test_origin_rests():
    p = _params()
    s, u = rgs_step(RgsState(K=2.0, mode=SCAN), [0.0, 0.0], [0.0, 0.0], 0.01, p)
    assert s.mode == REST and u == 0.0 and s.K == 2.0


def test_full_scan_reaches_upper_bound_in_T():
    p = _params()
    s = RgsState(K=p.k_m, mode=SCAN, sgn=1)
    x = np.array([1.0, 0.0])
    n = 100
    for _ in range(n):
        s, _ = rgs_step(s, x, x, p.T / n, p)  # E'/E = 2 keeps scanning
    assert s.K == p.k_M and s.sgn == -1
    for _ in range(n // 2):
        s, u = rgs_step(s, x, x, p.T / n, p)
    assert s.K == pytest.approx(2.0) and u == pytest.approx(-2.0)


def test_dt_precondition():
    p = _params()
    with pytest.raises(ParameterError):
        rgs_step(RgsState(K=1.0), [1.0, 0.0], [0.0, 0.0], 0.2, p)


def test_certificate_reference_values():
    # P with eigenvalues 1 and 0.083, alpha = 0.917, delta = 1351, lambda_M^L = 29.1
    p = RgsParams(k_m=8600, k_M=86000, T=1e-7, alpha=0.917, gamma=0.5, P=np.diag([1.0, 0.083]))
    c = certificate(p, 29.1, RateBounds(0, 0, 1351.0))
    assert c.T_max == pytest.approx(1.66e-7, rel=1e-2)
    assert c.tau_min == pytest.approx(1.70e-4, rel=1e-2)
    assert math.log(c.beta_s) == pytest.approx(7.0e-5, rel=1e-2)
    assert math.log(c.beta_r) == pytest.approx(-1.17e-4, rel=1e-2)
    assert c.beta == pytest.approx(c.beta_s * c.beta_r, rel=1e-15)
    assert c.certified
    assert c.T_rs == pytest.approx(2e-7 + c.tau_min)


def test_certificate_easy_and_frozen_cases():
    p = _params()
    c = certificate(p, -1.0, RateBounds(0, 0, 5.0))
    assert c.beta_s == 1.0 and c.T_max == math.inf
    c = certificate(p, 2.0, RateBounds(0, 0, 0.0))
    assert c.T_max == math.inf and c.tau_min == math.inf


def test_zero_initial_state_trace():
    p = _params(k_m=1.0, k_M=2.0, T=1.0)
    tr = simulate_closed_loop(CompanionLtv.lti([-1.0, -1.0], 1.0, [0.0, 0.0]), p, t_end=1.0, dt=0.01)
    assert np.all(tr.x == 0) and np.all(tr.E == 0) and np.all(tr.mode == REST)


def test_lti_plant_single_scan_then_rest(lti_design):
    (a1, a2, b), p = lti_design
    dt = 2e-5
    tr = simulate_closed_loop(CompanionLtv.lti([a1, a2], b, [1e-6, 0.0]), p, t_end=2.0, dt=dt)
    assert len(tr.scan_starts) == 1
    assert tr.mode[-1] == REST
    assert np.all((tr.K >= p.k_m) & (tr.K <= p.k_M))
    rep = analyse_trace(tr, p, certificate(p, 1.0, RateBounds(0, 0, 0.0)), dt)
    assert rep.max_scan_duration <= 2 * p.T + 2 * dt
    assert rep.final_x1_ratio < 1e-2


def test_stabilising_start_never_scans(lti_design):
    (a1, a2, b), p = lti_design
    q = RgsParams(k_m=5e4, k_M=6e4, T=p.T, alpha=p.alpha, gamma=p.gamma, P=p.P)
    tr = simulate_closed_loop(CompanionLtv.lti([a1, a2], b, [1e-6, 0.0]), q, t_end=0.5, dt=2e-5)
    assert len(tr.scan_starts) == 0 and np.all(tr.K == q.k_m)


@settings(deadline=None, max_examples=5)
@given(st.floats(1e-3, 1e3))
def test_homogeneity_in_initial_state(c):
    a1, a2, b = 2.0, -1.0, 1.0
    p = RgsParams(k_m=1.0, k_M=10.0, T=0.5, alpha=0.5, gamma=0.5, P=np.array([[2.0, 0.3], [0.3, 1.0]]))
    one = simulate_closed_loop(CompanionLtv.lti([a1, a2], b, [1.0, 0.5]), p, t_end=3.0, dt=0.01)
    many = simulate_closed_loop(CompanionLtv.lti([a1, a2], b, [c, 0.5 * c]), p, t_end=3.0, dt=0.01)
    np.testing.assert_allclose(many.E, c * c * one.E, rtol=1e-9, atol=0)
    np.testing.assert_array_equal(many.K, one.K)
    np.testing.assert_array_equal(many.mode, one.mode)


def test_divergence_detected():
    # a1 = 5 > K b for every K in range: open-loop unstable throughout
    p = RgsParams(k_m=0.1, k_M=1.0, T=0.1, alpha=1.0, gamma=0.5, P=np.eye(2))
    with pytest.raises(Divergence):
        simulate_closed_loop(CompanionLtv.lti([5.0, 1.0], 1.0, [1.0, 0.0]), p, t_end=50.0, dt=0.01)


def test_compiled_loop_matches_reference_loop(lti_design):
    """Compiled and reference loops agree on the slowly drifting actuator."""
    _, p = lti_design
    dt, t_end, scale = 2e-5, 0.6, 50.0
    cert = certificate(p, 50.0, RateBounds(0, 0, 1.0))
    x0 = np.array([1e-6, 0.0])
    tr = simulate_closed_loop(ppa_ltv(x0, time_scale=scale), p, t_end=t_end, dt=dt)
    ref = analyse_trace(tr, p, cert, dt)
    rec, fast = simulate_ppa_fast(p, x0, t_end, dt, cert, time_scale=scale, stride=1)
    np.testing.assert_allclose(rec[:, 1], tr.x[:, 0], rtol=1e-9, atol=1e-18)
    np.testing.assert_array_equal(rec[:, 3], tr.K)
    assert fast.n_scans == ref.n_scans
    assert fast.max_scan_duration == pytest.approx(ref.max_scan_duration, abs=1e-12)
    assert fast.worst_envelope_ratio == pytest.approx(ref.worst_envelope_ratio, rel=1e-9)
    assert fast.worst_cycle_ratio == pytest.approx(ref.worst_cycle_ratio, rel=1e-9)


def test_drift_check_scalar_oracle():
    A, B, P = np.array([[-1.0]]), np.array([1.0]), np.array([[1.0]])
    dK, bound = drift_check(A, B, P, 1.0, 4.0, [[0.0]], [0.0])
    assert dK == 0.0
    dK, bound = drift_check(A, B, P, 1.0, 4.0, [[0.01]], [0.0])
    # re-solve (a + da) - b (K + dK) = a - b K  =>  dK = da / b
    assert dK == pytest.approx(0.01, rel=1e-12)
    assert abs(dK) <= bound


def test_drift_check_requires_equality():
    with pytest.raises(ParameterError):
        drift_check(np.array([[-1.0]]), np.array([1.0]), np.array([[1.0]]), 1.0, 3.0, [[0.0]], [0.0])


def test_drift_vanishes_linearly():
    A, B, P = certified_instance([80.0, -6.0], 3e-3, 5e4, 1.0)
    rng = np.random.default_rng(1)
    Adot = np.zeros((2, 2))
    Adot[1] = rng.normal(size=2) * 50
    Bdot = np.array([0.0, 1e-3])
    steps = 10.0 ** -np.arange(2, 7)
    dks = []
    for h in steps:
        dK, bound = drift_check(A, B, P, 5e4, 1.0, Adot * h, Bdot * h)
        assert abs(dK) <= bound
        dks.append(abs(dK))
    slope = np.polyfit(np.log(steps), np.log(dks), 1)[0]
    assert slope == pytest.approx(1.0, abs=0.1)
