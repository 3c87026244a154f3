import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, strategies as st

from memrgs._validation import ParameterError
from memrgs.memristor import (
    MemristorParams,
    MemristorState,
    charge_from_width,
    derive_safe_zone,
    memristance,
    memristance_full,
    step_full,
    step_safe,
    width_from_charge,
    window,
)

PARAMS = MemristorParams()
SZ = derive_safe_zone(PARAMS)


def test_safe_zone_default_device():
    assert SZ.Q_M_S == pytest.approx(83e-6, rel=1e-9)
    # closed-form values, hand-evaluated: 16000 - 15900*0.08 and 16000 - 15900*0.91
    assert SZ.R_off_S == pytest.approx(14728.0, abs=1e-9)
    assert SZ.R_on_S == pytest.approx(1531.0, abs=1e-9)
    assert SZ.alpha_S == pytest.approx(13197.0 / 83e-6, rel=1e-12)
    assert SZ.alpha_S == pytest.approx(1.59e8, rel=2e-3)


def test_safe_zone_invariants_hold_exactly():
    p = PARAMS
    assert SZ.D_S == p.w_h - p.w_l
    assert SZ.alpha_S == (SZ.R_off_S - SZ.R_on_S) / SZ.Q_M_S
    assert SZ.Q_M_S == SZ.D_S * p.D / (p.mu * p.R_on)


def test_full_range_safe_zone_is_degenerate_identity():
    p = MemristorParams(w_l=1e-30, w_h=PARAMS.D * (1 - 1e-15))
    sz = derive_safe_zone(p)
    assert sz.R_off_S == pytest.approx(p.R_off, rel=1e-12)
    assert sz.R_on_S == pytest.approx(p.R_on, rel=1e-9)
    assert sz.D_S == pytest.approx(p.D, rel=1e-12)


@pytest.mark.parametrize("kwargs", [
    dict(w_l=0.5e-8, w_h=0.4e-8),
    dict(R_on=2e4),
    dict(p=0),
])
def test_invalid_params_rejected(kwargs):
    with pytest.raises(ParameterError):
        MemristorParams(**kwargs)


def test_window_values():
    assert window(0.5, 8) == 1.0
    assert window(0.0, 8) == 0.0
    assert window(1.0, 3) == 0.0
    assert window(0.08, 8) == pytest.approx(1 - 0.84 ** 16, rel=1e-12)
    assert window(0.08, 8) == pytest.approx(0.938, abs=1e-3)
    assert window(0.91, 8) == pytest.approx(0.958, abs=1e-3)
    with pytest.raises(ValueError):
        window(1.2, 8)


def test_safe_zone_window_at_least_95_percent():
    x = np.linspace(0.1, 0.9, 801)
    assert np.all(window(x, 8) >= 0.95)


@given(st.floats(0, 1), st.integers(1, 12))
def test_window_symmetry(x, p):
    assert window(x, p) == pytest.approx(window(1 - x, p), abs=1e-12)
    assert 0.0 <= window(x, p) <= 1.0


def test_memristance_endpoints_and_midpoint():
    assert memristance(MemristorState(Q_M=0.0), SZ) == SZ.R_off_S
    assert memristance(MemristorState(Q_M=SZ.Q_M_S), SZ) == pytest.approx(SZ.R_on_S, rel=1e-12)
    mid = memristance(MemristorState(Q_M=SZ.Q_M_S / 2), SZ)
    assert mid == pytest.approx((SZ.R_off_S + SZ.R_on_S) / 2, rel=1e-12)


def test_step_full_zero_current_and_pinning():
    s = MemristorState(w=0.3e-8)
    assert step_full(s, 0.0, 1e-6, PARAMS).w == s.w
    for w in (0.0, PARAMS.D):
        assert step_full(MemristorState(w=w), 1e-3, 1e-6, PARAMS).w == w


def test_step_full_single_step_mid_channel():
    s = MemristorState(w=0.5 * PARAMS.D)
    dw = step_full(s, 1e-3, 1e-6, PARAMS).w - s.w
    assert dw == pytest.approx(1e-13, rel=1e-9)


def test_step_safe_examples():
    s = MemristorState(Q_M=40e-6)
    assert step_safe(s, 0.0, 1e-3, SZ).Q_M == s.Q_M
    assert step_safe(MemristorState(Q_M=0.0), -1e-3, 1e-3, SZ).Q_M == 0.0
    assert step_safe(s, 1e-3, 1e-3, SZ).Q_M == pytest.approx(41e-6, rel=1e-12)
    assert step_safe(MemristorState(Q_M=SZ.Q_M_S), 1.0, 1.0, SZ).Q_M == SZ.Q_M_S


@given(st.lists(st.floats(-1e-4, 1e-4), min_size=1, max_size=40))
def test_step_safe_is_charge_conservative_without_clamping(currents):
    s = MemristorState(Q_M=SZ.Q_M_S / 2)
    dt = 1e-3
    for I in currents:
        s = step_safe(s, I, dt, SZ)
    # total injected charge is at most 40 * 1e-7 C, far from both clamps
    assert s.Q_M - SZ.Q_M_S / 2 == pytest.approx(sum(currents) * dt, abs=1e-15)


def test_charge_width_roundtrip():
    assert charge_from_width(PARAMS.w_l, PARAMS) == 0.0
    assert charge_from_width(PARAMS.w_h, PARAMS) == pytest.approx(SZ.Q_M_S, rel=1e-12)
    assert width_from_charge(SZ.Q_M_S / 3, PARAMS) == pytest.approx(
        PARAMS.w_l + SZ.D_S / 3, rel=1e-12)


@pytest.mark.parametrize("current", [2e-3, -2e-3])
def test_full_and_safe_models_agree_in_safe_zone(current):
    """Matched-charge trajectories agree within 6 % while ``|int I dt| <= Q_M_S``."""
    start_w = PARAMS.w_l if current > 0 else PARAMS.w_h
    full = MemristorState(w=start_w)
    safe = MemristorState(Q_M=charge_from_width(start_w, PARAMS))
    dt = 1e-4
    n = int(SZ.Q_M_S / abs(current) / dt)
    worst = 0.0
    for _ in range(n):
        full = step_full(full, current, dt, PARAMS)
        safe = step_safe(safe, current, dt, SZ)
        M_full = memristance_full(full, PARAMS)
        M_safe = memristance(safe, SZ)
        worst = max(worst, abs(M_full - M_safe) / M_safe)
    assert worst < 0.06


def test_memristance_monotone_decreasing():
    q = np.linspace(0, SZ.Q_M_S, 50)
    m = [memristance(MemristorState(Q_M=x), SZ) for x in q]
    assert np.all(np.diff(m) < 0)
    assert math.isclose(m[-1], SZ.R_on_S, rel_tol=1e-12)
    assert replace(MemristorState(), Q_M=1.0).Q_M == 1.0
