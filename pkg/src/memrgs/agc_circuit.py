"""Block-level model of the memristive analog gain controller.

Signal chain per step: gated control voltage -> memristor charged by a
carrier-modulated error current plus the control current -> inverting
high-pass filter -> polarity-sensitive peak detector.  An integrator
mirrors the memristor charge so comparators can gate the control voltage
at the safe-zone edges.

Devices are ideal switches; op-amp outputs saturate at the supply rails.
The calibration voltage ``v_h`` and integrator ``v_ig`` are kept ideal (no
rail clamp) so mismatched tunings still synchronise.
"""

import math
from dataclasses import dataclass, field, replace

import numpy as np
from numba import njit

from ._validation import ParameterError, check_positive
from .memristor import MemristorState


@dataclass(frozen=True)
class CircuitParams:
    omega_m: float
    R_I: float
    R_C: float
    tau_f: float
    tau_e: float
    tau_s: float
    V_DD: float
    omega_C_max: float = 0.0
    omega_e_max: float = 0.0
    q_guard: float = 0.0  # charge margin inside each zone edge at which the gate closes

    def __post_init__(self):
        for name in ("omega_m", "R_I", "R_C", "tau_f", "tau_e", "tau_s", "V_DD"):
            check_positive(name, getattr(self, name))
        if self.omega_C_max < 0 or self.omega_e_max < 0:
            raise ParameterError("band limits must be non-negative")
        if self.q_guard < 0:
            raise ParameterError("q_guard must be non-negative")

    @property
    def v_guard(self):
        """Integrator-voltage offset of the comparator thresholds for ``q_guard``."""
        return self.R_C * self.q_guard / self.tau_s

    @property
    def max_dt(self):
        """Largest step giving 50 samples per carrier period."""
        return 2.0 * math.pi / (50.0 * self.omega_m)

    def alpha_k(self, sz):
        """Gain sensitivity of the ideal law, ``-alpha_S / (R_I R_C)``."""
        return -sz.alpha_S / (self.R_I * self.R_C)

    def gain_range(self, sz):
        return sz.R_on_S / self.R_I, sz.R_off_S / self.R_I


@dataclass(frozen=True)
class ZoneFlags:
    v_l1: float
    v_l2: float


@dataclass(frozen=True)
class AgcState:
    mem: MemristorState = field(default_factory=MemristorState)
    v_f: float = 0.0
    v_u: float = 0.0
    v_ig: float = 0.0
    v_h: float = -1.0
    toggler: float = 1.0


def tune(omega_C_max, omega_e_max, V_DD, R_I, R_C, tau_s):
    """Carrier and filter constants from the signal bandwidths.

    ``omega_m = 1000 max(omega_C + omega_e, 2 omega_C)``, ``tau_f = 100 / omega_m``
    and ``tau_e = 1 / (2 (omega_C + omega_e))``.
    """
    if omega_C_max < 0 or omega_e_max < 0 or omega_C_max + omega_e_max == 0:
        raise ParameterError("band limits must be non-negative and not both zero")
    omega_m = 1000.0 * max(omega_C_max + omega_e_max, 2.0 * omega_C_max)
    return CircuitParams(omega_m=omega_m, R_I=R_I, R_C=R_C, tau_f=100.0 / omega_m,
                         tau_e=1.0 / (2.0 * (omega_C_max + omega_e_max)), tau_s=tau_s,
                         V_DD=V_DD, omega_C_max=omega_C_max, omega_e_max=omega_e_max)


def hpf_attenuation_db(omega, tau_f):
    """Gain of the first-order high-pass in dB, ``-10 log10(1 + (omega tau_f)^-2)``."""
    if omega <= 0 or tau_f <= 0:
        raise ParameterError("omega and tau_f must be positive")
    return -10.0 * math.log10(1.0 + (omega * tau_f) ** -2)


def ripple_factor(omega_m, tau_e):
    """DC-input ripple of the peak detector as a fraction, ``2 pi / (sqrt(3) omega_m tau_e)``.

    For an ideal half-wave detector this is twice the RMS-over-mean of the
    sawtooth ripple, so it is a conservative figure.
    """
    x = omega_m * tau_e
    if not x > 0:
        raise ParameterError("omega_m * tau_e must be positive")
    return 2.0 * math.pi / (math.sqrt(3.0) * x)


@njit(cache=True)
def _gate(V_C, v_ig, v_h, V_DD, g):
    # returns (V_C_m, v_l1, v_l2); g moves both thresholds inwards
    if v_ig >= -g:
        return (V_C if V_C > 0.0 else 0.0), -V_DD, V_DD
    if v_ig <= v_h + g:
        return (V_C if V_C < 0.0 else 0.0), V_DD, -V_DD
    return V_C, V_DD, V_DD


def gate_logic(V_C, v_ig, v_h, V_DD=5.0, v_guard=0.0):
    """Charge-saturator gating; returns ``(V_C_m, ZoneFlags)``.

    Inside ``(v_h, 0)`` the control passes; at or below ``v_h`` only negative
    control passes; at or above zero only positive control passes.  A
    positive ``v_guard`` moves both thresholds inwards by that much.
    """
    if not v_h + 2 * v_guard < 0:
        raise ParameterError("v_h must be negative and below -2 v_guard")
    V_Cm, l1, l2 = _gate(float(V_C), float(v_ig), float(v_h), float(V_DD), float(v_guard))
    return V_Cm, ZoneFlags(l1, l2)


@njit(cache=True)
def _clip(v, lim):
    return min(max(v, -lim), lim)


@njit(cache=True)
def _step(Q, z, v_ig, v_u, v_h, V_e, V_C, t, dt,
          omega_m, R_I, R_C, tau_f, tau_e, tau_s, V_DD, R_off_S, alpha_S, g):
    """One step; returns (Q, z, v_ig, v_u, V_C_m, V_f, v_l1, v_l2)."""
    V_Cm, l1, l2 = _gate(V_C, v_ig, v_h, V_DD, g)
    a = V_e / (R_I * omega_m)
    c0 = math.cos(omega_m * t)
    ic = V_Cm / R_C

    # charge is integrated exactly for piecewise-constant inputs
    def charge(h):
        return Q + a * (c0 - math.cos(omega_m * (t + h))) + ic * h

    def vm(h):
        I = V_e * math.sin(omega_m * (t + h)) / R_I + ic
        return _clip(-I * (R_off_S - alpha_S * charge(h)), V_DD)

    m0, mh, m1 = vm(0.0), vm(0.5 * dt), vm(dt)
    k1 = (m0 - z) / tau_f
    k2 = (mh - (z + 0.5 * dt * k1)) / tau_f
    k3 = (mh - (z + 0.5 * dt * k2)) / tau_f
    k4 = (m1 - (z + dt * k3)) / tau_f
    z_new = z + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    V_f = _clip(z_new - m1, V_DD)
    v_u = v_u * math.exp(-dt / tau_e)
    if V_e >= 0.0:
        if V_f > v_u:
            v_u = V_f
    elif V_f < v_u:
        v_u = V_f
    return charge(dt), z_new, v_ig - V_Cm * dt / tau_s, v_u, V_Cm, V_f, l1, l2


def _args(cp, sz):
    return (cp.omega_m, cp.R_I, cp.R_C, cp.tau_f, cp.tau_e, cp.tau_s, cp.V_DD, sz.R_off_S, sz.alpha_S,
            cp.v_guard)


def step_circuit(state, V_e, V_C, t, dt, cp, sz):
    """Advance the circuit by ``dt`` with inputs held constant; returns ``(state, V_u)``."""
    if dt > cp.max_dt * (1 + 1e-12):
        raise ParameterError(f"dt={dt} exceeds 2 pi / (50 omega_m) = {cp.max_dt}")
    Q, z, v_ig, v_u, *_ = _step(state.mem.Q_M, state.v_f, state.v_ig, state.v_u, state.v_h,
                                float(V_e), float(V_C), float(t), float(dt), *_args(cp, sz))
    return replace(state, mem=replace(state.mem, Q_M=Q), v_f=z, v_ig=v_ig, v_u=v_u), v_u


TRACE_COLUMNS = ("t", "V_e", "V_C", "V_C_m", "Q_M", "M", "V_f", "V_u", "v_ig", "v_l1", "v_l2")


@njit(cache=True)
def _run(Q, z, v_ig, v_u, v_h, t0, dt, V_e, V_C, stride,
         omega_m, R_I, R_C, tau_f, tau_e, tau_s, V_DD, R_off_S, alpha_S, g):
    n = V_e.shape[0]
    rec = np.empty((n // stride + 1, 11))
    rec[0, :] = (t0, V_e[0], V_C[0], 0.0, Q, R_off_S - alpha_S * Q, 0.0, v_u, v_ig, 0.0, 0.0)
    r = 1
    q_lo, q_hi = Q, Q
    for k in range(n):
        t = t0 + k * dt
        Q, z, v_ig, v_u, V_Cm, V_f, l1, l2 = _step(
            Q, z, v_ig, v_u, v_h, V_e[k], V_C[k], t, dt,
            omega_m, R_I, R_C, tau_f, tau_e, tau_s, V_DD, R_off_S, alpha_S, g)
        q_lo = min(q_lo, Q)
        q_hi = max(q_hi, Q)
        if (k + 1) % stride == 0:
            rec[r, :] = (t + dt, V_e[k], V_C[k], V_Cm, Q, R_off_S - alpha_S * Q, V_f, v_u, v_ig, l1, l2)
            r += 1
    return rec[:r], Q, z, v_ig, v_u, q_lo, q_hi


@dataclass
class AgcRun:
    """Recorded samples (columns ``TRACE_COLUMNS``), final state and charge extremes."""

    rec: np.ndarray
    state: AgcState
    q_min: float
    q_max: float

    def column(self, name):
        return self.rec[:, TRACE_COLUMNS.index(name)]


def simulate(cp, sz, state, V_e, V_C, dt, t0=0.0, stride=1):
    """Run the compiled loop over sampled inputs (one sample per step)."""
    if dt > cp.max_dt * (1 + 1e-12):
        raise ParameterError(f"dt={dt} exceeds 2 pi / (50 omega_m) = {cp.max_dt}")
    V_e = np.ascontiguousarray(V_e, dtype=float)
    V_C = np.ascontiguousarray(V_C, dtype=float)
    if V_e.shape != V_C.shape or V_e.ndim != 1:
        raise ParameterError("V_e and V_C must be 1-D arrays of equal length")
    rec, Q, z, v_ig, v_u, q_lo, q_hi = _run(state.mem.Q_M, state.v_f, state.v_ig, state.v_u, state.v_h,
                                            float(t0), float(dt), V_e, V_C, int(stride), *_args(cp, sz))
    end = replace(state, mem=replace(state.mem, Q_M=Q), v_f=z, v_ig=v_ig, v_u=v_u)
    return AgcRun(rec, end, q_lo, q_hi)


def ideal_agc_step(K, V_e, V_C, dt, alpha_k, k_range=None):
    """Reference gain law ``K' = alpha_k V_C``, ``V_u = K V_e``; returns ``(K, V_u)``.

    ``k_range`` clamps the gain (the memristor's reachable range).
    """
    if not K > 0:
        raise ParameterError("K must be positive")
    K = K + alpha_k * V_C * dt
    if k_range is not None:
        K = min(max(K, k_range[0]), k_range[1])
    return K, K * V_e


def ideal_reference(K0, V_e, V_C, dt, alpha_k, k_range):
    """Vectorised reference over sampled inputs; ``V_u[k]`` uses the gain after step ``k``."""
    K = np.clip(K0 + np.cumsum(alpha_k * np.asarray(V_C) * dt), *k_range)
    # clamping a running sum is exact only when saturation never releases; fall back otherwise
    if np.any((K == k_range[0]) | (K == k_range[1])):
        out = np.empty(len(V_C))
        k = K0
        for i, vc in enumerate(V_C):
            k = min(max(k + alpha_k * vc * dt, k_range[0]), k_range[1])
            out[i] = k
        K = out
    return K, K * np.asarray(V_e)


@dataclass(frozen=True)
class SyncReport:
    preset_time: float
    calibration_time: float


def synchronize(state, cp, sz):
    """Preset then online calibration, as target-driven constant-rate ramps.

    Preset discharges the calibration capacitor, zeroes the integrator and
    drives the memristance to ``R_off_S`` at ``|dM/dt| = alpha_S V_DD / R_C``.
    Calibration drives it to ``R_on_S`` with the integrator running, so
    ``v_h = v_ig = -R_C Q_M_S / tau_s`` at the end.  Returns ``(state, SyncReport)``.
    """
    M = sz.R_off_S - sz.alpha_S * state.mem.Q_M
    rate = sz.alpha_S * cp.V_DD / cp.R_C
    preset = abs(M - sz.R_off_S) / rate
    calib = sz.Q_M_S * cp.R_C / cp.V_DD
    v = -cp.V_DD * calib / cp.tau_s  # integrator input is the comparator rail during calibration
    new = replace(state, mem=replace(state.mem, Q_M=sz.Q_M_S), v_ig=v, v_h=v, v_u=0.0, v_f=0.0)
    return new, SyncReport(preset, calib)


def sync_to_charge(cp, sz, Q_M):
    """Synchronised state moved to charge ``Q_M`` with the integrator tracking it."""
    state, _ = synchronize(AgcState(), cp, sz)
    return replace(state, mem=replace(state.mem, Q_M=Q_M), v_ig=-cp.R_C * Q_M / cp.tau_s)


def charge_tolerance(cp, V_e_max, dt):
    """Charge excursion the carrier and one control step can add beyond the gate threshold."""
    return 2.0 * V_e_max / (cp.R_I * cp.omega_m) + cp.V_DD * dt / cp.R_C


def with_guard(cp, V_e_max, dt):
    """Circuit whose gate closes ``charge_tolerance`` inside the zone.

    Started with ``Q_M`` in ``[q_guard, Q_M_S - q_guard]`` and driven with
    ``|V_e| <= V_e_max``, the charge then never leaves ``[0, Q_M_S]``.
    """
    return replace(cp, q_guard=charge_tolerance(cp, V_e_max, dt))


def band_limited(t, freqs, amps, phases, offset=0.0):
    """Sum of sinusoids, a convenient band-limited stimulus."""
    t = np.asarray(t, dtype=float)
    out = np.full_like(t, offset)
    for w, a, ph in zip(freqs, amps, phases):
        out += a * np.sin(w * t + ph)
    return out


def fidelity_nrmse(run_V_u, ref_V_u, t, settle):
    """Normalised RMS error of the circuit output after ``settle`` seconds."""
    mask = np.asarray(t) >= settle
    err = np.sqrt(np.mean((run_V_u[mask] - ref_V_u[mask]) ** 2))
    return float(err / np.sqrt(np.mean(ref_V_u[mask] ** 2)))


def measured_ripple(V_u, t, t_start):
    """Ripple of a DC-driven output: standard deviation over absolute mean."""
    seg = np.asarray(V_u)[np.asarray(t) >= t_start]
    return float(np.std(seg) / abs(np.mean(seg)))


BASELINE_CIRCUIT = dict(omega_m=628e3, R_C=100e3, R_I=1e3, tau_f=0.159e-3, tau_e=0.796e-3, V_DD=5.0, tau_s=0.826)


def baseline_circuit(omega_C_max=128.0, omega_e_max=500.0):
    return CircuitParams(omega_C_max=omega_C_max, omega_e_max=omega_e_max, **BASELINE_CIRCUIT)
