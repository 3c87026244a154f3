"""Reflective gain-space search (RGS) controller.

The controller applies ``u_r = -K x_1`` and monitors ``E = x^T P x``.  While
``E'/E`` is negative enough it rests with ``K`` frozen; otherwise it scans
``K`` back and forth across ``[k_m, k_M]`` at rate ``(k_M - k_m)/T``.  Mode
changes use a hysteresis band::

    Rest -> Scan   when  E'/E > -gamma * alpha
    Scan -> Rest   when  E'/E < -alpha
"""

import math
from dataclasses import dataclass, field, replace

import numpy as np
from numba import njit

from ._validation import ParameterError, check_gain_interval, check_positive, check_spd
from .plant import companion_matrices, step_ltv

REST, SCAN = 0, 1


class Divergence(RuntimeError):
    """State norm left the admissible envelope during a closed-loop run."""


@dataclass(frozen=True)
class RgsParams:
    k_m: float
    k_M: float
    T: float
    alpha: float
    gamma: float
    P: np.ndarray

    def __post_init__(self):
        check_gain_interval(self.k_m, self.k_M)
        check_positive("T", self.T)
        check_positive("alpha", self.alpha)
        if not 0.0 <= self.gamma < 1.0:
            raise ParameterError(f"gamma must lie in [0, 1), got {self.gamma}")
        object.__setattr__(self, "P", check_spd(self.P))

    @property
    def scan_rate(self):
        return (self.k_M - self.k_m) / self.T


@dataclass(frozen=True)
class RgsState:
    K: float
    mode: int = REST
    sgn: int = 1
    mode_entry_time: float = 0.0


@dataclass(frozen=True)
class CertificateQuantities:
    beta_s: float
    beta_r: float
    beta: float
    tau_min: float
    T_rs: float
    T_max: float

    @property
    def certified(self):
        return 0.0 < self.beta < 1.0


def initial_state(p):
    return RgsState(K=p.k_m, mode=REST, sgn=1, mode_entry_time=0.0)


def hysteresis_step(ratio, state, p, t=None):
    mode = state.mode
    if mode == REST and ratio > -p.gamma * p.alpha:
        mode = SCAN
    elif mode == SCAN and ratio < -p.alpha:
        mode = REST
    if mode == state.mode:
        return state
    return replace(state, mode=mode, mode_entry_time=state.mode_entry_time if t is None else t)


def _advance_gain(K, sgn, rate, dt, k_m, k_M):
    K = K + sgn * rate * dt
    tol = 1e-12 * (k_M - k_m)
    if K >= k_M - tol:
        K, sgn = k_M, -1
    elif K <= k_m + tol:
        K, sgn = k_m, 1
    return K, sgn


def rgs_step(state, x, xdot, dt, p, t=0.0, E_floor=0.0):
    """Advance the controller by ``dt`` given the plant state and its derivative.

    Returns the new controller state and ``u_r = -K x_1`` for the new gain.
    Below ``E_floor`` the controller rests with ``K`` frozen.
    """
    if dt > p.T / 10 * (1 + 1e-12):
        raise ParameterError("dt must not exceed T/10")
    x = np.asarray(x, dtype=float)
    xdot = np.asarray(xdot, dtype=float)
    Px = p.P @ x
    E = float(x @ Px)
    if E <= E_floor:
        if state.mode != REST:
            state = replace(state, mode=REST, mode_entry_time=t)
        return state, -state.K * x[0]
    Edot = 2.0 * float(xdot @ Px)
    state = hysteresis_step(Edot / E, state, p, t)
    if state.mode == SCAN:
        K, sgn = _advance_gain(state.K, state.sgn, p.scan_rate, dt, p.k_m, p.k_M)
        state = replace(state, K=K, sgn=sgn)
    return state, -state.K * x[0]


def certificate(p, lambda_M_L, rb):
    """Expansion/contraction factors and timing bounds for a design.

    ``rb`` is a :class:`~memrgs.uncertainty.RateBounds`; only ``rb.delta``
    is used.
    """
    delta = rb.delta if hasattr(rb, "delta") else float(rb)
    if delta < 0:
        raise ParameterError("delta must be non-negative")
    lam_m = float(np.linalg.eigvalsh(p.P)[0])
    a, g, T = p.alpha, p.gamma, p.T
    growth = 2.0 * lambda_M_L * T / lam_m
    beta_s = (math.exp(growth) if growth < 700.0 else math.inf) if lambda_M_L > 0 else 1.0
    if delta == 0:
        tau_min = math.inf
        beta_r = 0.0
    else:
        tau_min = a * (1.0 - g) / (2.0 * delta)
        beta_r = math.exp(-a * a * (1.0 - g * g) / (4.0 * delta))
    if lambda_M_L <= 0 or delta == 0:
        T_max = math.inf
    else:
        T_max = lam_m * a * a * (1.0 - g * g) / (8.0 * delta * lambda_M_L)
    return CertificateQuantities(beta_s=beta_s, beta_r=beta_r,
                                 beta=beta_s * beta_r if math.isfinite(beta_s) else math.inf,
                                 tau_min=tau_min, T_rs=2.0 * T + tau_min, T_max=T_max)


@dataclass
class SimTrace:
    t: np.ndarray
    x: np.ndarray
    u_r: np.ndarray
    E: np.ndarray
    Edot: np.ndarray
    K: np.ndarray
    mode: np.ndarray
    sgn: np.ndarray
    scan_starts: list = field(default_factory=list)
    scan_ends: list = field(default_factory=list)

    def columns(self):
        cols = {"t": self.t}
        for i in range(self.x.shape[1]):
            cols[f"x{i + 1}"] = self.x[:, i]
        cols.update(u_r=self.u_r, E=self.E, Edot=self.Edot, K=self.K, mode=self.mode, sgn=self.sgn)
        return cols

    def cycle_ratios(self):
        """``E`` at each scan entry divided by ``E`` at the previous one."""
        E = [self.E[i] for i in self.scan_starts]
        return [E[j + 1] / E[j] for j in range(len(E) - 1)]


def simulate_closed_loop(plant, p, state0=None, t_end=1.0, dt=None, E_floor_rel=1e-12,
                         diverge_factor=1e6):
    """Integrate plant and controller with zero-order-hold input.

    Every step uses the plant derivative at the current state (with the
    current gain) to update the controller, then advances the plant by RK4
    with the new input held.
    """
    dt = p.T / 10 if dt is None else dt
    if dt > p.T / 10 * (1 + 1e-12):
        raise ParameterError("dt must not exceed T/10")
    state = initial_state(p) if state0 is None else state0
    n = int(round(t_end / dt))
    N = plant.N
    t_arr = np.arange(n + 1) * dt
    X = np.empty((n + 1, N))
    cols = {k: np.empty(n + 1) for k in ("u_r", "E", "Edot", "K", "mode", "sgn")}
    x0 = plant.x.copy()
    E0 = float(x0 @ p.P @ x0)
    E_floor = E_floor_rel * E0
    limit = diverge_factor * max(np.linalg.norm(x0), 1e-300)
    scan_starts, scan_ends = [], []
    sys = plant
    for k in range(n + 1):
        t = k * dt
        x = sys.x
        xdot = sys.deriv(x, -state.K * x[0], t)
        E = float(x @ p.P @ x)
        prev_mode = state.mode
        state, u = rgs_step(state, x, xdot, dt, p, t=t, E_floor=E_floor)
        if state.mode != prev_mode:
            (scan_starts if state.mode == SCAN else scan_ends).append(k)
        X[k] = x
        cols["E"][k] = E
        cols["Edot"][k] = 2.0 * float(xdot @ p.P @ x)
        cols["K"][k] = state.K
        cols["mode"][k] = state.mode
        cols["sgn"][k] = state.sgn
        cols["u_r"][k] = u
        if k == n:
            break
        sys, _ = step_ltv(sys, u, t, dt)
        if not np.all(np.isfinite(sys.x)) or np.linalg.norm(sys.x) > limit:
            raise Divergence(f"state norm exceeded {diverge_factor:g} x initial at t={t + dt:.6g}")
    return SimTrace(t=t_arr, x=X, scan_starts=scan_starts, scan_ends=scan_ends, **cols)


@dataclass
class TraceReport:
    K_min: float
    K_max: float
    max_scan_duration: float
    n_scans: int
    n_complete_cycles: int
    worst_cycle_ratio: float  # max over complete cycles of E_end / (beta E_start)
    worst_envelope_ratio: float  # max over samples of E / envelope bound
    final_x1_ratio: float


def analyse_trace(trace, p, cert, dt):
    """Check gain confinement, scan duration, per-cycle contraction and the ``E(t)`` envelope."""
    t = trace.t
    durations = []
    for start in trace.scan_starts:
        ends = [e for e in trace.scan_ends if e > start]
        end = ends[0] if ends else len(t) - 1
        durations.append(t[end] - t[start])
    ratios = trace.cycle_ratios()
    worst_cycle = max((r / cert.beta for r in ratios), default=0.0)
    # eta(t) counts scan entries strictly before the current one
    entries = np.zeros(len(t), dtype=int)
    for s in trace.scan_starts:
        entries[s:] += 1
    eta = np.maximum(entries - 1, 0)
    E0 = trace.E[0]
    with np.errstate(divide="ignore", invalid="ignore"):
        # eta = 0 must not meet log(beta) = -inf or T_rs = inf
        cyc = np.where(eta > 0, eta * np.log(cert.beta), 0.0)
        elapsed = t - cert.T_rs - np.where(eta > 0, eta * cert.T_rs, 0.0)
        log_env = (np.log(E0) + np.log(cert.beta_s) + cyc
                   - p.gamma * p.alpha * np.maximum(np.nan_to_num(elapsed, nan=0.0), 0.0))
        log_E = np.log(np.maximum(trace.E, 1e-300))
    pos = trace.E > 0
    worst_env = float(np.exp(np.max(log_E[pos] - log_env[pos]))) if pos.any() else 0.0
    x1_0 = trace.x[0, 0]
    return TraceReport(
        K_min=float(trace.K.min()), K_max=float(trace.K.max()),
        max_scan_duration=max(durations, default=0.0), n_scans=len(trace.scan_starts),
        n_complete_cycles=max(len(trace.scan_starts) - 1, 0),
        worst_cycle_ratio=worst_cycle, worst_envelope_ratio=worst_env,
        final_x1_ratio=float(abs(trace.x[-1, 0]) / abs(x1_0)) if x1_0 != 0 else 0.0,
    )


# -- compiled actuator loop ------------------------------------------------------

@njit(cache=True)
def _ppa_coeffs(t, m, b_damp, A_plate, G, time_scale, eps0):
    kappa = 0.08 + 0.087 * math.exp(-0.8 * t / time_scale)
    eps = eps0 * (5.0 + 1.5 * math.sin(7.854 * t / time_scale))
    G_o = 2.0 * G / 3.0
    gap = G - G_o
    a1 = -kappa * (G - 3.0 * G_o) / (m * gap)
    a2 = -b_damp / m
    b = math.sqrt(2.0 * eps * A_plate * kappa * G_o) / (m * gap)
    return a1, a2, b


@njit(cache=True)
def _ppa_rgs_kernel(x1, x2, P11, P12, P22, k_m, k_M, T, alpha, gamma, m, b_damp, A_plate, G,
                    time_scale, eps0, dt, n_steps, stride, E_floor_rel, diverge_factor,
                    log_beta_s, log_beta, T_rs):
    n_rec = n_steps // stride + 1
    rec = np.empty((n_rec, 6))  # t, x1, x2, K, E, mode
    K = k_m
    sgn = 1
    mode = 0
    rate = (k_M - k_m) / T
    tol = 1e-12 * (k_M - k_m)
    E0 = P11 * x1 * x1 + 2.0 * P12 * x1 * x2 + P22 * x2 * x2
    E_floor = E_floor_rel * E0
    norm0 = math.sqrt(x1 * x1 + x2 * x2)
    K_min = K
    K_max = K
    n_scans = 0
    scan_start_t = 0.0
    max_scan = 0.0
    E_prev_start = 0.0
    worst_cycle = 0.0
    worst_env = 0.0
    status = 0
    j = 0
    for k in range(n_steps + 1):
        t = k * dt
        a1, a2, b = _ppa_coeffs(t, m, b_damp, A_plate, G, time_scale, eps0)
        u = -K * x1
        d1 = x2
        d2 = a1 * x1 + a2 * x2 + b * u
        E = P11 * x1 * x1 + 2.0 * P12 * x1 * x2 + P22 * x2 * x2
        Edot = 2.0 * (d1 * (P11 * x1 + P12 * x2) + d2 * (P12 * x1 + P22 * x2))
        # envelope check, eta = completed cycles before t
        if E > 0.0:
            eta = n_scans - 1 if n_scans > 1 else 0
            arg = t - T_rs - eta * T_rs
            if arg < 0.0:
                arg = 0.0
            log_env = math.log(E0) + log_beta_s + eta * log_beta - gamma * alpha * arg
            r = math.exp(math.log(E) - log_env)
            if r > worst_env:
                worst_env = r
        new_mode = mode
        if E <= E_floor:
            new_mode = 0
        else:
            ratio = Edot / E
            if mode == 0 and ratio > -gamma * alpha:
                new_mode = 1
            elif mode == 1 and ratio < -alpha:
                new_mode = 0
        if new_mode != mode:
            if new_mode == 1:
                if n_scans > 0:
                    c = E / E_prev_start
                    if c > worst_cycle:
                        worst_cycle = c
                E_prev_start = E
                n_scans += 1
                scan_start_t = t
            else:
                d = t - scan_start_t
                if d > max_scan:
                    max_scan = d
            mode = new_mode
        if mode == 1:
            K = K + sgn * rate * dt
            if K >= k_M - tol:
                K = k_M
                sgn = -1
            elif K <= k_m + tol:
                K = k_m
                sgn = 1
        if K < K_min:
            K_min = K
        if K > K_max:
            K_max = K
        if k % stride == 0 and j < n_rec:
            rec[j, 0] = t
            rec[j, 1] = x1
            rec[j, 2] = x2
            rec[j, 3] = K
            rec[j, 4] = E
            rec[j, 5] = mode
            j += 1
        if k == n_steps:
            break
        u = -K * x1
        # RK4 with the input held over the step
        th = t + 0.5 * dt
        ah1, ah2, bh = _ppa_coeffs(th, m, b_damp, A_plate, G, time_scale, eps0)
        ae1, ae2, be = _ppa_coeffs(t + dt, m, b_damp, A_plate, G, time_scale, eps0)
        k1a = x2
        k1b = a1 * x1 + a2 * x2 + b * u
        y1 = x1 + 0.5 * dt * k1a
        y2 = x2 + 0.5 * dt * k1b
        k2a = y2
        k2b = ah1 * y1 + ah2 * y2 + bh * u
        y1 = x1 + 0.5 * dt * k2a
        y2 = x2 + 0.5 * dt * k2b
        k3a = y2
        k3b = ah1 * y1 + ah2 * y2 + bh * u
        y1 = x1 + dt * k3a
        y2 = x2 + dt * k3b
        k4a = y2
        k4b = ae1 * y1 + ae2 * y2 + be * u
        x1 = x1 + dt / 6.0 * (k1a + 2.0 * k2a + 2.0 * k3a + k4a)
        x2 = x2 + dt / 6.0 * (k1b + 2.0 * k2b + 2.0 * k3b + k4b)
        nrm = math.sqrt(x1 * x1 + x2 * x2)
        if not nrm <= diverge_factor * norm0:
            status = 1
            break
    if mode == 1:
        d = n_steps * dt - scan_start_t
        if d > max_scan:
            max_scan = d
    return rec[:j], K_min, K_max, max_scan, n_scans, worst_cycle, worst_env, status, x1


def simulate_ppa_fast(p, x0, t_end, dt, cert, time_scale=1.0, base=None, stride=None,
                      E_floor_rel=1e-12, diverge_factor=1e6):
    """Compiled closed-loop run of the linearised actuator with drifting spring and permittivity.

    Invariants are evaluated at every step inside the loop; only every
    ``stride``-th sample is stored.  Returns ``(records, report)`` with
    ``records`` columns ``t, x1, x2, K, E, mode``.
    """
    from .plant import EPS0, PpaParams

    base = PpaParams() if base is None else base
    if dt > p.T / 10 * (1 + 1e-12):
        raise ParameterError("dt must not exceed T/10")
    if not math.isclose(base.G_o, 2.0 * base.G / 3.0, rel_tol=1e-12):
        raise ParameterError("compiled actuator loop assumes G_o = 2G/3")
    n = int(round(t_end / dt))
    stride = max(1, n // 20000) if stride is None else int(stride)
    P = p.P
    out = _ppa_rgs_kernel(float(x0[0]), float(x0[1]), P[0, 0], P[0, 1], P[1, 1],
                          p.k_m, p.k_M, p.T, p.alpha, p.gamma, base.m, base.b_damp,
                          base.A_plate, base.G, float(time_scale), EPS0, float(dt), n, stride,
                          E_floor_rel, diverge_factor, math.log(cert.beta_s), math.log(cert.beta),
                          cert.T_rs)
    rec, K_min, K_max, max_scan, n_scans, worst_cycle, worst_env, status, x1_end = out
    if status:
        raise Divergence("state norm exceeded the divergence limit")
    report = TraceReport(
        K_min=K_min, K_max=K_max, max_scan_duration=max_scan, n_scans=int(n_scans),
        n_complete_cycles=max(int(n_scans) - 1, 0),
        worst_cycle_ratio=worst_cycle / cert.beta if n_scans > 1 else 0.0,
        worst_envelope_ratio=worst_env,
        final_x1_ratio=abs(x1_end) / abs(x0[0]) if x0[0] != 0 else 0.0,
    )
    return rec, report


# -- stabilising-gain drift ------------------------------------------------------

def drift_check(A, B, P, K_star, s_star, deltaA_step, deltaB_step, tol=1e-8):
    """Gain correction that keeps the Lyapunov equality after a small plant change.

    Solves ``dK R = (dA - dB K* C)^T P + P (dA - dB K* C)`` in least squares,
    with ``R = C^T (B + dB)^T P + P (B + dB) C``, and returns ``(dK, bound)``
    where ``bound = 2 ||P|| (||dA|| + K* ||dB||) / ||R||`` (Frobenius norms
    for the perturbations and ``R``, spectral norm for ``P``).  ``bound`` is
    ``inf`` when ``R`` vanishes.
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float).reshape(-1)
    P = check_spd(P)
    N = A.shape[0]
    C = np.zeros(N)
    C[0] = 1.0
    Acl = A - K_star * np.outer(B, C)
    L = Acl.T @ P + P @ Acl
    if np.max(np.abs(L + s_star * np.eye(N))) > tol * max(1.0, abs(s_star)):
        raise ParameterError("(A - B K* C)^T P + P (A - B K* C) != -s* I")
    dA = np.asarray(deltaA_step, dtype=float)
    dB = np.asarray(deltaB_step, dtype=float).reshape(-1)
    D = dA - K_star * np.outer(dB, C)
    rhs = D.T @ P + P @ D
    Bp = B + dB
    R = np.outer(C, Bp) @ P + P @ np.outer(Bp, C)
    nR = np.linalg.norm(R)
    if nR <= 1e-300:
        return 0.0, math.inf
    dK = float(np.sum(R * rhs) / nR ** 2)
    bound = 2.0 * np.linalg.norm(P, 2) * (np.linalg.norm(dA) + abs(K_star) * np.linalg.norm(dB)) / nR
    return dK, float(bound)


def certified_instance(a, b, K_star, s_star=1.0):
    """``(A, B, P)`` with ``(A - B K* C)^T P + P (A - B K* C) = -s* I`` exactly.

    The closed loop must be Hurwitz; ``P`` solves the Lyapunov equation.
    """
    from scipy.linalg import solve_continuous_lyapunov

    A, Bv, C = companion_matrices(a, b)
    Acl = A - K_star * np.outer(Bv, C)
    if np.max(np.linalg.eigvals(Acl).real) >= 0:
        raise ParameterError("closed loop is not Hurwitz for this K*")
    P = solve_continuous_lyapunov(Acl.T, -s_star * np.eye(len(Bv)))
    P = 0.5 * (P + P.T)
    return A, Bv, P
