"""End-to-end synthesis of a certified reflective gain-space controller.

Uncertainty box -> coefficient cloud -> bounding polytope -> global BMI
solve -> certificate constants -> scan time -> analog component values.
"""

import json
import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from ._validation import ParameterError
from .bmi import (
    BmiInstance,
    branch_and_bound,
    routh_initial_gain_set,
    shrink_gain_set,
    verify_vertex_certificate,
    verify_interior_samples,
)
from .memristor import ROUNDED_SAFE_ZONE, MemristorParams, derive_safe_zone
from .plant import PpaParams, scalar_drift_map, ppa_bias_voltage, ppa_drift_rates, ppa_map
from .rgs import RgsParams, certificate
from .uncertainty import (
    PPA_BOXES,
    RateBounds,
    VertexPolytope,
    convex_hull,
    scalar_drift_param_box,
    scalar_drift_rate_bounds,
    lambda_max_P_bound,
    map_box_to_cloud,
    ppa_param_box,
    ppa_rate_bounds,
)


class NoCertificate(RuntimeError):
    """The synthesis problem has no decreasing Lyapunov certificate."""


class GainSpanError(ParameterError):
    """The memristor cannot realise the required gain ratio."""


@dataclass
class DesignConfig:
    """Inputs of :func:`run_design` (SI units; permittivities in F/m).

    ``model`` is ``"ppa"`` (parallel-plate actuator) or ``"scalar_drift"`` (the
    scalar drifting example).  Unset rate limits fall back to the built-in
    drifts slowed by ``time_scale``.  ``gain_span`` overrides the memristor's
    ``R_off_S / R_on_S`` as the admissible ``k_M / k_m``; with
    ``realize_circuit=False`` no component values are computed.
    """

    model: str = "ppa"
    S_G: tuple = PPA_BOXES["S_G"]
    S_A: tuple = PPA_BOXES["S_A"]
    S_eps: tuple = PPA_BOXES["S_eps"]
    S_kappa: tuple = PPA_BOXES["S_kappa"]
    m: float = 3e-3
    b_damp: float = 1.79e-2
    max_kappa_dot: float = None
    max_eps_dot: float = None
    time_scale: float = 1.0
    a_star: float = 1.0
    b_star: float = 1.0
    c_star: float = 1.0
    tau_a: float = 1.0
    tau_c: float = 1.0
    rate_form: str = "exact"
    grid: int = 6
    gamma: float = 0.5
    T_fraction: float = 0.6
    T_unbounded: float = 1.0
    mu_p: float = 1e-3
    epsilon: float = 1e-3
    max_nodes: int = 200
    time_limit: float = None
    delta_rel: float = 1e-3
    gain_span: float = None
    realize_circuit: bool = True
    V_DD: float = 5.0
    R2: float = 1e4
    n_interior_samples: int = 200
    seed: int = 0

    def __post_init__(self):
        if self.model not in ("ppa", "scalar_drift"):
            raise ParameterError(f"unknown model {self.model!r}")
        if not 0.0 <= self.gamma < 1.0:
            raise ParameterError("gamma must lie in [0, 1)")
        if not 0.0 < self.T_fraction < 1.0:
            raise ParameterError("T_fraction must lie in (0, 1)")
        for name in ("time_scale", "epsilon", "V_DD", "R2", "m", "b_damp"):
            if not getattr(self, name) > 0:
                raise ParameterError(f"{name} must be positive")
        for name in ("S_G", "S_A", "S_eps", "S_kappa"):
            iv = tuple(float(v) for v in getattr(self, name))
            if len(iv) != 2 or not 0 < iv[0] <= iv[1]:
                raise ParameterError(f"{name} must be an interval [lo, hi] with 0 < lo <= hi")
            setattr(self, name, iv)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ParameterError(f"unknown configuration key(s): {', '.join(unknown)}")
        return cls(**d)


@dataclass
class CircuitValues:
    R_I: float
    R_C: float
    R1: float
    R3: float
    R2: float
    V_b: float = None
    span_ok: bool = True
    span_ok_rounded: bool = True


@dataclass
class DesignReport:
    polytope: VertexPolytope
    P: np.ndarray
    s: float
    alpha: float
    k_m: float
    k_M: float
    lambda_m_P: float
    lambda_M_L_bound: float
    rb: RateBounds
    T_bound: float
    T_chosen: float
    gamma: float
    circuit: CircuitValues = None
    K_vertex: np.ndarray = None
    k_routh: tuple = None
    bmi_status: str = ""
    bmi_gap: float = math.nan
    bmi_nodes: int = 0
    interior_worst: float = math.nan
    beta: float = math.nan
    time_scale: float = 1.0
    model: str = "ppa"
    extra: dict = field(default_factory=dict)

    def rgs_params(self, T=None):
        return RgsParams(k_m=self.k_m, k_M=self.k_M, T=self.T_chosen if T is None else T,
                         alpha=self.alpha, gamma=self.gamma, P=self.P)

    def to_dict(self):
        d = dict(
            model=self.model, time_scale=self.time_scale,
            vertices=self.polytope.vertices.tolist(), P=np.asarray(self.P).tolist(),
            s=self.s, alpha=self.alpha, k_m=self.k_m, k_M=self.k_M,
            lambda_m_P=self.lambda_m_P, lambda_M_L_bound=self.lambda_M_L_bound,
            delta_A=self.rb.delta_A, delta_B=self.rb.delta_B, delta=self.rb.delta,
            T_bound=self.T_bound, T_chosen=self.T_chosen, gamma=self.gamma, beta=self.beta,
            K_vertex=None if self.K_vertex is None else np.asarray(self.K_vertex).tolist(),
            k_routh=None if self.k_routh is None else list(self.k_routh),
            bmi_status=self.bmi_status, bmi_gap=self.bmi_gap, bmi_nodes=self.bmi_nodes,
            interior_worst=self.interior_worst,
            circuit=None if self.circuit is None else asdict(self.circuit),
        )
        d.update(self.extra)
        return d

    def to_text(self):
        c = self.circuit
        lines = [
            f"model                 {self.model} (time scale {self.time_scale:g})",
            f"polytope vertices     {self.polytope.m} (affine dimension {self.polytope.affine_dim})",
            f"Routh gain set        [{self.k_routh[0]:.6g}, {self.k_routh[1]:.6g}]" if self.k_routh else "",
            f"BMI                   {self.bmi_status}, gap {self.bmi_gap:.3g}, {self.bmi_nodes} nodes",
            f"decay margin s        {self.s:.6g}",
            f"alpha                 {self.alpha:.6g}",
            f"gain set              [{self.k_m:.6g}, {self.k_M:.6g}] (ratio {self.k_M / self.k_m:.4g})",
            f"P                     {np.array2string(np.asarray(self.P), precision=6)}",
            f"lambda_min(P)         {self.lambda_m_P:.6g}",
            f"lambda_M over set     {self.lambda_M_L_bound:.6g}",
            f"delta_A, delta_B      {self.rb.delta_A:.6g}, {self.rb.delta_B:.6g}",
            f"delta                 {self.rb.delta:.6g}",
            f"scan time bound       {self.T_bound:.6g} s",
            f"scan time chosen      {self.T_chosen:.6g} s",
            f"gamma, beta           {self.gamma:g}, {self.beta:.9g}",
            f"interior check        worst eigenvalue + s = {self.interior_worst:.3g}",
        ]
        if c is not None:
            lines += [
                f"R_I, R_C              {c.R_I:.6g} ohm, {c.R_C:.6g} ohm",
                f"R1, R2, R3            {c.R1:.6g}, {c.R2:.6g}, {c.R3:.6g} ohm",
                f"bias voltage          {c.V_b:.6g} V" if c.V_b is not None else "",
                f"gain span             exact {'ok' if c.span_ok else 'INSUFFICIENT'}, "
                f"rounded {'ok' if c.span_ok_rounded else 'INSUFFICIENT'}",
            ]
        return "\n".join(l for l in lines if l) + "\n"

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)


def load_design(path):
    """Read a saved design; returns a dict with ``rgs_params`` ready to use."""
    try:
        with open(path) as fh:
            d = json.load(fh)
        d["rgs_params"] = RgsParams(k_m=d["k_m"], k_M=d["k_M"], T=d["T_chosen"], alpha=d["alpha"],
                                    gamma=d["gamma"], P=np.array(d["P"]))
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise ParameterError(f"{path}: unreadable design file ({exc})") from None
    return d


def circuit_gains(k_m, k_M, T, alpha, gamma, V_DD, sz, R2, sz_rounded=ROUNDED_SAFE_ZONE):
    """Component values realising the gain range, scan time and hysteresis thresholds.

    ``R_I = R_on_S / k_m``, ``R_C = V_DD T / Q_M_S`` and the Schmitt-trigger
    resistors ``R1, R3 = 2 (V_DD - alpha) / (alpha (1 -/+ gamma)) R2``.
    Span feasibility is reported for the exact and rounded safe-zone
    constants; only when both fail is :class:`GainSpanError` raised.
    """
    if not alpha < V_DD:
        raise ParameterError("alpha must be below V_DD for the Schmitt-trigger formulas")
    R_I = sz.R_on_S / k_m
    span_ok = sz.R_off_S / R_I >= k_M * (1 - 1e-12)
    span_ok_r = sz_rounded.R_off_S / (sz_rounded.R_on_S / k_m) >= k_M * (1 - 1e-12)
    if not (span_ok or span_ok_r):
        raise GainSpanError(f"memristor span insufficient for [{k_m:.6g}, {k_M:.6g}]")
    return CircuitValues(
        R_I=R_I, R_C=V_DD * T / sz.Q_M_S,
        R1=2.0 * (V_DD - alpha) / (alpha * (1.0 - gamma)) * R2,
        R3=2.0 * (V_DD - alpha) / (alpha * (1.0 + gamma)) * R2,
        R2=R2, span_ok=bool(span_ok), span_ok_rounded=bool(span_ok_r),
    )


def _polytope_and_rates(cfg):
    if cfg.model == "ppa":
        base = PpaParams(m=cfg.m, b_damp=cfg.b_damp)
        box = ppa_param_box(dict(S_G=cfg.S_G, S_A=cfg.S_A, S_eps=cfg.S_eps, S_kappa=cfg.S_kappa))
        cloud = map_box_to_cloud(lambda th: ppa_map(th, base), box, cfg.grid)
        kdot, edot = ppa_drift_rates(cfg.time_scale)
        kdot = kdot if cfg.max_kappa_dot is None else cfg.max_kappa_dot
        edot = edot if cfg.max_eps_dot is None else cfg.max_eps_dot

        def rates(k_M):
            return ppa_rate_bounds(cfg.S_G, cfg.S_A, cfg.S_eps, cfg.S_kappa, kdot, edot, k_M, cfg.m)

        # the nominal plant used for the bias voltage
        V_b = ppa_bias_voltage(base)
    else:
        box = scalar_drift_param_box(cfg.a_star, cfg.b_star, cfg.c_star)
        cloud = map_box_to_cloud(scalar_drift_map, box, cfg.grid)

        def rates(k_M):
            return scalar_drift_rate_bounds(cfg.a_star, cfg.b_star, cfg.c_star, cfg.tau_a * cfg.time_scale,
                                        cfg.tau_c * cfg.time_scale, k_M, form=cfg.rate_form)

        V_b = None
    return convex_hull(cloud), rates, V_b


def run_design(cfg, sz=None):
    """Run the synthesis chain; raises :class:`NoCertificate` or :class:`GainSpanError` on failure."""
    if isinstance(cfg, dict):
        cfg = DesignConfig.from_dict(cfg)
    sz = derive_safe_zone(MemristorParams()) if sz is None else sz
    poly, rates, V_b = _polytope_and_rates(cfg)

    try:
        k_lo, k_hi = routh_initial_gain_set(poly, cfg.gain_span or sz.span)
    except ParameterError as exc:
        raise NoCertificate(f"no RGS certificate for this uncertainty set ({exc})") from None
    inst = BmiInstance(poly, k_lo, k_hi, mu_p=cfg.mu_p)
    sol = branch_and_bound(inst, cfg.epsilon, max_nodes=cfg.max_nodes, delta_rel=cfg.delta_rel,
                           time_limit=cfg.time_limit)
    if not sol.s_star < 0 or not sol.verified_value < 0:
        raise NoCertificate("no RGS certificate for this uncertainty set (optimum nonnegative: "
                            f"{sol.s_star:.6g})")
    P = sol.P_star
    s = min(-sol.s_star, -sol.verified_value)
    k_m, k_M = shrink_gain_set(sol.K_star)
    ok, _, _ = verify_vertex_certificate(P, s, poly, k_m, k_M, tol=1e-6)
    if not ok:
        raise NoCertificate("certificate failed independent verification on the shrunk gain set")
    worst, _ = verify_interior_samples(P, s, poly, sol.K_star, cfg.n_interior_samples, cfg.seed)

    lam = np.linalg.eigvalsh(P)
    alpha = s / lam[-1]
    rb = rates(k_M)
    lam_L = lambda_max_P_bound(poly, P, k_m, k_M)
    probe = RgsParams(k_m=k_m, k_M=k_M, T=1.0, alpha=alpha, gamma=cfg.gamma, P=P)
    T_bound = certificate(probe, lam_L, rb).T_max
    T = cfg.T_fraction * T_bound if math.isfinite(T_bound) else cfg.T_unbounded
    params = RgsParams(k_m=k_m, k_M=k_M, T=T, alpha=alpha, gamma=cfg.gamma, P=P)
    cert = certificate(params, lam_L, rb)
    if not cert.beta < 1.0:
        raise NoCertificate(f"contraction factor {cert.beta:.6g} is not below one")
    circuit = None
    if cfg.realize_circuit:
        circuit = circuit_gains(k_m, k_M, T, alpha, cfg.gamma, cfg.V_DD, sz, cfg.R2)
        circuit.V_b = V_b
    return DesignReport(
        polytope=poly, P=P, s=s, alpha=alpha, k_m=k_m, k_M=k_M, lambda_m_P=float(lam[0]),
        lambda_M_L_bound=float(lam_L), rb=rb, T_bound=T_bound, T_chosen=T, gamma=cfg.gamma,
        circuit=circuit, K_vertex=sol.K_star, k_routh=(k_lo, k_hi), bmi_status=sol.status,
        bmi_gap=sol.gap, bmi_nodes=sol.node_count, interior_worst=worst, beta=cert.beta,
        time_scale=cfg.time_scale, model=cfg.model,
        extra=dict(beta_s=cert.beta_s, beta_r=cert.beta_r, T_rs=cert.T_rs, tau_min=cert.tau_min,
                   bmi_lower=sol.lower, bmi_upper=sol.upper),
    )


def scan_time_from_intermediates(lambda_m_P, alpha, gamma, delta, lambda_M_L):
    """Scan-time bound from already computed design quantities."""
    p = RgsParams(k_m=1.0, k_M=2.0, T=1.0, alpha=alpha, gamma=gamma, P=np.diag([lambda_m_P, lambda_m_P]))
    return certificate(p, lambda_M_L, RateBounds(0.0, 0.0, delta)).T_max

