"""Command-line experiment runner.

Subcommands read one YAML file with an optional section per subcommand
(``agc``, ``design``, ``rgs``, ``bmi``) and write CSV traces, text and JSON
reports and SVG plots into ``--out``.  All quantities are SI; frequencies
are in rad/s.

Exit codes: 0 success, 2 configuration error, 3 numerical divergence,
4 no certificate / unrealisable gain span.
"""

import argparse
import json
import logging
import os
import sys
import warnings

import numpy as np
import yaml

from ._validation import ParameterError
from .agc_circuit import (
    TRACE_COLUMNS,
    band_limited,
    fidelity_nrmse,
    ideal_reference,
    sync_to_charge,
    tune,
)
from .agc_circuit import simulate as simulate_agc
from .bmi import BmiInstance, branch_and_bound, routh_initial_gain_set
from .design_pipeline import GainSpanError, NoCertificate, load_design, run_design
from .memristor import MemristorParams, derive_safe_zone
from .plant import CompanionLtv, PullIn
from .rgs import Divergence, RgsParams, analyse_trace, certificate, simulate_closed_loop, simulate_ppa_fast
from .uncertainty import RateBounds, load_vertices, save_vertices

log = logging.getLogger("memrgs")

SECTIONS = ("agc", "design", "rgs", "bmi")

AGC_DEFAULTS = dict(
    omega_C_max=128.0, omega_e_max=500.0, V_DD=5.0, R_I=1e3, R_C=1e5, tau_s=0.826,
    charge_fraction=0.5, dt=None, stride=1, settle_tau=5.0,
    V_e=dict(freqs=[300.0, 500.0], amps=[0.08, 0.05], phases=[0.0, 1.0], offset=0.15),
    V_C=dict(freqs=[100.0, 128.0], amps=[2.0, 1.0], phases=[0.0, 0.5], offset=0.0),
)
AGC_REQUIRED = ("t_end",)
RGS_DEFAULTS = dict(x0=[1e-5, 0.0], dt=None, time_scale=None, plant="drifting", vertex=0,
                    stride=None, T=None)
RGS_REQUIRED = ("t_end",)
BMI_DEFAULTS = dict(k_m=None, k_M=None, span=None, epsilon=1e-3, max_nodes=10000, mu_p=1e-3,
                    delta_rel=1e-3, time_limit=None)


class ConfigError(ParameterError):
    pass


# -- configuration ---------------------------------------------------------------

def load_config(path):
    if path is None:
        return {}
    try:
        with open(path) as fh:
            cfg = yaml.safe_load(fh)
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    cfg = {} if cfg is None else cfg
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a mapping of sections")
    unknown = sorted(set(cfg) - set(SECTIONS))
    if unknown:
        raise ConfigError(f"unknown configuration section(s): {', '.join(unknown)}")
    return cfg


def section(cfg, name, defaults=None, required=()):
    """Section ``name`` merged over ``defaults``; unknown and missing keys are errors."""
    raw = cfg.get(name) or {}
    if not isinstance(raw, dict):
        raise ConfigError(f"section {name!r} must be a mapping")
    if defaults is None:
        return dict(raw)
    allowed = set(defaults) | set(required)
    unknown = sorted(set(raw) - allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) in {name!r}: {', '.join(unknown)}")
    for key in required:
        if key not in raw:
            raise ConfigError(f"missing required key {name}.{key}")
    out = dict(defaults)
    out.update(raw)
    return out


# -- output ----------------------------------------------------------------------

def write_csv(path, columns, names):
    """CSV with a header row and round-trip exact floats."""
    data = np.column_stack([np.asarray(c, dtype=float) for c in columns])
    np.savetxt(path, data, fmt="%.17g", delimiter=",", header=",".join(names), comments="")


def write_text(path, text):
    with open(path, "w") as fh:
        fh.write(text)


def plot_svg(path, t, series, xlabel="t (s)"):
    """Stacked line plots; failures only warn."""
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        plt.rcParams["svg.hashsalt"] = "memrgs"
        fig, axes = plt.subplots(len(series), 1, sharex=True, figsize=(7, 2.2 * len(series)),
                                 squeeze=False)
        for ax, (label, y) in zip(axes[:, 0], series.items()):
            ax.plot(t, y, lw=0.8)
            ax.set_ylabel(label)
        axes[-1, 0].set_xlabel(xlabel)
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
    except Exception as exc:  # plotting never fails a run
        warnings.warn(f"plot {path} not written: {exc}")


def _stimulus(t, spec, name):
    try:
        n = len(spec["freqs"])
        if len(spec["amps"]) != n or len(spec.get("phases", [0.0] * n)) != n:
            raise ConfigError(f"{name}: freqs, amps and phases must have equal length")
        return band_limited(t, spec["freqs"], spec["amps"], spec.get("phases", [0.0] * n),
                            spec.get("offset", 0.0))
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"{name}: malformed stimulus ({exc})") from None


# -- subcommands -----------------------------------------------------------------

def cmd_simulate_agc(cfg, out, args):
    c = section(cfg, "agc", AGC_DEFAULTS, AGC_REQUIRED)
    sz = derive_safe_zone(MemristorParams())
    cp = tune(c["omega_C_max"], c["omega_e_max"], c["V_DD"], c["R_I"], c["R_C"], c["tau_s"])
    dt = cp.max_dt if c["dt"] is None else float(c["dt"])
    n = int(round(float(c["t_end"]) / dt))
    if n < 1:
        raise ConfigError("agc.t_end must cover at least one step")
    t = np.arange(n) * dt
    V_e, V_C = _stimulus(t, c["V_e"], "agc.V_e"), _stimulus(t, c["V_C"], "agc.V_C")
    if np.max(np.abs(V_C)) > cp.V_DD:
        raise ConfigError("agc.V_C exceeds the supply")
    state = sync_to_charge(cp, sz, float(c["charge_fraction"]) * sz.Q_M_S)
    run = simulate_agc(cp, sz, state, V_e, V_C, dt, stride=int(c["stride"]))
    if not np.all(np.isfinite(run.rec)):
        raise Divergence("circuit trace is not finite")
    K0 = (sz.R_off_S - sz.alpha_S * state.mem.Q_M) / cp.R_I
    _, ref = ideal_reference(K0, V_e, V_C, dt, cp.alpha_k(sz), cp.gain_range(sz))
    stride = int(c["stride"])
    V_u = np.concatenate([[state.v_u], ref])[::stride][: len(run.rec)]
    settle = float(c["settle_tau"]) * cp.tau_e
    tt = run.column("t")
    err = fidelity_nrmse(run.column("V_u")[1:], V_u[1:], tt[1:], settle) \
        if np.any(V_u[1:][tt[1:] >= settle]) else 0.0
    write_csv(os.path.join(out, "agc_trace.csv"),
              [run.rec[:, i] for i in range(run.rec.shape[1])] + [V_u], list(TRACE_COLUMNS) + ["V_u_ideal"])
    report = dict(omega_m=cp.omega_m, tau_f=cp.tau_f, tau_e=cp.tau_e, dt=dt, steps=n,
                  fidelity_nrmse=err, q_min=run.q_min, q_max=run.q_max, Q_M_S=sz.Q_M_S,
                  max_abs_V_u=float(np.max(np.abs(run.column("V_u")))))
    write_text(os.path.join(out, "agc_report.json"), json.dumps(report, indent=2, sort_keys=True))
    plot_svg(os.path.join(out, "agc_trace.svg"), tt,
             {"V_e": run.column("V_e"), "V_C": run.column("V_C"), "M (ohm)": run.column("M"),
              "V_u": run.column("V_u")})
    print(f"fidelity NRMSE {err:.4%} (after {settle:.3g} s); charge range "
          f"[{run.q_min:.4g}, {run.q_max:.4g}] C of {sz.Q_M_S:.4g} C")
    return 0


def _design(cfg, args):
    d = section(cfg, "design")
    if args.epsilon is not None:
        d["epsilon"] = args.epsilon
    if args.deterministic:
        d["time_limit"] = None
        d.setdefault("seed", 0)
    return run_design(d)


def cmd_design(cfg, out, args):
    rep = _design(cfg, args)
    rep.save(os.path.join(out, "design.json"))
    write_text(os.path.join(out, "design.txt"), rep.to_text())
    save_vertices(os.path.join(out, "vertices.csv"), rep.polytope)
    print(rep.to_text(), end="")
    return 0


def _vertex_plant(design, index, x0):
    V = np.asarray(design["vertices"], dtype=float)
    if not 0 <= index < len(V):
        raise ConfigError(f"rgs.vertex must lie in [0, {len(V) - 1}]")
    a, b = V[index, :-1], V[index, -1]
    return CompanionLtv.lti(a, b, np.asarray(x0, dtype=float)[: len(a)])


def _cycle_table(t, E, mode):
    """Per-cycle contraction at the stored resolution: ``E`` at successive scan entries."""
    entries = np.flatnonzero((mode[1:] == 1) & (mode[:-1] != 1)) + 1
    rows = [(j, t[entries[j]], E[entries[j]], E[entries[j + 1]], E[entries[j + 1]] / E[entries[j]])
            for j in range(len(entries) - 1) if E[entries[j]] > 0]
    return np.array(rows).reshape(-1, 5)


def run_rgs(design, c, out):
    p = design["rgs_params"]
    if c["T"] is not None:
        p = RgsParams(k_m=p.k_m, k_M=p.k_M, T=float(c["T"]), alpha=p.alpha, gamma=p.gamma, P=p.P)
    rb = RateBounds(design["delta_A"], design["delta_B"], design["delta"])
    cert = certificate(p, design["lambda_M_L_bound"], rb)
    if c["T"] is not None and not cert.beta < 1:
        raise NoCertificate(f"rgs.T={p.T:.6g} s breaks the certificate (beta={cert.beta:.6g})")
    dt = p.T / 10 if c["dt"] is None else float(c["dt"])
    x0 = np.asarray(c["x0"], dtype=float)
    t_end = float(c["t_end"])
    if c["plant"] == "drifting":
        if design["model"] != "ppa":
            raise ConfigError("rgs.plant 'drifting' is only available for the actuator model")
        ts = design["time_scale"] if c["time_scale"] is None else float(c["time_scale"])
        rec, rep = simulate_ppa_fast(p, x0, t_end, dt, cert, time_scale=ts, stride=c["stride"])
        t, x1, x2, K, E, mode = rec.T
        cols, names = [t, x1, x2, K / p.k_m, K, E, mode], ["t", "x1", "x2", "K_over_k_m", "K", "E", "mode"]
    elif c["plant"] == "vertex":
        tr = simulate_closed_loop(_vertex_plant(design, int(c["vertex"]), x0), p, t_end=t_end, dt=dt)
        rep = analyse_trace(tr, p, cert, dt)
        stride = 1 if c["stride"] is None else int(c["stride"])
        t, E, K, mode = tr.t[::stride], tr.E[::stride], tr.K[::stride], tr.mode[::stride]
        x1 = tr.x[::stride, 0]
        cols = [t] + [tr.x[::stride, i] for i in range(tr.x.shape[1])] + [K / p.k_m, K, E, mode]
        names = ["t"] + [f"x{i + 1}" for i in range(tr.x.shape[1])] + ["K_over_k_m", "K", "E", "mode"]
    else:
        raise ConfigError("rgs.plant must be 'drifting' or 'vertex'")
    write_csv(os.path.join(out, "rgs_trace.csv"), cols, names)
    cyc = _cycle_table(t, E, mode)
    write_csv(os.path.join(out, "rgs_cycles.csv"), list(cyc.T) + [np.full(len(cyc), cert.beta)],
              ["cycle", "t_start", "E_start", "E_end", "ratio", "beta"])
    summary = dict(T=p.T, dt=dt, beta=cert.beta, beta_s=cert.beta_s, beta_r=cert.beta_r,
                   T_rs=cert.T_rs, K_min=rep.K_min, K_max=rep.K_max,
                   max_scan_duration=rep.max_scan_duration, n_scans=rep.n_scans,
                   n_complete_cycles=rep.n_complete_cycles, worst_cycle_ratio=rep.worst_cycle_ratio,
                   worst_envelope_ratio=rep.worst_envelope_ratio,
                   final_x1_ratio=float(rep.final_x1_ratio))
    write_text(os.path.join(out, "rgs_report.json"), json.dumps(summary, indent=2, sort_keys=True))
    plot_svg(os.path.join(out, "rgs_trace.svg"), t, {"x1 (m)": x1, "K / k_m": K / p.k_m, "E": E})
    print(f"{rep.n_scans} scans, |x1| ratio {float(rep.final_x1_ratio):.3g}, "
          f"K in [{rep.K_min:.6g}, {rep.K_max:.6g}], longest scan {rep.max_scan_duration:.3g} s, "
          f"worst cycle ratio / beta {rep.worst_cycle_ratio:.6g}")
    return summary


def cmd_simulate_rgs(cfg, out, args):
    if args.design is None:
        raise ConfigError("simulate-rgs needs --design <design.json>")
    run_rgs(load_design(args.design), section(cfg, "rgs", RGS_DEFAULTS, RGS_REQUIRED), out)
    return 0


def cmd_solve_bmi(cfg, out, args):
    if args.vertices is None:
        raise ConfigError("solve-bmi needs --vertices <file.csv>")
    c = section(cfg, "bmi", BMI_DEFAULTS)
    if args.epsilon is not None:
        c["epsilon"] = args.epsilon
    if args.deterministic:
        c["time_limit"] = None
    poly = load_vertices(args.vertices)
    if c["k_m"] is None or c["k_M"] is None:
        span = derive_safe_zone(MemristorParams()).span if c["span"] is None else float(c["span"])
        k_m, k_M = routh_initial_gain_set(poly, span)
    else:
        k_m, k_M = float(c["k_m"]), float(c["k_M"])
    inst = BmiInstance(poly, k_m, k_M, mu_p=float(c["mu_p"]))
    sol = branch_and_bound(inst, float(c["epsilon"]), max_nodes=int(c["max_nodes"]),
                           delta_rel=float(c["delta_rel"]), time_limit=c["time_limit"])
    res = dict(s_star=sol.s_star, s_margin=sol.s_margin, P_star=np.asarray(sol.P_star).tolist(),
               K_star=np.asarray(sol.K_star).tolist(), lower=sol.lower, upper=sol.upper, gap=sol.gap,
               node_count=sol.node_count, status=sol.status, k_m=k_m, k_M=k_M,
               verified_value=sol.verified_value)
    write_text(os.path.join(out, "bmi.json"), json.dumps(res, indent=2, sort_keys=True))
    h = sol.history
    if h:
        keys = ("k", "L", "U", "open", "nodes")
        write_csv(os.path.join(out, "bmi_history.csv"), [[row[k] for row in h] for k in keys], keys)
    print(f"{sol.status}: s* = {sol.s_star:.6g} (lower {sol.lower:.6g}, gap {sol.gap:.3g}, "
          f"{sol.node_count} nodes) on K in [{k_m:.6g}, {k_M:.6g}]")
    return 0


def cmd_reproduce_ppa(cfg, out, args):
    d = dict(cfg.get("design") or {})
    d.setdefault("model", "ppa")
    rep = _design(dict(cfg, design=d), args)
    rep.save(os.path.join(out, "design.json"))
    write_text(os.path.join(out, "design.txt"), rep.to_text())
    save_vertices(os.path.join(out, "vertices.csv"), rep.polytope)
    print(rep.to_text(), end="")
    c = section(dict(rgs=cfg.get("rgs") or {"t_end": 6.0}), "rgs", RGS_DEFAULTS, RGS_REQUIRED)
    run_rgs(load_design(os.path.join(out, "design.json")), c, out)
    return 0


COMMANDS = {
    "simulate-agc": cmd_simulate_agc,
    "design": cmd_design,
    "simulate-rgs": cmd_simulate_rgs,
    "solve-bmi": cmd_solve_bmi,
    "reproduce-ppa": cmd_reproduce_ppa,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="memrgs", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="YAML configuration file")
        sp.add_argument("--out", default=".", help="output directory (created if missing)")
        sp.add_argument("--epsilon", type=float, help="branch-and-bound gap tolerance")
        sp.add_argument("--deterministic", action="store_true",
                        help="disable wall-clock limits so reruns are identical")
        sp.add_argument("-v", "--verbose", action="store_true")
        if name == "simulate-rgs":
            sp.add_argument("--design", help="design.json written by the design subcommand")
        if name == "solve-bmi":
            sp.add_argument("--vertices", help="vertex CSV with header a1..aN,b")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        os.makedirs(args.out, exist_ok=True)
        return COMMANDS[args.command](cfg, args.out, args)
    except (NoCertificate, GainSpanError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except (Divergence, PullIn, FloatingPointError) as exc:
        print(f"error: numerical divergence: {exc}", file=sys.stderr)
        return 3
    except (ParameterError, OSError, TypeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
