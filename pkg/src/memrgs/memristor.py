"""HP TiO2 memristor: windowed drift model and its safe-zone linearisation.

The full model tracks the doped-region width ``w``::

    dw/dt = mu * R_on / D * f(w / D) * I,   M(w) = R_on * w/D + R_off * (1 - w/D)

with the Joglekar window ``f(x) = 1 - (2x - 1)**(2p)``.  Inside the safe zone
``[w_l, w_h]`` the window is close to one and the device is a charge
integrator with affine memristance ``M = R_off_S - alpha_S * Q_M``.
"""

from dataclasses import dataclass, replace

import numpy as np

from ._validation import ParameterError, check_positive


@dataclass(frozen=True)
class MemristorParams:
    R_on: float = 100.0
    R_off: float = 16e3
    D: float = 10e-9
    mu: float = 1e-14
    p: int = 8
    w_l: float = 0.08 * 10e-9
    w_h: float = 0.91 * 10e-9

    def __post_init__(self):
        for name in ("R_on", "R_off", "D", "mu"):
            check_positive(name, getattr(self, name))
        if not self.R_on < self.R_off:
            raise ParameterError("need R_on < R_off")
        if not 0 < self.w_l < self.w_h < self.D:
            raise ParameterError("need 0 < w_l < w_h < D")
        if int(self.p) != self.p or self.p < 1:
            raise ParameterError("window exponent p must be an integer >= 1")


@dataclass(frozen=True)
class SafeZoneParams:
    R_off_S: float
    R_on_S: float
    D_S: float
    Q_M_S: float
    alpha_S: float

    @property
    def span(self):
        """Gain span ``R_off_S / R_on_S`` available to a memristive amplifier."""
        return self.R_off_S / self.R_on_S


@dataclass(frozen=True)
class MemristorState:
    """Memristor state in both representations.

    ``Q_M`` is the safe-zone charge (zero at ``w = w_l``); ``w`` is the
    boundary position used by the full model.
    """

    Q_M: float = 0.0
    w: float = 0.0


# Values quoted for design work (rounded).
ROUNDED_SAFE_ZONE = SafeZoneParams(
    R_off_S=15e3, R_on_S=1.5e3, D_S=0.83 * 10e-9, Q_M_S=83e-6, alpha_S=1.6e8
)


def derive_safe_zone(params):
    R_on, R_off, D = params.R_on, params.R_off, params.D
    if not params.w_l < params.w_h:
        raise ParameterError("need w_l < w_h")
    if not R_on < R_off:
        raise ParameterError("need R_on < R_off")
    R_off_S = R_off - (R_off - R_on) * params.w_l / D
    R_on_S = R_off - (R_off - R_on) * params.w_h / D
    D_S = params.w_h - params.w_l
    Q_M_S = D_S * D / (params.mu * R_on)
    alpha_S = (R_off_S - R_on_S) / Q_M_S
    return SafeZoneParams(R_off_S=R_off_S, R_on_S=R_on_S, D_S=D_S,
                          Q_M_S=Q_M_S, alpha_S=alpha_S)


def window(x, p):
    """Joglekar window ``1 - (2x - 1)**(2p)`` on ``x = w / D``.

    Accepts scalars or arrays; raises ``ValueError`` outside ``[0, 1]``.
    """
    x = np.asarray(x, dtype=float)
    if np.any((x < 0) | (x > 1)) or np.any(~np.isfinite(x)):
        raise ValueError("window argument must lie in [0, 1]")
    f = 1.0 - (2.0 * x - 1.0) ** (2 * int(p))
    return f if f.ndim else float(f)


def memristance(state, sz):
    return sz.R_off_S - sz.alpha_S * state.Q_M


def memristance_full(state, params):
    x = state.w / params.D
    return params.R_on * x + params.R_off * (1.0 - x)


def charge_from_width(w, params):
    """Safe-zone charge matching a boundary position (``Q_M = 0`` at ``w_l``)."""
    return (w - params.w_l) * params.D / (params.mu * params.R_on)


def width_from_charge(Q_M, params):
    return params.w_l + Q_M * params.mu * params.R_on / params.D


def _drift(w, I, params):
    x = min(max(w / params.D, 0.0), 1.0)
    return params.mu * params.R_on / params.D * (1.0 - (2.0 * x - 1.0) ** (2 * params.p)) * I


def step_full(state, I, dt, params):
    """One RK4 step of the windowed drift equation; ``w`` is clamped to ``[0, D]``."""
    w = state.w
    k1 = _drift(w, I, params)
    k2 = _drift(w + 0.5 * dt * k1, I, params)
    k3 = _drift(w + 0.5 * dt * k2, I, params)
    k4 = _drift(w + dt * k3, I, params)
    w = w + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    return replace(state, w=min(max(w, 0.0), params.D))


def step_safe(state, I, dt, sz):
    Q = state.Q_M + I * dt
    return replace(state, Q_M=min(max(Q, 0.0), sz.Q_M_S))
