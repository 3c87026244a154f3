"""Companion-form LTV plants and the parallel-plate electrostatic actuator.

A companion plant of order ``N`` is::

    x' = A(t) x + B(t) u,   y = x_1

with ones on the superdiagonal of ``A``, the coefficient row ``a_1..a_N`` in the
last row, and ``B = (0, .., 0, b)``.
"""

from dataclasses import dataclass, replace

import numpy as np

from ._validation import ParameterError, check_positive

EPS0 = 8.854187817e-12  # vacuum permittivity, F/m


class PullIn(RuntimeError):
    """Moving plate reached the fixed plate."""


def companion_matrices(a, b):
    """Return ``(A, B, C)`` for coefficient row ``a`` and input coefficient ``b``."""
    a = np.atleast_1d(np.asarray(a, dtype=float))
    N = a.size
    A = np.eye(N, k=1)
    A[-1, :] = a
    B = np.zeros(N)
    B[-1] = b
    C = np.zeros(N)
    C[0] = 1.0
    return A, B, C


def closed_loop_matrix(a, b, K):
    """``A - B K C`` for static output feedback ``u = -K x_1``."""
    A, B, C = companion_matrices(a, b)
    return A - K * np.outer(B, C)


@dataclass
class CompanionLtv:
    """Companion-form plant with coefficients supplied as functions of time.

    ``a_of_t(t)`` returns the length-``N`` row ``a_1..a_N``; ``b_of_t(t)``
    returns the scalar ``b``.
    """

    a_of_t: object
    b_of_t: object
    x: np.ndarray

    def __post_init__(self):
        self.x = np.atleast_1d(np.asarray(self.x, dtype=float))

    @property
    def N(self):
        return self.x.size

    @classmethod
    def lti(cls, a, b, x0):
        a = np.atleast_1d(np.asarray(a, dtype=float))
        return cls(lambda t: a, lambda t: float(b), x0)

    def deriv(self, x, u, t):
        a = np.asarray(self.a_of_t(t), dtype=float)
        dx = np.empty_like(x)
        dx[:-1] = x[1:]
        dx[-1] = a @ x + self.b_of_t(t) * u
        return dx


def step_ltv(sys, u, t, dt):
    """One RK4 step of the plant with input ``u`` held over ``[t, t+dt]``.

    Returns the advanced plant and ``x'`` evaluated at the start of the step.
    """
    if dt <= 0:
        raise ParameterError("dt must be positive")
    x = sys.x
    k1 = sys.deriv(x, u, t)
    k2 = sys.deriv(x + 0.5 * dt * k1, u, t + 0.5 * dt)
    k3 = sys.deriv(x + 0.5 * dt * k2, u, t + 0.5 * dt)
    k4 = sys.deriv(x + dt * k3, u, t + dt)
    x_new = x + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    return replace(sys, x=x_new), k1


# -- parallel-plate actuator ---------------------------------------------------

@dataclass(frozen=True)
class PpaParams:
    m: float = 3e-3
    b_damp: float = 1.79e-2
    kappa: float = 0.08
    eps: float = 5 * EPS0
    A_plate: float = 1.6e-3
    G: float = 1e-3
    G_o: float = None

    def __post_init__(self):
        if self.G_o is None:
            object.__setattr__(self, "G_o", 2.0 * self.G / 3.0)
        for name in ("m", "b_damp", "kappa", "eps", "A_plate", "G", "G_o"):
            check_positive(name, getattr(self, name))
        if not self.G_o < self.G:
            raise ParameterError("operating gap G_o must be smaller than G")


def ppa_linearize(p):
    """Companion coefficients ``(a1, a2, b)`` of the actuator about ``y = G_o``."""
    if not p.G_o < p.G:
        raise ParameterError("operating gap G_o must be smaller than G")
    gap = p.G - p.G_o
    a1 = -p.kappa * (p.G - 3.0 * p.G_o) / (p.m * gap)
    a2 = -p.b_damp / p.m
    b = np.sqrt(2.0 * p.eps * p.A_plate * p.kappa * p.G_o) / (p.m * gap)
    return a1, a2, b


def ppa_bias_voltage(p):
    """Static voltage that holds the plate at ``G_o``."""
    return np.sqrt(2.0 * p.kappa * p.G_o * (p.G - p.G_o) ** 2 / (p.eps * p.A_plate))


def _ppa_accel(y, ydot, V_s, p):
    force = p.eps * p.A_plate * V_s ** 2 / (2.0 * (p.G - y) ** 2)
    return (force - p.b_damp * ydot - p.kappa * y) / p.m


def ppa_step_nonlinear(y, ydot, V_s, dt, p):
    """One RK4 step of ``m y'' + b y' + kappa y = eps A V_s^2 / (2 (G - y)^2)``.

    Raises :class:`PullIn` if the plate reaches the fixed electrode.
    """
    if not y < p.G:
        raise PullIn(f"plate contact at y={y!r}")
    s = np.array([y, ydot])

    def f(s):
        if not s[0] < p.G:
            raise PullIn(f"plate contact at y={s[0]!r}")
        return np.array([s[1], _ppa_accel(s[0], s[1], V_s, p)])

    k1 = f(s)
    k2 = f(s + 0.5 * dt * k1)
    k3 = f(s + 0.5 * dt * k2)
    k4 = f(s + dt * k3)
    s = s + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    if not s[0] < p.G:
        raise PullIn(f"plate contact at y={s[0]!r}")
    return float(s[0]), float(s[1])


def kappa_drift(t, time_scale=1.0):
    """Loosening spring ``0.08 + 0.087 exp(-0.8 t)`` (N/m); ``time_scale`` slows it."""
    return 0.08 + 0.087 * np.exp(-0.8 * t / time_scale)


def eps_drift(t, time_scale=1.0):
    """Ambient permittivity ``5 eps0 + 1.5 eps0 sin(7.854 t)``."""
    return EPS0 * (5.0 + 1.5 * np.sin(7.854 * t / time_scale))


def ppa_drift_rates(time_scale=1.0):
    """Worst-case ``(max|kappa'|, max|eps'|)`` of the built-in drifts."""
    return 0.087 * 0.8 / time_scale, 1.5 * 7.854 * EPS0 / time_scale


def ppa_ltv(x0, base=None, time_scale=1.0):
    """Linearised actuator with the built-in ``kappa(t)``, ``eps(t)`` drifts.

    ``base`` supplies the fixed parameters (mass, damping, area, gap).
    """
    base = PpaParams() if base is None else base

    def params(t):
        return replace(base, kappa=kappa_drift(t, time_scale), eps=eps_drift(t, time_scale))

    def a_of_t(t):
        a1, a2, _ = ppa_linearize(params(t))
        return np.array([a1, a2])

    def b_of_t(t):
        return ppa_linearize(params(t))[2]

    return CompanionLtv(a_of_t, b_of_t, x0)


def ppa_map(theta, base=None):
    """Uncertain ``(G, A, eps, kappa)`` to ``(a1, a2, b)`` with ``G_o = 2G/3``.

    Mass and damping come from ``base`` (true values by default).
    """
    G, A, eps, kappa = theta
    base = PpaParams() if base is None else base
    p = PpaParams(m=base.m, b_damp=base.b_damp, kappa=kappa, eps=eps, A_plate=A, G=G)
    return np.array(ppa_linearize(p))


def scalar_drift_map(theta):
    """Scalar LTV example: ``(a, b', c)`` to ``(a1, b) = (a^3 c^2 / b', sqrt(b' c) / a^(2/3))``."""
    a, b_prime, c = theta
    if np.any(np.asarray(a) <= 0) or np.any(np.asarray(b_prime) <= 0) or np.any(np.asarray(c) <= 0):
        raise ParameterError("example parameters must be positive")
    return np.array([a ** 3 * c ** 2 / b_prime, np.sqrt(b_prime * c) / a ** (2.0 / 3.0)])


def lyapunov_rate_matrix(a, b, K, P):
    """``(A - BKC)^T P + P (A - BKC)``, the rate matrix of ``E = x^T P x``."""
    Acl = closed_loop_matrix(a, b, K)
    M = Acl.T @ P
    return M + M.T
