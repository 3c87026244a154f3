"""Minimise the largest eigenvalue over a family of affine symmetric-matrix maps.

A problem has objective blocks ``F_i(x) = F0_i + sum_j x_j F_ji`` and we solve::

    minimize    max_i lambda_max(F_i(x))
    subject to  lo <= x <= hi,  G x <= h,  H0_k + sum_j x_j H_jk <= 0 (LMI sense)

which is the epigraph SDP ``min t  s.t.  F_i(x) <= t I``.  The SDP itself is
handed to cvxopt's primal-dual interior-point solver; everything here is
problem assembly, fixed-variable elimination and an independent eigenvalue
check of whatever the solver returns.
"""

from dataclasses import dataclass, field

import numpy as np
from cvxopt import matrix, solvers
from scipy.optimize import minimize_scalar

from ._validation import ParameterError, check_symmetric

DEFAULT_TOL = 1e-6


@dataclass
class AffineEigProblem:
    """Affine eigenvalue problem data.

    ``coefficient_blocks[i]`` has shape ``(n_vars, k_i, k_i)``; entry ``j``
    multiplies variable ``x_j`` in block ``i``.  ``lmi_constraints`` holds
    ``(H0, H)`` pairs of the same layout, each required to be negative
    semidefinite.
    """

    constant_blocks: list
    coefficient_blocks: list
    box: np.ndarray
    linear_ineqs: tuple = None
    lmi_constraints: list = field(default_factory=list)

    def __post_init__(self):
        self.box = np.atleast_2d(np.asarray(self.box, dtype=float))
        if self.box.shape[1] != 2:
            raise ParameterError("box must have shape (n_vars, 2)")
        if np.any(self.box[:, 0] > self.box[:, 1]):
            raise ParameterError("box has an empty interval")
        n = self.box.shape[0]
        self.constant_blocks = [np.asarray(F, dtype=float) for F in self.constant_blocks]
        self.coefficient_blocks = [np.asarray(F, dtype=float).reshape(n, *np.shape(F0))
                                   for F, F0 in zip(self.coefficient_blocks, self.constant_blocks)]
        for F0, F in zip(self.constant_blocks, self.coefficient_blocks):
            check_symmetric(F0, tol=1e-10, name="constant block")
            if not np.allclose(F, np.swapaxes(F, 1, 2)):
                raise ParameterError("coefficient blocks must be symmetric")
        self.lmi_constraints = [(np.asarray(H0, float), np.asarray(H, float).reshape(n, *np.shape(H0)))
                                for H0, H in self.lmi_constraints]
        if self.linear_ineqs is not None:
            G, h = self.linear_ineqs
            self.linear_ineqs = (np.atleast_2d(np.asarray(G, float)), np.asarray(h, float).ravel())

    @property
    def n_vars(self):
        return self.box.shape[0]

    def blocks_at(self, x):
        x = np.asarray(x, dtype=float)
        return [F0 + np.tensordot(x, F, axes=1)
                for F0, F in zip(self.constant_blocks, self.coefficient_blocks)]

    def objective(self, x):
        return max(np.linalg.eigvalsh(B)[-1] for B in self.blocks_at(x))

    def constraint_violation(self, x):
        """Largest violation over box, linear and LMI constraints (0 when feasible)."""
        x = np.asarray(x, dtype=float)
        v = max(0.0, float(np.max(self.box[:, 0] - x)), float(np.max(x - self.box[:, 1])))
        if self.linear_ineqs is not None and len(self.linear_ineqs[1]):
            G, h = self.linear_ineqs
            v = max(v, float(np.max(G @ x - h)))
        for H0, H in self.lmi_constraints:
            v = max(v, float(np.linalg.eigvalsh(H0 + np.tensordot(x, H, axes=1))[-1]))
        return v


@dataclass
class EigSolution:
    x_star: np.ndarray
    value: float
    kkt_residual: float
    status: str = "optimal"
    dual_bound: float = None

    def __post_init__(self):
        if self.dual_bound is None:
            self.dual_bound = self.value

    @property
    def feasible(self):
        return self.status in ("optimal", "max_iterations")


def lambda_max_sym(M):
    """Largest eigenvalue of a symmetric matrix and a unit eigenvector for it."""
    M = check_symmetric(M, tol=1e-12, name="M")
    w, V = np.linalg.eigh(0.5 * (M + M.T))
    return float(w[-1]), V[:, -1]


def _vec_blocks(F0, F, free, t_coef):
    """Column-major cvxopt layout for ``t_coef * t I - F(x)`` (as ``h - G z``)."""
    k = F0.shape[0]
    cols = [F[j].ravel(order="F") for j in free]
    if t_coef:
        cols.append(-t_coef * np.eye(k).ravel(order="F"))
    G = np.column_stack(cols) if cols else np.zeros((k * k, 0))
    return G, -F0.ravel(order="F")


def solve(problem, tol=DEFAULT_TOL, max_iters=100):
    """Solve an :class:`AffineEigProblem` to objective tolerance ``tol``.

    Variables whose box has zero width are substituted before the SDP is
    built.  Returns ``status="infeasible"`` (with ``value=inf``) when no
    point satisfies the constraints, and ``status="numerical_error"`` if the
    interior-point iteration breaks down.  ``dual_bound`` is a certified lower
    bound on the optimum (``-inf`` when the dual iterate is not usable).
    """
    if tol <= 0:
        raise ParameterError("tol must be positive")
    box = problem.box
    width = box[:, 1] - box[:, 0]
    fixed = width <= 1e-12 * np.maximum(1.0, np.abs(box).max(axis=1))
    free = np.flatnonzero(~fixed)
    x0 = np.where(fixed, 0.5 * (box[:, 0] + box[:, 1]), 0.0)

    def shift(F0, F):
        return F0 + np.tensordot(x0, F, axes=1)

    n_free = len(free)
    nz = n_free + 1  # free variables then epigraph t
    Gs, hs = [], []
    for F0, F in zip(problem.constant_blocks, problem.coefficient_blocks):
        G, h = _vec_blocks(shift(F0, F), F, free, 1.0)
        Gs.append(G)
        hs.append(h)
    for H0, H in problem.lmi_constraints:
        G, h = _vec_blocks(shift(H0, H), H, free, 0.0)
        Gs.append(np.column_stack([G, np.zeros(G.shape[0])]))
        hs.append(h)

    rows, rhs = [], []
    for i, j in enumerate(free):
        e = np.zeros(nz)
        e[i] = 1.0
        rows += [e, -e]
        rhs += [box[j, 1], -box[j, 0]]
    if problem.linear_ineqs is not None and len(problem.linear_ineqs[1]):
        G, h = problem.linear_ineqs
        rows += list(np.column_stack([G[:, free], np.zeros(G.shape[0])]))
        rhs += list(h - G @ x0)

    if n_free == 0:
        x = x0.copy()
        viol = problem.constraint_violation(x)
        if viol > tol:
            return EigSolution(x, np.inf, viol, "infeasible")
        return EigSolution(x, problem.objective(x), 0.0)

    c = np.zeros(nz)
    c[-1] = 1.0
    Gl = np.vstack(rows)
    # cvxopt wants the LMI blocks in matrix form with block dimension k
    args = dict(Gl=matrix(Gl), hl=matrix(np.asarray(rhs, float)),
                Gs=[matrix(G) for G in Gs],
                hs=[matrix(h.reshape(int(round(np.sqrt(h.size))), -1, order="F")) for h in hs])
    sol = None
    # interior-point scaling can break down on nearly flat boxes; retry looser once
    for scale in (1e-2, 1.0):
        try:
            sol = solvers.sdp(matrix(c), **args, options={
                "show_progress": False, "maxiters": max_iters,
                "abstol": tol * scale, "reltol": tol * scale, "feastol": tol * scale})
            break
        except (ArithmeticError, ValueError):
            continue
    if sol is None:
        return EigSolution(x0, np.nan, np.inf, "numerical_error", -np.inf)
    status = sol["status"]
    if status == "primal infeasible":
        return EigSolution(x0, np.inf, np.inf, "infeasible")
    if sol["x"] is None:
        return EigSolution(x0, np.inf, np.inf, "infeasible")
    z = np.array(sol["x"]).ravel()
    x = x0.copy()
    x[free] = np.clip(z[:n_free], box[free, 0], box[free, 1])
    viol = problem.constraint_violation(x)
    residual = max(float(sol.get("primal infeasibility") or 0.0),
                   float(sol.get("dual infeasibility") or 0.0))
    if status != "optimal":
        if status == "dual infeasible" or viol > 1e3 * tol:
            return EigSolution(x, np.inf, np.inf, "infeasible")
        status = "max_iterations"
    value = problem.objective(x)
    dual = sol.get("dual objective")
    # a weak-duality bound is only trustworthy when the dual iterate is feasible
    dual_ok = dual is not None and float(sol.get("dual infeasibility") or np.inf) <= 1e3 * tol
    dual = min(float(dual), value) if dual_ok else -np.inf
    return EigSolution(x, value, max(residual, viol), status, dual)


def minimize_scalar_convex(f, lo, hi, xtol=1e-10):
    """Minimise a convex scalar function on ``[lo, hi]``; endpoints are checked too."""
    if hi - lo <= xtol:
        x = 0.5 * (lo + hi)
        return x, f(x)
    res = minimize_scalar(f, bounds=(lo, hi), method="bounded",
                          options={"xatol": xtol * max(1.0, abs(hi - lo))})
    best = min(((res.x, res.fun), (lo, f(lo)), (hi, f(hi))), key=lambda p: p[1])
    return float(best[0]), float(best[1])
