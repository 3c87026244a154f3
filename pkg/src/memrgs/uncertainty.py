"""Uncertainty sets: parameter boxes, their image clouds, bounding polytopes and rate bounds.

A physical-parameter box is mapped pointwise onto companion coefficients
``(a_1..a_N, b)``.  The convex hull of the resulting cloud is the polytope
whose vertices the synthesis problem is posed on.
"""

import csv
import itertools
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog
from scipy.spatial import ConvexHull

from ._validation import ParameterError, check_spd, check_vertices
from .plant import EPS0, lyapunov_rate_matrix


@dataclass(frozen=True)
class ParamBox:
    intervals: tuple

    def __post_init__(self):
        iv = tuple((float(lo), float(hi)) for lo, hi in self.intervals)
        for lo, hi in iv:
            if not lo <= hi:
                raise ParameterError(f"empty interval [{lo}, {hi}]")
        object.__setattr__(self, "intervals", iv)

    @property
    def lower(self):
        return np.array([lo for lo, _ in self.intervals])

    @property
    def upper(self):
        return np.array([hi for _, hi in self.intervals])

    def corners(self):
        return np.array(list(itertools.product(*self.intervals)))


@dataclass
class VertexPolytope:
    """Vertices ``(m, N+1)``, rows ``(a_1..a_N, b)``, and the affine dimension of their hull."""

    vertices: np.ndarray
    affine_dim: int = None

    def __post_init__(self):
        self.vertices = check_vertices(self.vertices)
        if self.affine_dim is None:
            self.affine_dim = _affine_rank(self.vertices)

    @property
    def m(self):
        return self.vertices.shape[0]

    @property
    def n_states(self):
        return self.vertices.shape[1] - 1

    def pairs(self):
        """Yield ``(a, b)`` per vertex."""
        for row in self.vertices:
            yield row[:-1], row[-1]


@dataclass(frozen=True)
class RateBounds:
    delta_A: float
    delta_B: float
    delta: float

    @classmethod
    def combine(cls, delta_A, delta_B, k_M):
        if min(delta_A, delta_B) < 0:
            raise ParameterError("rate bounds must be non-negative")
        return cls(float(delta_A), float(delta_B), float(delta_A + k_M * delta_B))


def map_box_to_cloud(F, box, grid=6):
    """Evaluate ``F`` on the tensor grid of ``box`` with ``grid`` points per axis.

    Degenerate intervals contribute a single value.  Ordering is the
    C-order of the grid (last parameter fastest).
    """
    if int(grid) < 2:
        raise ParameterError("grid needs at least 2 points per axis")
    axes = [np.linspace(lo, hi, int(grid)) for lo, hi in box.intervals]
    return np.array([F(theta) for theta in itertools.product(*axes)], dtype=float)


def _standardise(cloud):
    centre = cloud.mean(axis=0)
    scale = cloud.std(axis=0)
    # a column constant up to roundoff carries no direction
    flat = scale <= 1e-12 * np.maximum(np.abs(centre), 1e-300)
    scale[flat] = 1.0
    Z = (cloud - centre) / scale
    Z[:, flat] = 0.0
    return Z


def _affine_rank(points, rtol=1e-9):
    Z = _standardise(np.asarray(points, dtype=float))
    if len(Z) < 2:
        return 0
    s = np.linalg.svd(Z, compute_uv=False)
    return int(np.sum(s > rtol * max(s[0], 1e-300)))


def convex_hull(cloud, rtol=1e-9):
    """Vertices of the convex hull of ``cloud`` (rows are points).

    Columns are standardised first so coefficients of very different
    magnitude are treated evenly.  A cloud spanning a lower-dimensional
    affine subspace is hulled inside that subspace.
    """
    cloud = np.asarray(cloud, dtype=float)
    if cloud.ndim != 2 or len(cloud) == 0:
        raise ParameterError("cloud must be a non-empty 2-D array")
    Z = _standardise(cloud)
    _, s, Vt = np.linalg.svd(Z, full_matrices=False)
    r = int(np.sum(s > rtol * max(s[0], 1e-300))) if len(Z) > 1 else 0
    if r == 0:
        idx = [0]
    elif r == 1:
        proj = Z @ Vt[0]
        idx = sorted({int(np.argmin(proj)), int(np.argmax(proj))})
    else:
        hull = ConvexHull(Z @ Vt[:r].T)
        idx = sorted(int(i) for i in hull.vertices)
    return VertexPolytope(cloud[idx], affine_dim=r)


def hull_residual(vertices, points):
    """Largest convex-combination residual of ``points`` over ``vertices``.

    For each point solves the LP ``min ||V^T theta - x||_1`` over the simplex
    (in standardised coordinates).  Zero means every point is in the hull.
    """
    V = np.asarray(vertices, dtype=float)
    X = np.atleast_2d(np.asarray(points, dtype=float))
    scale = np.abs(np.vstack([V, X])).max(axis=0)
    scale[scale == 0] = 1.0
    V, X = V / scale, X / scale
    m, d = V.shape
    # variables: theta (m), s_plus (d), s_minus (d)
    c = np.r_[np.zeros(m), np.ones(2 * d)]
    A_eq = np.zeros((d + 1, m + 2 * d))
    A_eq[:d, :m] = V.T
    A_eq[:d, m:m + d] = -np.eye(d)
    A_eq[:d, m + d:] = np.eye(d)
    A_eq[d, :m] = 1.0
    worst = 0.0
    for x in X:
        res = linprog(c, A_eq=A_eq, b_eq=np.r_[x, 1.0], bounds=(0, None), method="highs")
        if res.status != 0:
            return np.inf
        worst = max(worst, float(res.fun))
    return worst


def lambda_max_P_bound(polytope, P, k_m, k_M):
    """Largest eigenvalue of the Lyapunov rate matrix over vertices and ``K in {k_m, k_M}``.

    Since that eigenvalue is convex in ``(a, b, K)`` jointly affine data,
    the maximum over the polytope and gain interval is attained here.
    """
    P = check_spd(P)
    if not k_m <= k_M:
        raise ParameterError("need k_m <= k_M")
    return max(np.linalg.eigvalsh(lyapunov_rate_matrix(a, b, K, P))[-1]
               for a, b in polytope.pairs() for K in (k_m, k_M))


def ppa_rate_bounds(S_G, S_A, S_eps, S_kappa, max_kappa_dot, max_eps_dot, k_M, m):
    """Rate bounds of the linearised actuator with ``G_o = 2G/3``.

    ``a_1 = 3 kappa / m`` gives ``delta_A = 3 max|kappa'| / m``; ``b`` scales as
    ``sqrt(12 eps A kappa / G) / m`` and is bounded term by term.
    """
    delta_A = 3.0 * max_kappa_dot / m
    lead = np.sqrt(12.0 * max(S_A) / min(S_G)) / m
    num = max(S_kappa) * max_eps_dot + max(S_eps) * max_kappa_dot
    delta_B = lead * num / (2.0 * np.sqrt(min(S_eps)) * np.sqrt(min(S_kappa)))
    return RateBounds.combine(delta_A, delta_B, k_M)


def scalar_drift_rate_bounds(a_star, b_star, c_star, tau_a, tau_c, k_M=0.0, form="compact"):
    """Rate bounds for the scalar example with drifting ``a(t)``, ``c(t)``.

    ``form="compact"`` evaluates the closed forms as commonly quoted;
    ``form="exact"`` carries the intermediate sup/inf bounds through
    exactly (``b' <= 3b*/2`` in ``delta_B``, ``tau_a`` on the ``a'`` term and
    ``b*`` to the first power in ``delta_A``).
    """
    for name, v in dict(a_star=a_star, b_star=b_star, c_star=c_star, tau_a=tau_a, tau_c=tau_c).items():
        if not v > 0:
            raise ParameterError(f"{name} must be positive")
    lead = np.sqrt(c_star) / a_star ** (2.0 / 3.0)
    if form == "compact":
        delta_A = a_star ** 3 * c_star ** 2 / (2.0 * b_star ** 2) * max(3.0 / tau_a, 2.0 / tau_c)
        delta_B = lead * (2 ** (5 / 3) / (3.0 * tau_c) + 1.0 / (2 ** (5 / 6) * tau_c))
    elif form == "exact":
        delta_A = a_star ** 3 * c_star ** 2 / (2.0 * b_star) * max(3.0 / tau_a, 2.0 / tau_c)
        delta_B = np.sqrt(1.5 * b_star) * lead * (2 ** (5 / 3) / (3.0 * tau_a) + 1.0 / (2 ** (5 / 6) * tau_c))
    else:
        raise ParameterError(f"unknown form {form!r}")
    return RateBounds.combine(delta_A, delta_B, k_M)


PPA_BOXES = dict(
    S_G=(0.5e-3, 2.0e-3),
    S_A=(1.2e-3, 1.8e-3),
    S_eps=(3.5 * EPS0, 6.5 * EPS0),
    S_kappa=(0.08, 0.167),
)


def ppa_param_box(boxes=None):
    b = PPA_BOXES if boxes is None else boxes
    return ParamBox((b["S_G"], b["S_A"], b["S_eps"], b["S_kappa"]))


def scalar_drift_param_box(a_star, b_star, c_star):
    return ParamBox(((a_star / 2, a_star), (b_star, 1.5 * b_star), (c_star / 2, c_star)))


def save_vertices(path, polytope):
    N = polytope.n_states
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"a{i + 1}" for i in range(N)] + ["b"])
        for row in polytope.vertices:
            w.writerow(["%.17g" % v for v in row])


def load_vertices(path):
    """Read a vertex CSV (header ``a1..aN,b``); malformed files raise ``ParameterError``."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ParameterError(f"{path}: empty vertex file")
    header = [h.strip() for h in rows[0]]
    N = len(header) - 1
    if N < 1 or header != [f"a{i + 1}" for i in range(N)] + ["b"]:
        raise ParameterError(f"{path}: header must be a1..aN,b")
    try:
        V = np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=float)
    except ValueError as exc:
        raise ParameterError(f"{path}: {exc}") from None
    if V.ndim != 2 or V.shape[0] == 0 or V.shape[1] != N + 1:
        raise ParameterError(f"{path}: every row needs {N + 1} values")
    if not np.all(np.isfinite(V)):
        raise ParameterError(f"{path}: non-finite entry")
    return VertexPolytope(V)
