"""Global minimisation of the largest eigenvalue of a bilinear matrix inequality.

For vertices ``(A_i, B_i)`` of the uncertainty polytope we seek ``P`` and one
gain per vertex minimising ``s`` subject to::

    (A_i - B_i K_i C)^T P + P (A_i - B_i K_i C) <= s I,   k_m <= K_i <= k_M,   P > 0

The problem is normalised (``mu_p I <= P <= I``, gains divided by ``k_M`` with
``C`` rescaled to ``k_M e_1``) and solved by branch and bound over boxes in
``(P entries, gains)``.  Upper bounds come from alternating the two convex
slices; lower bounds from a McCormick relaxation of the products ``K_i P``.
"""

import heapq
import itertools
import math
import time
from dataclasses import dataclass, field

import numpy as np

from ._validation import ParameterError, check_gain_interval, check_spd
from .minimax_eig import AffineEigProblem, minimize_scalar_convex, solve
from .plant import companion_matrices, lyapunov_rate_matrix
from .uncertainty import VertexPolytope

DEFAULT_MU_P = 1e-3


def sym_basis(N):
    """Symmetric basis matrices for the ``N(N+1)/2`` distinct entries (row-major upper triangle)."""
    basis = []
    for r in range(N):
        for c in range(r, N):
            E = np.zeros((N, N))
            E[r, c] = E[c, r] = 1.0
            basis.append(E)
    return basis


def vec_to_sym(p, N):
    return np.tensordot(np.asarray(p, dtype=float), np.array(sym_basis(N)), axes=1)


def sym_to_vec(P):
    P = np.asarray(P, dtype=float)
    N = P.shape[0]
    return np.array([P[r, c] for r in range(N) for c in range(r, N)])


@dataclass
class BmiInstance:
    polytope: VertexPolytope
    k_m: float
    k_M: float
    mu_p: float = DEFAULT_MU_P

    def __post_init__(self):
        if not isinstance(self.polytope, VertexPolytope):
            self.polytope = VertexPolytope(self.polytope)
        check_gain_interval(self.k_m, self.k_M)
        if not 0 < self.mu_p < 1:
            raise ParameterError("mu_p must lie in (0, 1)")
        N = self.N
        self._basis = sym_basis(N)
        G = np.zeros((N, N))
        G[N - 1, 0] = 1.0
        self._A = []
        self._SA = []  # A_i^T E_j + E_j A_i
        self._SM = []  # M_i^T E_j + E_j M_i with M_i = B_i C_scaled
        for a, b in self.polytope.pairs():
            A, _, _ = companion_matrices(a, b)
            M = b * self.k_M * G
            self._A.append(A)
            self._SA.append(np.array([A.T @ E + E @ A for E in self._basis]))
            self._SM.append(np.array([M.T @ E + E @ M for E in self._basis]))
        # the SDP solver converges poorly on entries of order 1e3; hand it unit-scale blocks
        self.scale = 1.0 / max(max(np.abs(S).max() for S in self._SA + self._SM), 1e-300)

    @property
    def N(self):
        return self.polytope.n_states

    @property
    def m(self):
        return self.polytope.m

    @property
    def n_p(self):
        return self.N * (self.N + 1) // 2

    @property
    def mu_k(self):
        return self.k_m / self.k_M

    @property
    def C_scaled(self):
        C = np.zeros(self.N)
        C[0] = self.k_M
        return C

    def block(self, i, p, K_norm):
        """Normalised LMI block of vertex ``i``."""
        return np.tensordot(p, self._SA[i] - K_norm * self._SM[i], axes=1)

    def value(self, p, K_norm):
        return max(np.linalg.eigvalsh(self.block(i, p, K_norm[i]))[-1] for i in range(self.m))


def normalize_point(inst, P, K):
    """Map ``(P, K)`` to the normalised variables ``(p, K / k_M)`` with ``P`` scaled to unit spectral norm.

    Returns ``(p, K_norm, c)``; the normalised value times ``c`` is the raw value.
    """
    P = check_spd(P)
    c = float(np.linalg.eigvalsh(P)[-1])
    return sym_to_vec(P / c), np.asarray(K, dtype=float) / inst.k_M, c


def denormalize_point(inst, p, K_norm, c=1.0):
    return c * vec_to_sym(p, inst.N), np.asarray(K_norm, dtype=float) * inst.k_M


def raw_value(polytope, P, K):
    """Largest rate-matrix eigenvalue over vertices, evaluated directly."""
    return max(np.linalg.eigvalsh(lyapunov_rate_matrix(a, b, k, P))[-1]
               for (a, b), k in zip(polytope.pairs(), np.atleast_1d(K)))


@dataclass
class BoxQ:
    """Hyper-rectangle over ``n_p`` P-entries followed by ``m`` normalised gains."""

    lo: np.ndarray
    hi: np.ndarray
    n_p: int

    def __post_init__(self):
        self.lo = np.asarray(self.lo, dtype=float)
        self.hi = np.asarray(self.hi, dtype=float)
        if self.lo.shape != self.hi.shape or np.any(self.lo > self.hi):
            raise ParameterError("box bounds must satisfy lo <= hi")

    @classmethod
    def initial(cls, inst):
        lo = np.r_[-np.ones(inst.n_p), np.full(inst.m, inst.mu_k)]
        hi = np.r_[np.ones(inst.n_p), np.ones(inst.m)]
        return cls(lo, hi, inst.n_p)

    @property
    def p_lo(self):
        return self.lo[:self.n_p]

    @property
    def p_hi(self):
        return self.hi[:self.n_p]

    @property
    def k_lo(self):
        return self.lo[self.n_p:]

    @property
    def k_hi(self):
        return self.hi[self.n_p:]

    @property
    def k_centroid(self):
        return 0.5 * (self.k_lo + self.k_hi)

    def split(self):
        """Halve along the longest edge (lowest index on ties)."""
        j = int(np.argmax(self.hi - self.lo))
        mid = 0.5 * (self.lo[j] + self.hi[j])
        hi1 = self.hi.copy()
        hi1[j] = mid
        lo2 = self.lo.copy()
        lo2[j] = mid
        return BoxQ(self.lo.copy(), hi1, self.n_p), BoxQ(lo2, self.hi.copy(), self.n_p)


@dataclass
class BnbNode:
    box: BoxQ
    phi_L: float
    phi_U: float
    witness: tuple


@dataclass
class BmiSolution:
    """Outcome of the global solve.

    ``s_star`` is the optimal value of the eigenvalue problem (negative when
    a certificate exists); ``s_margin = -s_star`` is the decay margin ``s``
    in ``(A - BKC)^T P + P (A - BKC) <= -s I``.
    """

    s_star: float
    P_star: np.ndarray
    K_star: np.ndarray
    gap: float
    node_count: int
    lower: float
    upper: float
    status: str = "converged"
    history: list = field(default_factory=list)
    wall_time: float = 0.0
    verified_value: float = math.nan

    @property
    def s_margin(self):
        return -self.s_star


# -- gain initialisation --------------------------------------------------------

def routh_table_stable(coeffs):
    """Routh-Hurwitz test for a real polynomial (highest power first).

    Returns ``False`` on any sign change or (numerically) zero pivot in the first column.
    """
    c = np.trim_zeros(np.asarray(coeffs, dtype=float), "f")
    if c.size == 0:
        return False
    if c[0] < 0:
        c = -c
    n = c.size - 1
    if n == 0:
        return True
    rows = [c[0::2].copy(), c[1::2].copy()]
    width = len(rows[0])
    rows = [np.pad(r, (0, width - len(r))) for r in rows]
    for _ in range(n - 1):
        r1, r2 = rows[-2], rows[-1]
        if abs(r2[0]) <= 1e-12 * np.abs(c).max():
            return False
        new = np.zeros(width)
        for j in range(width - 1):
            new[j] = (r2[0] * r1[j + 1] - r1[0] * r2[j + 1]) / r2[0]
        rows.append(new)
    first = np.array([r[0] for r in rows])
    return bool(np.all(first > 0))


def closed_loop_charpoly(a, b, K):
    """Characteristic polynomial (highest power first) of the companion closed loop."""
    a = np.atleast_1d(np.asarray(a, dtype=float))
    # s^N - a_N s^{N-1} - ... - a_2 s - (a_1 - b K)
    return np.r_[1.0, -a[::-1][:-1], -(a[0] - b * K)]


def routh_gain_interval(a, b):
    """Largest interval of ``K > 0`` that makes the closed loop Hurwitz.

    ``K`` only moves the constant coefficient, so candidate boundaries are
    ``K = a_1/b`` (root at the origin) and the gains at which a root crosses
    the imaginary axis.  Segments between candidates are tested with the
    Routh table.  Returns ``(lo, hi)`` (``hi`` may be ``inf``) or ``None``.
    """
    a = np.atleast_1d(np.asarray(a, dtype=float))
    if b == 0:
        raise ParameterError("b must be nonzero")
    base = closed_loop_charpoly(a, 0.0, 0.0)
    N = a.size
    cands = {a[0] / b}
    # a root at s = jw needs Im p(jw) = 0, then K = -Re p(jw) / b
    im_coeffs = np.zeros(N + 1)  # highest power of w first
    for idx, c in enumerate(base):
        k = N - idx
        if k % 2 == 1:
            im_coeffs[idx] = c * (-1) ** ((k - 1) // 2)
    if np.any(im_coeffs):
        for w in np.roots(np.trim_zeros(im_coeffs, "f")):
            if abs(w.imag) < 1e-9 * max(1.0, abs(w)) and w.real > 0:
                cands.add(-np.polyval(base, 1j * w.real).real / b)
    edges = [0.0] + sorted(k for k in cands if k > 0 and np.isfinite(k)) + [math.inf]
    best = None
    for lo, hi in zip(edges[:-1], edges[1:]):
        if hi <= lo:
            continue
        probe = max(2.0 * lo, lo + 1.0) if hi == math.inf else 0.5 * (lo + hi)
        if routh_table_stable(closed_loop_charpoly(a, b, probe)):
            if best is not None and math.isclose(best[1], lo):
                best = (best[0], hi)
            elif best is None or (hi - lo) > (best[1] - best[0]):
                best = (lo, hi)
    return best


def routh_initial_gain_set(polytope, span, margin=0.999):
    """Initial ``[k_m, k_M]`` from per-vertex Routh intervals and an amplifier gain span.

    ``k_m`` is the smallest Routh lower bound over the vertices; ``k_M`` is
    capped at ``margin * span * k_m`` so any subset is realisable by an
    amplifier with gain ratio ``span``.
    """
    lows, highs = [], []
    for a, b in polytope.pairs():
        iv = routh_gain_interval(a, b)
        if iv is None:
            raise ParameterError(f"no stabilising output-feedback gain for vertex a={a}, b={b}")
        lows.append(iv[0])
        highs.append(iv[1])
    k_m = min(lows)
    k_m = k_m if k_m > 0 else min(h for h in highs) * 1e-6
    k_M = min(min(highs), margin * span * k_m)
    if k_M <= max(lows):
        raise ParameterError("amplifier span too small to reach every vertex's stabilising gains")
    return k_m, k_M


def shrink_gain_set(K, widen=0.005):
    K = np.asarray(K, dtype=float)
    lo, hi = float(K.min()), float(K.max())
    if hi - lo <= 1e-12 * max(abs(hi), 1.0):
        return lo * (1 - widen), hi * (1 + widen)
    return lo, hi


# -- convex slices ---------------------------------------------------------------

def _p_lmis(inst, offset, n_vars):
    N = inst.N
    lo = np.zeros((n_vars, N, N))
    hi = np.zeros((n_vars, N, N))
    for j, E in enumerate(inst._basis):
        lo[offset + j] = -E
        hi[offset + j] = E
    return [(inst.mu_p * np.eye(N), lo), (-np.eye(N), hi)]


def slice_fixed_gain(inst, box, K_fixed, tol=1e-7):
    """Best ``(s, P)`` over the box with gains frozen; ``(inf, None)`` if infeasible."""
    K_fixed = np.asarray(K_fixed, dtype=float)
    blocks0 = [np.zeros((inst.N, inst.N))] * inst.m
    blocks = [inst.scale * (inst._SA[i] - K_fixed[i] * inst._SM[i]) for i in range(inst.m)]
    prob = AffineEigProblem(blocks0, blocks, np.column_stack([box.p_lo, box.p_hi]),
                            lmi_constraints=_p_lmis(inst, 0, inst.n_p))
    sol = solve(prob, tol)
    if not sol.feasible or prob.constraint_violation(sol.x_star) > 1e-6:
        return math.inf, None
    return inst.value(sol.x_star, K_fixed), sol.x_star


def slice_fixed_P(inst, box, p_fixed):
    """Per-vertex best gains for a frozen ``P``; returns ``(s, K)``."""
    K = np.empty(inst.m)
    s = -math.inf
    for i in range(inst.m):
        G = np.tensordot(p_fixed, inst._SA[i], axes=1)
        H = np.tensordot(p_fixed, inst._SM[i], axes=1)

        def f(k, G=G, H=H):
            return np.linalg.eigvalsh(G - k * H)[-1]

        K[i], v = minimize_scalar_convex(f, box.k_lo[i], box.k_hi[i])
        s = max(s, v)
    return s, K


def alternating_sdp(inst, box, delta_rel=1e-3, max_iter=50, tol=1e-7):
    """Alternate the two convex slices from the box-centroid gains.

    Each round re-optimises the gains for the current ``P`` and then ``P``
    for the new gains; stops once a round improves by less than
    ``delta_rel * |s|``.  Returns ``(phi_U, (p, K), values)`` where ``values``
    lists the value after every round; ``phi_U = inf`` if the box admits no
    feasible ``P``.
    """
    K = box.k_centroid.copy()
    s, p = slice_fixed_gain(inst, box, K, tol)
    if not math.isfinite(s):
        return math.inf, None, [math.inf]
    values = [s]
    for _ in range(max_iter):
        sK, K_new = slice_fixed_P(inst, box, p)
        sP, p_new = slice_fixed_gain(inst, box, K_new, tol)
        s_new = min(sK, sP) if p_new is not None else sK
        if s_new >= s:
            break
        if sP <= sK and p_new is not None:
            p = p_new
        K = K_new
        improvement = s - s_new
        s = s_new
        values.append(s)
        if improvement < delta_rel * abs(s):
            break
    return s, (p, K), values


def mccormick_W(box):
    """McCormick rows ``G z <= h`` over ``z = (p, K, w)``, ``w[i*n_p + j] ~ K_i p_j``."""
    n_p = box.n_p
    m = len(box.k_lo)
    n = n_p + m + m * n_p
    rows, rhs = [], []
    for i in range(m):
        LK, UK = box.k_lo[i], box.k_hi[i]
        for j in range(n_p):
            LP, UP = box.p_lo[j], box.p_hi[j]
            pj, ki, wij = j, n_p + i, n_p + m + i * n_p + j
            for sw, cp, ck, h in ((-1, LK, LP, LK * LP), (-1, UK, UP, UK * UP),
                                  (1, -UK, -LP, -UK * LP), (1, -LK, -UP, -LK * UP)):
                g = np.zeros(n)
                g[wij] = sw
                g[pj] += cp
                g[ki] += ck
                rows.append(g)
                rhs.append(h)
    return np.array(rows), np.array(rhs)


def lower_bound_relax(inst, box, tol=1e-7):
    """Lower bound from the McCormick relaxation over the box.

    ``inf`` when the relaxation is infeasible, ``-inf`` when the solver
    fails to produce a usable bound.
    """
    N, m, n_p = inst.N, inst.m, inst.n_p
    n = n_p + m + m * n_p
    blocks0, blocks = [], []
    for i in range(m):
        F = np.zeros((n, N, N))
        F[:n_p] = inst.scale * inst._SA[i]
        F[n_p + m + i * n_p: n_p + m + (i + 1) * n_p] = -inst.scale * inst._SM[i]
        blocks0.append(np.zeros((N, N)))
        blocks.append(F)
    lmis = _p_lmis(inst, 0, n)
    I = np.eye(N)
    for i in range(m):
        lo = np.zeros((n, N, N))
        hi = np.zeros((n, N, N))
        lo[n_p + i] = inst.mu_p * I
        hi[n_p + i] = -I
        for j, E in enumerate(inst._basis):
            lo[n_p + m + i * n_p + j] = -E
            hi[n_p + m + i * n_p + j] = E
        lmis += [(np.zeros((N, N)), lo), (np.zeros((N, N)), hi)]
    w_lo, w_hi = [], []
    for i in range(m):
        for j in range(n_p):
            corners = [a * c for a in (box.k_lo[i], box.k_hi[i]) for c in (box.p_lo[j], box.p_hi[j])]
            w_lo.append(min(corners))
            w_hi.append(max(corners))
    bounds = np.column_stack([np.r_[box.lo, w_lo], np.r_[box.hi, w_hi]])
    prob = AffineEigProblem(blocks0, blocks, bounds, linear_ineqs=mccormick_W(box), lmi_constraints=lmis)
    sol = solve(prob, tol)
    if sol.status == "infeasible":
        return math.inf
    # the dual objective is a valid bound even when the primal point is inexact
    return sol.dual_bound / inst.scale


# -- branch and bound ------------------------------------------------------------

def branch_and_bound(inst, epsilon=1e-3, max_nodes=10_000, delta_rel=1e-3, tol=1e-7, time_limit=None):
    """Best-first branch and bound to absolute accuracy ``epsilon``.

    Returns a :class:`BmiSolution` with gains denormalised to ``[k_m, k_M]``.
    On exhausting ``max_nodes`` (or ``time_limit`` seconds) the incumbent is
    returned with status ``"budget"`` and the remaining gap.
    """
    if epsilon <= 0:
        raise ParameterError("epsilon must be positive")
    t0 = time.perf_counter()
    root = BoxQ.initial(inst)
    phi_L = lower_bound_relax(inst, root, tol)
    phi_U, wit, _ = alternating_sdp(inst, root, delta_rel, tol=tol)
    if not math.isfinite(phi_U):
        raise ParameterError("normalised problem is infeasible")
    U, incumbent = phi_U, wit
    counter = itertools.count()
    heap = [(phi_L, next(counter), BnbNode(root, phi_L, phi_U, wit))]
    L = phi_L
    nodes = 1
    history = [dict(k=0, L=float(L), U=float(U), open=1, nodes=nodes, sandwich=float(phi_L - phi_U))]
    status = "converged"
    k = 0
    while U - L >= epsilon:
        if nodes >= max_nodes or (time_limit is not None and time.perf_counter() - t0 > time_limit):
            status = "budget"
            break
        _, _, node = heapq.heappop(heap)
        worst_sandwich = -math.inf
        for child_box in node.box.split():
            nodes += 1
            cL = max(lower_bound_relax(inst, child_box, tol), node.phi_L)
            if cL <= U:
                cU, cw, _ = alternating_sdp(inst, child_box, delta_rel, tol=tol)
                worst_sandwich = max(worst_sandwich, cL - cU)
                if cU < U:
                    U, incumbent = cU, cw
                heapq.heappush(heap, (cL, next(counter), BnbNode(child_box, cL, cU, cw)))
        heap = [h for h in heap if h[0] <= U]
        heapq.heapify(heap)
        L = heap[0][0] if heap else U
        L = min(L, U)
        k += 1
        history.append(dict(k=k, L=float(L), U=float(U), open=len(heap), nodes=nodes,
                            sandwich=float(worst_sandwich)))
    p, Kn = incumbent
    P_star = vec_to_sym(p, inst.N)
    K_star = Kn * inst.k_M
    verified = raw_value(inst.polytope, P_star, K_star)
    return BmiSolution(s_star=U, P_star=P_star, K_star=K_star, gap=U - L, node_count=nodes,
                       lower=L, upper=U, status=status, history=history,
                       wall_time=time.perf_counter() - t0, verified_value=float(verified))


# -- certificate checks ------------------------------------------------------------

def verify_vertex_certificate(P, s, polytope, k_m, k_M, tol=1e-6):
    """Check every vertex admits ``K`` in ``[k_m, k_M]`` with rate matrix ``<= -s I``.

    Returns ``(ok, K_witness, values)`` where ``values[i]`` is the minimised
    largest eigenvalue at vertex ``i``.
    """
    P = check_spd(P)
    Ks, vals = [], []
    for a, b in polytope.pairs():
        k, v = minimize_scalar_convex(lambda K: np.linalg.eigvalsh(lyapunov_rate_matrix(a, b, K, P))[-1],
                                      k_m, k_M)
        Ks.append(k)
        vals.append(v)
    vals = np.array(vals)
    return bool(np.all(vals <= -s + tol)), np.array(Ks), vals


def interpolated_gain(theta, b, K):
    """Interpolated gain ``sum theta_i K_i b_i / sum theta_i b_i``."""
    theta, b, K = (np.asarray(v, dtype=float) for v in (theta, b, K))
    return float(np.sum(theta * K * b) / np.sum(theta * b))


def verify_interior_samples(P, s, polytope, K_vertex, n_samples=200, seed=0, tol=1e-6):
    """Monte-Carlo check of the interpolated-gain certificate at interior points.

    Draws ``theta`` from a flat Dirichlet, forms ``(a, b) = sum theta_i (a_i, b_i)``
    and the interpolated gain, and returns the largest rate-matrix eigenvalue
    plus ``s`` (non-positive within ``tol`` when the certificate holds) along
    with the gains used.
    """
    rng = np.random.default_rng(seed)
    V = polytope.vertices
    worst = -math.inf
    gains = []
    for theta in rng.dirichlet(np.ones(polytope.m), size=n_samples):
        row = theta @ V
        K = interpolated_gain(theta, V[:, -1], K_vertex)
        gains.append(K)
        lam = np.linalg.eigvalsh(lyapunov_rate_matrix(row[:-1], row[-1], K, P))[-1]
        worst = max(worst, lam + s)
    return worst, np.array(gains)
