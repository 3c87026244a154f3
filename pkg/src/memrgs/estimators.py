"""scikit-learn style wrappers around the circuit, polytope, BMI and design code.

Hyperparameters are constructor arguments (``get_params``/``set_params``
work), fitted state ends in an underscore and inputs go through
``check_array``.
"""

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .agc_circuit import simulate, sync_to_charge, tune
from .bmi import BmiInstance, branch_and_bound, interpolated_gain, routh_initial_gain_set
from .design_pipeline import DesignConfig, run_design
from .memristor import MemristorParams, derive_safe_zone
from .uncertainty import VertexPolytope, convex_hull, hull_residual


class MemristiveAGC(TransformerMixin, BaseEstimator):
    """Behavioural memristive gain stage.

    ``fit`` tunes carrier and filters from the band limits; ``transform``
    maps sampled inputs ``X[:, 0] = V_e``, ``X[:, 1] = V_C`` (one row per
    step of ``dt``) to the output voltage ``V_u`` as a column.
    """

    def __init__(self, omega_C_max=128.0, omega_e_max=500.0, V_DD=5.0, R_I=1e3, R_C=1e5,
                 tau_s=0.826, charge_fraction=0.5, dt=None):
        self.omega_C_max = omega_C_max
        self.omega_e_max = omega_e_max
        self.V_DD = V_DD
        self.R_I = R_I
        self.R_C = R_C
        self.tau_s = tau_s
        self.charge_fraction = charge_fraction
        self.dt = dt

    def fit(self, X=None, y=None):
        self.safe_zone_ = derive_safe_zone(MemristorParams())
        self.circuit_ = tune(self.omega_C_max, self.omega_e_max, self.V_DD, self.R_I, self.R_C, self.tau_s)
        self.dt_ = self.circuit_.max_dt if self.dt is None else float(self.dt)
        return self

    def transform(self, X):
        check_is_fitted(self, "circuit_")
        X = check_array(X, dtype=float)
        if X.shape[1] != 2:
            raise ValueError("X must have columns V_e, V_C")
        st = sync_to_charge(self.circuit_, self.safe_zone_, self.charge_fraction * self.safe_zone_.Q_M_S)
        run = simulate(self.circuit_, self.safe_zone_, st, X[:, 0], X[:, 1], self.dt_)
        self.last_run_ = run
        return run.column("V_u")[1:, None]


class PolytopeBounder(TransformerMixin, BaseEstimator):
    """Convex hull of a coefficient cloud; ``transform`` gives each point's distance from it."""

    def __init__(self, rtol=1e-9):
        self.rtol = rtol

    def fit(self, X, y=None):
        X = check_array(X, dtype=float, ensure_min_samples=2)
        self.polytope_ = convex_hull(X, rtol=self.rtol)
        self.vertices_ = self.polytope_.vertices
        return self

    def transform(self, X):
        check_is_fitted(self, "polytope_")
        X = check_array(X, dtype=float)
        return np.array([[hull_residual(self.vertices_, x)] for x in X])


class BMISolver(BaseEstimator):
    """Global minimax-eigenvalue synthesis over polytope vertices.

    ``fit`` takes the vertex matrix (rows ``a_1..a_N, b``); ``predict``
    takes convex weights over the vertices and returns the interpolated gain.
    """

    def __init__(self, k_m=None, k_M=None, span=None, epsilon=1e-3, max_nodes=10000, mu_p=1e-3,
                 delta_rel=1e-3, time_limit=None):
        self.k_m = k_m
        self.k_M = k_M
        self.span = span
        self.epsilon = epsilon
        self.max_nodes = max_nodes
        self.mu_p = mu_p
        self.delta_rel = delta_rel
        self.time_limit = time_limit

    def fit(self, X, y=None):
        V = check_array(X, dtype=float)
        self.polytope_ = VertexPolytope(V)
        if self.k_m is None or self.k_M is None:
            span = derive_safe_zone(MemristorParams()).span if self.span is None else self.span
            self.gain_set_ = routh_initial_gain_set(self.polytope_, span)
        else:
            self.gain_set_ = (float(self.k_m), float(self.k_M))
        inst = BmiInstance(self.polytope_, *self.gain_set_, mu_p=self.mu_p)
        self.solution_ = branch_and_bound(inst, self.epsilon, max_nodes=self.max_nodes,
                                          delta_rel=self.delta_rel, time_limit=self.time_limit)
        self.P_ = self.solution_.P_star
        self.K_ = np.asarray(self.solution_.K_star)
        self.s_star_ = self.solution_.s_star
        return self

    def predict(self, X):
        check_is_fitted(self, "K_")
        W = check_array(X, dtype=float)
        if W.shape[1] != self.polytope_.m or np.any(W < 0):
            raise ValueError("rows of X must be non-negative weights over the vertices")
        b = self.polytope_.vertices[:, -1]
        return np.array([interpolated_gain(w / w.sum(), b, self.K_) for w in W])

    def score(self, X=None, y=None):
        """Certified decay margin (larger is better)."""
        check_is_fitted(self, "s_star_")
        return -self.s_star_


class RGSDesign(BaseEstimator):
    """Full synthesis chain with the design options as hyperparameters."""

    def __init__(self, model="ppa", gamma=0.5, T_fraction=0.6, time_scale=1.0, epsilon=1e-3,
                 max_nodes=200, grid=6, V_DD=5.0, R2=1e4, gain_span=None, realize_circuit=True):
        self.model = model
        self.gamma = gamma
        self.T_fraction = T_fraction
        self.time_scale = time_scale
        self.epsilon = epsilon
        self.max_nodes = max_nodes
        self.grid = grid
        self.V_DD = V_DD
        self.R2 = R2
        self.gain_span = gain_span
        self.realize_circuit = realize_circuit

    def fit(self, X=None, y=None):
        """Run the design; ``X`` is unused (the uncertainty sets are the defaults)."""
        self.report_ = run_design(DesignConfig(**self.get_params()))
        self.rgs_params_ = self.report_.rgs_params()
        return self

    def score(self, X=None, y=None):
        """One minus the contraction factor per scan cycle."""
        check_is_fitted(self, "report_")
        return 1.0 - self.report_.beta
