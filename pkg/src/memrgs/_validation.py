"""Input validation helpers shared across the package."""

import numpy as np
from sklearn.utils.validation import check_array


class ParameterError(ValueError):
    """Raised when a physical or algorithmic parameter is out of its valid range."""


def check_positive(name, value, strict=True):
    value = float(value)
    if not np.isfinite(value) or (value <= 0 if strict else value < 0):
        kind = "positive" if strict else "non-negative"
        raise ParameterError(f"{name} must be {kind} and finite, got {value!r}")
    return value


def check_symmetric(M, tol=1e-12, name="matrix"):
    """Return ``M`` as a float 2-D array after checking it is square and symmetric.

    The asymmetry tolerance is relative to the largest entry magnitude.
    """
    M = check_array(M, dtype=float, ensure_2d=True, ensure_min_samples=1,
                    ensure_min_features=1, input_name=name)
    if M.shape[0] != M.shape[1]:
        raise ParameterError(f"{name} must be square, got shape {M.shape}")
    scale = max(1.0, float(np.max(np.abs(M))))
    if np.max(np.abs(M - M.T)) > tol * scale:
        raise ParameterError(f"{name} is not symmetric")
    return M


def check_spd(P, name="P"):
    P = check_symmetric(P, tol=1e-9, name=name)
    if np.linalg.eigvalsh(P)[0] <= 0:
        raise ParameterError(f"{name} must be positive definite")
    return 0.5 * (P + P.T)


def check_vertices(V, n_states=None):
    """Validate a vertex array of shape (m, N+1) with rows ``(a_1..a_N, b)``.

    All ``b`` entries must be nonzero and share a sign.
    """
    V = check_array(V, dtype=float, ensure_2d=True, input_name="vertices")
    if V.shape[1] < 2:
        raise ParameterError("vertices need at least two columns (a_1.., b)")
    if n_states is not None and V.shape[1] != n_states + 1:
        raise ParameterError(f"expected {n_states + 1} columns, got {V.shape[1]}")
    b = V[:, -1]
    if np.any(b == 0) or not (np.all(b > 0) or np.all(b < 0)):
        raise ParameterError("input coefficients b must be nonzero with a common sign")
    return V


def check_gain_interval(k_m, k_M):
    k_m = check_positive("k_m", k_m)
    k_M = check_positive("k_M", k_M)
    if not k_m < k_M:
        raise ParameterError(f"need 0 < k_m < k_M, got k_m={k_m}, k_M={k_M}")
    return k_m, k_M
