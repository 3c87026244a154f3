"""Independent brute-force oracles shared by the test modules."""

import math

import numpy as np


def grid_oracle(vertices, k_m, k_M, mu_p=1e-3, n=400):
    """Dense search over (p, K_1, K_2) for N = 1, up to two vertices."""
    V = np.asarray(vertices, dtype=float)
    ps = np.linspace(mu_p, 1.0, n)
    Ks = np.linspace(k_m, k_M, n)
    best = math.inf
    if len(V) == 1:
        vals = 2 * ps[:, None] * (V[0, 0] - V[0, 1] * Ks[None, :])
        return float(vals.min())
    for p in ps:
        f1 = 2 * p * (V[0, 0] - V[0, 1] * Ks)
        f2 = 2 * p * (V[1, 0] - V[1, 1] * Ks)
        best = min(best, float(np.maximum(f1[:, None], f2[None, :]).min()))
    return best
