"""Dense QP reference: active-set enumeration over KKT systems.

Independent of the closed-form filters: solves
    min 1/2 x'Hx + f'x  s.t.  G x <= h,  A x = b
by trying every subset of inequality constraints as the active set,
solving the equality-constrained KKT system, and keeping the feasible
point with nonnegative multipliers and least objective.
"""

from itertools import combinations

import numpy as np


def solve_qp(H, f, G=None, h=None, A=None, b=None, tol=1e-9):
    H = np.atleast_2d(np.asarray(H, dtype=float))
    n = H.shape[0]
    f = np.asarray(f, dtype=float).ravel()
    G = np.zeros((0, n)) if G is None else np.atleast_2d(np.asarray(G, dtype=float))
    h = np.zeros(0) if h is None else np.asarray(h, dtype=float).ravel()
    A = np.zeros((0, n)) if A is None else np.atleast_2d(np.asarray(A, dtype=float))
    b = np.zeros(0) if b is None else np.asarray(b, dtype=float).ravel()
    m = G.shape[0]
    best = None
    for k in range(m + 1):
        for active in combinations(range(m), k):
            Ga = G[list(active)]
            KKT = np.block([
                [H, A.T, Ga.T],
                [A, np.zeros((A.shape[0], A.shape[0] + k))],
                [Ga, np.zeros((k, A.shape[0] + k))],
            ])
            rhs = np.concatenate([-f, b, h[list(active)]])
            try:
                sol = np.linalg.solve(KKT, rhs)
            except np.linalg.LinAlgError:
                continue
            x = sol[:n]
            lam = sol[n + A.shape[0]:]
            if (lam < -tol).any():
                continue
            if (G @ x - h > tol * (1.0 + np.abs(h))).any():
                continue
            if A.shape[0] and (np.abs(A @ x - b) > tol * (1.0 + np.abs(b))).any():
                continue
            obj = 0.5 * x @ H @ x + f @ x
            if best is None or obj < best[0] - 1e-12:
                best = (obj, x)
    return None if best is None else best[1]
