"""Continuous-time algebraic Riccati solver and LQR gains.

Solves A'P + PA - P B R^-1 B' P + Q = 0 for the stabilizing P via the
ordered real Schur decomposition of the Hamiltonian matrix, then polishes
with Newton-Kleinman steps (each a Lyapunov solve) until the residual is
at certificate grade.  Used to seed the barrier synthesis and to build the
lane-keeping nominal controller.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .vehicle import VehicleParams, lk_matrices


class CareError(RuntimeError):
    """No stabilizing CARE solution (Hamiltonian eigenvalues on the axis)."""


@dataclass
class LqrProblem:
    A: np.ndarray
    B: np.ndarray
    Q: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        self.B = np.asarray(self.B, dtype=float)
        if self.B.ndim == 0:
            self.B = self.B.reshape(1, 1)
        elif self.B.ndim == 1:
            self.B = self.B.reshape(-1, 1)
        self.Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        self.R = np.atleast_2d(np.asarray(self.R, dtype=float))
        n, m = self.B.shape
        if self.A.shape != (n, n) or self.Q.shape != (n, n) or self.R.shape != (m, m):
            raise ValueError("inconsistent LQR dimensions")
        if np.linalg.eigvalsh((self.R + self.R.T) / 2)[0] <= 0:
            raise ValueError("R must be positive definite")
        # stabilizability screen (warning only): controllability-style rank test
        ctrb = self.B
        mat = self.B
        for _ in range(n - 1):
            mat = self.A @ mat
            ctrb = np.hstack([ctrb, mat])
        if np.linalg.matrix_rank(ctrb) < n:
            unctrl_ok = True
            # uncontrollable modes must be stable for a stabilizing solution
            w = np.linalg.eigvals(self.A)
            if (w.real >= -1e-12).any():
                unctrl_ok = False
            if not unctrl_ok:
                warnings.warn("LQR pair looks non-stabilizable (rank test); "
                              "CARE solve may fail", stacklevel=2)


@dataclass
class LqrSolution:
    P: np.ndarray
    K: np.ndarray
    closed_loop_abscissa: float
    residual: float


def care_residual(problem: LqrProblem, P: np.ndarray) -> float:
    A, B, Q, R = problem.A, problem.B, problem.Q, problem.R
    res = A.T @ P + P @ A - P @ B @ np.linalg.solve(R, B.T @ P) + Q
    return float(np.linalg.norm(res))


def solve_care(problem: LqrProblem, refine_steps: int = 5) -> LqrSolution:
    """Stabilizing CARE solution, K = R^-1 B' P."""
    A, B, Q, R = problem.A, problem.B, problem.Q, problem.R
    n = A.shape[0]
    Rinv_Bt = np.linalg.solve(R, B.T)
    H = np.block([[A, -B @ Rinv_Bt], [-Q, -A.T]])
    T, Z, sdim = sla.schur(H, sort=lambda w: w.real < 0.0, output="real")
    if sdim != n:
        raise CareError(
            f"stable invariant subspace has dimension {sdim} != {n}; "
            "Hamiltonian has eigenvalues on the imaginary axis")
    U1 = Z[:n, :n]
    U2 = Z[n:, :n]
    try:
        P = np.linalg.solve(U1.T, U2.T).T
    except np.linalg.LinAlgError as exc:
        raise CareError("singular invariant-subspace basis") from exc
    P = (P + P.T) / 2.0

    # Newton-Kleinman refinement: quadratic convergence near the solution
    for _ in range(refine_steps):
        K = Rinv_Bt @ P
        Acl = A - B @ K
        rhs = -(Q + K.T @ R @ K)
        P_new = sla.solve_lyapunov(Acl.T, rhs)
        P_new = (P_new + P_new.T) / 2.0
        if care_residual(problem, P_new) >= care_residual(problem, P):
            break
        P = P_new

    K = Rinv_Bt @ P
    eigs = np.linalg.eigvals(A - B @ K)
    absc = float(eigs.real.max())
    res = care_residual(problem, P)
    if absc >= 0.0:
        raise CareError(f"closed loop not stable (abscissa {absc:.3e})")
    if res > 1e-8 * (1.0 + float(np.linalg.norm(P)) ** 2):
        warnings.warn(f"CARE residual {res:.2e} above target", stacklevel=2)
    return LqrSolution(P, K, absc, res)


# lane-keeping nominal gain defaults (preview row, weights)
PREVIEW_ROW = np.array([1.0, 0.0, 10.0, 0.0])


def lk_weights(params: VehicleParams, v_f_nominal: float,
               k_p: float = 5.0, k_d: float = 0.4,
               preview_row: np.ndarray | None = None) -> np.ndarray:
    """State weight Q = k_p C'C + k_d (C A1)'(C A1), regularized to PD.

    The derivative term uses the preview output rate C A1 x; the raw
    rank-2 sum is lifted by 1e-9 I so the Hamiltonian method stays
    well-posed for degenerate weights.
    """
    C = (PREVIEW_ROW if preview_row is None else np.asarray(preview_row, dtype=float))
    C = C.reshape(1, 4)
    A1, _, _ = lk_matrices(params, v_f_nominal)
    CA = C @ A1
    return k_p * (C.T @ C) + k_d * (CA.T @ CA) + 1e-9 * np.eye(4)


def lk_nominal_gain(params: VehicleParams, v_f_nominal: float,
                    k_p: float = 5.0, k_d: float = 0.4, r_weight: float = 600.0,
                    preview_row: np.ndarray | None = None) -> LqrSolution:
    """LQR gain for the lateral model at a fixed nominal speed."""
    A1, B1, _ = lk_matrices(params, v_f_nominal)
    Q = lk_weights(params, v_f_nominal, k_p, k_d, preview_row)
    return solve_care(LqrProblem(A1, B1, Q, np.array([[r_weight]])))
