import math

import numpy as np
import pytest

from iforge.riccati import (CareError, LqrProblem, care_residual, lk_nominal_gain,
                            lk_weights, solve_care)
from iforge.vehicle import VehicleParams, lk_matrices


class TestScalarCare:
    def test_unstable_scalar(self):
        # 2P - P^2 + 1 = 0 -> P = 1 + sqrt(2)
        sol = solve_care(LqrProblem(1.0, 1.0, 1.0, 1.0))
        assert sol.P[0, 0] == pytest.approx(1.0 + math.sqrt(2.0), abs=1e-12)
        assert sol.K[0, 0] == pytest.approx(1.0 + math.sqrt(2.0), abs=1e-12)

    def test_integrator(self):
        sol = solve_care(LqrProblem(0.0, 1.0, 1.0, 1.0))
        assert sol.P[0, 0] == pytest.approx(1.0, abs=1e-12)
        assert sol.K[0, 0] == pytest.approx(1.0, abs=1e-12)

    def test_axis_eigenvalues_rejected(self):
        # A = 0, B = 0: Hamiltonian eigenvalues on the imaginary axis
        with pytest.raises((CareError, ValueError)):
            solve_care(LqrProblem(0.0, 1e-30, 0.0 * np.eye(1), 1.0))


class TestLkModel:
    def test_care_residual_certificate_grade(self):
        params = VehicleParams()
        A1, B1, _ = lk_matrices(params, 20.0)
        Q = lk_weights(params, 20.0)
        sol = solve_care(LqrProblem(A1, B1, Q, np.array([[600.0]])))
        prob = LqrProblem(A1, B1, Q, np.array([[600.0]]))
        # independent residual recomputation
        res = care_residual(prob, sol.P)
        assert res <= 1e-8 * (1.0 + np.linalg.norm(sol.P) ** 2)
        assert sol.closed_loop_abscissa < 0.0


class TestNominalGain:
    def test_paper_defaults_stabilizing(self):
        sol = lk_nominal_gain(VehicleParams(), 20.0)
        eigs = np.linalg.eigvals
        assert sol.closed_loop_abscissa < 0.0

    def test_rank_one_weight_regularized(self):
        # derivative weight off: Q = k_p C'C only (rank 1) still solvable
        sol = lk_nominal_gain(VehicleParams(), 20.0, k_p=5.0, k_d=0.0)
        assert sol.closed_loop_abscissa < 0.0

    def test_pure_lateral_offset_weighting(self):
        sol = lk_nominal_gain(VehicleParams(), 20.0, k_p=1.0, k_d=0.0,
                              r_weight=1.0,
                              preview_row=np.array([1.0, 0.0, 0.0, 0.0]))
        assert sol.closed_loop_abscissa < 0.0


class TestInvariants:
    def _cases(self):
        rng = np.random.default_rng(2)
        cases = []
        params = VehicleParams()
        A1, B1, _ = lk_matrices(params, 22.0)
        cases.append(LqrProblem(A1, B1, lk_weights(params, 22.0),
                                np.array([[600.0]])))
        for _ in range(5):
            n = 3
            A = rng.normal(size=(n, n))
            B = rng.normal(size=(n, 1))
            M = rng.normal(size=(n, n))
            Q = M @ M.T + 0.1 * np.eye(n)
            cases.append(LqrProblem(A, B, Q, np.array([[1.0 + rng.uniform()]])))
        return cases

    def test_gain_consistency(self):
        for prob in self._cases():
            sol = solve_care(prob)
            K_direct = np.linalg.solve(prob.R, prob.B.T @ sol.P)
            assert np.abs(sol.K - K_direct).max() <= 1e-10 * (
                1.0 + np.abs(K_direct).max())

    def test_closed_loop_lyapunov(self):
        for prob in self._cases():
            sol = solve_care(prob)
            Acl = prob.A - prob.B @ sol.K
            lyap = Acl.T @ sol.P + sol.P @ Acl + prob.Q
            # (A-BK)'P + P(A-BK) <= -Q + slack: lyap must be <= slack * I
            top = np.linalg.eigvalsh((lyap + lyap.T) / 2).max()
            assert top <= 1e-8 * (1.0 + np.linalg.norm(sol.P) ** 2)

    def test_residual_bound_all_cases(self):
        for prob in self._cases():
            sol = solve_care(prob)
            assert sol.residual <= 1e-8 * (1.0 + np.linalg.norm(sol.P) ** 2)
