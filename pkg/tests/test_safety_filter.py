import numpy as np
import pytest

from iforge.acc_barrier import barrier_rows, h_acc
from iforge.safety_filter import (FilterGains, MonitorContext, acc_filter,
                                  apply_excusals, contract_monitor,
                                  lateral_accel_row, lk_cbf_row, lk_filter,
                                  lk_nominal, project_filter)
from iforge.simulator import lateral_derivative
from iforge.vehicle import drag_force, lk_matrices

from qp_oracle import solve_qp


class TestLkCbfRow:
    def test_origin(self, stub_cert, params, gains):
        a, b = lk_cbf_row(np.zeros(4), 20.0, 0.0, stub_cert, gains.gamma1, params)
        # drift vanishes at the origin of the linear field
        assert b == pytest.approx(gains.gamma1 * stub_cert.h_value(np.zeros(4)))
        assert b > 0

    def test_finite_difference_oracle(self, stub_cert, params):
        rng = np.random.default_rng(0)
        for _ in range(20):
            x1 = rng.uniform(-0.5, 0.5, 4) * np.array([0.9, 1.0, 0.05, 0.3])
            v_f = rng.uniform(16, 29)
            d = rng.uniform(-0.1, 0.1)
            u = rng.uniform(-0.06, 0.06)
            a, b = lk_cbf_row(x1, v_f, d, stub_cert, 2.0, params)
            hdot_row = (b - 2.0 * stub_cert.h_value(x1)) + (-a) * u
            dt = 1e-7
            x1p = x1 + dt * lateral_derivative(x1, v_f, u, d, params)
            hdot_fd = (stub_cert.h_value(x1p) - stub_cert.h_value(x1)) / dt
            assert hdot_row == pytest.approx(hdot_fd, abs=1e-6 * (1 + abs(hdot_fd)))

    def test_gamma_term_vanishes_on_boundary(self, stub_cert, params):
        # scale a ray to land exactly on h = 0
        direction = np.array([0.6, 0.3, 0.02, 0.1])
        scaled = direction / stub_cert.scales
        lam = np.sqrt(stub_cert.kappa / (0.25 * float(scaled @ scaled)))
        x1 = direction * lam
        assert stub_cert.h_value(x1) == pytest.approx(0.0, abs=1e-12)
        a, b = lk_cbf_row(x1, 20.0, 0.05, stub_cert, 2.0, params)
        grad = stub_cert.h_grad(x1)
        A1, B1, E1 = lk_matrices(params, 20.0)
        assert b == pytest.approx(float(grad @ (A1 @ x1 + E1 * 0.05)))

    def test_nonpositive_speed_rejected(self, stub_cert, params):
        with pytest.raises(ValueError):
            lk_cbf_row(np.zeros(4), 0.0, 0.0, stub_cert, 2.0, params)


class TestLkFilter:
    def test_deep_interior_zero_nominal(self, stub_cert, params, bounds, gains):
        out = lk_filter(np.zeros(4), 20.0, 0.0, 0.0, stub_cert, gains, bounds, params)
        assert out.u == pytest.approx(0.0, abs=1e-12)
        assert out.feasible and not out.cbf_row_active

    def test_active_case_matches_qp(self, stub_cert, params, bounds, gains):
        rng = np.random.default_rng(1)
        checked = 0
        for _ in range(300):
            x1 = rng.uniform(-1.0, 1.0, 4) * stub_cert.scales
            v_f = rng.uniform(16, 29)
            d = rng.uniform(-0.1, 0.1)
            u_nom = rng.uniform(-0.08, 0.08)
            out = lk_filter(x1, v_f, d, u_nom, stub_cert, gains, bounds, params)
            if not out.feasible:
                continue
            a, b = lk_cbf_row(x1, v_f, d, stub_cert, gains.gamma1, params)
            # QP in (u, delta): min 1/2 u^2 + 1/2 p2 delta^2, u = u_nom + delta
            H = np.diag([1.0, gains.p2])
            G = np.array([[a, 0.0],
                          [1.0, 0.0], [-1.0, 0.0]])
            h = np.array([b, bounds.delta_f_max, bounds.delta_f_max])
            ref = solve_qp(H, np.zeros(2), G, h,
                           A=np.array([[1.0, -1.0]]), b=np.array([u_nom]))
            if ref is None:
                continue
            checked += 1
            assert out.u == pytest.approx(ref[0], abs=1e-8)
        assert checked > 200

    def test_p2_limit_returns_nominal(self, stub_cert, params, bounds):
        gains = FilterGains(p2=1e9)
        out = lk_filter(np.zeros(4), 20.0, 0.0, 0.01, stub_cert, gains, bounds, params)
        assert out.u == pytest.approx(0.01, rel=1e-8)


class TestAccFilter:
    def test_lead_far_tracks_clf(self, acc_params, acc_bar, gains):
        out = acc_filter((18.0, 30.0, 1e6), 0.0, gains, acc_params, acc_bar)
        assert out.feasible
        assert out.u > drag_force(acc_params.vehicle, 18.0)  # accelerating

    def test_boundary_braking_matches_qp(self, acc_params, acc_bar):
        gains = FilterGains(speed_rows=False)
        rng = np.random.default_rng(2)
        checked = 0
        for _ in range(300):
            v_f = rng.uniform(15.5, 29.5)
            v_l = rng.uniform(5.0, 29.0)
            from iforge.acc_barrier import build_barrier
            margin = acc_bar.value((v_f, v_l))
            dist = acc_params.tau_d * v_f + acc_params.d0 + margin + rng.uniform(0, 8)
            x2 = (v_f, v_l, dist)
            nur = rng.uniform(-0.3, 0.3)
            out = acc_filter(x2, nur, gains, acc_params, acc_bar)
            if not out.feasible:
                continue
            rows = barrier_rows(x2, nur, acc_params, acc_bar)
            m = acc_params.vehicle.m
            fr = drag_force(acc_params.vehicle, v_f)
            verr = v_f - gains.v_d
            lf_v = 2 * verr * (-fr / m - nur)
            lg_v = 2 * verr / m
            cv = gains.clf_rate * verr ** 2
            H = np.diag([1.0 / m ** 2, gains.p1])
            f = np.array([-fr / m ** 2, 0.0])
            G = [[ -r.lie_input, 0.0] for r in rows]
            hh = [r.lie_drift + r.gain * r.h for r in rows]
            G += [[lg_v, -1.0], [0.0, -1.0],
                  [1.0, 0.0], [-1.0, 0.0]]
            hh += [-(lf_v + cv), 0.0, acc_params.u_max, -acc_params.u_min]
            ref = solve_qp(H, f, np.array(G), np.array(hh))
            if ref is None:
                continue
            checked += 1
            assert out.u == pytest.approx(ref[0], abs=1e-8 * (1 + abs(ref[0])))
        assert checked > 200

    def test_drag_balance_at_set_speed(self, acc_params, acc_bar):
        gains = FilterGains(speed_rows=False)
        v_d = gains.v_d
        out = acc_filter((v_d, v_d, 1e6), 0.0, gains, acc_params, acc_bar)
        assert out.u == pytest.approx(drag_force(acc_params.vehicle, v_d), rel=1e-9)
        assert out.delta == pytest.approx(0.0, abs=1e-12)

    def test_boundary_interval_contains_comfort_decel(self, acc_params, acc_bar,
                                                      gains):
        # h = 0, closing: commanded force near the comfort deceleration
        v_f, v_l = 24.0, 16.0
        dist = acc_params.tau_d * v_f + acc_params.d0 + acc_bar.value((v_f, v_l))
        out = acc_filter((v_f, v_l, dist), 0.0, gains, acc_params, acc_bar)
        assert out.feasible and out.cbf_row_active
        assert out.u <= 0.0
        assert out.u >= acc_params.u_min - 1e-9


class TestProjectFilter:
    def test_identity_on_feasible(self):
        out = project_filter(0.3, (1.0, 1.0), (-2.0, 2.0))
        assert out.u == pytest.approx(0.3) and not out.cbf_row_active

    def test_projection_lands_on_boundary(self):
        out = project_filter(2.0, (1.0, 1.0), (-3.0, 3.0))
        assert out.u == pytest.approx(1.0)
        assert out.cbf_row_active

    def test_randomized_matches_qp(self):
        rng = np.random.default_rng(3)
        for _ in range(500):
            a = rng.normal()
            if abs(a) < 1e-3:
                continue
            b = rng.normal()
            u_nom = rng.normal()
            out = project_filter(u_nom, (a, b), (-10.0, 10.0))
            ref = solve_qp(np.array([[1.0]]), np.array([-u_nom]),
                           np.array([[a], [1.0], [-1.0]]),
                           np.array([b, 10.0, 10.0]))
            assert out.u == pytest.approx(ref[0], abs=1e-10 * (1 + abs(ref[0])))

    def test_degenerate_row_flagged(self):
        out = project_filter(0.0, (0.0, -1.0), (-1.0, 1.0))
        assert not out.feasible and "degenerate_row" in out.flags


class TestLateralAccelRows:
    def test_straight_road_inactive(self, stub_cert, params, bounds):
        gains = FilterGains(lateral_accel_rows=True)
        out = lk_filter(np.zeros(4), 20.0, 0.0, 0.0, stub_cert, gains, bounds, params)
        assert out.delta3 == pytest.approx(0.0, abs=1e-12)

    def test_aggressive_nominal_absorbed(self, stub_cert, params, bounds):
        gains = FilterGains(lateral_accel_rows=True)
        x1 = np.array([0.0, 0.4, 0.0, 0.1])
        out = lk_filter(x1, 20.0, 0.0, 0.06, stub_cert, gains, bounds, params)
        g0, g1 = lateral_accel_row(x1, 20.0, params)
        assert out.delta3 == pytest.approx(
            max(0.0, abs(g0 + g1 * out.u) - gains.nudot_max), abs=1e-9)
        a, b = lk_cbf_row(x1, 20.0, 0.0, stub_cert, gains.gamma1, params)
        assert a * out.u <= b + 1e-9

    def test_matches_qp_oracle(self, stub_cert, params, bounds):
        gains = FilterGains(lateral_accel_rows=True)
        rng = np.random.default_rng(4)
        checked = 0
        for _ in range(300):
            x1 = rng.uniform(-0.8, 0.8, 4) * stub_cert.scales
            v_f = rng.uniform(16, 29)
            d = rng.uniform(-0.1, 0.1)
            u_nom = rng.uniform(-0.08, 0.08)
            out = lk_filter(x1, v_f, d, u_nom, stub_cert, gains, bounds, params)
            if not out.feasible:
                continue
            a, b = lk_cbf_row(x1, v_f, d, stub_cert, gains.gamma1, params)
            g0, g1 = lateral_accel_row(x1, v_f, params)
            # variables (u, delta1, delta3)
            H = np.diag([1.0, gains.p2, gains.p3])
            G = np.array([
                [a, 0.0, 0.0],
                [g1, 0.0, -1.0],
                [-g1, 0.0, -1.0],
                [0.0, 0.0, -1.0],
                [1.0, 0.0, 0.0],
                [-1.0, 0.0, 0.0],
            ])
            hh = np.array([b, gains.nudot_max - g0, gains.nudot_max + g0, 0.0,
                           bounds.delta_f_max, bounds.delta_f_max])
            ref = solve_qp(H, np.zeros(3), G, hh,
                           A=np.array([[1.0, -1.0, 0.0]]), b=np.array([u_nom]))
            if ref is None:
                continue
            checked += 1
            assert out.u == pytest.approx(ref[0], abs=1e-8)
        assert checked > 200

    def test_disabled_identical_to_plain(self, stub_cert, params, bounds):
        g_off = FilterGains(lateral_accel_rows=False)
        g_on = FilterGains(lateral_accel_rows=True, nudot_max=1e9)
        rng = np.random.default_rng(5)
        for _ in range(50):
            x1 = rng.uniform(-0.5, 0.5, 4) * stub_cert.scales
            out_off = lk_filter(x1, 20.0, 0.01, 0.02, stub_cert, g_off, bounds, params)
            out_on = lk_filter(x1, 20.0, 0.01, 0.02, stub_cert, g_on, bounds, params)
            assert out_off.u == pytest.approx(out_on.u, abs=1e-12)


class TestNominalPassthrough:
    def test_project_filter_passthrough(self):
        rng = np.random.default_rng(6)
        for _ in range(200):
            a, b = rng.normal(), rng.normal()
            u_nom = rng.normal()
            if a * u_nom <= b and abs(u_nom) <= 5.0:
                out = project_filter(u_nom, (a, b), (-5.0, 5.0))
                assert out.u == u_nom  # exact passthrough


class TestLipschitz:
    def test_empirical_local_lipschitz(self, stub_cert, params, bounds, gains):
        rng = np.random.default_rng(7)
        ratios = []
        for _ in range(200):
            x1 = rng.uniform(-0.6, 0.6, 4) * stub_cert.scales
            v_f = rng.uniform(16, 29)
            d = rng.uniform(-0.08, 0.08)
            base = lk_filter(x1, v_f, d, 0.0, stub_cert, gains, bounds, params)
            dx = rng.normal(size=4)
            dx = dx / np.linalg.norm(dx) * 1e-4
            pert = lk_filter(x1 + dx, v_f, d, 0.0, stub_cert, gains, bounds, params)
            if base.cbf_row_active != pert.cbf_row_active:
                continue  # crossing an activation boundary
            ratios.append(abs(pert.u - base.u) / 1e-4)
        assert max(ratios) < 1e3  # finite empirical Lipschitz constant


class TestContractMonitor:
    def _ctx(self, params, bounds, acc_params):
        return MonitorContext(params, bounds, acc_params)

    def test_nominal_state_clean(self, params, bounds, acc_params):
        ctx = self._ctx(params, bounds, acc_params)
        out = contract_monitor(np.zeros(4), (20.0, 19.0, 60.0), 0.0, 100.0,
                               0.05, 0.0, 0.4, 10.0, ctx)
        assert out == []

    def test_injected_curvature_breach_is_assumption(self, params, bounds,
                                                     acc_params):
        ctx = self._ctx(params, bounds, acc_params)
        out = contract_monitor(np.zeros(4), (20.0, 19.0, 60.0), 0.0, 100.0,
                               0.2, 0.0, 0.4, 10.0, ctx)
        assert len(out) == 1
        v = out[0]
        assert v.name == "d_bound" and v.kind == "assumption"

    def test_forced_steering_violation(self, params, bounds, acc_params):
        ctx = self._ctx(params, bounds, acc_params)
        out = contract_monitor(np.zeros(4), (20.0, 19.0, 60.0), 0.1, 100.0,
                               0.0, 0.0, 0.4, 10.0, ctx)
        names = {(v.name, v.kind) for v in out}
        assert ("u1_bound", "guarantee") in names

    def test_excusal_is_sticky_and_directional(self, params, bounds, acc_params):
        ctx = self._ctx(params, bounds, acc_params)
        early = contract_monitor(np.zeros(4), (20.0, 19.0, 60.0), 0.0, 100.0,
                                 0.2, 0.0, 0.4, 10.0, ctx)  # lk assumption broken
        late = contract_monitor(np.array([1.0, 0.0, 0.0, 0.0]),
                                (20.0, 19.0, 60.0), 0.0, 100.0,
                                0.0, 0.0, 0.4, 10.0, ctx)   # lk guarantee broken
        acc_side = contract_monitor(np.zeros(4), (20.0, 19.0, 1.0), 0.0, 100.0,
                                    0.0, 0.0, 0.4, -5.0, ctx)  # acc guarantees
        for v in early + late + acc_side:
            v.time = 0.0
        seq = early + late + acc_side
        apply_excusals(seq)
        lk_guar = [v for v in seq if v.kind == "guarantee" and v.subsystem == "lk"]
        acc_guar = [v for v in seq if v.kind == "guarantee" and v.subsystem == "acc"]
        assert lk_guar and all(v.excused for v in lk_guar)
        assert acc_guar and not any(v.excused for v in acc_guar)
