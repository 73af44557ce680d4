"""Closed-loop simulation of the coupled lateral/longitudinal vehicle.

Seven states: lateral (y, nu, dpsi, r) plus longitudinal (v_f, v_l, D).
The two safety filters run at a fixed control rate with zero-order-held
inputs; the held system is integrated with classical RK4 substeps.  Every
sample logs a trace record and runs the contract monitor; traces are
byte-reproducible for identical scenarios.
"""

from __future__ import annotations

import math
from bisect import bisect_right
from dataclasses import dataclass, field

import numpy as np

from .acc_barrier import AccBarrierParams, PiecewiseBarrier, h_acc
from .safety_filter import (FilterGains, MonitorContext, NominalController,
                            Violation, acc_filter, apply_excusals,
                            contract_monitor, lk_filter)
from .vehicle import LkBounds, VehicleParams, drag_force, lk_matrices

V_F_FLOOR = 0.1  # lateral model 1/v_f guard [m/s]


class StepProfile:
    """Piecewise-constant profile: value(t) = last breakpoint value <= t."""

    def __init__(self, points: list[tuple[float, float]]):
        if not points:
            points = [(0.0, 0.0)]
        pts = sorted((float(t), float(v)) for t, v in points)
        if pts[0][0] > 0.0:
            pts.insert(0, (0.0, 0.0))
        self.times = [t for t, _ in pts]
        self.values = [v for _, v in pts]

    def __call__(self, t: float) -> float:
        idx = bisect_right(self.times, t) - 1
        return self.values[max(idx, 0)]

    def segments(self, horizon: float) -> list[tuple[float, float, float]]:
        """(t_start, t_end, value) triples covering [0, horizon]."""
        out = []
        for i, t0 in enumerate(self.times):
            if t0 >= horizon:
                break
            t1 = self.times[i + 1] if i + 1 < len(self.times) else horizon
            out.append((t0, min(t1, horizon), self.values[i]))
        return out


@dataclass
class Scenario:
    x1_0: np.ndarray = field(default_factory=lambda: np.zeros(4))
    vf_0: float = 18.0
    vl_0: float = 17.0
    gap_0: float = 65.0
    horizon: float = 60.0
    ts: float = 0.01
    substeps: int = 2
    curvature: StepProfile = field(default_factory=lambda: StepProfile([(0.0, 0.0)]))
    lead_accel: StepProfile = field(default_factory=lambda: StepProfile([(0.0, 0.0)]))
    d_override: StepProfile | None = None   # injection toggle: raw d(t)
    clip_lead_accel: bool = True

    def __post_init__(self):
        self.x1_0 = np.asarray(self.x1_0, dtype=float)
        if self.horizon < 0 or self.ts <= 0 or self.substeps < 1:
            raise ValueError("need horizon >= 0, ts > 0, substeps >= 1")


@dataclass
class TraceRecord:
    t: float
    x1: np.ndarray
    x2: tuple[float, float, float]
    u1: float
    u2: float
    d: float
    a_lead: float
    h_lk: float
    h_acc: float
    headway: float
    delta1: float
    delta2: float
    flags: tuple = ()


CSV_HEADER = ("t,y,nu,dpsi,r,vf,vl,D,u1,u2,d,aL,h_lk,h_acc,headway,"
              "delta1,delta2,flags")


@dataclass
class SimTrace:
    records: list[TraceRecord]
    violations: list[Violation]
    truncated: bool = False

    def min_h_lk(self) -> float:
        return min(r.h_lk for r in self.records)

    def min_h_acc(self) -> float:
        return min(r.h_acc for r in self.records)

    def min_headway(self) -> float:
        return min(r.headway for r in self.records)

    def unexcused_guarantees(self) -> list[Violation]:
        return [v for v in self.violations
                if v.kind == "guarantee" and not v.excused]

    def assumption_violations(self) -> list[Violation]:
        return [v for v in self.violations if v.kind == "assumption"]

    def to_csv(self, path: str) -> None:
        with open(path, "w") as fh:
            fh.write(CSV_HEADER + "\n")
            for r in self.records:
                y, nu, dpsi, rr = r.x1
                vf, vl, dist = r.x2
                cells = [r.t, y, nu, dpsi, rr, vf, vl, dist, r.u1, r.u2,
                         r.d, r.a_lead, r.h_lk, r.h_acc, r.headway,
                         r.delta1, r.delta2]
                fh.write(",".join(repr(float(c)) for c in cells)
                         + "," + ";".join(r.flags) + "\n")

    def summary(self, params: VehicleParams) -> dict:
        mg = params.m * params.g
        return {
            "samples": len(self.records),
            "min_h_lk": self.min_h_lk(),
            "min_h_acc": self.min_h_acc(),
            "max_abs_u1": max(abs(r.u1) for r in self.records),
            "max_abs_u2_over_mg": max(abs(r.u2) / mg for r in self.records),
            "min_headway": self.min_headway(),
            "assumption_violations": len(self.assumption_violations()),
            "guarantee_violations": len(self.unexcused_guarantees()),
            "excused_violations": len([v for v in self.violations if v.excused]),
            "truncated": self.truncated,
        }


# ----------------------------------------------------------------------
# dynamics
# ----------------------------------------------------------------------

def lateral_derivative(x1, v_f: float, u1: float, d: float,
                       params: VehicleParams) -> np.ndarray:
    """Lateral-yaw field; v_f is floored at 0.1 m/s against the 1/v_f entries."""
    v = max(v_f, V_F_FLOOR)
    y, nu, dpsi, r = x1
    p = params
    dy = nu + v * dpsi
    dnu = (-(p.c_f + p.c_r) / (p.m * v) * nu
           + ((p.b * p.c_r - p.a * p.c_f) / (p.m * v) - v) * r
           + p.c_f / p.m * u1)
    ddpsi = r - d
    dr = ((p.b * p.c_r - p.a * p.c_f) / (p.i_z * v) * nu
          - (p.a ** 2 * p.c_f + p.b ** 2 * p.c_r) / (p.i_z * v) * r
          + p.a * p.c_f / p.i_z * u1)
    return np.array([dy, dnu, ddpsi, dr])


def longitudinal_derivative(x2, u2: float, a_lead: float, nur: float,
                            params: VehicleParams) -> np.ndarray:
    """Point-mass longitudinal field; drag enters once; the lead cannot reverse."""
    v_f, v_l, _ = x2
    dv_f = (u2 - drag_force(params, v_f)) / params.m - nur
    dv_l = a_lead if (v_l > 0.0 or a_lead > 0.0) else 0.0
    return np.array([dv_f, dv_l, v_l - v_f])


def coupled_derivative(state, u1, u2, d, a_lead, params) -> np.ndarray:
    x1 = state[:4]
    x2 = state[4:]
    dx1 = lateral_derivative(x1, state[4], u1, d, params)
    dx2 = longitudinal_derivative(x2, u2, a_lead, x1[1] * x1[3], params)
    return np.concatenate([dx1, dx2])


def rk4_step(deriv, state: np.ndarray, dt: float) -> np.ndarray:
    """Classical 4th-order step with the inputs frozen inside `deriv`."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    k1 = deriv(state)
    k2 = deriv(state + 0.5 * dt * k1)
    k3 = deriv(state + 0.5 * dt * k2)
    k4 = deriv(state + dt * k3)
    out = state + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.isfinite(out).all():
        raise FloatingPointError("non-finite state after RK4 step")
    return out


# ----------------------------------------------------------------------
# closed loop
# ----------------------------------------------------------------------

def run_closed_loop(scenario: Scenario, certificate, barrier: PiecewiseBarrier,
                    nominal: NominalController, gains: FilterGains,
                    params: VehicleParams, bounds: LkBounds,
                    acc_params: AccBarrierParams) -> SimTrace:
    """Simulate; deterministic for identical scenarios.

    Per sample: evaluate profiles, run both filters, hold inputs, integrate
    the coupled field, log, and monitor the contract.  Filter infeasibility
    truncates the trace with a diagnostic flag.
    """
    ctx = MonitorContext(params, bounds, acc_params)
    n_steps = int(round(scenario.horizon / scenario.ts))
    state = np.concatenate([scenario.x1_0,
                            [scenario.vf_0, scenario.vl_0, scenario.gap_0]])
    records: list[TraceRecord] = []
    violations: list[Violation] = []
    truncated = False

    h0_lk = certificate.h_value(state[:4])
    h0_acc = h_acc(state[4:], acc_params, barrier)
    if h0_lk < 0 or h0_acc < 0:
        import warnings
        warnings.warn(f"initial state outside safe sets (h_lk={h0_lk:.3g}, "
                      f"h_acc={h0_acc:.3g})", stacklevel=2)

    for k in range(n_steps + 1):
        t = k * scenario.ts
        v_f = state[4]
        if scenario.d_override is not None:
            d = scenario.d_override(t)
        else:
            d = v_f * scenario.curvature(t)
        a_lead = scenario.lead_accel(t)
        if scenario.clip_lead_accel:
            a_lead = min(max(a_lead, -acc_params.lead_decel),
                         acc_params.a_l_prime * params.g)
        x1 = state[:4]
        x2 = tuple(state[4:])
        nur = x1[1] * x1[3]

        out1 = lk_filter(x1, max(v_f, V_F_FLOOR), d, nominal, certificate,
                         gains, bounds, params)
        out2 = acc_filter(x2, nur, gains, acc_params, barrier)
        flags = list(out1.flags) + list(out2.flags)
        if v_f < V_F_FLOOR:
            flags.append("vf_clamped")

        h_lk_val = certificate.h_value(x1)
        h_acc_val = h_acc(x2, acc_params, barrier)
        headway = x2[2] / max(x2[0], 1e-9)
        step_viols = contract_monitor(x1, x2, out1.u, out2.u, d, a_lead,
                                      h_lk_val, h_acc_val, ctx)
        for v in step_viols:
            v.time = t
        violations.extend(step_viols)
        records.append(TraceRecord(t, x1.copy(), x2, out1.u, out2.u, d, a_lead,
                                   h_lk_val, h_acc_val, headway,
                                   out1.delta, out2.delta, tuple(flags)))
        if not (out1.feasible and out2.feasible):
            truncated = True
            break
        if k == n_steps:
            break
        dt = scenario.ts / scenario.substeps
        deriv = lambda s: coupled_derivative(s, out1.u, out2.u, d, a_lead, params)
        for _ in range(scenario.substeps):
            state = rk4_step(deriv, state, dt)

    apply_excusals(violations)
    return SimTrace(records, violations, truncated)


# ----------------------------------------------------------------------
# panel exports (per-subfigure plot data)
# ----------------------------------------------------------------------

def write_panels(trace: SimTrace, out_dir: str, params: VehicleParams,
                 bounds: LkBounds, acc_params: AccBarrierParams,
                 gains: FilterGains) -> list[str]:
    """Eight CSV panels: speeds, lateral states, force, steering, yaw rates,
    headway, and both barrier values."""
    import os
    os.makedirs(out_dir, exist_ok=True)
    mg = params.m * params.g
    recs = trace.records
    paths = []

    def panel(name, header, rows):
        path = os.path.join(out_dir, name)
        with open(path, "w") as fh:
            fh.write(header + "\n")
            for row in rows:
                fh.write(",".join(repr(float(c)) for c in row) + "\n")
        paths.append(path)

    panel("panel_a_speeds.csv", "t,vf,vl,vd",
          [(r.t, r.x2[0], r.x2[1], gains.v_d) for r in recs])
    panel("panel_b_lateral.csv", "t,y,nu,dpsi,r",
          [(r.t, *r.x1) for r in recs])
    panel("panel_c_wheel_force.csv", "t,u2_over_mg,lo,hi",
          [(r.t, r.u2 / mg, -acc_params.a_f, acc_params.a_f_prime) for r in recs])
    panel("panel_d_steering.csv", "t,u1,lo,hi",
          [(r.t, r.u1, -bounds.delta_f_max, bounds.delta_f_max) for r in recs])
    panel("panel_e_yaw_rates.csv", "t,r,d",
          [(r.t, r.x1[3], r.d) for r in recs])
    panel("panel_f_headway.csv", "t,headway,tau_d",
          [(r.t, r.headway, acc_params.tau_d) for r in recs])
    panel("panel_g_h_acc.csv", "t,h_acc", [(r.t, r.h_acc) for r in recs])
    panel("panel_h_h_lk.csv", "t,h_lk", [(r.t, r.h_lk) for r in recs])
    return paths
