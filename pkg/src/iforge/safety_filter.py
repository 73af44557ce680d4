"""Closed-form QP safety filters and the assume-guarantee contract monitor.

Per control step two scalar QPs run: a steering filter that stays close to
an LQR-with-feedforward nominal subject to the lane-keeping barrier row,
and a wheel-force filter that trades a speed-tracking CLF row off against
the cruise-control barrier row.  Both are one-dimensional strictly convex
piecewise-quadratic problems after eliminating the relaxation variables,
so the minimizers come from a finite candidate enumeration (stationary
points of each quadratic branch, kinks, interval endpoints) - no iterative
QP solver in the loop.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .acc_barrier import AccBarrierParams, PiecewiseBarrier, barrier_rows
from .vehicle import LkBounds, VehicleParams, drag_force, lk_matrices

ROW_TOL = 1e-9  # post-check slack on hard rows


@dataclass(frozen=True)
class FilterGains:
    gamma1: float = 2.0        # LK barrier-row gain [1/s]
    gamma2: float = 2.0        # ACC barrier-row gain [1/s]
    clf_rate: float = 10.0     # CLF decrease rate c [1/s]
    p1: float = 1000.0         # ACC relaxation weight
    p2: float = 1000.0         # LK relaxation weight
    p3: float = 100.0          # lateral-acceleration relaxation weight
    nudot_max: float = 0.25    # lateral-accel comfort bound [m/s^2]
    v_d: float = 22.0          # driver-set speed [m/s]
    lateral_accel_rows: bool = False
    speed_rows: bool = True

    def __post_init__(self):
        for name in ("gamma1", "gamma2", "clf_rate", "p1", "p2", "p3",
                     "nudot_max", "v_d"):
            if getattr(self, name) <= 0:
                raise ValueError(f"gain {name} must be positive")


@dataclass
class FilterOutput:
    u: float
    delta: float               # relaxation of the soft row
    cbf_row_active: bool
    clf_row_active: bool
    feasible: bool
    delta3: float = 0.0        # lateral-accel relaxation (LK only)
    flags: tuple = ()


@dataclass
class NominalController:
    """Soft-objective source: LQR-with-feedforward, CLF, or a legacy map."""

    kind: str                                  # lk_lqr_feedforward | acc_clf | external
    gain: np.ndarray | None = None             # K-bar for lk_lqr_feedforward
    func: Callable[..., float] | None = None   # external total map

    def lk_value(self, x1: np.ndarray, d: float) -> float:
        if self.kind == "lk_lqr_feedforward":
            x_ff = np.array([0.0, 0.0, 0.0, d])
            return float(-self.gain @ (np.asarray(x1) - x_ff))
        if self.kind == "external":
            return float(self.func(x1, d))
        raise ValueError(f"nominal kind {self.kind!r} is not a steering controller")


def lk_nominal(gain: np.ndarray) -> NominalController:
    return NominalController("lk_lqr_feedforward", gain=np.asarray(gain).ravel())


# ----------------------------------------------------------------------
# rows
# ----------------------------------------------------------------------

def lk_cbf_row(x1, v_f: float, d: float, certificate, gamma1: float,
               params: VehicleParams) -> tuple[float, float]:
    """(A_lk, b_lk) of the steering barrier row  A_lk*u <= b_lk.

    Evaluated with the true 1/v_f entries of the lateral model; no
    denominator clearing at runtime.
    """
    if v_f <= 0:
        raise ValueError("v_f must be positive")
    x1 = np.asarray(x1, dtype=float)
    A1, B1, E1 = lk_matrices(params, v_f)
    h = certificate.h_value(x1)
    grad = certificate.h_grad(x1)
    drift = float(grad @ (A1 @ x1 + E1 * d))
    a_lk = -float(grad @ B1)
    b_lk = drift + gamma1 * h
    return a_lk, b_lk


def lateral_accel_row(x1, v_f: float, params: VehicleParams) -> tuple[float, float]:
    """Affine lateral acceleration nu_dot = g0 + g1*u at the current state."""
    x1 = np.asarray(x1, dtype=float)
    A1, B1, _ = lk_matrices(params, v_f)
    g0 = float(A1[1] @ x1)
    g1 = float(B1[1])
    return g0, g1


# ----------------------------------------------------------------------
# scalar QP helpers
# ----------------------------------------------------------------------

def _row_interval(a: float, b: float, lo: float, hi: float):
    """Intersect a*u <= b with [lo, hi]; returns (lo, hi, degenerate_infeasible)."""
    if a > 0.0:
        return lo, min(hi, b / a), False
    if a < 0.0:
        return max(lo, b / a), hi, False
    return lo, hi, b < -ROW_TOL  # 0*u <= b: vacuous or contradictory


def project_filter(u_nom: float, row: tuple[float, float],
                   interval: tuple[float, float]) -> FilterOutput:
    """Minimum-change projection onto one hard row plus an input interval.

    u = u_nom when the row already holds, otherwise the halfspace boundary
    b/a; then clamped into the interval with the row re-checked.
    """
    a, b = row
    lo, hi = interval
    if not (math.isfinite(a) and math.isfinite(b)):
        raise ValueError("row coefficients must be finite")
    flags: list[str] = []
    if a == 0.0:
        u = min(max(u_nom, lo), hi)
        feasible = b >= -ROW_TOL
        if not feasible:
            flags.append("degenerate_row")
        return FilterOutput(u, u - u_nom, not feasible, False, feasible,
                            flags=tuple(flags))
    if a * u_nom <= b:
        u = u_nom
        active = False
    else:
        u = b / a
        active = True
    u_cl = min(max(u, lo), hi)
    feasible = a * u_cl <= b + ROW_TOL * (1.0 + abs(b))
    if u_cl != u:
        flags.append("input_clamped")
    if not feasible:
        flags.append("row_infeasible_within_bounds")
    return FilterOutput(u_cl, u_cl - u_nom, active, False, feasible,
                        flags=tuple(flags))


def lk_filter(x1, v_f: float, d: float, nominal: NominalController | float,
              certificate, gains: FilterGains, bounds: LkBounds,
              params: VehicleParams) -> FilterOutput:
    """Steering filter: min 1/2 u^2 + 1/2 p2 (u - u_nom)^2 (+ p3 lateral row)
    subject to the barrier row, clamped into the steering interval."""
    u_nom = (nominal.lk_value(x1, d) if isinstance(nominal, NominalController)
             else float(nominal))
    a, b = lk_cbf_row(x1, v_f, d, certificate, gains.gamma1, params)
    lo, hi, degenerate = _row_interval(a, b, -bounds.delta_f_max, bounds.delta_f_max)
    flags: list[str] = []
    if degenerate:
        # gradient vanished with the row violated; should not occur inside C_lk
        flags.append("degenerate_row")
        u = min(max(u_nom, -bounds.delta_f_max), bounds.delta_f_max)
        return FilterOutput(u, u - u_nom, True, False, False, flags=tuple(flags))
    if lo > hi:
        flags.append("row_infeasible_within_bounds")
        u = -bounds.delta_f_max if a > 0 else bounds.delta_f_max
        return FilterOutput(u, u - u_nom, True, False, False, flags=tuple(flags))

    p2 = gains.p2
    if not gains.lateral_accel_rows:
        u0 = p2 * u_nom / (1.0 + p2)
        u = min(max(u0, lo), hi)
        delta3 = 0.0
    else:
        g0, g1 = lateral_accel_row(x1, v_f, params)
        p3, cap = gains.p3, gains.nudot_max

        def excess(u):
            return max(0.0, abs(g0 + g1 * u) - cap)

        def cost(u):
            return (0.5 * u * u + 0.5 * p2 * (u - u_nom) ** 2
                    + 0.5 * p3 * excess(u) ** 2)

        cands = [lo, hi, p2 * u_nom / (1.0 + p2)]
        if g1 != 0.0:
            cands += [(cap - g0) / g1, (-cap - g0) / g1]  # kinks
            # stationary points of the two saturated branches
            for sgn in (+1.0, -1.0):
                denom = 1.0 + p2 + p3 * g1 * g1
                cands.append((p2 * u_nom - p3 * g1 * (g0 - sgn * cap)) / denom)
        u = min((min(max(c, lo), hi) for c in cands), key=cost)
        delta3 = excess(u)
    delta1 = u - u_nom
    active = abs(a * u - b) <= ROW_TOL * (1.0 + abs(b)) or (
        a != 0.0 and (u == lo or u == hi) and a * (u + math.copysign(1e-9, a)) > b)
    feasible = a * u <= b + ROW_TOL * (1.0 + abs(b))
    if not feasible:
        flags.append("row_infeasible_within_bounds")
    return FilterOutput(u, delta1, bool(active), False, feasible,
                        delta3=delta3, flags=tuple(flags))


def acc_filter(x2, nur: float, gains: FilterGains, acc_params: AccBarrierParams,
               barrier: PiecewiseBarrier) -> FilterOutput:
    """Wheel-force filter: min 1/2 u^2/m^2 - (F_r/m^2) u + 1/2 p1 delta^2
    subject to the hard barrier row(s) and the soft CLF row.

    The barrier rows are robust in the unmeasured lead acceleration; the
    admissible interval also honors the speed-band rows when enabled.
    """
    v_f, v_l, dist = x2
    veh = acc_params.vehicle
    m = veh.m
    fr = drag_force(veh, v_f)
    rows = barrier_rows(x2, nur, acc_params, barrier)
    flags: list[str] = []

    lo, hi = acc_params.u_min, acc_params.u_max
    if gains.speed_rows:
        hi = min(hi, fr + m * nur + m * gains.gamma2 * (acc_params.v_high - v_f))
        lo = max(lo, fr + m * nur - m * gains.gamma2 * (v_f - acc_params.v_low))
        if lo > hi:
            flags.append("speed_rows_conflict")
            lo, hi = acc_params.u_min, acc_params.u_max
    cap = min((r.lie_drift + r.gain * r.h) / (-r.lie_input) for r in rows)
    hard_hi = min(hi, cap)
    if hard_hi < lo:
        flags.append("row_infeasible_within_bounds")
        u = lo
        return FilterOutput(u, 0.0, True, False, False, flags=tuple(flags))

    # CLF row: LfV + LgV u + cV <= delta,  V = (v_f - v_d)^2
    verr = v_f - gains.v_d
    lf_v = 2.0 * verr * (-fr / m - nur)
    lg_v = 2.0 * verr / m
    cv = gains.clf_rate * verr * verr
    p1 = gains.p1

    def slack(u):
        return max(0.0, lf_v + lg_v * u + cv)

    def cost(u):
        return 0.5 * u * u / (m * m) - fr * u / (m * m) + 0.5 * p1 * slack(u) ** 2

    cands = [lo, hard_hi, fr]
    if lg_v != 0.0:
        cands.append((-cv - lf_v) / lg_v)  # kink
        denom = 1.0 / (m * m) + p1 * lg_v * lg_v
        cands.append((fr / (m * m) - p1 * lg_v * (lf_v + cv)) / denom)
    u = min((min(max(c, lo), hard_hi) for c in cands), key=cost)
    delta2 = slack(u)
    cbf_active = abs(u - cap) <= ROW_TOL * (1.0 + abs(cap))
    clf_active = delta2 > 0.0
    worst = min(r.lie_drift + r.lie_input * u + r.gain * r.h for r in rows)
    feasible = worst >= -ROW_TOL * (1.0 + abs(u))
    if not feasible:
        flags.append("row_infeasible_within_bounds")
    return FilterOutput(u, delta2, cbf_active, clf_active, feasible,
                        flags=tuple(flags))


# ----------------------------------------------------------------------
# contract monitor
# ----------------------------------------------------------------------

@dataclass
class Violation:
    name: str
    kind: str        # 'assumption' | 'guarantee'
    subsystem: str   # 'lk' | 'acc'
    value: float
    bound: float
    time: float = math.nan
    excused: bool = False

    def describe(self) -> str:
        ex = " (excused)" if self.excused else ""
        return (f"[{self.kind}/{self.subsystem}] {self.name}: value {self.value:.6g} "
                f"vs bound {self.bound:.6g} at t={self.time:.3f}s{ex}")


@dataclass
class MonitorContext:
    params: VehicleParams
    bounds: LkBounds
    acc_params: AccBarrierParams
    barrier_tol: float = 1e-3   # discretization slack on barrier nonnegativity


def contract_monitor(x1, x2, u1: float, u2: float, d: float, a_lead: float,
                     h_lk: float, h_acc_val: float,
                     ctx: MonitorContext) -> list[Violation]:
    """Per-step contract checks; assumption and guarantee breaches separated.

    The speed band and the lateral-coupling bound appear twice: once as the
    guarantee of the subsystem that owns them and once as the peer's
    assumption, so downstream excusal can be tracked per subsystem.
    """
    y, nu, dpsi, r = np.asarray(x1, dtype=float)
    v_f, v_l, dist = x2
    b = ctx.bounds
    acc = ctx.acc_params
    out: list[Violation] = []

    def check(cond, name, kind, subsystem, value, bound):
        if not cond:
            out.append(Violation(name, kind, subsystem, float(value), float(bound)))

    tol = 1e-9
    check(abs(d) <= b.d_max + tol, "d_bound", "assumption", "lk", d, b.d_max)
    check(-acc.lead_decel - tol <= a_lead <= acc.a_l_prime * acc.vehicle.g + tol,
          "lead_accel_bound", "assumption", "acc", a_lead, acc.lead_decel)
    vf_ok = b.v_low - tol <= v_f <= b.v_high + tol
    check(vf_ok, "vf_range", "guarantee", "acc", v_f, b.v_high)
    check(vf_ok, "vf_range", "assumption", "lk", v_f, b.v_high)
    nur_ok = abs(nu * r) <= b.nu_m * b.r_m + tol
    check(nur_ok, "nur_bound", "guarantee", "lk", nu * r, b.nu_m * b.r_m)
    check(nur_ok, "nur_bound", "assumption", "acc", nu * r, b.nu_m * b.r_m)
    check(abs(y) <= b.y_m + tol, "y_bound", "guarantee", "lk", y, b.y_m)
    check(abs(nu) <= b.nu_m + tol, "nu_bound", "guarantee", "lk", nu, b.nu_m)
    check(abs(dpsi) <= b.dpsi_m + tol, "dpsi_bound", "guarantee", "lk", dpsi, b.dpsi_m)
    check(abs(r) <= b.r_m + tol, "r_bound", "guarantee", "lk", r, b.r_m)
    check(h_lk >= -ctx.barrier_tol, "h_lk_nonneg", "guarantee", "lk", h_lk, 0.0)
    check(h_acc_val >= -ctx.barrier_tol, "h_acc_nonneg", "guarantee", "acc",
          h_acc_val, 0.0)
    check(dist >= acc.tau_d * v_f + acc.d0 - ctx.barrier_tol, "headway",
          "guarantee", "acc", dist, acc.tau_d * v_f + acc.d0)
    check(abs(u1) <= b.delta_f_max + tol, "u1_bound", "guarantee", "lk",
          u1, b.delta_f_max)
    check(acc.u_min - 1e-6 <= u2 <= acc.u_max + 1e-6, "u2_bound", "guarantee",
          "acc", u2, acc.u_max)
    return out


def apply_excusals(violations: list[Violation]) -> None:
    """Mark guarantee breaches excused once the owning side's assumptions broke.

    Excusal is sticky in time: the list must be in chronological order.
    """
    broken: set[str] = set()
    for v in violations:
        if v.kind == "assumption":
            broken.add(v.subsystem)
        elif v.subsystem in broken:
            v.excused = True
