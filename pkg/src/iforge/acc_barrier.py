"""Physics-based cruise-control barrier with worst-case braking margins.

The barrier has the form  h(x2) = D - tau_d*v_f - D0 - m(v_f, v_l)  where
the extra margin m >= 0 is the worst future shortfall of the headway
constraint when the lead car brakes at its full allowance to standstill
and the follower answers with its effective comfort deceleration (comfort
bound corrected for drag at the slowest certified speed and for the
lateral-coupling term).  The margin is defined by a scalar maximization in
time; a brute-force oracle maximizes it numerically and is the normative
definition, while the shipped barrier evaluates the closed-form piecewise
solution and is cross-validated against the oracle on a grid.

The pieces are continuously differentiable and agree on region seams, so
the glued function supports the usual barrier-row machinery with the
admissible input set intersected across active pieces on a seam.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .vehicle import VehicleParams, drag_force


@dataclass(frozen=True)
class AccBarrierParams:
    vehicle: VehicleParams = field(default_factory=VehicleParams)
    tau_d: float = 1.8        # desired time headway [s]
    d0: float = 0.1           # standstill distance [m]
    a_f: float = 0.25         # follower comfort decel bound [g]
    a_f_prime: float = 0.25   # follower accel bound [g]
    a_l: float = 0.25         # lead decel bound [g]
    a_l_prime: float = 0.25   # lead accel bound [g]
    nur_bound: float = 0.3    # |nu*r| contract bound [m/s * rad/s]
    v_low: float = 15.0       # certified speed floor [m/s]
    v_high: float = 30.0      # certified speed ceiling [m/s]

    def __post_init__(self):
        if self.tau_d <= 0 or self.d0 < 0:
            raise ValueError("need tau_d > 0 and d0 >= 0")
        if min(self.a_f, self.a_f_prime, self.a_l, self.a_l_prime) <= 0:
            raise ValueError("acceleration bounds must be positive")

    @property
    def lead_decel(self) -> float:
        """Worst lead deceleration magnitude [m/s^2]."""
        return self.a_l * self.vehicle.g

    @property
    def u_min(self) -> float:
        return -self.a_f * self.vehicle.m * self.vehicle.g

    @property
    def u_max(self) -> float:
        return self.a_f_prime * self.vehicle.m * self.vehicle.g


def effective_decel(params: AccBarrierParams) -> float:
    """Effective follower deceleration bound [g-fraction].

    Comfort bound plus the drag floor (evaluated at v_low, the slowest
    certified speed) minus the worst lateral-coupling term.  Must come out
    positive for the barrier construction to make sense.
    """
    veh = params.vehicle
    a_hat = (params.a_f
             + drag_force(veh, params.v_low) / (veh.m * veh.g)
             - params.nur_bound / veh.g)
    if a_hat <= 0.0:
        raise ValueError(
            f"effective deceleration {a_hat:.4f} g is not positive: "
            "coupling bound dominates the comfort deceleration")
    return a_hat


def _speed_integral(v0: float, rate: float, t: float) -> float:
    """Integral of max(0, v0 - rate*s) over [0, t] (rate > 0)."""
    tc = min(t, v0 / rate)
    return v0 * tc - 0.5 * rate * tc * tc


def margin_shortfall(v_f: float, v_l: float, omega: float, ell: float,
                     tau: float, t: float) -> float:
    """Headway shortfall at time t under worst-case braking from (v_f, v_l)."""
    vf_t = max(0.0, v_f - omega * t)
    return (_speed_integral(v_f, omega, t) - _speed_integral(v_l, ell, t)
            + tau * (vf_t - v_f))


def worst_case_oracle(v_f: float, v_l: float, params: AccBarrierParams,
                      omega: float | None = None, grid: int = 4000) -> float:
    """Required barrier margin at (v_f, v_l): max_t of the shortfall.

    Numeric maximization over a fine time grid plus exact evaluation at the
    breakpoints (both stop times) and the interior stationary points of the
    shortfall; the result is >= 0 since the shortfall vanishes at t = 0.
    """
    if v_f < 0 or v_l < 0:
        raise ValueError("speeds must be nonnegative")
    omega = effective_decel(params) * params.vehicle.g if omega is None else omega
    ell = params.lead_decel
    tau = params.tau_d
    t_f = v_f / omega
    t_l = v_l / ell
    horizon = max(t_f, t_l, 1e-6) * 1.05 + tau
    candidates = list(np.linspace(0.0, horizon, grid))
    candidates += [t_f, t_l]
    # stationary points: phase with both moving, and lead-stopped phase
    if abs(omega - ell) > 1e-14:
        t1 = (v_f - v_l - tau * omega) / (omega - ell)
        if 0.0 < t1 < min(t_f, t_l):
            candidates.append(t1)
    t2 = t_f - tau
    if t_l <= t2 <= t_f:
        candidates.append(t2)
    best = 0.0
    for t in candidates:
        if t >= 0.0:
            best = max(best, margin_shortfall(v_f, v_l, omega, ell, tau, t))
    return best


# ----------------------------------------------------------------------
# glued piecewise barrier
# ----------------------------------------------------------------------

@dataclass
class Piece:
    """One continuously differentiable piece with its closed-region test."""

    name: str
    contains: Callable[[tuple], bool]     # closed region (seams in both pieces)
    value: Callable[[tuple], float]
    grad: Callable[[tuple], np.ndarray]
    gain: float = 2.0                     # per-region barrier gain


class PiecewiseBarrier:
    """Continuous function glued from C^1 pieces agreeing on region seams."""

    def __init__(self, pieces: list[Piece], seam_tol: float = 1e-9):
        if not pieces:
            raise ValueError("need at least one piece")
        self.pieces = pieces
        self.seam_tol = seam_tol

    def active(self, point) -> list[Piece]:
        act = [p for p in self.pieces if p.contains(point)]
        if not act:
            raise ValueError(f"point {point} not covered by any region")
        return act

    def value(self, point) -> float:
        act = self.active(point)
        vals = [p.value(point) for p in act]
        span = max(vals) - min(vals)
        if span > self.seam_tol * (1.0 + max(abs(v) for v in vals)):
            raise ValueError(
                f"pieces disagree at {point}: {dict((p.name, v) for p, v in zip(act, vals))}")
        return vals[0]


def build_barrier(params: AccBarrierParams, gain: float = 2.0) -> PiecewiseBarrier:
    """Closed-form margin as a glued piecewise function of (v_f, v_l).

    Case analysis on the stop times and the stationary point of the
    shortfall.  With the lead braking at least as hard as the follower
    (ell >= omega) two pieces arise: zero, and the lead-stopped-phase
    maximum.  With omega > ell a third piece (both-moving-phase maximum)
    appears between them.  Pieces agree on seams by construction.
    """
    omega = effective_decel(params) * params.vehicle.g
    ell = params.lead_decel
    tau = params.tau_d

    def val2(pt):
        v_f, v_l = pt
        return (v_f - tau * omega) ** 2 / (2 * omega) - v_l * v_l / (2 * ell)

    def grad2(pt):
        v_f, v_l = pt
        return np.array([(v_f - tau * omega) / omega, -v_l / ell])

    zero = lambda pt: 0.0
    gzero = lambda pt: np.array([0.0, 0.0])

    if omega <= ell:
        c = math.sqrt(omega / ell)
        in_zero = lambda pt: pt[0] <= tau * omega + c * pt[1]
        in_two = lambda pt: pt[0] >= tau * omega + c * pt[1]
        pieces = [
            Piece("rest", in_zero, zero, gzero, gain),
            Piece("lead_stopped", in_two, val2, grad2, gain),
        ]
    else:
        def val1(pt):
            v_f, v_l = pt
            return (v_f - v_l - tau * omega) ** 2 / (2 * (omega - ell))

        def grad1(pt):
            v_f, v_l = pt
            t1 = (v_f - v_l - tau * omega) / (omega - ell)
            return np.array([t1, -t1])

        in_zero = lambda pt: pt[0] - pt[1] <= tau * omega
        in_one = lambda pt: (pt[0] - pt[1] >= tau * omega
                             and ell * (pt[0] - tau * omega) <= omega * pt[1])
        in_two = lambda pt: ell * (pt[0] - tau * omega) >= omega * pt[1]
        pieces = [
            Piece("rest", in_zero, zero, gzero, gain),
            Piece("both_braking", in_one, val1, grad1, gain),
            Piece("lead_stopped", in_two, val2, grad2, gain),
        ]
    return PiecewiseBarrier(pieces)


# ----------------------------------------------------------------------
# barrier evaluation and admissible inputs
# ----------------------------------------------------------------------

def h_acc(x2, params: AccBarrierParams, barrier: PiecewiseBarrier) -> float:
    """Barrier value at x2 = (v_f, v_l, D)."""
    v_f, v_l, dist = x2
    return dist - params.tau_d * v_f - params.d0 - barrier.value((max(v_f, 0.0), max(v_l, 0.0)))


@dataclass
class AccRow:
    """One affine barrier row  a*u2 >= -b  i.e.  L_f h + L_g h u + gain*h >= 0."""

    piece: str
    h: float
    lie_drift: float   # L_{f+Delta f} h, worst-case in the lead acceleration
    lie_input: float   # L_g h (coefficient of u2)
    gain: float

    def admissible_max(self) -> float:
        """Largest u2 satisfying the row (lie_input < 0 always here)."""
        return (self.lie_drift + self.gain * self.h) / (-self.lie_input)


def barrier_rows(x2, nur: float, params: AccBarrierParams,
                 barrier: PiecewiseBarrier, worst_lead: bool = True,
                 a_lead: float | None = None) -> list[AccRow]:
    """Barrier rows of all active pieces at x2 (one per active region).

    The lead acceleration is not measured by the filter, so the row uses
    the worst admissible value -a_l*g unless an explicit one is given.
    """
    v_f, v_l, dist = x2
    veh = params.vehicle
    fr = drag_force(veh, v_f)
    if a_lead is None:
        a_lead = -params.lead_decel if worst_lead else 0.0
    rows = []
    pt = (max(v_f, 0.0), max(v_l, 0.0))
    for piece in barrier.active(pt):
        gv = piece.grad(pt)
        h_val = dist - params.tau_d * v_f - params.d0 - piece.value(pt)
        dh_vf = -params.tau_d - gv[0]
        dh_vl = -gv[1]
        lie_input = dh_vf / veh.m
        lie_drift = (dh_vf * (-fr / veh.m - nur)
                     + dh_vl * a_lead
                     + (v_l - v_f))
        rows.append(AccRow(piece.name, h_val, lie_drift, lie_input, piece.gain))
    return rows


def barrier_input_set(x2, nur: float, params: AccBarrierParams,
                      barrier: PiecewiseBarrier):
    """(h value, admissible u2 interval) with rows intersected across pieces.

    The contract assumes |nu*r| <= nur_bound; a violation is reported in
    the result, not silently accepted.  An empty interval flags a
    certificate/assumption breach.
    """
    rows = barrier_rows(x2, nur, params, barrier)
    h_val = min(r.h for r in rows)
    hi = min(r.admissible_max() for r in rows)
    lo = params.u_min
    report = {
        "assumption_ok": abs(nur) <= params.nur_bound + 1e-12,
        "empty": hi < lo,
        "witness": None if hi >= lo else (tuple(x2), nur, hi),
    }
    interval = (lo, min(hi, params.u_max))
    return h_val, interval, report


# ----------------------------------------------------------------------
# verification
# ----------------------------------------------------------------------

@dataclass
class AccVerifyReport:
    nonempty_ok: bool
    margin_nonneg_ok: bool
    row_ok: bool
    max_margin_violation: float
    worst_row: float
    witnesses: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.nonempty_ok and self.margin_nonneg_ok and self.row_ok


def verify_acc_properties(barrier: PiecewiseBarrier, params: AccBarrierParams,
                          grid: int = 120, tol: float = 1e-6) -> AccVerifyReport:
    """Grid checks of the three barrier properties.

    (1) some state has h >= 0; (2) the margin is nonnegative on the speed
    domain; (3) on the certified speed band v_f in [v_low, v_high], any
    lead speed, worst-case lead acceleration and coupling, the maximal
    deceleration keeps the gain-free barrier row nonnegative.  The row is
    independent of D, so the check runs on the (v_f, v_l) grid directly.
    """
    veh = params.vehicle
    witnesses = []

    far_state = (0.5 * (params.v_low + params.v_high),
                 0.5 * (params.v_low + params.v_high), 1e4)
    nonempty_ok = h_acc(far_state, params, barrier) >= 0.0

    v_fs = np.linspace(0.0, params.v_high, grid)
    v_ls = np.linspace(0.0, params.v_high, grid)
    worst_margin = 0.0
    for vf in v_fs:
        for vl in v_ls:
            m = barrier.value((vf, vl))
            if m < worst_margin:
                worst_margin = m
                witnesses.append(("margin", vf, vl, m))
    margin_ok = worst_margin >= -tol

    worst_row = math.inf
    vf_band = np.linspace(params.v_low, params.v_high, grid)
    for vf in vf_band:
        for vl in v_ls:
            for a_lead in (-params.lead_decel, params.a_l_prime * veh.g):
                for nur in (-params.nur_bound, params.nur_bound):
                    rows = barrier_rows((vf, vl, 0.0), nur, params, barrier,
                                        a_lead=a_lead)
                    for row in rows:
                        # gain-free existence row at the best input (max decel)
                        val = row.lie_drift + row.lie_input * params.u_min
                        if val < worst_row:
                            worst_row = val
                            if val < -tol:
                                witnesses.append(("row", vf, vl, a_lead, nur, val))
    row_ok = worst_row >= -tol
    return AccVerifyReport(nonempty_ok, margin_ok, row_ok,
                           worst_margin, worst_row, witnesses[-5:])


def worst_case_headway_check(params: AccBarrierParams, barrier: PiecewiseBarrier,
                             grid: int = 20, tol: float = 1e-3,
                             time_steps: int = 2000) -> tuple[bool, float]:
    """From boundary states (h = 0), worst-case braking keeps the headway law.

    Simulates the design worst case exactly (follower at the effective
    deceleration, lead at its full allowance, both floored at standstill)
    and checks D(t) >= tau_d*v_f(t) + D0 - tol throughout.
    """
    omega = effective_decel(params) * params.vehicle.g
    ell = params.lead_decel
    worst = math.inf
    for vf in np.linspace(0.0, params.v_high, grid):
        for vl in np.linspace(0.0, params.v_high, grid):
            d_start = params.tau_d * vf + params.d0 + barrier.value((vf, vl))
            horizon = max(vf / omega, vl / ell, 1e-6) * 1.05 + params.tau_d
            ts = list(np.linspace(0.0, horizon, time_steps)) + [vf / omega, vl / ell]
            if vl / ell <= vf / omega - params.tau_d <= vf / omega:
                ts.append(vf / omega - params.tau_d)
            for t in ts:
                if t < 0:
                    continue
                dist = d_start - (_speed_integral(vf, omega, t)
                                  - _speed_integral(vl, ell, t))
                slack = dist - params.tau_d * max(0.0, vf - omega * t) - params.d0
                worst = min(worst, slack)
    return worst >= -tol, worst


def margin_grid_csv(barrier: PiecewiseBarrier, params: AccBarrierParams,
                    path: str, grid: int = 200) -> None:
    """Dump the (v_f, v_l) -> margin grid for external plotting."""
    with open(path, "w") as fh:
        fh.write("vf,vl,margin\n")
        for vf in np.linspace(0.0, params.v_high, grid):
            for vl in np.linspace(0.0, params.v_high, grid):
                fh.write(f"{vf!r},{vl!r},{barrier.value((vf, vl))!r}\n")
