"""Iterative SOS synthesis of the lane-keeping barrier certificate.

Pipeline: a feasibility program seeds a barrier around a saturated LQR
controller; then controller-improvement and barrier-improvement programs
alternate, each maximizing the level offset kappa of  h = kappa - h_hat
(with h_hat normalized to 1 at the all-ones scaled corner), until kappa
stalls.  A final bisection pushes the certified barrier-row gain as high
as the fixed pair (h, u) allows.

Everything runs in scaled coordinates (states mapped to the unit box,
speed affinely mapped to [-1, 1]) and with the 1/v_f denominators cleared
by multiplying the row through by v_f; certificates carry the scaling map
and expose physical-coordinate evaluation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import sosprog
from .conic import ConicSolution, SolverSettings
from .polyalg import Polynomial
from .riccati import lk_nominal_gain
from .sosprog import (LinPoly, SosCertificate, SosInfeasibleError, SosModel,
                      solve_model, verify_certificate)
from .vehicle import LkBounds, VehicleParams, lk_matrices

STATE_VARS = ("x1", "x2", "x3", "x4")
AUX_VARS = ("xd", "xv")


@dataclass
class LkSynthesisConfig:
    bounds: LkBounds = field(default_factory=LkBounds)
    params: VehicleParams = field(default_factory=VehicleParams)
    alpha: int = 2               # barrier degree (even)
    beta: int = 2                # controller degree
    gamma: float = 2.0           # barrier-row gain [1/s]
    rho0: float = 1e-2           # seeded inner ball level (scaled coords)
    epsilon: float = 1e-4        # strictness margin of the containment rows
    kappa_tol: float = 1e-3      # iteration convergence threshold
    max_iterations: int = 15
    v_nominal: float = 20.0      # LQR seed speed
    k_p: float = 5.0
    k_d: float = 0.4
    r_weight: float = 600.0
    seed_feedforward: bool = True  # feed the desired yaw rate into the seed
    p_ball: Polynomial | None = None  # positive definite p(x), default |x|^2 scaled
    solver_max_iters: int = 60_000
    solver_eps: float = 1e-7
    row_relax_weight: float = 1e6   # objective weight on the row relaxation
    zeta_tol: float = 1e-6          # accepted certified row relaxation

    def __post_init__(self):
        if self.alpha < 2 or self.alpha % 2:
            raise ValueError("alpha must be an even integer >= 2")
        if self.gamma <= 0 or self.rho0 <= 0 or self.epsilon <= 0:
            raise ValueError("gamma, rho0, epsilon must be positive")

    def solver_settings(self) -> SolverSettings:
        return SolverSettings(eps_primal=self.solver_eps, eps_dual=self.solver_eps,
                              max_iters=self.solver_max_iters)


# ----------------------------------------------------------------------
# generic synthesis problem (the lane-keeping instance and the test toys
# both reduce to this shape)
# ----------------------------------------------------------------------

@dataclass
class SynthesisProblem:
    """Scaled, denominator-cleared data for the barrier programs.

    drift/gctrl are the cleared field pieces: the barrier row is
    <grad h, drift + gctrl*u> + gamma*h*clear, required on the unit box of
    the state variables times the unit box of the auxiliary variables.
    """

    state_vars: tuple[str, ...]
    aux_vars: tuple[str, ...]
    drift: list[Polynomial]
    gctrl: list[Polynomial]
    clear: Polynomial
    seed_gain: np.ndarray                 # z = seed_gain . x (+ feedforward)
    seed_ff: dict[str, float]            # aux-variable terms subtracted from z
    u_max: float

    @property
    def all_vars(self) -> tuple[str, ...]:
        return self.state_vars + self.aux_vars

    def domain_polys(self) -> list[Polynomial]:
        out = []
        for v in self.all_vars:
            pv = Polynomial.variable(v, self.all_vars)
            out.append(1.0 - pv * pv)
        return out

    def seed_z(self) -> Polynomial:
        z = Polynomial.zero(self.all_vars)
        for k, v in zip(self.seed_gain, self.state_vars):
            z = z + float(k) * Polynomial.variable(v, self.all_vars)
        for name, coef in self.seed_ff.items():
            z = z - float(coef) * Polynomial.variable(name, self.all_vars)
        return z


def lk_problem(config: LkSynthesisConfig) -> SynthesisProblem:
    """Build the scaled lane-keeping instance with the LQR seed."""
    b = config.bounds
    if b.delta_f_max <= 0:
        raise SosInfeasibleError("no control authority: steering bound is zero")
    scales = b.state_scales
    v_mid = 0.5 * (b.v_high + b.v_low)
    v_rad = 0.5 * (b.v_high - b.v_low)
    allv = STATE_VARS + AUX_VARS
    xv = Polynomial.variable("xv", allv)
    xd = Polynomial.variable("xd", allv)
    x = [Polynomial.variable(v, allv) for v in STATE_VARS]
    vpoly = v_mid + v_rad * xv

    p = config.params
    k1 = (p.c_f + p.c_r) / p.m
    k2 = (p.b * p.c_r - p.a * p.c_f) / p.m
    k3 = (p.b * p.c_r - p.a * p.c_f) / p.i_z
    k4 = (p.a ** 2 * p.c_f + p.b ** 2 * p.c_r) / p.i_z
    zero = Polynomial.zero(allv)
    one = Polynomial.constant(allv, 1.0)
    # v_f * A1(v_f), entrywise polynomial in the scaled speed
    a_poly = [[zero] * 4 for _ in range(4)]
    a_poly[0][1] = vpoly
    a_poly[0][2] = vpoly * vpoly
    a_poly[1][1] = -k1 * one
    a_poly[1][3] = k2 * one - vpoly * vpoly
    a_poly[2][3] = vpoly
    a_poly[3][1] = k3 * one
    a_poly[3][3] = -k4 * one
    _, B1, E1 = lk_matrices(p, config.v_nominal)

    drift, gctrl = [], []
    for i in range(4):
        row = zero
        for j in range(4):
            row = row + a_poly[i][j] * (scales[j] / scales[i]) * x[j]
        row = row + (E1[i] * b.d_max / scales[i]) * (vpoly * xd)
        drift.append(row)
        gctrl.append((B1[i] / scales[i]) * vpoly)

    lqr = lk_nominal_gain(p, config.v_nominal, config.k_p, config.k_d,
                          config.r_weight)
    k_scaled = (lqr.K @ np.diag(scales)).ravel()
    seed_ff = {}
    if config.seed_feedforward:
        seed_ff["xd"] = float(lqr.K[0, 3] * b.d_max)
    return SynthesisProblem(STATE_VARS, AUX_VARS, drift, gctrl, vpoly,
                            k_scaled, seed_ff, b.delta_f_max)


# ----------------------------------------------------------------------
# shared constraint builders
# ----------------------------------------------------------------------

def _even_cover_degree(deg: int) -> int:
    """Lowest multiplier degree making 'deg' coverable by (1 - v^2)*s terms."""
    return max(2, 2 * math.ceil(deg / 2) - 2)


def _state_box(problem: SynthesisProblem) -> list[Polynomial]:
    out = []
    for v in problem.state_vars:
        pv = Polynomial.variable(v, problem.state_vars)
        out.append(pv * pv)  # bound poly is (1 - pv^2); kept split for clarity
    return out


def _containment_rows(model: SosModel, problem: SynthesisProblem,
                      h_expr: LinPoly, epsilon: float, tag: str = "") -> None:
    """-h + (1 - x_i^2) s_i - eps in Sigma[x] for every state bound."""
    for i, sq in enumerate(_state_box(problem)):
        s_i = model.sos_poly(f"s_face{i}{tag}", problem.state_vars, 0)
        model.add_sos(f"face{i}{tag}", -h_expr + s_i.poly() * (1.0 - sq) - epsilon)


def _as_lin(p) -> LinPoly:
    return p if isinstance(p, LinPoly) else LinPoly.from_poly(p)


def _barrier_row(problem: SynthesisProblem, grad, h_term: LinPoly, gamma: float,
                 u_term=None, seed: bool = False, eta: float = 0.0) -> LinPoly:
    """The cleared barrier-row expression before multiplier subtraction.

    Seed form: the saturated controller's denominator is cleared by the
    weight w = 1 + eta z^2, which multiplies the drift and gain terms while
    the input term carries the bare -z numerator.
    """
    allv = problem.all_vars
    acc = LinPoly.zero(allv)
    if seed:
        z = problem.seed_z()
        w = 1.0 + eta * (z * z)
        for g_i, f_i in zip(grad, problem.drift):
            acc = acc + _as_lin(g_i) * (f_i * w)
        for g_i, b_i in zip(grad, problem.gctrl):
            acc = acc + _as_lin(g_i) * (b_i * (-1.0 * z))
        return acc + h_term * (w * problem.clear) * gamma
    for g_i, f_i in zip(grad, problem.drift):
        acc = acc + _as_lin(g_i) * f_i
    for g_i, b_i in zip(grad, problem.gctrl):
        if isinstance(u_term, LinPoly):
            if isinstance(g_i, LinPoly):
                raise TypeError("grad and u cannot both carry decisions")
            acc = acc + u_term * (g_i * b_i)
        else:
            acc = acc + _as_lin(g_i) * (b_i * u_term)
    return acc + h_term * problem.clear * gamma


def _subtract_multipliers(model: SosModel, problem: SynthesisProblem,
                          expr: LinPoly, tag: str) -> LinPoly:
    deg = _even_cover_degree(expr.degree)
    allv = problem.all_vars
    for i, dom in enumerate(problem.domain_polys()):
        s = model.sos_poly(f"s_dom{i}_{tag}", allv, deg)
        expr = expr - s.poly() * dom
    return expr


def _h_linpoly(kappa, h_hat: Polynomial, variables) -> LinPoly:
    """h = kappa - h_hat as a decision-affine polynomial."""
    lp = -LinPoly.from_poly(h_hat.embed(variables))
    return lp + kappa.lin(variables)


# ----------------------------------------------------------------------
# the three programs
# ----------------------------------------------------------------------

@dataclass
class StageResult:
    kappa: float
    h_hat: Polynomial | None
    controller: Polynomial | None
    certificates: dict[str, SosCertificate]
    solution: ConicSolution
    zeta: float = 0.0   # certified row relaxation: row >= -zeta on the domain


def init_p0(problem: SynthesisProblem, config: LkSynthesisConfig,
            rho0: float | None = None, epsilon: float | None = None) -> StageResult:
    """Feasibility seed: find any barrier valid for the saturated controller.

    Constraints: the p<=rho0 ball sits inside {h >= 0}; the state-bound
    containment rows; the barrier row for the seed, denominator-cleared by
    both the speed factor and the controller's saturation weight.
    """
    rho0 = config.rho0 if rho0 is None else rho0
    epsilon = config.epsilon if epsilon is None else epsilon
    if problem.u_max <= 0:
        raise SosInfeasibleError("no control authority: input bound is zero")
    eta = 1.0 / (2.0 * problem.u_max) ** 2
    model = SosModel()
    h = model.poly("h", problem.state_vars, config.alpha)
    h_state = h.poly()
    p_ball = config.p_ball
    if p_ball is None:
        p_ball = Polynomial.zero(problem.state_vars)
        for v in problem.state_vars:
            pv = Polynomial.variable(v, problem.state_vars)
            p_ball = p_ball + pv * pv
    s0 = model.sos_poly("s_ball", problem.state_vars, 0)
    model.add_sos("ball", h_state - s0.poly() * (rho0 - p_ball))
    _containment_rows(model, problem, h_state, epsilon)
    grad = [h.poly().embed(problem.all_vars).diff(v) for v in problem.state_vars]
    row = _barrier_row(problem, grad, h.poly().embed(problem.all_vars),
                       config.gamma, seed=True, eta=eta)
    # certified relaxation: tight configurations are solved in the relaxed
    # sense row >= -zeta with zeta minimized and reported
    zeta = model.scalar("zeta")
    model.add_ineq_ge({zeta.handle: 1.0}, 0.0)
    expr = _subtract_multipliers(model, problem, row, "row") + zeta.lin(problem.all_vars)
    model.add_sos("row", expr)
    # keep the free scale pinned: h(0) <= 1
    model.add_ineq_ge({h.handles[0]: -1.0}, -1.0)
    model.maximize({zeta.handle: -1.0})
    solution, ext = solve_model(model, config.solver_settings())
    zeta_val = max(ext.scalars["zeta"], 0.0)
    if zeta_val > config.zeta_tol:
        raise SosInfeasibleError(
            f"seed program needs row relaxation {zeta_val:.3e} "
            f"(> {config.zeta_tol:g}); strictness margin too large")
    h_poly = ext.polys["h"]
    ones = {v: 1.0 for v in problem.state_vars}
    kappa = 1.0 + h_poly.evaluate(ones)
    h_hat = kappa - h_poly  # normalized: h_hat(1,...,1) = 1
    return StageResult(kappa, h_hat, None, ext.certificates, solution, zeta_val)


def _solve_staged(build, config: LkSynthesisConfig,
                  warm: ConicSolution | None = None):
    """Two-phase solve: minimize the row relaxation, then re-solve with the
    relaxation pinned just above its floor and the real objective active.

    Pinning restores a strict interior for tight configurations, which keeps
    the first-order solver out of its weakly-feasible stall regime; the
    pinned value is the certified row relaxation.
    """
    model_a = build(None)
    sol_a, ext_a = solve_model(model_a, config.solver_settings(), warm_start=warm)
    zeta = max(ext_a.scalars["zeta"], 0.0)
    z_fix = zeta * 1.05 + 1e-10
    model_b = build(z_fix)
    sol_b, ext_b = solve_model(model_b, config.solver_settings(), warm_start=sol_a)
    return sol_b, ext_b, z_fix


def improve_controller_p1(problem: SynthesisProblem, config: LkSynthesisConfig,
                          h_hat: Polynomial, kappa_old: float,
                          beta: int | None = None,
                          warm: ConicSolution | None = None,
                          epsilon: float | None = None) -> StageResult:
    """Fix the barrier shape, maximize kappa over (kappa, controller, multipliers).

    Adds the containment-of-previous-set row, the barrier row with the free
    polynomial controller, and the two input-bound rows keeping |u| within
    its limit over the whole domain box.
    """
    beta = config.beta if beta is None else beta
    epsilon = config.epsilon if epsilon is None else epsilon
    allv = problem.all_vars

    def build(z_fix: float | None) -> SosModel:
        model = SosModel()
        kappa = model.scalar("kappa")
        zeta = model.scalar("zeta")
        u = model.poly("u", allv, beta)
        h_expr = _h_linpoly(kappa, h_hat, problem.state_vars)
        s0 = model.sos_poly("s_keep", problem.state_vars, 0)
        h_old = kappa_old - h_hat
        model.add_sos("keep", h_expr - s0.poly() * h_old)
        _containment_rows(model, problem, h_expr, epsilon)
        grad = [(-h_hat).embed(allv).diff(v) for v in problem.state_vars]
        row = _barrier_row(problem, grad, _h_linpoly(kappa, h_hat, allv),
                           config.gamma, u_term=u.poly())
        model.add_sos("row", _subtract_multipliers(model, problem, row, "row")
                      + zeta.lin(allv))
        for sign, tag in ((1.0, "ub_hi"), (-1.0, "ub_lo")):
            expr = u.poly() * sign + problem.u_max
            model.add_sos(tag, _subtract_multipliers(model, problem, expr, tag))
        model.add_ineq_ge({zeta.handle: 1.0}, 0.0)
        if z_fix is None:
            # keep kappa anchored while measuring the relaxation floor
            model.add_eq({kappa.handle: 1.0}, kappa_old)
            model.maximize({zeta.handle: -1.0})
        else:
            model.add_eq({zeta.handle: 1.0}, z_fix)
            # implied by the containment row; pinned to clamp solver noise
            model.add_ineq_ge({kappa.handle: 1.0}, kappa_old)
            model.maximize({kappa.handle: 1.0})
        return model

    solution, ext, zeta = _solve_staged(build, config, warm)
    if zeta > config.zeta_tol:
        raise SosInfeasibleError(
            f"controller program needs row relaxation {zeta:.3e} "
            f"(> {config.zeta_tol:g}); consider raising the controller degree")
    return StageResult(ext.scalars["kappa"], h_hat, ext.polys["u"],
                       ext.certificates, solution, zeta)


def improve_barrier_p2(problem: SynthesisProblem, config: LkSynthesisConfig,
                       h_hat_old: Polynomial, kappa_old: float,
                       controller: Polynomial,
                       warm: ConicSolution | None = None,
                       epsilon: float | None = None) -> StageResult:
    """Fix the controller, maximize kappa over (kappa, h_hat, multipliers).

    The barrier shape is re-normalized through the equality
    h_hat(1,...,1) = 1, which pins the scale that kappa is measured in.
    """
    epsilon = config.epsilon if epsilon is None else epsilon
    allv = problem.all_vars

    def build(z_fix: float | None) -> SosModel:
        model = SosModel()
        kappa = model.scalar("kappa")
        zeta = model.scalar("zeta")
        h_hat = model.poly("h_hat", problem.state_vars, config.alpha)
        model.add_eq({h: 1.0 for h in h_hat.handles}, 1.0)  # sum of coeffs = 1
        h_expr = kappa.lin(problem.state_vars) - h_hat.poly()
        s0 = model.sos_poly("s_keep", problem.state_vars, 0)
        h_old = kappa_old - h_hat_old
        model.add_sos("keep", h_expr - s0.poly() * h_old)
        _containment_rows(model, problem, h_expr, epsilon)
        grad = [(-1.0) * h_hat.poly().embed(allv).diff(v)
                for v in problem.state_vars]
        h_all = kappa.lin(allv) - h_hat.poly().embed(allv)
        row = _barrier_row(problem, grad, h_all, config.gamma, u_term=controller)
        model.add_sos("row", _subtract_multipliers(model, problem, row, "row")
                      + zeta.lin(allv))
        model.add_ineq_ge({zeta.handle: 1.0}, 0.0)
        if z_fix is None:
            model.add_eq({kappa.handle: 1.0}, kappa_old)
            model.maximize({zeta.handle: -1.0})
        else:
            model.add_eq({zeta.handle: 1.0}, z_fix)
            # implied by the containment row; pinned to clamp solver noise
            model.add_ineq_ge({kappa.handle: 1.0}, kappa_old)
            model.maximize({kappa.handle: 1.0})
        return model

    solution, ext, zeta = _solve_staged(build, config, warm)
    return StageResult(ext.scalars["kappa"], ext.polys["h_hat"], controller,
                       ext.certificates, solution, zeta)


def gamma_feasible(problem: SynthesisProblem, config: LkSynthesisConfig,
                   h_hat: Polynomial, kappa: float, controller: Polynomial,
                   gamma: float, max_iters: int = 25_000):
    """Feasibility of the barrier row at a trial gain, h and u fixed."""
    allv = problem.all_vars
    model = SosModel()
    grad = [(-h_hat).embed(allv).diff(v) for v in problem.state_vars]
    h_all = LinPoly.from_poly((kappa - h_hat).embed(allv))
    row = _barrier_row(problem, grad, h_all, gamma, u_term=controller)
    zeta = model.scalar("zeta")
    model.add_ineq_ge({zeta.handle: 1.0}, 0.0)
    model.add_sos("row", _subtract_multipliers(model, problem, row, "row")
                  + zeta.lin(allv))
    model.maximize({zeta.handle: -1.0})
    settings = replace(config.solver_settings(), max_iters=max_iters)
    try:
        solution, ext = solve_model(model, settings)
    except SosInfeasibleError:
        return None
    if solution.status != "optimal" or ext.scalars["zeta"] > config.zeta_tol:
        return None
    return ext.certificates


def maximize_gamma(problem: SynthesisProblem, config: LkSynthesisConfig,
                   h_hat: Polynomial, kappa: float, controller: Polynomial,
                   resolution: float = 1e-3, growth_cap: float = 64.0):
    """Largest certified row gain by bisection; the synthesis gain is the floor.

    Each probe is a feasibility program in the multipliers alone (the gain
    enters bilinearly with h, so it is bisected rather than optimized).
    Returns (gamma_star, certificates at gamma_star).
    """
    lo = config.gamma
    certs = gamma_feasible(problem, config, h_hat, kappa, controller, lo)
    if certs is None:
        # the synthesis gain is feasible by construction; numerical refusal
        # here means the solver budget was too small - report the floor
        return lo, {}
    hi = lo * 2.0
    best = (lo, certs)
    while hi <= config.gamma * growth_cap:
        trial = gamma_feasible(problem, config, h_hat, kappa, controller, hi)
        if trial is None:
            break
        best = (hi, trial)
        hi *= 2.0
    else:
        return best
    lo_b, hi_b = best[0], hi
    while hi_b - lo_b > resolution * max(1.0, lo_b):
        mid = 0.5 * (lo_b + hi_b)
        trial = gamma_feasible(problem, config, h_hat, kappa, controller, mid)
        if trial is None:
            hi_b = mid
        else:
            best = (mid, trial)
            lo_b = mid
    return best


# ----------------------------------------------------------------------
# the certificate object
# ----------------------------------------------------------------------

@dataclass
class BarrierCertificate:
    alpha: int
    kappa: float
    h_hat: Polynomial                     # scaled coordinates, h_hat(1,..,1)=1
    gamma_synth: float
    gamma_max: float
    controller: Polynomial | None         # diagnostic only
    scales: np.ndarray
    d_max: float
    v_low: float
    v_high: float
    epsilon: float
    kappa_history: list[float]
    iterations: int
    certificates: dict[str, SosCertificate] = field(default_factory=dict)

    def __post_init__(self):
        self.scales = np.asarray(self.scales, dtype=float)
        self._grad_polys = [self.h_hat.diff(v) for v in self.h_hat.variables]

    # -- evaluation (physical coordinates) ------------------------------

    def _scaled(self, x1) -> dict[str, float]:
        x1 = np.asarray(x1, dtype=float)
        xs = x1 / self.scales
        return dict(zip(self.h_hat.variables, xs))

    def h_value(self, x1) -> float:
        return self.kappa - self.h_hat.evaluate(self._scaled(x1))

    def h_grad(self, x1) -> np.ndarray:
        pt = self._scaled(x1)
        return np.array([-g.evaluate(pt) / s
                         for g, s in zip(self._grad_polys, self.scales)])

    def h_value_scaled_array(self, pts: dict[str, np.ndarray]) -> np.ndarray:
        return self.kappa - self.h_hat.evaluate_array(pts)

    # -- persistence -----------------------------------------------------

    def save(self, path: str) -> None:
        lines = ["# iforge lane-keeping barrier certificate v1", "[meta]"]
        meta = {
            "alpha": self.alpha, "kappa": repr(self.kappa),
            "gamma_synth": repr(self.gamma_synth), "gamma_max": repr(self.gamma_max),
            "epsilon": repr(self.epsilon),
            "iterations": self.iterations,
            "kappa_history": " ".join(repr(k) for k in self.kappa_history),
            "scales": " ".join(repr(s) for s in self.scales.tolist()),
            "d_max": repr(self.d_max), "v_low": repr(self.v_low),
            "v_high": repr(self.v_high),
            "state_vars": " ".join(self.h_hat.variables),
        }
        for k, v in meta.items():
            lines.append(f"{k} = {v}")
        lines.append("[poly h_hat]")
        lines.append(self.h_hat.to_text())
        if self.controller is not None:
            lines.append("[poly controller]")
            lines.append("vars = " + " ".join(self.controller.variables))
            lines.append(self.controller.to_text())
        for name, cert in self.certificates.items():
            lines.append(f"[gram {name}]")
            lines.append("vars = " + " ".join(cert.variables))
            lines.append("basis =")
            for mono in cert.basis:
                lines.append(" ".join(str(e) for e in mono))
            lines.append("matrix =")
            for row in np.asarray(cert.gram):
                lines.append(" ".join(repr(float(v)) for v in row))
            lines.append("expression =")
            lines.append(cert.expression.to_text())
        lines.append("[end]")
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path: str) -> "BarrierCertificate":
        with open(path) as fh:
            text = fh.read()
        return parse_certificate(text)


def parse_certificate(text: str) -> BarrierCertificate:
    lines = [ln.rstrip() for ln in text.splitlines()]
    meta: dict[str, str] = {}
    polys: dict[str, Polynomial] = {}
    certs: dict[str, SosCertificate] = {}
    i = 0
    section = None
    buf: list[str] = []
    cur_name = ""
    cur_vars: tuple[str, ...] = ()

    def flush_poly():
        nonlocal buf
        if section and section.startswith("poly "):
            name = section.split(" ", 1)[1]
            body = [ln for ln in buf if not ln.startswith("vars =")]
            vars_ln = [ln for ln in buf if ln.startswith("vars =")]
            variables = (tuple(vars_ln[0].split("=", 1)[1].split()) if vars_ln
                         else tuple(meta["state_vars"].split()))
            polys[name] = Polynomial.from_text("\n".join(body), variables)
        buf = []

    def flush_gram():
        nonlocal buf
        if not (section and section.startswith("gram ")):
            buf = []
            return
        name = section.split(" ", 1)[1]
        mode = None
        variables: tuple[str, ...] = ()
        basis: list[tuple[int, ...]] = []
        rows: list[list[float]] = []
        expr_lines: list[str] = []
        for ln in buf:
            if ln.startswith("vars ="):
                variables = tuple(ln.split("=", 1)[1].split())
            elif ln.strip() == "basis =":
                mode = "basis"
            elif ln.strip() == "matrix =":
                mode = "matrix"
            elif ln.strip() == "expression =":
                mode = "expr"
            elif ln.strip():
                if mode == "basis":
                    basis.append(tuple(int(v) for v in ln.split()))
                elif mode == "matrix":
                    rows.append([float(v) for v in ln.split()])
                elif mode == "expr":
                    expr_lines.append(ln)
        expr = Polynomial.from_text("\n".join(expr_lines), variables)
        certs[name] = SosCertificate(name, variables, basis,
                                     np.array(rows), expr)
        buf = []

    while i < len(lines):
        ln = lines[i]
        if ln.startswith("[") and ln.endswith("]"):
            if section and section.startswith("poly "):
                flush_poly()
            elif section and section.startswith("gram "):
                flush_gram()
            section = ln[1:-1]
            buf = []
        elif section == "meta":
            if "=" in ln:
                k, v = ln.split("=", 1)
                meta[k.strip()] = v.strip()
        elif section and section != "end":
            buf.append(ln)
        i += 1

    state_vars = tuple(meta["state_vars"].split())
    h_hat = polys["h_hat"]
    cert = BarrierCertificate(
        alpha=int(meta["alpha"]), kappa=float(meta["kappa"]), h_hat=h_hat,
        gamma_synth=float(meta["gamma_synth"]), gamma_max=float(meta["gamma_max"]),
        controller=polys.get("controller"),
        scales=np.array([float(v) for v in meta["scales"].split()]),
        d_max=float(meta["d_max"]), v_low=float(meta["v_low"]),
        v_high=float(meta["v_high"]), epsilon=float(meta["epsilon"]),
        kappa_history=[float(v) for v in meta["kappa_history"].split()],
        iterations=int(meta["iterations"]), certificates=certs)
    return cert


# ----------------------------------------------------------------------
# the full pipeline
# ----------------------------------------------------------------------

def synthesize(config: LkSynthesisConfig,
               problem: SynthesisProblem | None = None,
               log=lambda msg: None) -> BarrierCertificate:
    """Run the seed program plus the alternation until kappa stalls.

    The seed retries on infeasibility: the ball level is halved twice, the
    LQR weight doubled twice, then the strictness margin is reduced
    decade-by-decade (the margin is the binding quantity for tight
    configurations).  The kappa sequence is nondecreasing by construction.
    """
    own_problem = problem is None
    cfg = config
    if own_problem:
        problem = lk_problem(cfg)

    attempts = [(cfg.rho0, cfg.r_weight, cfg.epsilon)]
    attempts += [(cfg.rho0 / 2, cfg.r_weight, cfg.epsilon),
                 (cfg.rho0 / 4, cfg.r_weight, cfg.epsilon),
                 (cfg.rho0, cfg.r_weight * 2, cfg.epsilon),
                 (cfg.rho0, cfg.r_weight * 4, cfg.epsilon)]
    eps = cfg.epsilon
    while eps > 2e-8:
        eps /= 10.0
        attempts.append((cfg.rho0, cfg.r_weight, eps))

    seed = None
    last_err: Exception | None = None
    used_eps = cfg.epsilon
    for rho0, r_weight, epsilon in attempts:
        try:
            trial_cfg = cfg if (r_weight == cfg.r_weight) else replace(cfg, r_weight=r_weight)
            trial_problem = problem if (r_weight == cfg.r_weight or not own_problem) \
                else lk_problem(trial_cfg)
            log(f"seed attempt rho0={rho0:g} R={r_weight:g} eps={epsilon:g}")
            seed = init_p0(trial_problem, trial_cfg, rho0=rho0, epsilon=epsilon)
            problem = trial_problem
            cfg = trial_cfg
            used_eps = epsilon
            break
        except SosInfeasibleError as err:
            last_err = err
    if seed is None:
        raise SosInfeasibleError(
            "seed program infeasible after the retry ladder; consider modifying "
            f"the LQR weights, gamma, or rho0 (last error: {last_err})")
    log(f"seed kappa = {seed.kappa:.6f}")

    kappa_hist = [seed.kappa]
    h_hat = seed.h_hat
    kappa = seed.kappa
    controller = None
    certificates = dict(seed.certificates)
    warm_p1 = warm_p2 = None
    iterations = 0
    for it in range(1, cfg.max_iterations + 1):
        iterations = it
        kappa_before = kappa
        try:
            p1 = improve_controller_p1(problem, cfg, h_hat, kappa,
                                       warm=warm_p1, epsilon=used_eps)
        except SosInfeasibleError:
            if it == 1 and cfg.beta < 4:
                log("controller program infeasible at the seed; raising degree")
                p1 = improve_controller_p1(problem, cfg, h_hat, kappa, beta=4,
                                           epsilon=used_eps)
            else:
                raise
        warm_p1 = p1.solution
        p2 = improve_barrier_p2(problem, cfg, h_hat, p1.kappa, p1.controller,
                                warm=warm_p2, epsilon=used_eps)
        warm_p2 = p2.solution
        h_hat, kappa, controller = p2.h_hat, p2.kappa, p1.controller
        certificates = dict(p2.certificates)
        for name, cert in p1.certificates.items():
            if "ub_" in name:  # the controller's input-bound blocks
                certificates[f"p1:{name}"] = cert
        kappa_hist.append(kappa)
        log(f"iteration {it}: kappa {kappa_before:.6f} -> {kappa:.6f}")
        if abs(kappa - kappa_before) <= cfg.kappa_tol:
            break

    bounds = cfg.bounds if own_problem else None
    return BarrierCertificate(
        alpha=cfg.alpha, kappa=kappa, h_hat=h_hat, gamma_synth=cfg.gamma,
        gamma_max=cfg.gamma, controller=controller,
        scales=(bounds.state_scales if bounds else np.ones(len(problem.state_vars))),
        d_max=(bounds.d_max if bounds else 1.0),
        v_low=(bounds.v_low if bounds else 0.0),
        v_high=(bounds.v_high if bounds else 1.0),
        epsilon=used_eps, kappa_history=kappa_hist, iterations=iterations,
        certificates=certificates)


def maximize_certificate_gamma(cert: BarrierCertificate,
                               config: LkSynthesisConfig,
                               problem: SynthesisProblem | None = None,
                               ) -> BarrierCertificate:
    """Post-run gain maximization; stores the result and its row blocks."""
    problem = lk_problem(config) if problem is None else problem
    gamma_star, blocks = maximize_gamma(problem, config, cert.h_hat, cert.kappa,
                                        cert.controller)
    cert.gamma_max = max(gamma_star, cert.gamma_synth)
    for name, block in blocks.items():
        cert.certificates[f"gamma_max:{name}"] = block
    return cert


# ----------------------------------------------------------------------
# verification
# ----------------------------------------------------------------------

@dataclass
class LkVerifyReport:
    blocks_ok: bool
    containment_ok: bool
    row_ok: bool
    block_failures: list[str]
    containment_witness: tuple | None
    row_witness: tuple | None
    worst_row: float
    checked_points: int

    @property
    def passed(self) -> bool:
        return self.blocks_ok and self.containment_ok and self.row_ok


def verify_lk_properties(cert: BarrierCertificate, config: LkSynthesisConfig,
                         n_samples: int = 10_000, seed: int = 0,
                         row_tol: float = 1e-6) -> LkVerifyReport:
    """Independent re-check of the certificate.

    (a) every stored Gram block is re-verified; (b) sampled points of the
    h >= 0 set (drawn from an inflated box) must lie strictly inside the
    state box; (c) on sampled safe-set points, the barrier row with the
    better of the two extreme steering inputs must clear -row_tol,
    evaluated against the physical-coordinate model (no clearing).
    """
    rng = np.random.default_rng(seed)
    failures = [name for name, block in cert.certificates.items()
                if not verify_certificate(block.expression, block).passed]

    svars = cert.h_hat.variables
    ndim = len(svars)
    containment_witness = None
    accepted = 0
    draws = 0
    while accepted < n_samples and draws < 400:
        draws += 1
        pts = rng.uniform(-1.5, 1.5, (20_000, ndim))
        hvals = cert.h_value_scaled_array({v: pts[:, i] for i, v in enumerate(svars)})
        inside = pts[hvals >= 0.0]
        accepted += len(inside)
        bad = np.abs(inside).max(axis=1) >= 1.0 if len(inside) else np.array([])
        if len(inside) and bad.any():
            containment_witness = tuple(inside[np.argmax(bad)])
            break
    containment_ok = containment_witness is None

    # (c) physical-row check on the safe set
    params = config.params
    delta_max = config.bounds.delta_f_max
    worst = math.inf
    row_witness = None
    count = 0
    while count < n_samples:
        pts = rng.uniform(-1.0, 1.0, (20_000, ndim))
        hvals = cert.h_value_scaled_array({v: pts[:, i] for i, v in enumerate(svars)})
        pts = pts[hvals >= 0.0]
        if not len(pts):
            continue
        take = min(len(pts), n_samples - count)
        pts = pts[:take]
        count += take
        ds = rng.uniform(-cert.d_max, cert.d_max, take)
        vs = rng.uniform(cert.v_low, cert.v_high, take)
        for xt, d, v in zip(pts, ds, vs):
            x_phys = xt * cert.scales
            h = cert.h_value(x_phys)
            grad = cert.h_grad(x_phys)
            A1, B1, E1 = lk_matrices(params, v)
            drift = float(grad @ (A1 @ x_phys + E1 * d))
            gain = float(grad @ B1)
            row = drift + abs(gain) * delta_max + cert.gamma_synth * h
            if row < worst:
                worst = row
                row_witness = (tuple(x_phys), d, v, row)
    row_ok = worst >= -row_tol
    return LkVerifyReport(not failures, containment_ok, row_ok, failures,
                          containment_witness,
                          None if row_ok else row_witness, worst, count)
