"""Model SOS programs and compile them to conic form.

A model holds decision polynomials (free-coefficient or Gram-parametrized
SOS), scalar decisions, SOS membership constraints on affine expressions in
those decisions, scalar equalities/inequalities, and an optional linear
objective.  Compilation turns every SOS constraint into one PSD block whose
Gram matrix must reproduce the expression coefficient-by-coefficient; the
index map recovers realized polynomials and certificates from a conic
primal point.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import conic
from .conic import Cone, ConicProblem, ConicSolution, SolverSettings
from .polyalg import Monomial, Polynomial, grlex_key, monomial_basis, _merge_spaces

_SQRT2 = math.sqrt(2.0)

# linear-in-decisions coefficient: handle id -> weight, with key -1 the constant
LinCoef = dict[int, float]


class LinPoly:
    """Polynomial whose coefficients are affine in scalar decision handles."""

    __slots__ = ("variables", "terms")

    def __init__(self, variables, terms: dict[Monomial, LinCoef] | None = None):
        self.variables = tuple(variables)
        self.terms: dict[Monomial, LinCoef] = {}
        for mono, lc in (terms or {}).items():
            clean = {h: float(w) for h, w in lc.items() if w != 0.0}
            if clean:
                self.terms[tuple(mono)] = clean

    @classmethod
    def from_poly(cls, p: Polynomial) -> "LinPoly":
        return cls(p.variables, {m: {-1: c} for m, c in p.terms.items()})

    @classmethod
    def zero(cls, variables) -> "LinPoly":
        return cls(variables, {})

    def embed(self, variables) -> "LinPoly":
        variables = tuple(variables)
        if variables == self.variables:
            return self
        pos = [variables.index(v) for v in self.variables]
        n = len(variables)
        terms: dict[Monomial, LinCoef] = {}
        for mono, lc in self.terms.items():
            exps = [0] * n
            for p, e in zip(pos, mono):
                exps[p] = e
            terms[tuple(exps)] = dict(lc)
        return LinPoly(variables, terms)

    def _coerce(self, other: "LinPoly | Polynomial | float"):
        if isinstance(other, Polynomial):
            other = LinPoly.from_poly(other)
        elif isinstance(other, (int, float)):
            other = LinPoly(self.variables,
                            {tuple([0] * len(self.variables)): {-1: float(other)}})
        space = _merge_spaces(self.variables, other.variables)
        return self.embed(space), other.embed(space)

    def __add__(self, other) -> "LinPoly":
        a, b = self._coerce(other)
        terms = {m: dict(lc) for m, lc in a.terms.items()}
        for mono, lc in b.terms.items():
            dst = terms.setdefault(mono, {})
            for h, w in lc.items():
                dst[h] = dst.get(h, 0.0) + w
        return LinPoly(a.variables, terms)

    __radd__ = __add__

    def __neg__(self) -> "LinPoly":
        return LinPoly(self.variables,
                       {m: {h: -w for h, w in lc.items()} for m, lc in self.terms.items()})

    def __sub__(self, other) -> "LinPoly":
        a, b = self._coerce(other)
        return a + (-b)

    def __rsub__(self, other) -> "LinPoly":
        return (-self) + other

    def __mul__(self, other) -> "LinPoly":
        """Multiply by a fixed polynomial or scalar (stays affine in decisions)."""
        if isinstance(other, (int, float)):
            f = float(other)
            return LinPoly(self.variables,
                           {m: {h: w * f for h, w in lc.items()}
                            for m, lc in self.terms.items()})
        if isinstance(other, LinPoly):
            raise TypeError("product of two decision-bearing polynomials is not affine")
        a = self
        b = LinPoly.from_poly(other)
        space = _merge_spaces(a.variables, b.variables)
        a = a.embed(space)
        p = other.embed(space)
        terms: dict[Monomial, LinCoef] = {}
        for ma, lc in a.terms.items():
            for mb, cb in p.terms.items():
                mono = tuple(ea + eb for ea, eb in zip(ma, mb))
                dst = terms.setdefault(mono, {})
                for h, w in lc.items():
                    dst[h] = dst.get(h, 0.0) + w * cb
        return LinPoly(space, terms)

    __rmul__ = __mul__

    def diff(self, var: str) -> "LinPoly":
        idx = self.variables.index(var)
        terms: dict[Monomial, LinCoef] = {}
        for mono, lc in self.terms.items():
            e = mono[idx]
            if e == 0:
                continue
            lowered = list(mono)
            lowered[idx] = e - 1
            key = tuple(lowered)
            dst = terms.setdefault(key, {})
            for h, w in lc.items():
                dst[h] = dst.get(h, 0.0) + w * e
        return LinPoly(self.variables, terms)

    @property
    def degree(self) -> int:
        return max((sum(m) for m in self.terms), default=0)

    def realize(self, values: np.ndarray) -> Polynomial:
        """Substitute numeric handle values, producing a plain polynomial."""
        terms = {}
        for mono, lc in self.terms.items():
            total = lc.get(-1, 0.0)
            for h, w in lc.items():
                if h >= 0:
                    total += w * values[h]
            terms[mono] = total
        return Polynomial(self.variables, terms)


# ----------------------------------------------------------------------
# declarations
# ----------------------------------------------------------------------

@dataclass
class ScalarVar:
    name: str
    handle: int

    def lin(self, variables=()) -> LinPoly:
        vars_ = tuple(variables)
        return LinPoly(vars_, {tuple([0] * len(vars_)): {self.handle: 1.0}})


@dataclass
class DecisionPolynomial:
    """Free-coefficient polynomial decision: one scalar handle per basis monomial."""

    name: str
    variables: tuple[str, ...]
    degree: int
    basis: list[Monomial]
    handles: list[int]

    def poly(self) -> LinPoly:
        return LinPoly(self.variables,
                       {m: {h: 1.0} for m, h in zip(self.basis, self.handles)})


@dataclass
class SosPolynomial:
    """Gram-parametrized SOS decision: p = m(x)' Q m(x) with Q a PSD block."""

    name: str
    variables: tuple[str, ...]
    degree: int
    basis: list[Monomial]      # monomials of degree <= degree/2
    handles: list[int]          # svec entries of Q (lower triangular, col-major)

    def poly(self) -> LinPoly:
        g = len(self.basis)
        terms: dict[Monomial, LinCoef] = {}
        k = 0
        for j in range(g):
            for i in range(j, g):
                mono = tuple(a + b for a, b in zip(self.basis[i], self.basis[j]))
                w = 1.0 if i == j else _SQRT2  # 2*Q_ij = sqrt2 * svec entry
                dst = terms.setdefault(mono, {})
                h = self.handles[k]
                dst[h] = dst.get(h, 0.0) + w
                k += 1
        return LinPoly(self.variables, terms)


@dataclass
class SosCertificate:
    """Gram matrix, its monomial basis and the realized expression it certifies."""

    name: str
    variables: tuple[str, ...]
    basis: list[Monomial]
    gram: np.ndarray
    expression: Polynomial

    def reconstruct(self) -> Polynomial:
        terms: dict[Monomial, float] = {}
        g = len(self.basis)
        for i in range(g):
            for j in range(g):
                mono = tuple(a + b for a, b in zip(self.basis[i], self.basis[j]))
                terms[mono] = terms.get(mono, 0.0) + self.gram[i, j]
        return Polynomial(self.variables, terms)


@dataclass
class CertReport:
    psd_floor: float
    max_coeff_residual: float
    passed: bool


def verify_certificate(expression: Polynomial, cert: SosCertificate,
                       tol_eig: float = 1e-8, tol_coeff: float = 1e-6) -> CertReport:
    """Independent re-check: eigenfloor of Q and m'Qm vs the expression."""
    gram = np.asarray(cert.gram, dtype=float)
    floor = float(np.linalg.eigvalsh((gram + gram.T) / 2.0)[0])
    resid = cert.reconstruct().max_coeff_diff(expression.embed(cert.variables))
    return CertReport(floor, resid, floor >= -tol_eig and resid <= tol_coeff)


# ----------------------------------------------------------------------
# the model
# ----------------------------------------------------------------------

class SosInfeasibleError(RuntimeError):
    def __init__(self, message: str, ray: np.ndarray | None = None):
        super().__init__(message)
        self.ray = ray


@dataclass
class _Constraint:
    name: str
    expr: LinPoly
    basis: list[Monomial]


class SosModel:
    """Builder for an SOS program; compile() emits the conic problem."""

    def __init__(self):
        self._kinds: list[str] = []          # per handle: 'free' | 'nonneg' | sos name
        self._scalars: dict[str, ScalarVar] = {}
        self._polys: dict[str, DecisionPolynomial] = {}
        self._sos_polys: dict[str, SosPolynomial] = {}
        self._constraints: list[_Constraint] = []
        self._equalities: list[tuple[LinCoef, float]] = []
        self._inequalities: list[tuple[LinCoef, float]] = []  # lincomb >= rhs
        self._objective: LinCoef | None = None  # maximized

    # -- declarations ---------------------------------------------------

    def _new_handles(self, count: int, kind: str) -> list[int]:
        start = len(self._kinds)
        self._kinds.extend([kind] * count)
        return list(range(start, start + count))

    def scalar(self, name: str) -> ScalarVar:
        if name in self._scalars:
            raise ValueError(f"duplicate scalar {name!r}")
        var = ScalarVar(name, self._new_handles(1, "free")[0])
        self._scalars[name] = var
        return var

    def poly(self, name: str, variables, degree: int) -> DecisionPolynomial:
        if name in self._polys or name in self._sos_polys:
            raise ValueError(f"duplicate polynomial {name!r}")
        basis = monomial_basis(tuple(variables), degree)
        handles = self._new_handles(len(basis), "free")
        dp = DecisionPolynomial(name, tuple(variables), degree, basis, handles)
        self._polys[name] = dp
        return dp

    def sos_poly(self, name: str, variables, degree: int) -> SosPolynomial:
        """Declare p in Sigma[variables] of the given even degree."""
        if degree % 2 != 0 or degree < 0:
            raise ValueError("SOS decision polynomial degree must be even and >= 0")
        if name in self._polys or name in self._sos_polys:
            raise ValueError(f"duplicate polynomial {name!r}")
        basis = monomial_basis(tuple(variables), degree // 2)
        g = len(basis)
        kind = "nonneg" if g == 1 else f"sos:{name}"
        handles = self._new_handles(g * (g + 1) // 2, kind)
        spp = SosPolynomial(name, tuple(variables), degree, basis, handles)
        self._sos_polys[name] = spp
        return spp

    # -- constraints ----------------------------------------------------

    def add_sos(self, name: str, expr: LinPoly) -> None:
        """Constrain expr (affine in decisions) to be a sum of squares."""
        deg = expr.degree
        if deg % 2 == 1:
            # reject if the odd leading form is immovably nonzero
            for mono, lc in expr.terms.items():
                if sum(mono) == deg and lc.get(-1, 0.0) != 0.0 and \
                        not any(h >= 0 for h in lc):
                    raise ValueError(
                        f"SOS constraint {name!r}: odd degree {deg} with fixed "
                        f"leading term {mono}; cannot be a sum of squares")
        basis = monomial_basis(expr.variables, (deg + 1) // 2)
        self._constraints.append(_Constraint(name, expr, basis))

    def add_eq(self, lincomb: LinCoef, rhs: float = 0.0) -> None:
        self._equalities.append((dict(lincomb), float(rhs)))

    def add_ineq_ge(self, lincomb: LinCoef, rhs: float = 0.0) -> None:
        self._inequalities.append((dict(lincomb), float(rhs)))

    def maximize(self, lincomb: LinCoef) -> None:
        self._objective = dict(lincomb)

    # -- compilation ------------------------------------------------------

    def compile(self) -> tuple[ConicProblem, "IndexMap"]:
        # layout: free handles | nonneg handles + ineq slacks | sos-poly blocks
        #         | constraint gram blocks
        n_handles = len(self._kinds)
        column = np.full(n_handles, -1, dtype=int)
        cones: list[Cone] = []
        free_ids = [h for h in range(n_handles) if self._kinds[h] == "free"]
        nonneg_ids = [h for h in range(n_handles) if self._kinds[h] == "nonneg"]
        pos = 0
        for h in free_ids:
            column[h] = pos
            pos += 1
        if free_ids:
            cones.append(Cone("f", len(free_ids)))
        n_slack = len(self._inequalities)
        for h in nonneg_ids:
            column[h] = pos
            pos += 1
        slack_cols = list(range(pos, pos + n_slack))
        pos += n_slack
        if nonneg_ids or n_slack:
            cones.append(Cone("l", len(nonneg_ids) + n_slack))
        for spp in self._sos_polys.values():
            g = len(spp.basis)
            if g == 1:
                continue  # already in the nonneg block
            for h in spp.handles:
                column[h] = pos
                pos += 1
            cones.append(Cone("s", g))
        gram_slices: dict[str, tuple[slice, list[Monomial], tuple[str, ...]]] = {}
        for con in self._constraints:
            g = len(con.basis)
            gram_slices[con.name] = (slice(pos, pos + g * (g + 1) // 2),
                                     con.basis, con.expr.variables)
            cones.append(Cone("s", g))
            pos += g * (g + 1) // 2
        n_cols = pos

        rows: list[int] = []
        cols: list[int] = []
        vals: list[float] = []
        rhs: list[float] = []
        row_names: list[str] = []

        def put(r: int, c: int, v: float):
            rows.append(r)
            cols.append(c)
            vals.append(v)

        r = 0
        for con in self._constraints:
            sl, basis, _ = gram_slices[con.name]
            g = len(basis)
            # map each product monomial to its svec columns
            prod_map: dict[Monomial, list[tuple[int, float]]] = {}
            k = 0
            for j in range(g):
                for i in range(j, g):
                    mono = tuple(a + b for a, b in zip(basis[i], basis[j]))
                    prod_map.setdefault(mono, []).append(
                        (sl.start + k, 1.0 if i == j else _SQRT2))
                    k += 1
            monos = set(prod_map) | set(con.expr.terms)
            for mono in sorted(monos, key=grlex_key):
                lc = con.expr.terms.get(mono, {})
                for c_idx, w in prod_map.get(mono, []):
                    put(r, c_idx, w)
                for h, w in lc.items():
                    if h >= 0:
                        put(r, int(column[h]), -w)
                rhs.append(lc.get(-1, 0.0))
                row_names.append(f"{con.name}:{mono}")
                r += 1
        for lc, value in self._equalities:
            for h, w in lc.items():
                if h >= 0:
                    put(r, int(column[h]), w)
                elif w != 0.0:
                    value -= w  # constant folded into rhs
            rhs.append(value)
            row_names.append("eq")
            r += 1
        for idx, (lc, value) in enumerate(self._inequalities):
            for h, w in lc.items():
                if h >= 0:
                    put(r, int(column[h]), w)
                elif w != 0.0:
                    value -= w
            put(r, slack_cols[idx], -1.0)
            rhs.append(value)
            row_names.append("ineq")
            r += 1

        A = sp.coo_matrix((vals, (rows, cols)), shape=(r, n_cols)).tocsc()
        c_vec = np.zeros(n_cols)
        if self._objective:
            for h, w in self._objective.items():
                if h >= 0:
                    c_vec[int(column[h])] = -w  # conic form minimizes
        problem = ConicProblem(c_vec, A, np.array(rhs), cones)
        index = IndexMap(column, gram_slices, row_names, self)
        return problem, index


@dataclass
class IndexMap:
    column: np.ndarray
    gram_slices: dict[str, tuple[slice, list[Monomial], tuple[str, ...]]]
    row_names: list[str]
    model: SosModel


@dataclass
class Extraction:
    scalars: dict[str, float]
    polys: dict[str, Polynomial]
    certificates: dict[str, SosCertificate]
    handle_values: np.ndarray


def extract(index: IndexMap, solution: ConicSolution) -> Extraction:
    """Realize decision polynomials and certificates from an optimal primal."""
    if solution.status not in ("optimal", "max_iter"):
        raise SosInfeasibleError(
            f"cannot extract from status {solution.status!r}", solution.ray)
    model = index.model
    x = solution.primal
    values = np.zeros(len(model._kinds))
    mask = index.column >= 0
    values[mask] = x[index.column[mask]]

    scalars = {name: float(values[v.handle]) for name, v in model._scalars.items()}
    polys: dict[str, Polynomial] = {}
    certs: dict[str, SosCertificate] = {}
    for name, dp in model._polys.items():
        polys[name] = dp.poly().realize(values)
    for name, spp in model._sos_polys.items():
        realized = spp.poly().realize(values)
        polys[name] = realized
        g = len(spp.basis)
        vec = np.array([values[h] for h in spp.handles])
        certs[f"sigma:{name}"] = SosCertificate(
            f"sigma:{name}", spp.variables, spp.basis, conic.smat(vec, g), realized)
    for name, (sl, basis, variables) in index.gram_slices.items():
        g = len(basis)
        gram = conic.smat(x[sl], g)
        expr = next(c for c in model._constraints if c.name == name).expr
        certs[name] = SosCertificate(name, variables, basis, gram,
                                     expr.realize(values))
    return Extraction(scalars, polys, certs, values)


def solve_model(model: SosModel, settings: SolverSettings | None = None,
                polish: bool = True, polish_rounds: int = 100,
                warm_start: ConicSolution | None = None,
                ) -> tuple[ConicSolution, Extraction]:
    """Compile, solve, optionally polish to certificate grade, and extract."""
    problem, index = model.compile()
    s = settings or SolverSettings()
    if warm_start is not None:
        from dataclasses import replace
        s = replace(s, warm_start=warm_start)
    solution = conic.solve(problem, s)
    if solution.status == "infeasible":
        raise SosInfeasibleError("SOS program infeasible", solution.ray)
    if solution.status == "unbounded":
        raise SosInfeasibleError("SOS program unbounded", solution.ray)
    if solution.status == "max_iter" and solution.primal_residual > 1e-4:
        raise SosInfeasibleError(
            f"solver stalled: primal residual {solution.primal_residual:.2e}")
    if polish:
        solution.primal = conic.refine_feasibility(problem, solution.primal,
                                                   rounds=polish_rounds)
    return solution, extract(index, solution)
