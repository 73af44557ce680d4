"""Sparse multivariate polynomials over named variables.

Substrate for the SOS programs: barrier candidates, multipliers and
controller templates are all values of :class:`Polynomial`.  Coefficients
are doubles; terms are keyed by exponent tuples in a fixed variable space
and kept in graded-lexicographic order when enumerated.  Values are
immutable after construction and safe to share across threads.
"""

from __future__ import annotations

from itertools import combinations_with_replacement
from math import comb
from typing import Iterable, Mapping, Sequence

import numpy as np

Monomial = tuple[int, ...]

#: absolute tolerance for coefficient-wise polynomial comparisons
COEFF_TOL = 1e-9


def grlex_key(mono: Monomial) -> tuple:
    """Sort key for graded-lexicographic order (earlier variables rank higher)."""
    return (sum(mono), tuple(-e for e in mono))


def monomial_basis(variables: Sequence[str], max_degree: int) -> list[Monomial]:
    """All exponent tuples of total degree <= max_degree, grlex-ordered.

    Returns C(n + max_degree, max_degree) monomials for n variables.
    """
    if max_degree < 0:
        raise ValueError("max_degree must be >= 0")
    n = len(variables)
    out: list[Monomial] = []
    for deg in range(max_degree + 1):
        block = []
        for combo in combinations_with_replacement(range(n), deg):
            exps = [0] * n
            for idx in combo:
                exps[idx] += 1
            block.append(tuple(exps))
        block.sort(key=grlex_key)
        out.extend(block)
    assert len(out) == comb(n + max_degree, max_degree)
    return out


def _merge_spaces(a: Sequence[str], b: Sequence[str]) -> tuple[str, ...]:
    # collisions are identification: same name means same variable
    merged = list(a)
    for name in b:
        if name not in merged:
            merged.append(name)
    return tuple(merged)


class Polynomial:
    """Immutable sparse polynomial: map exponent-tuple -> coefficient.

    Exact zero coefficients are never stored.  Arithmetic auto-embeds both
    operands into the union variable space (merged by name).
    """

    __slots__ = ("variables", "terms")

    def __init__(self, variables: Sequence[str], terms: Mapping[Monomial, float] | None = None):
        self.variables: tuple[str, ...] = tuple(variables)
        n = len(self.variables)
        clean: dict[Monomial, float] = {}
        for mono, coeff in (terms or {}).items():
            if len(mono) != n:
                raise ValueError(f"monomial {mono} does not match {n} variables")
            c = float(coeff)
            if c != 0.0:
                clean[tuple(int(e) for e in mono)] = c
        self.terms: dict[Monomial, float] = clean

    # -- constructors -------------------------------------------------

    @classmethod
    def zero(cls, variables: Sequence[str]) -> "Polynomial":
        return cls(variables, {})

    @classmethod
    def constant(cls, variables: Sequence[str], value: float) -> "Polynomial":
        return cls(variables, {tuple([0] * len(variables)): value})

    @classmethod
    def variable(cls, name: str, variables: Sequence[str]) -> "Polynomial":
        variables = tuple(variables)
        exps = [0] * len(variables)
        exps[variables.index(name)] = 1
        return cls(variables, {tuple(exps): 1.0})

    # -- basics -------------------------------------------------------

    @property
    def degree(self) -> int:
        return max((sum(m) for m in self.terms), default=0)

    def is_zero(self) -> bool:
        return not self.terms

    def coefficient(self, mono: Monomial) -> float:
        return self.terms.get(tuple(mono), 0.0)

    def sorted_terms(self) -> list[tuple[Monomial, float]]:
        return sorted(self.terms.items(), key=lambda kv: grlex_key(kv[0]))

    def canonical(self) -> "Polynomial":
        """Re-normalize; the identity on an already canonical polynomial."""
        return Polynomial(self.variables, self.terms)

    def embed(self, variables: Sequence[str]) -> "Polynomial":
        """Reinterpret in a larger variable space (matched by name)."""
        variables = tuple(variables)
        if variables == self.variables:
            return self
        pos = []
        for name in self.variables:
            if name not in variables:
                raise ValueError(f"target space is missing variable {name!r}")
            pos.append(variables.index(name))
        n = len(variables)
        terms: dict[Monomial, float] = {}
        for mono, coeff in self.terms.items():
            exps = [0] * n
            for p, e in zip(pos, mono):
                exps[p] = e
            terms[tuple(exps)] = coeff
        return Polynomial(variables, terms)

    def _coerce(self, other) -> tuple["Polynomial", "Polynomial"]:
        if isinstance(other, (int, float)):
            other = Polynomial.constant(self.variables, float(other))
        if not isinstance(other, Polynomial):
            return NotImplemented, NotImplemented  # type: ignore[return-value]
        if self.variables == other.variables:
            return self, other
        space = _merge_spaces(self.variables, other.variables)
        return self.embed(space), other.embed(space)

    # -- arithmetic ---------------------------------------------------

    def __add__(self, other) -> "Polynomial":
        a, b = self._coerce(other)
        if a is NotImplemented:
            return NotImplemented
        terms = dict(a.terms)
        for mono, coeff in b.terms.items():
            terms[mono] = terms.get(mono, 0.0) + coeff
        return Polynomial(a.variables, terms)

    __radd__ = __add__

    def __neg__(self) -> "Polynomial":
        return Polynomial(self.variables, {m: -c for m, c in self.terms.items()})

    def __sub__(self, other) -> "Polynomial":
        a, b = self._coerce(other)
        if a is NotImplemented:
            return NotImplemented
        return a + (-b)

    def __rsub__(self, other) -> "Polynomial":
        return (-self) + other

    def __mul__(self, other) -> "Polynomial":
        if isinstance(other, (int, float)):
            return self.scale(float(other))
        a, b = self._coerce(other)
        if a is NotImplemented:
            return NotImplemented
        terms: dict[Monomial, float] = {}
        for ma, ca in a.terms.items():
            for mb, cb in b.terms.items():
                mono = tuple(ea + eb for ea, eb in zip(ma, mb))
                terms[mono] = terms.get(mono, 0.0) + ca * cb
        return Polynomial(a.variables, terms)

    __rmul__ = __mul__

    def scale(self, factor: float) -> "Polynomial":
        return Polynomial(self.variables, {m: c * factor for m, c in self.terms.items()})

    def __pow__(self, n: int) -> "Polynomial":
        if n < 0:
            raise ValueError("negative powers not supported")
        out = Polynomial.constant(self.variables, 1.0)
        for _ in range(n):
            out = out * self
        return out

    # -- calculus -----------------------------------------------------

    def diff(self, var: str) -> "Polynomial":
        """Formal partial derivative with respect to one variable."""
        idx = self.variables.index(var)
        terms: dict[Monomial, float] = {}
        for mono, coeff in self.terms.items():
            e = mono[idx]
            if e == 0:
                continue
            lowered = list(mono)
            lowered[idx] = e - 1
            key = tuple(lowered)
            terms[key] = terms.get(key, 0.0) + coeff * e
        return Polynomial(self.variables, terms)

    def gradient(self, state_vars: Sequence[str] | None = None) -> list["Polynomial"]:
        names = self.variables if state_vars is None else state_vars
        return [self.diff(v) for v in names]

    # -- evaluation ---------------------------------------------------

    def evaluate(self, point: Mapping[str, float]) -> float:
        """Numeric value at a full variable assignment."""
        vals = []
        for name in self.variables:
            if name not in point:
                raise KeyError(f"no assignment for variable {name!r}")
            vals.append(float(point[name]))
        # Horner-style: accumulate power tables per variable, then sum terms
        max_exp = [0] * len(self.variables)
        for mono in self.terms:
            for i, e in enumerate(mono):
                max_exp[i] = max(max_exp[i], e)
        powers = [[1.0] for _ in self.variables]
        for i, v in enumerate(vals):
            for _ in range(max_exp[i]):
                powers[i].append(powers[i][-1] * v)
        total = 0.0
        for mono, coeff in self.terms.items():
            val = coeff
            for i, e in enumerate(mono):
                if e:
                    val *= powers[i][e]
            total += val
        return total

    def evaluate_array(self, point: Mapping[str, np.ndarray]) -> np.ndarray:
        """Vectorized evaluation; each variable maps to an equal-shape array."""
        arrays = [np.asarray(point[name], dtype=float) for name in self.variables]
        shape = arrays[0].shape if arrays else ()
        total = np.zeros(shape)
        for mono, coeff in self.terms.items():
            val = np.full(shape, coeff)
            for arr, e in zip(arrays, mono):
                if e:
                    val = val * arr**e
            total = total + val
        return total

    # -- comparison / io ----------------------------------------------

    def allclose(self, other: "Polynomial", tol: float = COEFF_TOL) -> bool:
        a, b = self._coerce(other)
        for mono in set(a.terms) | set(b.terms):
            if abs(a.terms.get(mono, 0.0) - b.terms.get(mono, 0.0)) > tol:
                return False
        return True

    def max_coeff_diff(self, other: "Polynomial") -> float:
        a, b = self._coerce(other)
        keys = set(a.terms) | set(b.terms)
        return max((abs(a.terms.get(m, 0.0) - b.terms.get(m, 0.0)) for m in keys), default=0.0)

    def to_text(self) -> str:
        """One term per line: space-separated exponents then the coefficient."""
        lines = []
        for mono, coeff in self.sorted_terms():
            lines.append(" ".join(str(e) for e in mono) + " " + repr(coeff))
        return "\n".join(lines)

    @classmethod
    def from_text(cls, text: str, variables: Sequence[str]) -> "Polynomial":
        n = len(variables)
        terms: dict[Monomial, float] = {}
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != n + 1:
                raise ValueError(f"bad polynomial line {line!r} for {n} variables")
            mono = tuple(int(p) for p in parts[:n])
            terms[mono] = terms.get(mono, 0.0) + float(parts[n])
        return cls(variables, terms)

    def __repr__(self) -> str:  # pragma: no cover - debug aid
        if not self.terms:
            return "Polynomial(0)"
        bits = []
        for mono, coeff in self.sorted_terms():
            factors = [f"{v}^{e}" if e > 1 else v
                       for v, e in zip(self.variables, mono) if e]
            bits.append(f"{coeff:+g}" + ("*" + "*".join(factors) if factors else ""))
        return "Polynomial(" + " ".join(bits) + ")"


def lie_derivative(h: Polynomial, field: Iterable[Polynomial],
                   state_vars: Sequence[str] | None = None) -> Polynomial:
    """Derivative of h along a vector field: sum_i (dh/dx_i) * f_i.

    The field supplies one component per state variable of h (by default
    all of h's variables, in order).
    """
    field = list(field)
    names = tuple(h.variables if state_vars is None else state_vars)
    if len(field) != len(names):
        raise ValueError(f"field has {len(field)} components for {len(names)} state variables")
    total: Polynomial = Polynomial.zero(h.variables)
    for name, f_i in zip(names, field):
        total = total + h.diff(name) * f_i
    return total
