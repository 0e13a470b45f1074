"""Multivariate polynomials in coefficient form.

These are the exactly-differentiable test functions: all operator identities
(generator calculus, semigroup oracles, coefficient-space iteration) reduce
to exact manipulations of the coefficient map {multi-index: coefficient}.
Coefficients are machine floats; derivative and product operations introduce
no truncation beyond ordinary rounding.
"""

from __future__ import annotations

import re
from itertools import product as _iproduct
from typing import Iterable, Mapping

import numpy as np

Monomial = tuple[int, ...]


def monomial_basis(d: int, max_degree: int) -> list[Monomial]:
    """All exponent tuples with |alpha| <= max_degree, graded-lex order."""
    basis: list[Monomial] = []
    for deg in range(max_degree + 1):
        level = [alpha for alpha in _iproduct(range(deg + 1), repeat=d)
                 if sum(alpha) == deg]
        level.sort()
        basis.extend(level)
    return basis


class Polynomial:
    """Polynomial over R^d stored as a sparse coefficient map."""

    __slots__ = ("d", "coeffs")

    def __init__(self, coeffs: Mapping[Monomial, float], d: int):
        self.d = d
        clean: dict[Monomial, float] = {}
        for alpha, c in coeffs.items():
            alpha = tuple(int(a) for a in alpha)
            if len(alpha) != d:
                raise ValueError(f"multi-index {alpha} has wrong length for d={d}")
            if c != 0.0:
                clean[alpha] = clean.get(alpha, 0.0) + float(c)
        self.coeffs = {a: c for a, c in clean.items() if c != 0.0}

    # -- constructors -----------------------------------------------------

    @classmethod
    def zero(cls, d: int) -> "Polynomial":
        return cls({}, d)

    @classmethod
    def constant(cls, c: float, d: int) -> "Polynomial":
        return cls({(0,) * d: c}, d)

    @classmethod
    def coordinate(cls, i: int, d: int) -> "Polynomial":
        alpha = [0] * d
        alpha[i] = 1
        return cls({tuple(alpha): 1.0}, d)

    @classmethod
    def monomial(cls, alpha: Iterable[int], coeff: float = 1.0) -> "Polynomial":
        alpha = tuple(int(a) for a in alpha)
        return cls({alpha: coeff}, len(alpha))

    # -- ring operations ---------------------------------------------------

    def _check(self, other: "Polynomial"):
        if self.d != other.d:
            raise ValueError("dimension mismatch")

    def __add__(self, other):
        if isinstance(other, (int, float)):
            other = Polynomial.constant(float(other), self.d)
        self._check(other)
        out = dict(self.coeffs)
        for a, c in other.coeffs.items():
            out[a] = out.get(a, 0.0) + c
        return Polynomial(out, self.d)

    __radd__ = __add__

    def __neg__(self):
        return Polynomial({a: -c for a, c in self.coeffs.items()}, self.d)

    def __sub__(self, other):
        if isinstance(other, (int, float)):
            other = Polynomial.constant(float(other), self.d)
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return Polynomial({a: c * other for a, c in self.coeffs.items()}, self.d)
        self._check(other)
        out: dict[Monomial, float] = {}
        for a, ca in self.coeffs.items():
            for b, cb in other.coeffs.items():
                key = tuple(x + y for x, y in zip(a, b))
                out[key] = out.get(key, 0.0) + ca * cb
        return Polynomial(out, self.d)

    __rmul__ = __mul__

    def __pow__(self, k: int):
        if k < 0:
            raise ValueError("negative power")
        out = Polynomial.constant(1.0, self.d)
        for _ in range(k):
            out = out * self
        return out

    # -- calculus ----------------------------------------------------------

    @property
    def degree(self) -> int:
        return max((sum(a) for a in self.coeffs), default=0)

    def partial(self, i: int) -> "Polynomial":
        out: dict[Monomial, float] = {}
        for a, c in self.coeffs.items():
            if a[i] == 0:
                continue
            b = list(a)
            b[i] -= 1
            out[tuple(b)] = out.get(tuple(b), 0.0) + c * a[i]
        return Polynomial(out, self.d)

    def gradient_at(self, x: np.ndarray) -> np.ndarray:
        return np.array([self.partial(i)(x) for i in range(self.d)])

    def hessian_at(self, x: np.ndarray) -> np.ndarray:
        H = np.empty((self.d, self.d))
        for i in range(self.d):
            gi = self.partial(i)
            for j in range(i, self.d):
                H[i, j] = H[j, i] = gi.partial(j)(x)
        return H

    # -- evaluation ---------------------------------------------------------

    def __call__(self, x) -> float:
        x = np.asarray(x, dtype=float)
        total = 0.0
        for a, c in self.coeffs.items():
            term = c
            for xi, ai in zip(x, a):
                if ai:
                    term *= xi ** ai
            total += term
        return float(total)

    def eval_many(self, X: np.ndarray) -> np.ndarray:
        """Evaluate at every row of X, shape (m, d) -> (m,)."""
        X = np.asarray(X, dtype=float)
        out = np.zeros(X.shape[0])
        for a, c in self.coeffs.items():
            term = np.full(X.shape[0], c)
            for i, ai in enumerate(a):
                if ai:
                    term = term * X[:, i] ** ai
            out += term
        return out

    # -- coefficient-space plumbing -----------------------------------------

    def coeff_vector(self, basis: list[Monomial]) -> np.ndarray:
        index = {a: k for k, a in enumerate(basis)}
        v = np.zeros(len(basis))
        for a, c in self.coeffs.items():
            if a not in index:
                raise ValueError(f"monomial {a} outside basis (degree cap too low)")
            v[index[a]] = c
        return v

    @classmethod
    def from_coeff_vector(cls, v: np.ndarray, basis: list[Monomial], d: int) -> "Polynomial":
        return cls({a: float(c) for a, c in zip(basis, v) if c != 0.0}, d)

    def compose_linear(self, M: np.ndarray) -> "Polynomial":
        """Substitute x_i <- sum_j M[i, j] x_j; exact expansion."""
        M = np.asarray(M, dtype=float)
        lines = [Polynomial({tuple(np.eye(self.d, dtype=int)[j]): M[i, j]
                             for j in range(self.d) if M[i, j] != 0.0}, self.d)
                 for i in range(self.d)]
        out = Polynomial.zero(self.d)
        for a, c in self.coeffs.items():
            term = Polynomial.constant(c, self.d)
            for i, ai in enumerate(a):
                for _ in range(ai):
                    term = term * lines[i]
            out = out + term
        return out

    def abs_coeff_sum(self) -> float:
        return float(sum(abs(c) for c in self.coeffs.values()))

    def __repr__(self):
        if not self.coeffs:
            return "Polynomial(0)"
        parts = []
        for a in sorted(self.coeffs, key=lambda t: (sum(t), t)):
            c = self.coeffs[a]
            mono = "*".join(f"x{i+1}^{e}" if e > 1 else f"x{i+1}"
                            for i, e in enumerate(a) if e)
            parts.append(f"{c:g}" + (f"*{mono}" if mono else ""))
        return "Polynomial(" + " + ".join(parts) + ")"


_TERM_RE = re.compile(r"^\s*([+-]?\s*\d*\.?\d*(?:[eE][+-]?\d+)?)?\s*((?:\*?\s*[xz]\d*(?:\^\d+)?\s*)*)$")
_VAR_RE = re.compile(r"[xz](\d*)(?:\^(\d+))?")


def parse_polynomial(expr: str, d: int) -> Polynomial:
    """Parse expressions like ``x1^3 - 2*x1*x2 + 0.5`` into a Polynomial.

    Variables are x1..xd (``z`` is accepted as an alias for x1, handy for
    one-dimensional mutation test functions).
    """
    expr = expr.replace("-", "+-").replace("**", "^")
    terms = [t for t in expr.split("+") if t.strip()]
    coeffs: dict[Monomial, float] = {}
    for term in terms:
        m = _TERM_RE.match(term)
        if not m:
            raise ValueError(f"cannot parse term {term!r}")
        num, vars_part = m.group(1), m.group(2) or ""
        num = (num or "").replace(" ", "")
        if num in ("", "+"):
            c = 1.0
        elif num == "-":
            c = -1.0
        else:
            c = float(num)
        alpha = [0] * d
        for vm in _VAR_RE.finditer(vars_part):
            idx = int(vm.group(1)) - 1 if vm.group(1) else 0
            if not 0 <= idx < d:
                raise ValueError(f"variable x{idx + 1} out of range for d={d}")
            alpha[idx] += int(vm.group(2)) if vm.group(2) else 1
        key = tuple(alpha)
        coeffs[key] = coeffs.get(key, 0.0) + c
    return Polynomial(coeffs, d)


def falling_factorial(n: int, r: int) -> float:
    out = 1.0
    for j in range(r):
        out *= n - j
    return out


_STIRLING_MAX = 12


def stirling2(m: int, r: int) -> int:
    """Stirling numbers of the second kind, small table."""
    if not (0 <= r <= m <= _STIRLING_MAX):
        raise ValueError("stirling2 supports 0 <= r <= m <= 12")
    return _S2[m][r]


def _build_s2(limit: int) -> list[list[int]]:
    tab = [[0] * (limit + 1) for _ in range(limit + 1)]
    tab[0][0] = 1
    for m in range(1, limit + 1):
        for r in range(1, m + 1):
            tab[m][r] = r * tab[m - 1][r] + tab[m - 1][r - 1]
    return tab


_S2 = _build_s2(_STIRLING_MAX)
