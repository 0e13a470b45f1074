"""Limit generators of the resampling chain and Voronovskaya residuals.

The diffusion part is (1/2) sum_ij x_i (delta_ij - x_j) d^2f/dx_i dx_j; the
mutation drift adds sum_i (sum_j q_ji x_j) df/dx_i.  The rescaled operator
defect n (B f - f) converges to this generator; for functions with Lipschitz
Hessians the defect obeys an explicit bound with constant

    d^(5/2) / (16 * 3^(1/4)) * max_ij Lip(d_ij f) / sqrt(n),

which ``residual_rate_bound`` evaluates with certified (over-estimated)
Lipschitz constants so the inequality test is sound.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .bernstein import EvaluableFunction, apply
from .mutation import MutationRates
from .polynomials import Polynomial
from .simplex import coords_of, simplex_grid


def voronovskaya_constant(d: int) -> float:
    """The dimensional factor d^(5/2) / (16 * 3^(1/4)) of the defect bound."""
    return d ** 2.5 / (16.0 * 3.0 ** 0.25)


def apply_generator(f, x, rates: MutationRates | None = None) -> float:
    """Evaluate the limit generator at x: diffusion part plus mutation drift.

    f must expose a Hessian (and a gradient if rates are given); polynomials
    always do.
    """
    xv = coords_of(x)
    d = xv.shape[0]
    if isinstance(f, Polynomial):
        H = f.hessian_at(xv)
        grad = f.gradient_at(xv) if rates is not None else None
    elif isinstance(f, EvaluableFunction):
        if f.hessian is None:
            raise ValueError("generator needs a Hessian callback")
        H = np.asarray(f.hessian(xv), dtype=float)
        if rates is not None:
            if f.gradient is None:
                raise ValueError("mutation drift needs a gradient callback")
            grad = np.asarray(f.gradient(xv), dtype=float)
        else:
            grad = None
    else:
        raise TypeError("f must be a Polynomial or EvaluableFunction")
    cov = np.diag(xv) - np.outer(xv, xv)
    out = 0.5 * float(np.sum(cov * H))
    if rates is not None:
        out += float((xv @ rates.matrix) @ grad)
    return out


def generator_polynomial(f: Polynomial, rates: MutationRates | None = None) -> Polynomial:
    """The generator applied to a polynomial, as an exact polynomial.

    Degree is preserved: x_i (delta_ij - x_j) d_ij raises the degree of the
    second derivative back by at most two.
    """
    d = f.d
    out = Polynomial.zero(d)
    partials = [f.partial(i) for i in range(d)]
    for i in range(d):
        xi = Polynomial.coordinate(i, d)
        for j in range(d):
            fij = partials[i].partial(j)
            if not fij.coeffs:
                continue
            if i == j:
                out = out + 0.5 * ((xi - xi * xi) * fij)
            else:
                out = out - 0.5 * ((xi * Polynomial.coordinate(j, d)) * fij)
    if rates is not None:
        q = rates.matrix
        for i in range(d):
            if not partials[i].coeffs:
                continue
            drift = Polynomial({tuple(np.eye(d, dtype=int)[j]): q[j, i]
                                for j in range(d) if q[j, i] != 0.0}, d)
            out = out + drift * partials[i]
    return out


def hessian_lipschitz_certificate(f: Polynomial) -> float:
    """Certified upper bound for max_ij Lip(d_ij f) over the simplex.

    Each gradient entry of d_ij f is bounded by its absolute coefficient sum
    (coordinates lie in [0, 1]), so the certificate can only over-estimate
    and pass/fail decisions based on it stay sound.
    """
    best = 0.0
    for i in range(f.d):
        gi = f.partial(i)
        for j in range(i, f.d):
            gij = gi.partial(j)
            if not gij.coeffs:
                continue
            bound_sq = sum(gij.partial(k).abs_coeff_sum() ** 2
                           for k in range(f.d))
            best = max(best, math.sqrt(bound_sq))
    return best


def residual_rate_bound(f: Polynomial, d: int, n: int) -> float:
    """Explicit defect bound: dimensional constant times the certified
    Hessian Lipschitz maximum over sqrt(n).  Zero for quadratics."""
    if f.degree <= 2:
        return 0.0
    return voronovskaya_constant(d) * hessian_lipschitz_certificate(f) / math.sqrt(n)


def hoeffding_tail_bound(n: int, d: int, delta: float) -> float:
    """Tail bound 2 d exp(-n delta^4 / (2 d^2)) for one resampling step."""
    if delta < 0:
        raise ValueError("delta must be nonnegative")
    return 2.0 * d * math.exp(-n * delta ** 4 / (2.0 * d ** 2))


@dataclass(frozen=True)
class ResidualReport:
    """Sup residual of the rescaled defect against the generator on a grid."""

    n: int
    residual: float
    grid_spec: str
    bound: float | None
    passed: bool | None

    def row(self) -> list:
        return [self.n, repr(float(self.residual)),
                "" if self.bound is None else repr(float(self.bound)),
                "" if self.passed is None else str(self.passed).lower()]


def write_residual_csv(path, reports: Sequence[ResidualReport]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["n", "residual", "bound", "pass"])
        for r in reports:
            w.writerow(r.row())


def voronovskaya_residual(f: Polynomial, n: int,
                          grid: np.ndarray | None = None,
                          rates_n: MutationRates | None = None,
                          rates_limit: MutationRates | None = None,
                          grid_m: int = 20) -> ResidualReport:
    """Sup over the grid of |n (B f - f)(x) - (generator f)(x)|, exact lattice
    application inside.

    ``rates_n`` are the per-generation rates entering the operator,
    ``rates_limit`` the limit rates entering the generator; both default to
    the mutation-free case.  The explicit bound is attached only in that
    case (the mutated bound has no closed constant).
    """
    if rates_n is not None and rates_limit is None:
        raise ValueError("a per-generation schedule needs its limit rates")
    d = f.d
    if grid is None:
        grid = simplex_grid(d, grid_m)
        spec = f"barycentric m={grid_m}"
    else:
        grid = np.asarray(grid, dtype=float)
        spec = f"explicit ({grid.shape[0]} points)"
    gen_poly = generator_polynomial(f, rates_limit)
    worst = 0.0
    for x in grid:
        bx = apply(f, x, n, rates_n)
        resid = abs(n * (bx - f(x)) - gen_poly(x))
        worst = max(worst, float(resid))
    if rates_n is None:
        bound = residual_rate_bound(f, d, n)
        passed = worst <= bound + 1e-12
    else:
        bound, passed = None, None
    return ResidualReport(n, worst, spec, bound, passed)
