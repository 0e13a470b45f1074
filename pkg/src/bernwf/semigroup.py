"""Limiting resampling-diffusion semigroups and iterate-vs-limit rates.

On polynomials the limit generator preserves total degree, so the semigroup
action restricted to a degree-capped coefficient space is a matrix
exponential: that is the exact oracle used everywhere.  An Euler-Maruyama
integrator provides an independent stochastic reference, and
``trotter_rate_bound`` evaluates the explicit iterate-vs-semigroup rate
bound (product of the defect seminorm machinery with the (t/sqrt(n) + 1/n)
prefactor).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.linalg import expm

from .bernstein import GridFunction, _lattice_values, apply, iterate_polynomial, transition_step
from .generators import (generator_polynomial, hessian_lipschitz_certificate,
                         voronovskaya_constant)
from .mutation import MutationRates
from .polynomials import Monomial, Polynomial, monomial_basis
from .simplex import simplex_grid

DEFAULT_COEFF_CAP = 20_000


@dataclass(frozen=True)
class PolynomialSemigroupOracle:
    """Exact semigroup action on the monomial coefficient space.

    ``matrix`` is the generator's linear action on coefficients of degree
    <= ``degree``; the time-t map is its matrix exponential (scaling and
    squaring with Pade approximants, via scipy).
    """

    d: int
    degree: int
    rates: MutationRates | None
    basis: tuple[Monomial, ...]
    matrix: np.ndarray


def build_oracle(d: int, degree: int, rates: MutationRates | None = None,
                 coeff_cap: int = DEFAULT_COEFF_CAP) -> PolynomialSemigroupOracle:
    """Assemble the generator matrix by applying it to every basis monomial."""
    basis = monomial_basis(d, degree)
    if len(basis) > coeff_cap:
        raise ValueError(f"coefficient space has {len(basis)} > {coeff_cap} dimensions")
    index = {a: k for k, a in enumerate(basis)}
    M = np.zeros((len(basis), len(basis)))
    for col, alpha in enumerate(basis):
        img = generator_polynomial(Polynomial.monomial(alpha), rates)
        for a, c in img.coeffs.items():
            M[index[a], col] = c
    return PolynomialSemigroupOracle(d, degree, rates, tuple(basis), M)


def propagate(oracle: PolynomialSemigroupOracle, f: Polynomial, t: float) -> Polynomial:
    """The semigroup at time t applied to f, as a polynomial.

    Solves du/dt = (generator) u with u(0) = f on the coefficient space, so
    by uniqueness it equals the diffusion semigroup on the simplex.
    """
    if f.degree > oracle.degree:
        raise ValueError("polynomial degree exceeds the oracle's cap")
    if t < 0:
        raise ValueError("time must be nonnegative")
    vec = expm(t * oracle.matrix) @ f.coeff_vector(list(oracle.basis))
    return Polynomial.from_coeff_vector(vec, list(oracle.basis), oracle.d)


def sup_norm_on_grid(f: Polynomial, d: int, m: int = 40) -> float:
    """Grid estimate of the sup norm over the simplex (barycentric mesh m)."""
    return float(np.max(np.abs(f.eval_many(simplex_grid(d, m)))))


# ---------------------------------------------------------------------------
# Euler-Maruyama reference integrator
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EMConfig:
    """Euler-Maruyama settings; epsilon only stabilizes the factorization."""

    steps: int = 1000
    epsilon: float = 1e-8
    projection: str = "clip-renormalize"
    paths: int = 10_000

    def __post_init__(self):
        if not 0.0 < self.epsilon <= 1e-6:
            raise ValueError("epsilon must lie in (0, 1e-6]")
        if self.steps < 1 or self.paths < 1:
            raise ValueError("steps and paths must be positive")
        if self.projection != "clip-renormalize":
            raise ValueError("only clip-renormalize projection is implemented")


def simulate_diffusion(x, t: float, rates: MutationRates | None,
                       cfg: EMConfig, rng) -> np.ndarray:
    """Euler-Maruyama endpoints X_t for ``cfg.paths`` paths, shape (paths, d).

    The covariance x_i (delta_ij - x_j) is factorized per step by symmetric
    eigendecomposition; the epsilon shift regularizes the decomposition and
    is subtracted again before the square root, so degenerate states (the
    vertices) stay exactly put.  Negative coordinates are clipped and the sum
    renormalized to one after every step.
    """
    gen = rng.generator() if hasattr(rng, "generator") else rng
    xv = np.asarray(x, dtype=float)
    d = xv.shape[0]
    X = np.tile(xv, (cfg.paths, 1))
    dt = t / cfg.steps
    sqdt = math.sqrt(dt)
    eye = np.eye(d)
    q = None if rates is None else rates.matrix
    for _ in range(cfg.steps):
        C = -X[:, :, None] * X[:, None, :]
        C[:, np.arange(d), np.arange(d)] += X
        C += cfg.epsilon * eye
        w, V = np.linalg.eigh(C)
        amp = np.sqrt(np.clip(w - cfg.epsilon, 0.0, None))
        Z = gen.standard_normal((cfg.paths, d))
        noise = np.einsum("pik,pk,pjk,pj->pi", V, amp, V, Z)
        drift = 0.0 if q is None else dt * (X @ q)
        X = X + drift + sqdt * noise
        X = np.clip(X, 0.0, None)
        X /= X.sum(axis=1, keepdims=True)
    return X


# ---------------------------------------------------------------------------
# iterate-vs-semigroup error and its explicit bound
# ---------------------------------------------------------------------------

def semigroup_error(f: Polynomial, n: int, t: float,
                    rates_n: MutationRates | None = None,
                    rates_limit: MutationRates | None = None,
                    grid: np.ndarray | None = None,
                    grid_m: int = 20,
                    method: str = "polynomial",
                    oracle: PolynomialSemigroupOracle | None = None) -> float:
    """Sup over the grid of |iterate^floor(nt) f - (semigroup at t) f|.

    method="polynomial" iterates exactly in coefficient space (identical to
    the lattice iterate on polynomials, any n); method="lattice" does the
    dense lattice iteration subject to the state cap.
    """
    if rates_n is not None and rates_limit is None:
        raise ValueError("a per-generation schedule needs its limit rates")
    d = f.d
    if grid is None:
        grid = simplex_grid(d, grid_m)
    steps = int(math.floor(n * t))
    if oracle is None:
        oracle = build_oracle(d, f.degree, rates_limit)
    target = propagate(oracle, f, t)
    if method == "polynomial":
        left_poly = iterate_polynomial(f, n, steps, rates_n)
        left = left_poly.eval_many(grid)
    elif method == "lattice":
        vals = _lattice_values(f, d, n)
        for _ in range(max(steps - 1, 0)):
            vals = transition_step(vals, d, n, rates_n)
        g = GridFunction(vals, n, d)
        if steps == 0:
            left = f.eval_many(grid)
        else:
            left = np.array([apply(g, x, n, rates_n) for x in grid])
    else:
        raise ValueError("method must be 'polynomial' or 'lattice'")
    return float(np.max(np.abs(left - target.eval_many(grid))))


def _adaptive_simpson(fun: Callable[[float], float], a: float, b: float,
                      rel_tol: float = 1e-6, max_depth: int = 24) -> float:
    """Adaptive Simpson quadrature with a relative tolerance."""
    fa, fb = fun(a), fun(b)
    m = 0.5 * (a + b)
    fm = fun(m)
    whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    scale = max(abs(whole), 1e-30)

    def recurse(a, fa, b, fb, m, fm, whole, depth):
        lm = 0.5 * (a + m)
        rm = 0.5 * (m + b)
        flm, frm = fun(lm), fun(rm)
        left = (m - a) / 6.0 * (fa + 4.0 * flm + fm)
        right = (b - m) / 6.0 * (fm + 4.0 * frm + fb)
        if depth >= max_depth or abs(left + right - whole) <= 15.0 * rel_tol * scale:
            return left + right + (left + right - whole) / 15.0
        return (recurse(a, fa, m, fm, lm, flm, left, depth + 1)
                + recurse(m, fm, b, fb, rm, frm, right, depth + 1))

    return recurse(a, fa, b, fb, m, fm, whole, 0)


def defect_seminorm(f: Polynomial, d: int, n: int) -> float:
    """The sqrt(n)-scaled defect seminorm: dimensional constant times the
    certified Hessian Lipschitz maximum over sqrt(n)."""
    return voronovskaya_constant(d) * hessian_lipschitz_certificate(f) / math.sqrt(n)


def trotter_rate_bound(f: Polynomial, n: int, t: float,
                       rates_limit: MutationRates | None = None,
                       oracle: PolynomialSemigroupOracle | None = None,
                       grid_m: int = 40, rel_tol: float = 1e-6) -> float:
    """Explicit iterate-vs-semigroup bound

        (t/sqrt(n) + 1/n) (||A f||_inf + psi_n(f)) + int_0^t psi_n(T_s f) ds

    with psi_n the defect seminorm; implemented as an upper bound.  The sup
    norm of the generator image is a grid estimate (mesh ``grid_m``); the
    time integral uses adaptive Simpson at relative tolerance ``rel_tol``
    and vanishes exactly for quadratics, whose Hessians are constant and
    stay so under the (degree-preserving) semigroup.
    """
    d = f.d
    if oracle is None:
        oracle = build_oracle(d, f.degree, rates_limit)
    sup_gen = sup_norm_on_grid(generator_polynomial(f, rates_limit), d, grid_m)
    psi_f = defect_seminorm(f, d, n)
    head = (t / math.sqrt(n) + 1.0 / n) * (sup_gen + psi_f)
    if f.degree <= 2 or t == 0.0:
        return head
    tail = _adaptive_simpson(
        lambda s: defect_seminorm(propagate(oracle, f, s), d, n),
        0.0, t, rel_tol)
    return head + tail
