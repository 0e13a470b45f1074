"""Bernstein-type operators on the simplex and their Markov-chain form.

The operator averages a function over one multinomial resampling step of a
population of size n at frequency vector x (optionally mutated first).  It
is available in four computational guises:

* ``apply``            exact lattice sum at one point,
* ``transition_step``  one exact operator application on the whole lattice,
* ``apply_polynomial`` exact closed-form action on polynomial coefficients
                       (the operator preserves total degree),
* ``iterate_mc``       Monte-Carlo estimate via simulated resampling chains.

Chains, interpolated paths and their statistics live here too.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from itertools import product as _iproduct
from typing import Callable, Sequence

import numpy as np

from .mutation import MutationRates, NegativeCoordinateError, mutated_coords
from .polynomials import (Monomial, Polynomial, falling_factorial,
                          monomial_basis, stirling2)
from .simplex import (LatticeSizeError, RngStream, coords_of,
                      enumerate_lattice, lattice_size, log_probs,
                      _lattice_log_coeffs, sample_multinomial_many)

# Dense exact iteration costs |lattice|^2 per step; refuse beyond this many
# states and point the caller at iterate_mc instead.
ITERATE_STATE_CAP = 25_000
# Precompute the full transition matrix only below this state count.
_MATRIX_CAP = 3_000
_CHUNK_FLOATS = 1.5e7


class ConvergenceError(RuntimeError):
    """Long-run iteration failed to reach the requested tolerance."""


@dataclass
class GridFunction:
    """Values of a function on the lattice {k/n}, in lattice order."""

    values: np.ndarray
    n: int
    d: int

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        expected = lattice_size(self.d, self.n)
        if self.values.shape != (expected,):
            raise ValueError(
                f"need {expected} values for (d={self.d}, n={self.n}), "
                f"got shape {self.values.shape}")

    @classmethod
    def from_callable(cls, f, d: int, n: int) -> "GridFunction":
        pts = enumerate_lattice(d, n) / float(n)
        return cls(_eval_on_points(f, pts), n, d)

    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.values)))

    def to_csv(self, path) -> None:
        rows = enumerate_lattice(self.d, self.n)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([f"k_{i+1}" for i in range(self.d)] + ["value"])
            for k, v in zip(rows, self.values):
                w.writerow([*map(int, k), repr(float(v))])

    @classmethod
    def from_csv(cls, path) -> "GridFunction":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        d = len(rows[0]) - 1
        counts = np.array([[int(v) for v in r[:d]] for r in rows[1:]])
        values = np.array([float(r[d]) for r in rows[1:]])
        n = int(counts[0].sum())
        g = cls(np.empty(lattice_size(d, n)), n, d)
        ref = enumerate_lattice(d, n)
        order = {tuple(k): i for i, k in enumerate(ref)}
        for k, v in zip(counts, values):
            g.values[order[tuple(k)]] = v
        return g


@dataclass
class EvaluableFunction:
    """Pointwise function with optional gradient / Hessian callbacks."""

    value: Callable[[np.ndarray], float]
    gradient: Callable[[np.ndarray], np.ndarray] | None = None
    hessian: Callable[[np.ndarray], np.ndarray] | None = None

    @classmethod
    def from_polynomial(cls, p: Polynomial) -> "EvaluableFunction":
        return cls(value=p.__call__, gradient=p.gradient_at, hessian=p.hessian_at)


@dataclass
class ChainTrajectory:
    """A sampled resampling chain: integer count states of length N + 1.

    ``start`` is the real starting point; when it is not a lattice state the
    first recorded state is already one multinomial draw away from it.
    """

    counts: np.ndarray
    n: int
    start: np.ndarray
    rates: MutationRates | None = None

    @property
    def steps(self) -> int:
        return self.counts.shape[0] - 1

    @property
    def d(self) -> int:
        return self.counts.shape[1]

    def frequencies(self) -> np.ndarray:
        return self.counts / float(self.n)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["step"] + [f"k_{i+1}" for i in range(self.d)])
            for s, row in enumerate(self.counts):
                w.writerow([s, *map(int, row)])

    @classmethod
    def from_csv(cls, path, start=None, rates=None) -> "ChainTrajectory":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        counts = np.array([[int(v) for v in r[1:]] for r in rows[1:]], dtype=np.int64)
        n = int(counts[0].sum())
        if start is None:
            start = counts[0] / float(n)
        return cls(counts, n, np.asarray(start, dtype=float), rates)


@dataclass
class InterpolatedPath:
    """Piecewise-linear path through the chain states on a mesh-1/n grid.

    Compensated paths subtract the accumulated mutation drift and may leave
    the simplex slightly; values are stored as raw d-vectors.
    """

    times: np.ndarray
    values: np.ndarray

    def __call__(self, t: float) -> np.ndarray:
        # Final segment clamps: queries at or past the last node return it.
        last = self.times.shape[0] - 1
        s = (t - self.times[0]) / (self.times[1] - self.times[0])
        k = int(np.clip(math.floor(s), 0, last - 1))
        frac = min(max(s - k, 0.0), 1.0)
        return self.values[k] + frac * (self.values[k + 1] - self.values[k])


# ---------------------------------------------------------------------------
# exact application
# ---------------------------------------------------------------------------

def _eval_on_points(f, pts: np.ndarray) -> np.ndarray:
    if isinstance(f, Polynomial):
        return f.eval_many(pts)
    if isinstance(f, EvaluableFunction):
        f = f.value
    out = np.empty(pts.shape[0])
    for i, p in enumerate(pts):
        out[i] = f(p)
    return out


def _lattice_values(f, d: int, n: int) -> np.ndarray:
    if isinstance(f, GridFunction):
        if (f.d, f.n) != (d, n):
            raise ValueError("grid function shape does not match (d, n)")
        return f.values
    return _eval_on_points(f, enumerate_lattice(d, n) / float(n))


def _success_vector(x: np.ndarray, rates: MutationRates | None) -> np.ndarray:
    p = mutated_coords(x, rates)
    if p.min() < -1e-12:
        raise NegativeCoordinateError(
            f"mutated coordinate {p.min():.3e} is negative; operator undefined")
    return np.clip(p, 0.0, None)


def apply(f, x, n: int, rates: MutationRates | None = None,
          cap: int = 10**8) -> float:
    """Exact lattice sum: sum_k pmf(x or mutated x, k) f(k/n)."""
    xv = coords_of(x)
    d = xv.shape[0]
    vals = _lattice_values(f, d, n)
    p = _success_vector(xv, rates)
    rows = enumerate_lattice(d, n, cap)
    logc = _lattice_log_coeffs(d, n)
    with np.errstate(under="ignore"):
        pmf = np.exp(logc + rows @ log_probs(p))
    return float(pmf @ vals)


def transition_step(values: np.ndarray, d: int, n: int,
                    rates: MutationRates | None = None,
                    state_cap: int = ITERATE_STATE_CAP) -> np.ndarray:
    """One exact operator application on the whole lattice (dense, chunked)."""
    m = lattice_size(d, n)
    if m > state_cap:
        raise LatticeSizeError(
            f"{m} states exceeds the exact-iteration cap {state_cap}; "
            "use iterate_mc")
    rows = enumerate_lattice(d, n)
    logc = _lattice_log_coeffs(d, n)
    freqs = rows / float(n)
    probs = freqs if rates is None else np.clip(
        _check_batch(freqs + freqs @ rates.matrix), 0.0, None)
    logp = log_probs(probs)
    out = np.empty(m)
    chunk = max(1, int(_CHUNK_FLOATS // m))
    rows_t = rows.T.astype(float)
    with np.errstate(under="ignore"):
        for s in range(0, m, chunk):
            e = min(s + chunk, m)
            block = logp[s:e] @ rows_t
            block += logc[None, :]
            np.exp(block, out=block)
            out[s:e] = block @ values
    return out


def _check_batch(probs: np.ndarray) -> np.ndarray:
    if probs.min() < -1e-12:
        raise NegativeCoordinateError(
            "mutation rates produce negative frequencies on the lattice")
    return probs


def transition_matrix(d: int, n: int, rates: MutationRates | None = None,
                      state_cap: int = _MATRIX_CAP) -> np.ndarray:
    """Full one-step transition matrix P[state, next]; small lattices only."""
    m = lattice_size(d, n)
    if m > state_cap:
        raise LatticeSizeError(f"{m} states exceeds the matrix cap {state_cap}")
    rows = enumerate_lattice(d, n)
    logc = _lattice_log_coeffs(d, n)
    freqs = rows / float(n)
    probs = freqs if rates is None else np.clip(
        _check_batch(freqs + freqs @ rates.matrix), 0.0, None)
    with np.errstate(under="ignore"):
        return np.exp(log_probs(probs) @ rows.T.astype(float) + logc[None, :])


def iterate(f, x, n: int, N: int, rates: MutationRates | None = None,
            state_cap: int = ITERATE_STATE_CAP) -> float:
    """Exact N-fold iterate at x: N - 1 lattice applications, then one at x.

    N = 0 evaluates f at x itself.  Beyond ``state_cap`` lattice states the
    call refuses and the Monte-Carlo estimator is the intended fallback.
    """
    xv = coords_of(x)
    d = xv.shape[0]
    if N == 0:
        if isinstance(f, GridFunction):
            k = xv * n
            if not np.allclose(k, np.round(k), atol=1e-9):
                raise ValueError("N = 0 needs x on the lattice for grid functions")
            rows = enumerate_lattice(d, n)
            idx = int(np.where((rows == np.round(k).astype(int)).all(axis=1))[0][0])
            return float(f.values[idx])
        fn = f.value if isinstance(f, EvaluableFunction) else f
        return float(fn(xv))
    vals = _lattice_values(f, d, n)
    m = lattice_size(d, n)
    if N > 1 and m > state_cap:
        raise LatticeSizeError(
            f"{m} states exceeds the exact-iteration cap {state_cap}; "
            "use iterate_mc")
    if N > 1 and m <= _MATRIX_CAP:
        P = transition_matrix(d, n, rates)
        for _ in range(N - 1):
            vals = P @ vals
    else:
        for _ in range(N - 1):
            vals = transition_step(vals, d, n, rates, state_cap)
    return apply(GridFunction(vals, n, d), xv, n, rates)


# ---------------------------------------------------------------------------
# closed-form action on polynomials and moment functionals
# ---------------------------------------------------------------------------

def _success_polynomials(d: int, rates: MutationRates | None) -> list[Polynomial]:
    if rates is None:
        return [Polynomial.coordinate(i, d) for i in range(d)]
    q = rates.matrix
    out = []
    for i in range(d):
        coeffs = {}
        for j in range(d):
            alpha = [0] * d
            alpha[j] = 1
            c = (1.0 if i == j else 0.0) + q[j, i]
            if c != 0.0:
                coeffs[tuple(alpha)] = c
        out.append(Polynomial(coeffs, d))
    return out


def _monomial_image(alpha: Monomial, n: int,
                    succ: list[Polynomial]) -> Polynomial:
    """Closed form of the operator on one monomial via factorial moments."""
    d = len(alpha)
    active = [(i, a) for i, a in enumerate(alpha) if a > 0]
    if not active:
        return Polynomial.constant(1.0, d)
    total_deg = sum(a for _, a in active)
    powers = {i: [Polynomial.constant(1.0, d)] for i, _ in active}
    for i, a in active:
        for _ in range(a):
            powers[i].append(powers[i][-1] * succ[i])
    out = Polynomial.zero(d)
    for rs in _iproduct(*[range(1, a + 1) for _, a in active]):
        w = 1.0
        term = Polynomial.constant(1.0, d)
        for (i, a), r in zip(active, rs):
            w *= stirling2(a, r)
            term = term * powers[i][r]
        w *= falling_factorial(n, sum(rs)) / float(n) ** total_deg
        out = out + w * term
    return out


def coefficient_operator(d: int, n: int, degree: int,
                         rates: MutationRates | None = None
                         ) -> tuple[list[Monomial], np.ndarray]:
    """Matrix of the operator on the coefficient space of degree <= degree.

    The operator maps polynomials of total degree m to polynomials of total
    degree <= m, so the matrix is exact; iterates become matrix powers.
    """
    basis = monomial_basis(d, degree)
    index = {a: k for k, a in enumerate(basis)}
    succ = _success_polynomials(d, rates)
    M = np.zeros((len(basis), len(basis)))
    for col, alpha in enumerate(basis):
        img = _monomial_image(alpha, n, succ)
        for a, c in img.coeffs.items():
            M[index[a], col] = c
    return basis, M


def apply_polynomial(f: Polynomial, n: int,
                     rates: MutationRates | None = None) -> Polynomial:
    """The operator applied to a polynomial, as a polynomial (exact)."""
    basis, M = coefficient_operator(f.d, n, f.degree, rates)
    return Polynomial.from_coeff_vector(M @ f.coeff_vector(basis), basis, f.d)


def iterate_polynomial(f: Polynomial, n: int, N: int,
                       rates: MutationRates | None = None) -> Polynomial:
    """Exact N-fold iterate on a polynomial via coefficient matrix powers.

    Agrees with the lattice iterate to rounding; cost is independent of the
    lattice size, which makes large-n rate studies feasible.
    """
    if N == 0:
        return f
    basis, M = coefficient_operator(f.d, n, f.degree, rates)
    vec = np.linalg.matrix_power(M, N) @ f.coeff_vector(basis)
    return Polynomial.from_coeff_vector(vec, basis, f.d)


def apply_moment_exact(beta: np.ndarray, x, n: int,
                       rates: MutationRates | None = None) -> float:
    """Exact operator value on the moment functional <beta, (k/n)^(tensor N)>.

    beta is an order-N tensor (N <= 4) over the d coordinates; the mixed
    multinomial moments are evaluated in closed form via factorial-moment
    identities, cost O(d^N), independent of the lattice size.
    """
    beta = np.asarray(beta, dtype=float)
    N = beta.ndim
    if not 1 <= N <= 4:
        raise ValueError("moment functionals supported for order 1..4 only")
    xv = coords_of(x)
    p = _success_vector(xv, rates)
    if beta.shape != (xv.shape[0],) * N:
        raise ValueError("tensor extents must equal the point dimension")
    cache: dict[tuple, float] = {}

    def mixed(groups: tuple[tuple[int, int], ...]) -> float:
        val = cache.get(groups)
        if val is not None:
            return val
        total = 0.0
        for rs in _iproduct(*[range(1, m + 1) for _, m in groups]):
            w = 1.0
            for ((i, m), r) in zip(groups, rs):
                w *= stirling2(m, r) * p[i] ** r
            total += w * falling_factorial(n, sum(rs))
        total /= float(n) ** N
        cache[groups] = total
        return total

    out = 0.0
    for idx in np.ndindex(beta.shape):
        b = beta[idx]
        if b == 0.0:
            continue
        mults: dict[int, int] = {}
        for i in idx:
            mults[i] = mults.get(i, 0) + 1
        out += b * mixed(tuple(sorted(mults.items())))
    return float(out)


# ---------------------------------------------------------------------------
# chain sampling and path statistics
# ---------------------------------------------------------------------------

def _initial_counts(xv: np.ndarray, n: int, rates: MutationRates | None,
                    gen: np.random.Generator, paths: int) -> np.ndarray:
    k = xv * n
    rounded = np.round(k)
    if np.allclose(k, rounded, atol=1e-9):
        return np.tile(rounded.astype(np.int64), (paths, 1))
    # Off-lattice start: the first recorded state is one draw from x.
    p = _success_vector(xv, rates)
    return sample_multinomial_many(np.tile(p, (paths, 1)), n, gen)


def sample_chain(x, n: int, N: int, rates: MutationRates | None = None,
                 rng: RngStream | np.random.Generator = RngStream(0)) -> ChainTrajectory:
    """Sample one resampling chain of N steps starting from x."""
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    xv = coords_of(x)
    counts = np.empty((N + 1, xv.shape[0]), dtype=np.int64)
    counts[0] = _initial_counts(xv, n, rates, gen, 1)[0]
    for k in range(1, N + 1):
        p = _success_vector(counts[k - 1] / float(n), rates)
        counts[k] = sample_multinomial_many(p[None, :], n, gen)[0]
    return ChainTrajectory(counts, n, xv, rates)


def sample_chain_ensemble(x, n: int, N: int, rates: MutationRates | None,
                          paths: int, rng: RngStream | np.random.Generator,
                          keep: str = "all") -> np.ndarray:
    """Simulate ``paths`` independent chains in lockstep.

    Returns (paths, N + 1, d) counts, or (paths, d) endpoint counts with
    keep="end".
    """
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    xv = coords_of(x)
    d = xv.shape[0]
    state = _initial_counts(xv, n, rates, gen, paths)
    if keep == "all":
        hist = np.empty((paths, N + 1, d), dtype=np.int64)
        hist[:, 0, :] = state
    for k in range(1, N + 1):
        freqs = state / float(n)
        probs = freqs if rates is None else np.clip(
            _check_batch(freqs + freqs @ rates.matrix), 0.0, None)
        state = sample_multinomial_many(probs, n, gen)
        if keep == "all":
            hist[:, k, :] = state
    return hist if keep == "all" else state


def interpolate_path(traj: ChainTrajectory, compensate: bool = False) -> InterpolatedPath:
    """Piecewise-linear interpolation of a chain on the mesh-1/n time grid.

    With ``compensate`` the accumulated per-step mutation drift of the start
    point is subtracted (k steps remove k times (mutated start - start)).
    """
    values = traj.counts / float(traj.n)
    times = np.arange(traj.counts.shape[0]) / float(traj.n)
    if compensate:
        if traj.rates is None:
            raise ValueError("compensation needs the trajectory's rates")
        drift = mutated_coords(traj.start, traj.rates) - traj.start
        values = values - np.outer(np.arange(values.shape[0], dtype=float), drift)
    return InterpolatedPath(times, values)


def holder_statistic(path: InterpolatedPath, alpha: float) -> float:
    """Empirical alpha-Hoelder seminorm over all node pairs."""
    if not 0.0 < alpha <= 1.0:
        raise ValueError("need 0 < alpha <= 1")
    return float(holder_statistics(path.values[None, :, :], path.times, alpha)[0])


def holder_statistics(values: np.ndarray, times: np.ndarray,
                      alpha: float) -> np.ndarray:
    """Vectorized Hoelder seminorms for an ensemble, shape (paths,)."""
    paths, m, _ = values.shape
    best = np.zeros(paths)
    for g in range(1, m):
        diffs = values[:, g:, :] - values[:, :-g, :]
        sq = np.einsum("pmd,pmd->pm", diffs, diffs)
        denom = (times[g:] - times[:-g]) ** (2.0 * alpha)
        np.maximum(best, (sq / denom).max(axis=1), out=best)
    return np.sqrt(best)


def iterate_mc(f, x, n: int, N: int, rates: MutationRates | None,
               paths: int, rng: RngStream | np.random.Generator
               ) -> tuple[float, float]:
    """Monte-Carlo estimate of the N-fold iterate and its standard error."""
    if paths < 2:
        raise ValueError("need at least two paths for a standard error")
    ends = sample_chain_ensemble(x, n, N, rates, paths, rng, keep="end")
    vals = _eval_on_points(f, ends / float(n))
    mean = float(vals.mean())
    stderr = float(vals.std(ddof=1) / math.sqrt(paths))
    return mean, stderr


def longrun_limit(f, x, n: int, tol: float = 1e-10,
                  max_iter: int = 200_000) -> float:
    """Iterate the mutation-free operator to its fixed point and evaluate at x.

    The chain absorbs at the vertices, so the limit is the linear function
    through the vertex values: sum_i x_i f(e_i).
    """
    xv = coords_of(x)
    d = xv.shape[0]
    vals = _lattice_values(f, d, n)
    P = transition_matrix(d, n) if lattice_size(d, n) <= _MATRIX_CAP else None
    for _ in range(max_iter):
        new = P @ vals if P is not None else transition_step(vals, d, n)
        delta = float(np.max(np.abs(new - vals)))
        vals = new
        if delta < tol:
            return apply(GridFunction(vals, n, d), xv, n)
    raise ConvergenceError(f"no convergence after {max_iter} iterations")
