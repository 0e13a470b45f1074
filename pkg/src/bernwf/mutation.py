"""Mutation-rate matrices, per-generation schedules and assumption checks.

A rate matrix q = {q_ij} moves mass from type i to type j: off-diagonal
entries are the mutation intensities and each diagonal entry balances its
row, so rows sum to zero and the mutated point map preserves total mass.
The strict constructor enforces q_ij > 0 off the diagonal; the weak one
permits zeros (nearest-neighbour models need them) and, explicitly flagged,
boundary rows that lose mass.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .simplex import SimplexPoint, coords_of

ROWSUM_TOL = 1e-12
NEGATIVE_TOL = 1e-12

# Admissible decay threshold for per-generation rates in growing-dimension
# schedules: max_ij rate must vanish faster than n**(-11/16).
RATE_DECAY_THRESHOLD = 11.0 / 16.0


class NegativeCoordinateError(ValueError):
    """Mutated point left the simplex: the rates are too large for this x."""


@dataclass(frozen=True)
class MutationRates:
    """A d x d rate matrix with metadata about which conditions it satisfies.

    ``strict_positivity`` records whether all off-diagonal entries are
    strictly positive; ``conservative`` whether every row sums to zero
    (non-conservative matrices arise only from the absorbing boundary
    convention and must be requested explicitly).
    """

    matrix: np.ndarray
    strict_positivity: bool
    conservative: bool
    model: str | None = None
    theta: float | None = None

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] < 2:
            raise ValueError("rate matrix must be square with d >= 2")
        m = m.copy()
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def d(self) -> int:
        return self.matrix.shape[0]

    @classmethod
    def strict(cls, matrix, *, model: str | None = None,
               theta: float | None = None) -> "MutationRates":
        m = np.asarray(matrix, dtype=float)
        off = m[~np.eye(m.shape[0], dtype=bool)]
        if off.size and off.min() <= 0.0:
            raise ValueError("strict constructor needs q_ij > 0 for all i != j")
        _check_rowsums(m)
        return cls(m, strict_positivity=True, conservative=True,
                   model=model, theta=theta)

    @classmethod
    def weak(cls, matrix, *, allow_mass_loss: bool = False,
             model: str | None = None, theta: float | None = None) -> "MutationRates":
        m = np.asarray(matrix, dtype=float)
        off = m[~np.eye(m.shape[0], dtype=bool)]
        if off.size and off.min() < 0.0:
            raise ValueError("off-diagonal rates must be nonnegative")
        conservative = bool(np.all(np.abs(m.sum(axis=1)) <= ROWSUM_TOL))
        if not conservative and not allow_mass_loss:
            _check_rowsums(m)   # raises with the offending row
        strict = bool(off.size and off.min() > 0.0)
        return cls(m, strict_positivity=strict, conservative=conservative,
                   model=model, theta=theta)

    def scale(self, c: float) -> "MutationRates":
        return MutationRates(self.matrix * c, self.strict_positivity,
                             self.conservative, self.model, self.theta)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            self._write(fh)

    def to_csv_text(self) -> str:
        buf = io.StringIO()
        self._write(buf)
        return buf.getvalue()

    def _write(self, fh) -> None:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["d", "theta", "model"])
        w.writerow([self.d, "" if self.theta is None else repr(float(self.theta)),
                    self.model or ""])
        for row in self.matrix:
            w.writerow([repr(float(v)) for v in row])

    @classmethod
    def from_csv(cls, path) -> "MutationRates":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if rows[0] != ["d", "theta", "model"]:
            raise ValueError("bad header, expected d,theta,model")
        d = int(rows[1][0])
        theta = float(rows[1][1]) if rows[1][1] else None
        model = rows[1][2] or None
        m = np.array([[float(v) for v in row] for row in rows[2:2 + d]])
        return cls.weak(m, allow_mass_loss=True, model=model, theta=theta)


def _check_rowsums(m: np.ndarray) -> None:
    sums = m.sum(axis=1)
    bad = np.argmax(np.abs(sums))
    if abs(sums[bad]) > ROWSUM_TOL:
        raise ValueError(f"row {bad} sums to {sums[bad]:.3e}, expected 0")


def mutated_coords(x: np.ndarray, rates: MutationRates | None) -> np.ndarray:
    """Raw mutated coordinates x_i + sum_j q_ji x_j, without simplex checks."""
    if rates is None:
        return np.asarray(x, dtype=float)
    x = np.asarray(x, dtype=float)
    return x + x @ rates.matrix


def mutated_point(x, rates: MutationRates) -> SimplexPoint:
    """The mutated point map; raises ``NegativeCoordinateError`` when the
    rates are too large for this x (the operator is undefined there)."""
    xv = coords_of(x, d=rates.d)
    y = mutated_coords(xv, rates)
    if y.min() < -NEGATIVE_TOL:
        raise NegativeCoordinateError(
            f"coordinate {y.min():.3e} < -{NEGATIVE_TOL}; rates too large for x")
    # Row sums zero make the correction telescope, so the total stays 1 for
    # conservative matrices; absorbing boundaries may lose mass and then the
    # SimplexPoint constructor decides whether the defect is repairable.
    return SimplexPoint(np.clip(y, 0.0, None))


# ---------------------------------------------------------------------------
# concrete models
# ---------------------------------------------------------------------------

def uniform_mutation(n: int, d: int, theta: float) -> MutationRates:
    """Per-generation rates of the neutral-alleles model with uniform mutation:
    theta / (2 n (d - 1)) off the diagonal, -theta / (2 n) on it."""
    if theta <= 0:
        raise ValueError("theta must be positive")
    m = np.full((d, d), theta / (2.0 * n * (d - 1)))
    np.fill_diagonal(m, -theta / (2.0 * n))
    return MutationRates.strict(m, model="uniform", theta=theta)


def uniform_limit_matrix(d: int, theta: float) -> np.ndarray:
    """n -> infinity rescaled generator n * q_n of the uniform model."""
    m = np.full((d, d), theta / (2.0 * (d - 1)))
    np.fill_diagonal(m, -theta / 2.0)
    return m


def uniform_grid(d: int) -> np.ndarray:
    """Allele-type grid {i/d : i = 1..d} on [0, 1]."""
    return np.arange(1, d + 1) / float(d)


def ohta_kimura(n: int, d: int, theta: float,
                boundary: str = "absorbing") -> MutationRates:
    """Nearest-neighbour stepwise-mutation rates theta*d/(2n) on the
    off-diagonal band.

    boundary="absorbing" treats values outside the grid as zero, so the two
    end rows keep the full diagonal -theta*d/n and lose mass (flagged
    non-conservative).  boundary="reflecting" shrinks the end diagonals to
    -theta*d/(2n), restoring zero row sums.
    """
    if theta <= 0:
        raise ValueError("theta must be positive")
    if boundary not in ("absorbing", "reflecting"):
        raise ValueError("boundary must be 'absorbing' or 'reflecting'")
    r = theta * d / (2.0 * n)
    m = np.zeros((d, d))
    for i in range(d):
        if i > 0:
            m[i, i - 1] = r
        if i + 1 < d:
            m[i, i + 1] = r
        m[i, i] = -2.0 * r
    if boundary == "reflecting":
        m[0, 0] = -r
        m[d - 1, d - 1] = -r
    return MutationRates.weak(m, allow_mass_loss=(boundary == "absorbing"),
                              model=f"ohta-kimura-{boundary}", theta=theta)


def ohta_kimura_grid(d: int) -> np.ndarray:
    """Scaled integer grid: {0, ±1, ...}/sqrt(d), ascending; d points."""
    if d % 2 == 0:
        ints = np.arange(-(d // 2 - 1), d // 2 + 1)
    else:
        ints = np.arange(-((d - 1) // 2), (d - 1) // 2 + 1)
    return ints / np.sqrt(d)


def ohta_kimura_limit_matrix(d: int, theta: float,
                             boundary: str = "absorbing") -> np.ndarray:
    return ohta_kimura(1, d, theta, boundary).matrix


# ---------------------------------------------------------------------------
# schedules and assumption checks
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MutationSchedule:
    """Family n -> (dimension, per-generation rates, allele grid)."""

    name: str
    dim_for: Callable[[int], int]
    rates_for: Callable[[int], MutationRates]
    grid_for: Callable[[int], np.ndarray]


def fixed_dim(d: int) -> Callable[[int], int]:
    return lambda n: d


def ninth_root_dim(n: int) -> int:
    """Default growing-dimension schedule floor(n**(1/9)), safely rounded."""
    return max(2, int(round(n ** (1.0 / 9.0) + 1e-9)))


def uniform_schedule(theta: float,
                     dim_for: Callable[[int], int] = ninth_root_dim) -> MutationSchedule:
    return MutationSchedule(
        name="uniform",
        dim_for=dim_for,
        rates_for=lambda n: uniform_mutation(n, dim_for(n), theta),
        grid_for=lambda n: uniform_grid(dim_for(n)),
    )


def ohta_kimura_schedule(theta: float,
                         dim_for: Callable[[int], int] = ninth_root_dim,
                         boundary: str = "absorbing") -> MutationSchedule:
    return MutationSchedule(
        name=f"ohta-kimura-{boundary}",
        dim_for=dim_for,
        rates_for=lambda n: ohta_kimura(n, dim_for(n), theta, boundary),
        grid_for=lambda n: ohta_kimura_grid(dim_for(n)),
    )


@dataclass(frozen=True)
class AssumptionReport:
    """Finite-n measurement of an asymptotic assumption.

    The pass flag is a pure function of the recorded measurements and the
    stated thresholds; ``notes`` record positivity/conservativity violations.
    """

    name: str
    ns: tuple[int, ...]
    measurements: tuple[float, ...]
    fitted_exponent: float
    r_squared: float
    constant: float
    passed: bool
    notes: tuple[str, ...] = ()


def _loglog_fit(ns: Sequence[int], vals: Sequence[float]) -> tuple[float, float]:
    """Least-squares slope of log vals vs log ns and its R^2.

    Zero (or negative) measurements are excluded; with fewer than two
    positive points the fit degenerates to slope 0, R^2 1.
    """
    xs, ys = [], []
    for n, v in zip(ns, vals):
        if v > 0.0:
            xs.append(np.log(float(n)))
            ys.append(np.log(v))
    if len(xs) < 2:
        return 0.0, 1.0
    x = np.array(xs)
    y = np.array(ys)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - float(np.sum(resid ** 2)) / ss_tot
    return float(slope), r2


def _positivity_notes(schedule: MutationSchedule, ns: Sequence[int]) -> tuple[str, ...]:
    notes = []
    if any(not schedule.rates_for(n).strict_positivity for n in ns):
        notes.append("weak positivity: some off-diagonal rates are zero")
    if any(not schedule.rates_for(n).conservative for n in ns):
        notes.append("non-conservative boundary rows (absorbing convention)")
    return tuple(notes)


def check_rate_scaling(schedule: MutationSchedule, limit: np.ndarray,
                       gamma: float, ns: Sequence[int],
                       declared_constant: float | None = None) -> AssumptionReport:
    """Check that per-generation rates behave like limit/n up to O(n^-gamma).

    Measures dev(n) = max_ij |q_ij(n) - limit_ij / n|, fits the log-log
    slope and passes when the deviation decays at least as fast as
    n^-gamma (slope <= -gamma + 0.1) and, if a constant is declared,
    sup_n n^gamma * dev(n) stays below it.
    """
    if gamma <= 1.0:
        raise ValueError("gamma must exceed 1")
    limit = np.asarray(limit, dtype=float)
    devs = []
    for n in ns:
        q = schedule.rates_for(n).matrix
        devs.append(float(np.max(np.abs(q - limit / n))))
    slope, r2 = _loglog_fit(ns, devs)
    constant = max((n ** gamma) * dev for n, dev in zip(ns, devs))
    all_zero = all(dev <= 1e-300 for dev in devs)
    passed = all_zero or slope <= -gamma + 0.1
    if declared_constant is not None:
        passed = passed and constant <= declared_constant
    return AssumptionReport("rate-scaling", tuple(ns), tuple(devs), slope, r2,
                            constant, passed, _positivity_notes(schedule, ns))


def check_rate_decay(schedule: MutationSchedule, ns: Sequence[int],
                     envelope: Sequence[float] | None = None) -> AssumptionReport:
    """Check the growing-dimension smallness condition on max_ij q_ij(n).

    With no envelope the measured maxima themselves must decay strictly
    faster than n^-11/16; an explicit envelope a_n additionally requires the
    ratio max_ij q_ij(n) / a_n to show no growth trend.
    """
    maxima = []
    for n in ns:
        q = schedule.rates_for(n).matrix
        off = q[~np.eye(q.shape[0], dtype=bool)]
        maxima.append(float(off.max()))
    if envelope is None:
        env = list(maxima)
        ratio_ok = True
    else:
        env = [float(a) for a in envelope]
        ratios = [m / a for m, a in zip(maxima, env)]
        ratio_slope, _ = _loglog_fit(ns, ratios)
        ratio_ok = ratio_slope <= 0.05
    slope, r2 = _loglog_fit(ns, env)
    constant = max(m / a for m, a in zip(maxima, env))
    passed = ratio_ok and slope < -RATE_DECAY_THRESHOLD
    return AssumptionReport("rate-decay", tuple(ns), tuple(maxima), slope, r2,
                            constant, passed, _positivity_notes(schedule, ns))


def check_generator_convergence(schedule: MutationSchedule,
                                limit_action: Callable[[np.ndarray, Callable], np.ndarray],
                                beta: Callable[[float], float],
                                ns: Sequence[int],
                                tolerance: float,
                                interior_only: bool = False) -> AssumptionReport:
    """Check that n * (rate matrix) applied to beta on the allele grid
    converges to the limit mutation operator.

    ``limit_action(grid, beta) -> array`` evaluates the limit operator at the
    grid points.  Deviations are sup norms over the (optionally interior)
    grid; the check passes when they are nonincreasing and end below
    ``tolerance``.
    """
    devs = []
    for n in ns:
        grid = schedule.grid_for(n)
        q = schedule.rates_for(n).matrix
        bvals = np.array([beta(z) for z in grid])
        discrete = float(n) * (q @ bvals)
        target = np.asarray(limit_action(grid, beta), dtype=float)
        diff = np.abs(discrete - target)
        if interior_only and diff.shape[0] > 2:
            diff = diff[1:-1]
        devs.append(float(diff.max()))
    slope, r2 = _loglog_fit(ns, devs)
    nonincreasing = all(b <= a * (1.0 + 1e-9) + 1e-12
                        for a, b in zip(devs, devs[1:]))
    passed = nonincreasing and devs[-1] <= tolerance
    return AssumptionReport("generator-convergence", tuple(ns), tuple(devs),
                            slope, r2, devs[-1] if devs else 0.0, passed,
                            _positivity_notes(schedule, ns))


def uniform_limit_action(theta: float, panels: int = 2048):
    """Limit operator of the uniform model: (theta/2) (mean of beta - beta(z)).

    The mean over [0, 1] is a fixed-panel Simpson rule, exact for cubics and
    far below measurement noise otherwise.
    """
    if panels % 2:
        panels += 1
    ys = np.linspace(0.0, 1.0, panels + 1)
    w = np.ones(panels + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    w /= 3.0 * panels

    def action(grid: np.ndarray, beta: Callable[[float], float]) -> np.ndarray:
        mean = float(np.dot(w, np.array([beta(y) for y in ys])))
        return 0.5 * theta * (mean - np.array([beta(z) for z in grid]))

    return action


def second_derivative_action(theta: float, beta_dd: Callable[[float], float]):
    """Limit operator (theta/2) beta'' for stepwise models, with beta''
    supplied analytically."""

    def action(grid: np.ndarray, beta: Callable[[float], float]) -> np.ndarray:
        return 0.5 * theta * np.array([beta_dd(z) for z in grid])

    return action
