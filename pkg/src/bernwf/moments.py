"""Exact binomial central moments and even-moment growth certificates.

Central moments E[(S - nx)^gamma] are computed two independent ways: direct
summation over the support with exact (fsum) accumulation, and the classical
derivative recursion mu_{r+1} = x(1-x) (n r mu_{r-1} + d mu_r / dx) carried
out symbolically on polynomial coefficients.  The certificates back the
chain moment-scaling tests: even moments grow like n^beta with a stable
constant.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np

from .mutation import _loglog_fit


def central_moment_binomial(n: int, x: float, gamma: int) -> float:
    """E[(S - nx)^gamma] for S ~ Binomial(n, x), by exact direct summation.

    Terms are accumulated with math.fsum, so the notorious cancellation of
    large central moments costs at most one rounding at the end.
    """
    if not 0.0 <= x <= 1.0:
        raise ValueError("x must lie in [0, 1]")
    if gamma < 1:
        raise ValueError("gamma must be >= 1")
    if x == 0.0 or x == 1.0:
        return 0.0
    mean = n * x
    logx, log1x = math.log(x), math.log(1.0 - x)
    terms = []
    lgn = math.lgamma(n + 1)
    for k in range(n + 1):
        logpmf = (lgn - math.lgamma(k + 1) - math.lgamma(n - k + 1)
                  + k * logx + (n - k) * log1x)
        terms.append(math.exp(logpmf) * (k - mean) ** gamma)
    return math.fsum(terms)


@lru_cache(maxsize=None)
def central_moment_polynomial(n: int, gamma: int) -> tuple[float, ...]:
    """Coefficients (ascending in x) of E[(S - nx)^gamma] as a polynomial.

    Derivative recursion, exact up to float rounding on the coefficients;
    serves as the independent cross-check of the direct summation.
    """
    polys = [np.array([1.0]), np.array([0.0])]  # mu_0, mu_1
    for r in range(1, gamma):
        mu_r = polys[r]
        mu_rm1 = polys[r - 1]
        dmu = np.polynomial.polynomial.polyder(mu_r) if mu_r.shape[0] > 1 else np.array([0.0])
        inner = np.polynomial.polynomial.polyadd(float(n * r) * mu_rm1, dmu)
        xfac = np.array([0.0, 1.0, -1.0])  # x (1 - x)
        polys.append(np.polynomial.polynomial.polymul(xfac, inner))
    return tuple(float(c) for c in polys[gamma])


def central_moment_recursion(n: int, x: float, gamma: int) -> float:
    coeffs = central_moment_polynomial(n, gamma)
    return float(np.polynomial.polynomial.polyval(x, np.asarray(coeffs)))


@dataclass(frozen=True)
class MomentTable:
    """Sweep of even central moments and their n^beta-normalized ratios."""

    beta: int
    ns: tuple[int, ...]
    xs: tuple[float, ...]
    moments: np.ndarray   # shape (len(ns), len(xs))
    ratios: np.ndarray    # moments / n^beta

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["n", "x", "beta", "moment", "ratio"])
            for i, n in enumerate(self.ns):
                for j, x in enumerate(self.xs):
                    w.writerow([n, repr(x), self.beta,
                                repr(float(self.moments[i, j])),
                                repr(float(self.ratios[i, j]))])


def moment_table(beta: int, ns: Sequence[int], xs: Sequence[float]) -> MomentTable:
    ns = tuple(int(n) for n in ns)
    xs = tuple(float(x) for x in xs)
    moments = np.empty((len(ns), len(xs)))
    for i, n in enumerate(ns):
        for j, x in enumerate(xs):
            moments[i, j] = central_moment_binomial(n, x, 2 * beta)
    ratios = moments / np.array(ns, dtype=float)[:, None] ** beta
    return MomentTable(beta, ns, xs, moments, ratios)


@dataclass(frozen=True)
class CertifiedBound:
    """Constant C with E[(S - nx)^(2 beta)] <= C n^beta over the sweep.

    ``stable`` records that the per-n maxima show no growth trend, which is
    the constructive content of the bound being n-independent.
    """

    beta: int
    constant: float
    per_n_max: tuple[float, ...]
    ns: tuple[int, ...]
    stable: bool


def moment_bound_certify(beta: int, ns: Sequence[int],
                         xs: Sequence[float]) -> CertifiedBound:
    if beta < 1:
        raise ValueError("beta must be >= 1")
    table = moment_table(beta, ns, xs)
    per_n = table.ratios.max(axis=1)
    # The ratio may still be climbing towards its n -> infinity plateau at
    # small n; stability means the tail has flattened out.
    tail = max(2, len(per_n) // 2)
    slope, _ = _loglog_fit(table.ns[-tail:], per_n[-tail:])
    stable = slope <= 0.02
    return CertifiedBound(beta, float(per_n.max()),
                          tuple(float(v) for v in per_n), table.ns, stable)


@dataclass(frozen=True)
class EnvelopeReport:
    """Ratio of the exact 2beta-th root moment to the max-term envelope

        max_{k=2..beta} k^(1 - k/(2 beta)) (n sigma^2)^(k/(2 beta)),

    which should stay inside a fixed positive band across the sweep."""

    beta: int
    ns: tuple[int, ...]
    xs: tuple[float, ...]
    ratios: np.ndarray
    band: tuple[float, float]
    passed: bool


def skorski_envelope_check(beta: int, ns: Sequence[int],
                           xs: Sequence[float]) -> EnvelopeReport:
    if beta < 2:
        raise ValueError("the envelope characterization needs beta >= 2")
    ns = tuple(int(n) for n in ns)
    xs = tuple(float(x) for x in xs)
    ratios = np.empty((len(ns), len(xs)))
    for i, n in enumerate(ns):
        for j, x in enumerate(xs):
            sigma2 = x * (1.0 - x)
            if sigma2 == 0.0:
                ratios[i, j] = 1.0  # degenerate law: moment = envelope = 0
                continue
            root = central_moment_binomial(n, x, 2 * beta) ** (1.0 / (2 * beta))
            envelope = max(k ** (1.0 - k / (2.0 * beta))
                           * (n * sigma2) ** (k / (2.0 * beta))
                           for k in range(2, beta + 1))
            ratios[i, j] = root / envelope
    lo, hi = float(ratios.min()), float(ratios.max())
    passed = lo > 0.0 and math.isfinite(hi)
    return EnvelopeReport(beta, ns, xs, ratios, (lo, hi), passed)
