"""Simplex geometry, lattice enumeration and multinomial primitives.

Everything downstream (operators, chains, residual studies) lives on the
probability simplex and on the counting lattice {k in N_0^d : |k| = n}.
This module fixes the shared conventions once:

* lattice rows are ordered lexicographically in (k_1, ..., k_d) and every
  grid function indexes into that order,
* probability mass functions are evaluated in log space against a cached
  log-factorial table (no overflow up to n ~ 1e4, ~ulp relative error),
* all random sampling goes through ``RngStream`` so a (seed, stream) pair
  reproduces its output bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np

# Membership tolerance for simplex coordinates after arithmetic.
SIMPLEX_TOL = 1e-12
# Construction repairs coordinate sums within this; anything worse is rejected.
RENORM_TOL = 1e-9
# Refuse to enumerate lattices larger than this.
DEFAULT_LATTICE_CAP = 10**8


class LatticeSizeError(RuntimeError):
    """Requested lattice exceeds the configured enumeration cap."""


def lattice_size(d: int, n: int) -> int:
    """Number of lattice states, the stars-and-bars count C(n + d - 1, d - 1)."""
    return math.comb(n + d - 1, d - 1)


def coords_of(x, d: int | None = None) -> np.ndarray:
    """Validate a point-like object and return its coordinate array.

    Accepts a ``SimplexPoint``, sequence or ndarray.  Coordinates may be off
    by float noise: values in [-SIMPLEX_TOL, 0) are clipped to 0 and sums
    within RENORM_TOL of one are renormalized.  Anything worse raises.
    """
    if isinstance(x, SimplexPoint):
        arr = x.coords
        if d is not None and arr.shape[0] != d:
            raise ValueError(f"expected dimension {d}, got {arr.shape[0]}")
        return arr
    arr = np.asarray(x, dtype=float)
    if arr.ndim != 1 or arr.shape[0] < 2:
        raise ValueError("a simplex point needs at least two coordinates")
    if d is not None and arr.shape[0] != d:
        raise ValueError(f"expected dimension {d}, got {arr.shape[0]}")
    if arr.min() < -SIMPLEX_TOL:
        raise ValueError(f"negative coordinate {arr.min():.3e} below tolerance")
    arr = np.clip(arr, 0.0, None)
    s = arr.sum()
    if abs(s - 1.0) > RENORM_TOL:
        raise ValueError(f"coordinates sum to {s!r}, off by more than {RENORM_TOL}")
    if s != 1.0:
        arr = arr / s
    arr.setflags(write=False)
    return arr


class SimplexPoint:
    """A point of the probability simplex in R^d, d >= 2.

    Coordinates are validated on construction: nonnegative within 1e-12 and
    summing to one within 1e-9 (then renormalized exactly).
    """

    __slots__ = ("coords",)

    def __init__(self, coords: Sequence[float] | np.ndarray):
        self.coords = coords_of(np.asarray(coords, dtype=float))

    @property
    def d(self) -> int:
        return self.coords.shape[0]

    @classmethod
    def vertex(cls, d: int, i: int) -> "SimplexPoint":
        v = np.zeros(d)
        v[i] = 1.0
        return cls(v)

    @classmethod
    def barycenter(cls, d: int) -> "SimplexPoint":
        return cls(np.full(d, 1.0 / d))

    def __iter__(self):
        return iter(self.coords)

    def __len__(self):
        return self.d

    def __getitem__(self, i):
        return self.coords[i]

    def __repr__(self):
        inside = ", ".join(f"{c:.6g}" for c in self.coords)
        return f"SimplexPoint([{inside}])"

    def __eq__(self, other):
        if not isinstance(other, SimplexPoint):
            return NotImplemented
        return self.d == other.d and bool(np.all(self.coords == other.coords))


@dataclass(frozen=True)
class LatticeIndex:
    """A state k of the counting lattice: nonnegative integers with |k| = n."""

    counts: tuple[int, ...]
    n: int

    def __post_init__(self):
        if any(c < 0 for c in self.counts):
            raise ValueError("counts must be nonnegative")
        if sum(self.counts) != self.n:
            raise ValueError(f"counts sum to {sum(self.counts)}, expected {self.n}")

    @property
    def d(self) -> int:
        return len(self.counts)

    def frequency(self) -> np.ndarray:
        return np.asarray(self.counts, dtype=float) / self.n


@dataclass(frozen=True)
class RngStream:
    """Reproducible random stream derived from (master seed, stream index).

    Two streams with the same pair produce identical output sequences; the
    generator is created lazily and must not be shared across concurrent
    tasks.
    """

    seed: int
    index: int = 0

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=(self.index,))
        return np.random.Generator(np.random.PCG64(ss))

    def substream(self, index: int) -> "RngStream":
        # Flat derivation: child identity is (seed, index); callers hand out
        # disjoint indices, e.g. one per Monte-Carlo path.
        return RngStream(self.seed, index)


@lru_cache(maxsize=512)
def _lattice_rows(d: int, n: int) -> np.ndarray:
    if d == 1:
        rows = np.array([[n]], dtype=np.int64)
    else:
        blocks = []
        for k in range(n + 1):
            rest = _lattice_rows(d - 1, n - k)
            first = np.full((rest.shape[0], 1), k, dtype=np.int64)
            blocks.append(np.hstack([first, rest]))
        rows = np.vstack(blocks)
    rows.setflags(write=False)
    return rows


def enumerate_lattice(d: int, n: int, cap: int = DEFAULT_LATTICE_CAP) -> np.ndarray:
    """All k with |k| = n as an (M, d) int array, lexicographic in (k_1..k_d).

    M = C(n + d - 1, d - 1).  Raises ``LatticeSizeError`` beyond ``cap``.
    """
    if d < 2 or n < 1:
        raise ValueError("need d >= 2 and n >= 1")
    size = lattice_size(d, n)
    if size > cap:
        raise LatticeSizeError(f"lattice has {size} states, cap is {cap}")
    return _lattice_rows(d, n)


_LOGFACT = np.zeros(1)


def log_factorials(n: int) -> np.ndarray:
    """Table [log 0!, ..., log n!], grown on demand and cached."""
    global _LOGFACT
    if _LOGFACT.shape[0] <= n:
        old = _LOGFACT
        new = np.empty(n + 1)
        new[: old.shape[0]] = old
        for k in range(old.shape[0], n + 1):
            new[k] = new[k - 1] + math.log(k)
        _LOGFACT = new
    return _LOGFACT[: n + 1]


@lru_cache(maxsize=256)
def _lattice_log_coeffs(d: int, n: int) -> np.ndarray:
    """log multinomial coefficients for every lattice row, in lattice order."""
    rows = _lattice_rows(d, n)
    lf = log_factorials(n)
    out = lf[n] - lf[rows].sum(axis=1)
    out.setflags(write=False)
    return out


def log_probs(p: np.ndarray) -> np.ndarray:
    # -1e30 stands in for log 0: k * (-1e30) underflows exp to exactly 0 while
    # k = 0 contributes 0, which encodes the 0^0 = 1 convention in the matmul.
    return np.where(p > 0.0, np.log(np.maximum(p, 1e-300)), -1e30)


def multinomial_pmf(x, k) -> float:
    """P(multinomial(n, x) = k) with the 0^0 = 1 convention, log-space inside."""
    if isinstance(k, LatticeIndex):
        counts = np.asarray(k.counts, dtype=np.int64)
        n = k.n
    else:
        counts = np.asarray(k, dtype=np.int64)
        n = int(counts.sum())
    p = coords_of(x, d=counts.shape[0])
    if n < 1:
        raise ValueError("need n >= 1")
    if np.any((p == 0.0) & (counts > 0)):
        return 0.0
    lf = log_factorials(n)
    logc = lf[n] - lf[counts].sum()
    return float(math.exp(logc + float(counts @ log_probs(p))))


def multinomial_pmf_grid(p: np.ndarray, d: int, n: int,
                         cap: int = DEFAULT_LATTICE_CAP) -> np.ndarray:
    """Pmf over the whole lattice at success vector p, in lattice order."""
    rows = enumerate_lattice(d, n, cap)
    logc = _lattice_log_coeffs(d, n)
    return np.exp(logc + rows @ log_probs(np.asarray(p, dtype=float)))


def sample_multinomial(x, n: int, rng: RngStream | np.random.Generator) -> LatticeIndex:
    """One multinomial draw by sequential binomial decomposition.

    Coordinates are drawn one at a time with the success probability
    renormalized by the remaining mass, so d - 1 binomial variates suffice.
    """
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    p = coords_of(x)
    counts = _decompose(p[None, :], n, gen)[0]
    return LatticeIndex(tuple(int(c) for c in counts), n)


def sample_multinomial_many(probs: np.ndarray, n, gen: np.random.Generator) -> np.ndarray:
    """Vectorized binomial-decomposition sampler.

    probs: (m, d) rows of success vectors (need not be distinct); n: scalar or
    (m,) totals.  Returns (m, d) int64 counts.
    """
    return _decompose(np.asarray(probs, dtype=float), n, gen)


def _decompose(probs: np.ndarray, n, gen: np.random.Generator) -> np.ndarray:
    m, d = probs.shape
    remaining = np.broadcast_to(np.asarray(n, dtype=np.int64), (m,)).copy()
    out = np.zeros((m, d), dtype=np.int64)
    for i in range(d - 1):
        tail = probs[:, i:].sum(axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            frac = np.where(tail > 0.0, probs[:, i] / tail, 0.0)
        frac = np.clip(frac, 0.0, 1.0)
        draw = gen.binomial(remaining, frac)
        out[:, i] = draw
        remaining -= draw
    out[:, d - 1] = remaining
    return out


def simplex_grid(d: int, m: int) -> np.ndarray:
    """Deterministic evaluation grid {k/m : |k| = m}, in lattice order.

    Includes the d vertices; C(m + d - 1, d - 1) points altogether.
    """
    return enumerate_lattice(d, m) / float(m)
