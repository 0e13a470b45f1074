"""Independent oracles shared by the test modules.

Everything here deliberately avoids the library's own pmf / transition code:
probabilities come from scipy.stats.multinomial and limits from dense linear
algebra, so agreement is a genuine cross-check.
"""

import numpy as np
from scipy.stats import multinomial as sp_multinomial

from bernwf.simplex import enumerate_lattice


def scipy_transition_matrix(d: int, n: int) -> np.ndarray:
    """Mutation-free resampling transition matrix via scipy's pmf."""
    states = enumerate_lattice(d, n)
    m = states.shape[0]
    P = np.zeros((m, m))
    for i, k in enumerate(states):
        p = k / n
        # scipy rejects zero-probability categories with positive counts only
        # through nan; mask manually.
        pmf = sp_multinomial(n, p).pmf(states)
        pmf = np.nan_to_num(pmf, nan=0.0)
        bad = (states[:, p == 0.0] > 0).any(axis=1)
        pmf[bad] = 0.0
        P[i] = pmf
    return P


def absorption_limit_values(d: int, n: int, values: np.ndarray) -> np.ndarray:
    """lim_k (P^k values) by the fundamental-matrix absorption solve."""
    states = enumerate_lattice(d, n)
    P = scipy_transition_matrix(d, n)
    vertex_mask = (states == n).any(axis=1)
    t_idx = np.where(~vertex_mask)[0]
    v_idx = np.where(vertex_mask)[0]
    Q = P[np.ix_(t_idx, t_idx)]
    R = P[np.ix_(t_idx, v_idx)]
    A = np.linalg.solve(np.eye(t_idx.size) - Q, R)
    out = np.array(values, dtype=float)
    out[t_idx] = A @ values[v_idx]
    return out


def random_point(d: int, rng: np.random.Generator) -> np.ndarray:
    x = rng.dirichlet(np.ones(d))
    return x / x.sum()
