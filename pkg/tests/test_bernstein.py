import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bernwf import bernstein as bn
from bernwf.mutation import (MutationRates, mutated_coords, uniform_mutation)
from bernwf.polynomials import Polynomial, monomial_basis, parse_polynomial
from bernwf.simplex import (LatticeSizeError, RngStream, enumerate_lattice,
                            lattice_size)

from helpers import absorption_limit_values, random_point


def random_poly(d, degree, rng):
    basis = monomial_basis(d, degree)
    return Polynomial({a: float(c) for a, c in
                       zip(basis, rng.normal(size=len(basis)))}, d)


class TestApply:
    def test_constant_is_reproduced(self):
        rng = np.random.default_rng(0)
        for d, n in [(2, 5), (3, 11), (4, 6)]:
            x = random_point(d, rng)
            qn = uniform_mutation(n, d, 0.8)
            assert bn.apply(lambda p: 1.0, x, n) == pytest.approx(1.0, abs=1e-13)
            assert bn.apply(lambda p: 1.0, x, n, qn) == pytest.approx(1.0, abs=1e-13)

    def test_coordinates_map_to_mutated_point(self):
        rng = np.random.default_rng(1)
        d, n = 3, 9
        x = random_point(d, rng)
        qn = uniform_mutation(n, d, 1.0)
        p = mutated_coords(x, qn)
        for i in range(d):
            f = Polynomial.coordinate(i, d)
            assert bn.apply(f, x, n, qn) == pytest.approx(p[i], abs=1e-14)
            # mutation-free version reproduces coordinates at machine precision
            assert bn.apply(f, x, n) == pytest.approx(x[i], abs=1e-14)

    def test_squared_coordinate_closed_form(self):
        rng = np.random.default_rng(2)
        d, n = 3, 12
        x = random_point(d, rng)
        qn = uniform_mutation(n, d, 0.5)
        p = mutated_coords(x, qn)
        for i in range(d):
            f = parse_polynomial(f"x{i+1}^2", d)
            expected = (n - 1) / n * p[i] ** 2 + p[i] / n
            assert bn.apply(f, x, n, qn) == pytest.approx(expected, abs=1e-13)

    def test_grid_function_agrees_with_callable(self):
        d, n = 3, 8
        f = parse_polynomial("x1*x2 - x3^2", d)
        g = bn.GridFunction.from_callable(f, d, n)
        x = [0.2, 0.5, 0.3]
        assert bn.apply(g, x, n) == pytest.approx(bn.apply(f, x, n), abs=1e-14)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 10**6))
    def test_positivity_and_contraction(self, seed):
        rng = np.random.default_rng(seed)
        d, n = 3, 6
        values = rng.uniform(size=lattice_size(d, n))
        g = bn.GridFunction(values, n, d)
        x = random_point(d, rng)
        out = bn.apply(g, x, n)
        assert out >= -1e-14
        assert abs(out) <= values.max() + 1e-14


class TestMomentAndPolynomialPaths:
    def test_moment_order1_and_2(self):
        rng = np.random.default_rng(3)
        d, n = 3, 10
        x = random_point(d, rng)
        qn = uniform_mutation(n, d, 1.0)
        p = mutated_coords(x, qn)
        for i in range(d):
            beta = np.zeros(d)
            beta[i] = 1.0
            assert bn.apply_moment_exact(beta, x, n, qn) == pytest.approx(p[i])
        b2 = np.zeros((d, d))
        b2[0, 1] = 1.0
        assert bn.apply_moment_exact(b2, x, n, qn) == pytest.approx(
            (1 - 1 / n) * p[0] * p[1])
        b2 = np.zeros((d, d))
        b2[2, 2] = 1.0
        assert bn.apply_moment_exact(b2, x, n, qn) == pytest.approx(
            (n - 1) / n * p[2] ** 2 + p[2] / n)

    @pytest.mark.parametrize("order", [2, 3, 4])
    def test_moment_agrees_with_lattice_sum(self, order):
        rng = np.random.default_rng(40 + order)
        d, n = 3, 12
        x = random_point(d, rng)
        qn = uniform_mutation(n, d, 0.9)
        beta = rng.normal(size=(d,) * order)
        closed = bn.apply_moment_exact(beta, x, n, qn)
        freqs = enumerate_lattice(d, n) / n
        vals = np.array([_tensor_eval(beta, f) for f in freqs])
        lattice = bn.apply(bn.GridFunction(vals, n, d), x, n, qn)
        assert closed == pytest.approx(lattice, rel=1e-12, abs=1e-12)

    def test_polynomial_operator_agrees_with_lattice(self):
        rng = np.random.default_rng(5)
        for d, n, qn in [(2, 9, None), (3, 7, uniform_mutation(7, 3, 1.0))]:
            f = random_poly(d, 3, rng)
            Bf = bn.apply_polynomial(f, n, qn)
            for _ in range(5):
                x = random_point(d, rng)
                assert Bf(x) == pytest.approx(bn.apply(f, x, n, qn),
                                              rel=1e-11, abs=1e-11)

    def test_iterate_polynomial_matches_lattice_iterate(self):
        qn = uniform_mutation(10, 3, 1.0)
        f = parse_polynomial("x1^3 - x2*x3", 3)
        x = [0.2, 0.3, 0.5]
        exact = bn.iterate(f, x, 10, 7, qn)
        poly = bn.iterate_polynomial(f, 10, 7, qn)(x)
        assert poly == pytest.approx(exact, abs=1e-12)


def _tensor_eval(beta, f):
    out = beta
    for _ in range(beta.ndim):
        out = out @ f
    return float(out)


class TestIterate:
    def test_zero_steps_returns_value(self):
        f = parse_polynomial("x1^2", 2)
        assert bn.iterate(f, [0.3, 0.7], 5, 0) == pytest.approx(0.09)

    def test_one_step_is_apply(self):
        f = parse_polynomial("x1*x2", 3)
        x = [0.25, 0.25, 0.5]
        assert bn.iterate(f, x, 8, 1) == pytest.approx(bn.apply(f, x, 8),
                                                       abs=1e-13)

    def test_variance_recursion_closed_form(self):
        # one-dimensional closed form: B^N e1^2 = x - x(1-x)(1-1/n)^N
        f = parse_polynomial("x1^2", 2)
        n, N = 5, 200
        for x1 in (0.2, 0.5, 0.9):
            expected = x1 - x1 * (1 - x1) * (1 - 1 / n) ** N
            assert bn.iterate(f, [x1, 1 - x1], n, N) == pytest.approx(
                expected, abs=1e-12)

    def test_cap_refuses_and_names_fallback(self):
        f = parse_polynomial("x1", 3)
        with pytest.raises(LatticeSizeError, match="iterate_mc"):
            bn.iterate(f, [0.2, 0.3, 0.5], 300, 5, state_cap=1000)


class TestMonteCarlo:
    def test_constant_has_zero_stderr(self):
        est, se = bn.iterate_mc(lambda p: 1.0, [0.4, 0.6], 6, 4, None, 100,
                                RngStream(0, 0))
        assert est == 1.0 and se == 0.0

    def test_vertex_start_is_frozen(self):
        f = parse_polynomial("x1*x2", 3)
        est, se = bn.iterate_mc(f, [1.0, 0.0, 0.0], 7, 9, None, 50,
                                RngStream(1, 0))
        assert est == 0.0 and se == 0.0

    def test_matches_exact_iterate_within_4_sigma(self):
        d, n, N = 3, 20, 10
        f = parse_polynomial("x1*x2", d)
        x = [0.3, 0.3, 0.4]
        exact = bn.iterate(f, x, n, N)
        est, se = bn.iterate_mc(f, x, n, N, None, 100_000, RngStream(2, 0))
        assert abs(est - exact) <= 4.0 * se


class TestChains:
    def test_vertex_chain_constant(self):
        traj = bn.sample_chain([0.0, 1.0], 6, 10, rng=RngStream(3, 0))
        assert (traj.counts == np.array([0, 6])).all()

    def test_lattice_start_is_exact(self):
        traj = bn.sample_chain([0.5, 0.5], 4, 3, rng=RngStream(4, 0))
        assert tuple(traj.counts[0]) == (2, 2)

    def test_one_step_transition_frequencies(self):
        # from state (1,1) at n = 2: (2,0) w.p. 1/4, (1,1) w.p. 1/2, (0,2) w.p. 1/4
        ends = bn.sample_chain_ensemble([0.5, 0.5], 2, 1, None, 10**6,
                                        RngStream(5, 0), keep="end")
        for target, prob in [((2, 0), 0.25), ((1, 1), 0.5), ((0, 2), 0.25)]:
            freq = float((ends == np.array(target)).all(axis=1).mean())
            sigma = math.sqrt(prob * (1 - prob) / 10**6)
            assert abs(freq - prob) <= 4.0 * sigma

    def test_conditional_mean_is_current_state(self):
        n = 12
        y = np.array([5, 4, 3]) / n
        ends = bn.sample_chain_ensemble(y, n, 1, None, 200_000,
                                        RngStream(6, 0), keep="end") / n
        sigma = np.sqrt(y * (1 - y) / n / 200_000)
        assert (np.abs(ends.mean(axis=0) - y) <= 4.0 * sigma).all()

    def test_trajectory_csv_roundtrip(self, tmp_path):
        traj = bn.sample_chain([0.25, 0.75], 8, 5, rng=RngStream(7, 0))
        path = tmp_path / "traj.csv"
        traj.to_csv(path)
        header = path.read_text().splitlines()[0]
        assert header == "step,k_1,k_2"
        back = bn.ChainTrajectory.from_csv(path)
        assert (back.counts == traj.counts).all()
        assert back.n == traj.n

    def test_grid_function_csv_roundtrip(self, tmp_path):
        g = bn.GridFunction(np.arange(lattice_size(3, 4), dtype=float), 4, 3)
        path = tmp_path / "grid.csv"
        g.to_csv(path)
        back = bn.GridFunction.from_csv(path)
        assert (back.values == g.values).all()
        assert (back.n, back.d) == (4, 3)


class TestPaths:
    def test_constant_trajectory_constant_path(self):
        traj = bn.sample_chain([1.0, 0.0], 5, 8, rng=RngStream(8, 0))
        path = bn.interpolate_path(traj)
        assert np.allclose(path.values, path.values[0])
        assert bn.holder_statistic(path, 0.4) == 0.0

    def test_nodes_hit_chain_states(self):
        traj = bn.sample_chain([0.4, 0.6], 10, 10, rng=RngStream(9, 0))
        path = bn.interpolate_path(traj)
        for k in (0, 3, 10):
            assert np.allclose(path(k / 10), traj.counts[k] / 10)
        # clamped beyond the last node
        assert np.allclose(path(2.0), traj.counts[-1] / 10)

    def test_compensation_vanishes_without_mutation(self):
        x = [0.4, 0.6]
        qzero = MutationRates.weak(np.zeros((2, 2)))
        traj = bn.sample_chain(x, 10, 6, qzero, RngStream(10, 0))
        plain = bn.interpolate_path(traj, compensate=False)
        comp = bn.interpolate_path(traj, compensate=True)
        assert np.allclose(plain.values, comp.values)

    def test_compensation_subtracts_drift(self):
        n, d = 10, 2
        qn = uniform_mutation(n, d, 1.0)
        x = np.array([0.3, 0.7])
        traj = bn.sample_chain(x, n, 4, qn, RngStream(11, 0))
        comp = bn.interpolate_path(traj, compensate=True)
        drift = mutated_coords(x, qn) - x
        expected = traj.counts[2] / n - 2 * drift
        assert np.allclose(comp.values[2], expected)

    def test_linear_path_holder_norm(self):
        times = np.linspace(0.0, 1.0, 11)
        v = np.array([1.0, -2.0])
        path = bn.InterpolatedPath(times, np.outer(times, v))
        assert bn.holder_statistic(path, 1.0) == pytest.approx(np.linalg.norm(v))

    def test_holder_statistics_matches_single(self):
        traj = bn.sample_chain([0.5, 0.3, 0.2], 20, 20, rng=RngStream(12, 0))
        path = bn.interpolate_path(traj)
        single = bn.holder_statistic(path, 0.4)
        batch = bn.holder_statistics(path.values[None], path.times, 0.4)
        assert single == pytest.approx(float(batch[0]))


class TestLongRun:
    def test_affine_is_immediate(self):
        d, n = 3, 6
        f = parse_polynomial("0.5*x1 - 2*x3 + 1", d)
        x = [0.3, 0.3, 0.4]
        vertex_vals = [f(np.eye(d)[i]) for i in range(d)]
        expected = float(np.dot(x, vertex_vals))
        assert bn.longrun_limit(f, x, n, tol=1e-12) == pytest.approx(
            expected, abs=1e-10)

    def test_squared_coordinate_limits_to_coordinate(self):
        f = parse_polynomial("x1^2", 2)
        assert bn.longrun_limit(f, [0.3, 0.7], 5, tol=1e-12) == pytest.approx(
            0.3, abs=1e-9)

    def test_matches_absorbing_chain_solve(self):
        d, n = 3, 4
        rng = np.random.default_rng(13)
        values = rng.normal(size=lattice_size(d, n))
        f = bn.GridFunction(values.copy(), n, d)
        oracle = absorption_limit_values(d, n, values)
        lattice = enumerate_lattice(d, n) / n
        for idx in (0, 4, 7, 12):
            got = bn.longrun_limit(f, lattice[idx], n, tol=1e-12)
            assert got == pytest.approx(oracle[idx], abs=1e-8)

    def test_nonconvergence_raises(self):
        f = parse_polynomial("x1^2", 2)
        with pytest.raises(bn.ConvergenceError):
            bn.longrun_limit(f, [0.5, 0.5], 8, tol=1e-12, max_iter=3)


def test_transition_step_matches_matrix():
    d, n = 3, 5
    rng = np.random.default_rng(14)
    vals = rng.normal(size=lattice_size(d, n))
    P = bn.transition_matrix(d, n)
    assert np.allclose(bn.transition_step(vals, d, n), P @ vals, atol=1e-12)
    assert np.allclose(P.sum(axis=1), 1.0, atol=1e-12)
