import math

import numpy as np
import pytest

from bernwf import bernstein as bn
from bernwf import generators as gn
from bernwf.bernstein import EvaluableFunction
from bernwf.mutation import MutationRates, uniform_limit_matrix, uniform_mutation
from bernwf.polynomials import Polynomial, monomial_basis, parse_polynomial
from bernwf.simplex import simplex_grid

from helpers import random_point


def random_poly(d, degree, rng):
    basis = monomial_basis(d, degree)
    return Polynomial({a: float(c) for a, c in
                       zip(basis, rng.normal(size=len(basis)))}, d)


class TestGeneratorValues:
    def test_squared_coordinate(self):
        f = parse_polynomial("x1^2", 3)
        x = [0.2, 0.3, 0.5]
        assert gn.apply_generator(f, x) == pytest.approx(0.2 * 0.8)

    def test_cross_term(self):
        f = parse_polynomial("x1*x2", 2)
        assert gn.apply_generator(f, [0.3, 0.7]) == pytest.approx(-0.21)

    def test_affine_annihilated(self):
        f = parse_polynomial("3*x1 - x2 + 2", 3)
        assert gn.apply_generator(f, [0.5, 0.2, 0.3]) == 0.0

    def test_drift_on_coordinates(self):
        d = 3
        q = MutationRates.strict(uniform_limit_matrix(d, 1.3))
        x = np.array([0.5, 0.2, 0.3])
        for i in range(d):
            f = Polynomial.coordinate(i, d)
            assert gn.apply_generator(f, x, q) == pytest.approx(
                float(x @ q.matrix[:, i]))

    def test_constant_maps_to_zero(self):
        q = MutationRates.strict(uniform_limit_matrix(2, 1.0))
        assert gn.apply_generator(Polynomial.constant(1.0, 2), [0.4, 0.6], q) == 0.0

    def test_evaluable_function_path(self):
        rng = np.random.default_rng(0)
        f = random_poly(3, 3, rng)
        ef = EvaluableFunction.from_polynomial(f)
        q = MutationRates.strict(uniform_limit_matrix(3, 0.7))
        x = random_point(3, rng)
        assert gn.apply_generator(ef, x, q) == pytest.approx(
            gn.apply_generator(f, x, q), rel=1e-12)
        with pytest.raises(ValueError):
            gn.apply_generator(EvaluableFunction(value=f.__call__), x)


class TestGeneratorPolynomial:
    def test_degree_preserved_up_to_five(self):
        rng = np.random.default_rng(1)
        q = MutationRates.strict(uniform_limit_matrix(3, 1.0))
        for degree in range(1, 6):
            f = random_poly(3, degree, rng)
            assert gn.generator_polynomial(f).degree <= degree
            assert gn.generator_polynomial(f, q).degree <= degree

    def test_matches_pointwise_evaluation(self):
        rng = np.random.default_rng(2)
        q = MutationRates.strict(uniform_limit_matrix(3, 0.4))
        f = random_poly(3, 4, rng)
        g = gn.generator_polynomial(f, q)
        for _ in range(10):
            x = random_point(3, rng)
            assert g(x) == pytest.approx(gn.apply_generator(f, x, q),
                                         rel=1e-10, abs=1e-12)


class TestQuadraticExactness:
    @pytest.mark.parametrize("d,n", [(2, 5), (2, 37), (3, 11)])
    def test_rescaled_defect_equals_generator(self, d, n):
        rng = np.random.default_rng(d * n)
        f = random_poly(d, 2, rng)
        g = gn.generator_polynomial(f)
        for x in simplex_grid(d, 7):
            defect = n * (bn.apply(f, x, n) - f(x))
            assert defect == pytest.approx(g(x), abs=5e-11)


class TestResiduals:
    def test_quadratic_residual_vanishes(self):
        f = parse_polynomial("x2^2", 3)
        rep = gn.voronovskaya_residual(f, 50, grid=simplex_grid(3, 8))
        assert rep.residual <= 1e-10
        assert rep.passed

    def test_affine_residual_zero(self):
        f = parse_polynomial("x1 - 2*x2", 2)
        rep = gn.voronovskaya_residual(f, 30)
        assert rep.residual <= 1e-12

    def test_cubic_residual_halves_and_respects_bound(self):
        f = parse_polynomial("x1^3", 2)
        grid = simplex_grid(2, 20)
        prev = None
        for n in (20, 40, 80, 160, 320):
            rep = gn.voronovskaya_residual(f, n, grid=grid)
            assert rep.passed, (n, rep.residual, rep.bound)
            if prev is not None:
                # at least the 1/sqrt(n) halving rate per doubling
                assert rep.residual <= prev / math.sqrt(2.0) * 1.001
            prev = rep.residual

    def test_mutated_residual_decays(self):
        d, theta = 3, 1.0
        f = parse_polynomial("x1^3", d)
        limit = MutationRates.strict(uniform_limit_matrix(d, theta))
        grid = simplex_grid(d, 8)
        r = [gn.voronovskaya_residual(f, n, grid=grid,
                                      rates_n=uniform_mutation(n, d, theta),
                                      rates_limit=limit).residual
             for n in (20, 80, 320)]
        assert r[1] < r[0] and r[2] < r[1]
        assert r[0] > 1e-6  # genuinely nonzero, so the decay is informative

    def test_report_csv(self, tmp_path):
        f = parse_polynomial("x1^3", 2)
        reps = [gn.voronovskaya_residual(f, n) for n in (20, 40)]
        path = tmp_path / "residuals.csv"
        gn.write_residual_csv(path, reps)
        lines = path.read_text().splitlines()
        assert lines[0] == "n,residual,bound,pass"
        assert len(lines) == 3


class TestRateConstant:
    def test_quadratic_gives_zero(self):
        assert gn.residual_rate_bound(parse_polynomial("x1^2 - x2", 2), 2, 50) == 0.0

    def test_cubic_hand_value(self):
        # Hessian entry 6 x1 has gradient (6, 0); certificate 6
        f = parse_polynomial("x1^3", 2)
        assert gn.hessian_lipschitz_certificate(f) == pytest.approx(6.0)
        n = 25
        expected = 2 ** 2.5 * 6.0 / (16.0 * 3.0 ** 0.25 * math.sqrt(n))
        assert gn.residual_rate_bound(f, 2, n) == pytest.approx(expected)

    def test_mixed_cubic_hand_value(self):
        f = parse_polynomial("x1^2*x2", 3)
        assert gn.hessian_lipschitz_certificate(f) == pytest.approx(2.0)

    def test_sqrt_n_decay(self):
        f = parse_polynomial("x1^3", 2)
        assert gn.residual_rate_bound(f, 2, 400) == pytest.approx(
            gn.residual_rate_bound(f, 2, 100) / 2.0)


class TestHoeffding:
    def test_formula_and_limits(self):
        assert gn.hoeffding_tail_bound(50, 3, 0.0) == pytest.approx(6.0)
        assert gn.hoeffding_tail_bound(10**8, 3, 0.3) < 1e-6
        b1 = gn.hoeffding_tail_bound(100, 3, 0.3)
        b2 = gn.hoeffding_tail_bound(1000, 3, 0.3)
        assert b2 < b1

    def test_empirical_tail_below_bound(self):
        from bernwf.simplex import RngStream, sample_multinomial_many
        d, n, delta = 3, 50, 0.45
        x = np.array([0.25, 0.35, 0.4])
        draws = sample_multinomial_many(np.tile(x, (10**5, 1)), n,
                                        RngStream(21, 0).generator()) / n
        freq = float((np.linalg.norm(draws - x, axis=1) >= delta).mean())
        assert freq <= gn.hoeffding_tail_bound(n, d, delta)
