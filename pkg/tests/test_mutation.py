import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bernwf.mutation import (AssumptionReport, MutationRates, MutationSchedule,
                             NegativeCoordinateError, check_generator_convergence,
                             check_rate_decay, check_rate_scaling, fixed_dim,
                             mutated_coords, mutated_point, ninth_root_dim,
                             ohta_kimura, ohta_kimura_grid,
                             ohta_kimura_schedule, second_derivative_action,
                             uniform_grid, uniform_limit_action,
                             uniform_limit_matrix, uniform_mutation,
                             uniform_schedule)

from helpers import random_point


def small_valid_rates(d, scale, rng):
    m = rng.uniform(0.2, 1.0, size=(d, d)) * scale
    np.fill_diagonal(m, 0.0)
    np.fill_diagonal(m, -m.sum(axis=1))
    return MutationRates.strict(m)


class TestConstructors:
    def test_strict_rejects_zero_offdiagonal(self):
        m = np.array([[-1.0, 1.0, 0.0],
                      [0.5, -1.0, 0.5],
                      [0.5, 0.5, -1.0]])
        with pytest.raises(ValueError):
            MutationRates.strict(m)
        weak = MutationRates.weak(m)
        assert not weak.strict_positivity
        assert weak.conservative

    def test_rowsum_validation(self):
        m = np.array([[-1.0, 0.9], [1.0, -1.0]])
        with pytest.raises(ValueError):
            MutationRates.weak(m)
        flagged = MutationRates.weak(m, allow_mass_loss=True)
        assert not flagged.conservative

    def test_csv_roundtrip(self, tmp_path):
        q = uniform_mutation(10, 3, 1.5)
        path = tmp_path / "rates.csv"
        q.to_csv(path)
        back = MutationRates.from_csv(path)
        assert np.allclose(back.matrix, q.matrix)
        assert back.theta == 1.5
        assert back.model == "uniform"
        assert back.strict_positivity and back.conservative


class TestMutatedPoint:
    def test_zero_rates_identity(self):
        q = MutationRates.weak(np.zeros((3, 3)))
        x = [0.2, 0.3, 0.5]
        assert np.allclose(mutated_point(x, q).coords, x)

    def test_two_type_example(self):
        # symmetric rates 1/(2n) at n = 10 move 5% of the mass off a vertex
        q = MutationRates.strict(np.array([[-0.05, 0.05], [0.05, -0.05]]))
        y = mutated_point([1.0, 0.0], q)
        assert np.allclose(y.coords, [0.95, 0.05])

    def test_negative_coordinate_error(self):
        q = MutationRates.weak(np.array([[-2.0, 2.0], [1.0, -1.0]]))
        with pytest.raises(NegativeCoordinateError):
            mutated_point([1.0, 0.0], q)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(2, 4), st.integers(0, 10**6))
    def test_sum_telescopes_to_one(self, d, seed):
        rng = np.random.default_rng(seed)
        q = small_valid_rates(d, 0.1, rng)
        x = random_point(d, rng)
        y = mutated_point(x, q)
        assert abs(y.coords.sum() - 1.0) <= 1e-12

    def test_affine_in_x(self):
        rng = np.random.default_rng(5)
        q = small_valid_rates(3, 0.05, rng)
        a, b = random_point(3, rng), random_point(3, rng)
        lam = 0.3
        mix = lam * a + (1 - lam) * b
        assert np.allclose(mutated_coords(mix, q),
                           lam * mutated_coords(a, q) + (1 - lam) * mutated_coords(b, q))


class TestModels:
    def test_uniform_example_values(self):
        q = uniform_mutation(10, 3, 1.0)
        assert q.matrix[0, 1] == pytest.approx(1.0 / 40.0)
        assert q.matrix[0, 0] == pytest.approx(-0.05)
        assert np.allclose(q.matrix.sum(axis=1), 0.0, atol=1e-15)
        assert q.strict_positivity and q.conservative

    def test_uniform_limit_is_n_times_rates(self):
        n, d, theta = 37, 4, 0.7
        assert np.allclose(uniform_limit_matrix(d, theta),
                           n * uniform_mutation(n, d, theta).matrix)

    def test_ohta_kimura_rates(self):
        q = ohta_kimura(100, 4, 2.0)
        assert q.matrix[0, 1] == pytest.approx(2.0 * 4 / 200.0)  # 0.04
        assert q.matrix[1, 0] == pytest.approx(0.04)
        assert q.matrix[0, 2] == 0.0
        assert not q.strict_positivity
        # absorbing convention loses mass at the two boundary rows
        assert not q.conservative
        sums = q.matrix.sum(axis=1)
        assert sums[1:-1] == pytest.approx(np.zeros(2), abs=1e-15)
        assert sums[0] < 0 and sums[-1] < 0

    def test_ohta_kimura_reflecting_conserves(self):
        q = ohta_kimura(100, 5, 2.0, boundary="reflecting")
        assert np.allclose(q.matrix.sum(axis=1), 0.0, atol=1e-15)
        assert q.conservative

    def test_ohta_kimura_grid(self):
        g4 = ohta_kimura_grid(4)
        assert np.allclose(g4 * np.sqrt(4), [-1, 0, 1, 2])
        g5 = ohta_kimura_grid(5)
        assert np.allclose(g5 * np.sqrt(5), [-2, -1, 0, 1, 2])


class TestAssumptionChecks:
    def test_rate_scaling_exact_schedule_passes(self):
        theta, d = 1.0, 3
        sched = uniform_schedule(theta, fixed_dim(d))
        rep = check_rate_scaling(sched, uniform_limit_matrix(d, theta),
                                 gamma=2.0, ns=[10, 20, 40, 80])
        assert rep.passed
        assert rep.constant == 0.0

    def test_rate_scaling_quadratic_correction_passes(self):
        d = 2
        base = uniform_limit_matrix(d, 1.0)
        extra = np.array([[-1.0, 1.0], [1.0, -1.0]])

        def rates_for(n):
            return MutationRates.weak(base / n + extra / n**2)

        sched = MutationSchedule("perturbed", fixed_dim(d), rates_for,
                                 lambda n: uniform_grid(d))
        rep = check_rate_scaling(sched, base, gamma=2.0,
                                 ns=[10, 20, 40, 80, 160])
        assert rep.passed
        assert rep.constant == pytest.approx(1.0)

    def test_rate_scaling_sqrt_schedule_fails(self):
        d = 2
        base = uniform_limit_matrix(d, 1.0)
        sched = MutationSchedule(
            "slow", fixed_dim(d),
            lambda n: MutationRates.strict(base / np.sqrt(n)),
            lambda n: uniform_grid(d))
        rep = check_rate_scaling(sched, base, gamma=1.5, ns=[10, 40, 160, 640])
        assert not rep.passed

    def test_rate_decay_uniform_passes(self):
        rep = check_rate_decay(uniform_schedule(1.0), ns=[2**9, 3**9, 4**9])
        assert rep.passed
        assert rep.fitted_exponent < -11.0 / 16.0

    def test_rate_decay_ohta_kimura_passes(self):
        rep = check_rate_decay(ohta_kimura_schedule(1.0), ns=[2**9, 3**9, 4**9])
        assert rep.passed
        assert "weak positivity" in " ".join(rep.notes)

    def test_rate_decay_constant_fails(self):
        const = MutationRates.strict(uniform_limit_matrix(3, 1.0))
        sched = MutationSchedule("const", fixed_dim(3), lambda n: const,
                                 lambda n: uniform_grid(3))
        rep = check_rate_decay(sched, ns=[8, 64, 512])
        assert not rep.passed

    def test_generator_convergence_ohta_kimura_quadratic(self):
        # second difference of z^2 is exact: interior deviations vanish
        # start at d_n = 3 so an interior sub-grid exists
        theta = 2.0
        rep = check_generator_convergence(
            ohta_kimura_schedule(theta), second_derivative_action(theta, lambda z: 2.0),
            beta=lambda z: z * z, ns=[3**9, 4**9, 5**9],
            tolerance=1e-9, interior_only=True)
        assert rep.passed
        assert max(rep.measurements) <= 1e-9

    def test_generator_convergence_uniform_linear(self):
        theta = 1.0
        sched = uniform_schedule(theta)
        rep = check_generator_convergence(
            sched, uniform_limit_action(theta), beta=lambda z: z,
            ns=[2**9, 3**9, 4**9], tolerance=0.2)
        assert rep.passed
        # hand value at n = 512 (d_n = 2, grid {1/2, 1}): discrete action at
        # z = 1/2 is (1/2) beta(1) - (1/2) beta(1/2) = 1/4 while the limit
        # (theta/2)(integral - 1/2) vanishes, so the sup deviation is 1/4.
        assert rep.measurements[0] == pytest.approx(0.25)

    def test_generator_convergence_constant_beta_is_exact(self):
        theta = 1.0
        rep = check_generator_convergence(
            uniform_schedule(theta), uniform_limit_action(theta),
            beta=lambda z: 1.0, ns=[2**9, 3**9], tolerance=1e-12)
        assert rep.passed
        assert max(rep.measurements) <= 1e-12


def test_dimension_helpers():
    assert ninth_root_dim(2**9) == 2
    assert ninth_root_dim(3**9) == 3
    assert ninth_root_dim(4**9) == 4
    assert fixed_dim(5)(123456) == 5
