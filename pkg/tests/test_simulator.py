import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cogarch import CogarchSpec
from cogarch.exceptions import DomainError, InvalidOrderError, NonnegativityError, StationarityError
from cogarch.levy import CompoundPoissonSpec, Grid, JumpPath, NormalJumps, first_jump_innovations, sample_jump_path
from cogarch.simulator import (
    path_to_csv,
    simulate_discrete,
    simulate_exact,
    stationarity_check,
    stationary_mean,
)

from conftest import random_admissible_spec, taylor_expm_squared


class TestSpec:
    def test_padding_and_order(self):
        s = CogarchSpec([0.2], [1.5, 0.5], 0.04)
        assert s.p == 1 and s.q == 2
        np.testing.assert_array_equal(s.a_vec, [0.2, 0.0])

    def test_p_above_q(self):
        with pytest.raises(InvalidOrderError):
            CogarchSpec([0.1, 0.1], [0.5], 0.1)

    def test_zero_bq(self):
        with pytest.raises((InvalidOrderError, DomainError)):
            CogarchSpec([0.1], [0.5, 0.0], 0.1)

    def test_alpha0_positive(self):
        with pytest.raises(DomainError):
            CogarchSpec([0.1], [0.5], 0.0)


class TestStationarity:
    def test_admissible(self, spec11):
        assert stationarity_check(spec11).ok

    def test_boundary(self):
        rep = stationarity_check(CogarchSpec([0.5], [0.5], 0.1))
        assert not rep.ok
        assert any("b_q" in r for r in rep.reasons)

    def test_q2_eigen_oracle(self, spec22):
        # B + e a' = [[0, 1], [-0.3, -1.5]] : both roots real negative
        roots = np.roots([1.0, 1.5, 0.5 - 0.2])
        assert np.all(roots.real < 0)
        assert stationarity_check(spec22).ok

    def test_unstable_q2(self):
        rep = stationarity_check(CogarchSpec([0.6], [1.5, 0.5], 0.04))
        assert not rep.ok
        assert len(rep.reasons) >= 2

    def test_stationary_mean(self, spec11):
        np.testing.assert_allclose(stationary_mean(spec11), [0.04 / 0.015])
        assert stationary_mean(spec11)[0] == pytest.approx(2.6667, abs=1e-4)

    def test_stationary_mean_fails(self):
        with pytest.raises(StationarityError):
            stationary_mean(CogarchSpec([0.5], [0.5], 0.1))


def _noise(times, sizes, T=1.0):
    return JumpPath(T, times, sizes)


class TestExact:
    def test_no_jumps_decays(self, spec22):
        grid = Grid.uniform(5.0, 0.5)
        y0 = np.array([1.0, -0.3])
        path = simulate_exact(spec22, _noise([], [], 5.0), grid, Y0=y0)
        assert np.all(path.G == 0)
        for k, t in enumerate(path.times):
            np.testing.assert_allclose(path.Y[k], taylor_expm_squared(spec22.B, t) @ y0, atol=1e-12)

    def test_single_jump_from_zero(self, spec11):
        z = 1.7
        path = simulate_exact(spec11, _noise([0.5], [z]), Grid.uniform(1.0, 0.25), Y0=np.zeros(1))
        k = np.flatnonzero(path.is_jump)[0]
        assert path.times[k] == 0.5
        assert path.Y[k, 0] == pytest.approx(0.04 * z * z, rel=1e-14)
        assert path.G[k] == pytest.approx(math.sqrt(0.04) * z, rel=1e-14)
        assert path.V_left[k] == pytest.approx(0.04)

    def test_records_union(self, spec11, std_noise):
        noise = sample_jump_path(std_noise, 10.0, 3)
        grid = Grid.uniform(10.0, 0.1)
        path = simulate_exact(spec11, noise, grid)
        assert len(path) == np.union1d(grid.knots, noise.times).size
        assert path.is_jump.sum() == len(noise)

    def test_q2_recursion_oracle(self, spec22, std_noise):
        noise = sample_jump_path(std_noise, 20.0, 11)
        grid = Grid.uniform(20.0, 1.0)
        path = simulate_exact(spec22, noise, grid)
        y = stationary_mean(spec22)
        a, e = spec22.a_vec, spec22.e
        t_prev, g = 0.0, 0.0
        for t, z in zip(noise.times, noise.sizes):
            y = taylor_expm_squared(spec22.B, t - t_prev) @ y
            v = spec22.alpha0 + a @ y
            g += math.sqrt(v) * z
            y = y + v * z * z * e
            t_prev = t
            k = np.searchsorted(path.times, t)
            np.testing.assert_allclose(path.Y[k], y, rtol=1e-10, atol=1e-12)
            assert path.G[k] == pytest.approx(g, rel=1e-10, abs=1e-12)

    def test_prefix_measurable(self, spec22, std_noise):
        noise = sample_jump_path(std_noise, 10.0, 8)
        full = simulate_exact(spec22, noise, Grid.uniform(10.0, 0.5))
        keep = noise.times <= 5.0
        short = simulate_exact(spec22, JumpPath(5.0, noise.times[keep], noise.sizes[keep]), Grid.uniform(5.0, 0.5))
        n = len(short)
        np.testing.assert_array_equal(full.times[:n], short.times)
        np.testing.assert_allclose(full.Y[:n], short.Y, rtol=1e-13)

    def test_negative_variance_raises(self):
        spec = CogarchSpec([0.1, -1.0], [1.5, 0.5], 0.01)
        with pytest.raises(NonnegativityError):
            simulate_exact(spec, _noise([0.1, 0.2], [3.0, 1.0]), Grid.uniform(1.0, 0.5), Y0=np.zeros(2), check=False)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 10_000), st.integers(1, 3))
    def test_variance_positive(self, seed, q):
        rng = np.random.default_rng(seed)
        spec = random_admissible_spec(rng, q)
        noise = sample_jump_path(CompoundPoissonSpec(1.0), 20.0, seed)
        path = simulate_exact(spec, noise, Grid.uniform(20.0, 1.0), Y0=np.zeros(q))
        assert np.all(path.V > 0)

    def test_ergodic_average(self):
        spec = CogarchSpec([0.2], [1.0], 0.5)
        T = 20_000.0
        noise = sample_jump_path(CompoundPoissonSpec(1.0), T, 99)
        path = simulate_exact(spec, noise, Grid.uniform(T, 1.0))
        on_grid = ~path.is_jump
        avg = path.V[on_grid].mean()
        assert avg == pytest.approx(0.5 * 1.0 / 0.8, rel=0.05)


class TestDiscrete:
    def test_no_noise_decay(self, spec22):
        grid = Grid.uniform(4.0, 0.5)
        inn = first_jump_innovations(JumpPath(4.0, [], []), grid, 0.1, CompoundPoissonSpec(1.0))
        inn.epsilon[:] = 0.0
        y0 = np.array([0.3, 0.1])
        path = simulate_discrete(spec22, inn, Y0=y0)
        for k, t in enumerate(path.times):
            np.testing.assert_allclose(path.Y[k], taylor_expm_squared(spec22.B, t) @ y0, atol=1e-12)
        assert np.all(path.G == 0)

    def test_one_step(self, spec11):
        grid = Grid(np.array([0.0, 0.5]))
        inn = first_jump_innovations(JumpPath(0.5, [], []), grid, 0.1, CompoundPoissonSpec(1.0))
        inn.epsilon[:] = 2.0
        y0 = np.array([1.0])
        path = simulate_discrete(spec11, inn, Y0=y0)
        y_decay = math.exp(-0.053 * 0.5)
        w = 4.0 * 0.5
        expected = y_decay + w * (0.04 + 0.038 * y_decay)
        assert path.Y[1, 0] == pytest.approx(expected, rel=1e-14)
        assert path.G[1] == pytest.approx(math.sqrt((0.04 + 0.038) * 0.5) * 2.0, rel=1e-14)

    def test_q1_matches_scalar_recursion(self, spec11, std_noise):
        T = 10.0
        grid = Grid.uniform(T, 0.1)
        inn = first_jump_innovations(sample_jump_path(std_noise, T, 4), grid, 0.2, std_noise)
        path = simulate_discrete(spec11, inn)
        y = stationary_mean(spec11)[0]
        for i, (eps, dt) in enumerate(zip(inn.epsilon, grid.spacings)):
            y = math.exp(-0.053 * dt) * y
            y = y + eps * eps * dt * (0.04 + 0.038 * y)
            assert path.Y[i + 1, 0] == pytest.approx(y, rel=1e-12)

    def test_jump_aligned_matches_exact(self, spec22):
        # grid knots at the jump times with the true squared jumps as weights
        times = np.array([0.3, 1.1, 2.0])
        sizes = np.array([0.8, -1.4, 0.5])
        noise = JumpPath(2.0, times, sizes)
        grid = Grid(np.concatenate(([0.0], times)))
        inn = first_jump_innovations(noise, Grid(grid.knots), 0.01, CompoundPoissonSpec(1.0))
        disc = simulate_discrete(spec22, inn, squared_increments=sizes**2)
        exact = simulate_exact(spec22, noise, grid)
        np.testing.assert_allclose(disc.Y, exact.Y, rtol=1e-12, atol=1e-14)

    def test_squared_increments_shape(self, spec11):
        grid = Grid.uniform(1.0, 0.5)
        inn = first_jump_innovations(JumpPath(1.0, [], []), grid, 0.1, CompoundPoissonSpec(1.0))
        with pytest.raises(DomainError):
            simulate_discrete(spec11, inn, squared_increments=np.ones(5))


class TestCsv:
    def test_format(self, spec22):
        path = simulate_exact(spec22, _noise([0.5], [1.0]), Grid.uniform(1.0, 0.5))
        lines = path_to_csv(path).splitlines()
        assert lines[0] == "time,G,V,Y1,Y2,is_jump"
        assert len(lines) == len(path) + 1
        row = lines[2].split(",")
        assert float(row[0]) == 0.5 and row[-1] == "1"
        assert float(row[2]) == path.V[1]

    def test_at_step_evaluation(self, spec11):
        path = simulate_exact(spec11, _noise([0.5], [1.0]), Grid.uniform(1.0, 0.5))
        np.testing.assert_array_equal(path.at(0.49), path.values()[0])
        np.testing.assert_array_equal(path.at(0.5), path.values()[1])
