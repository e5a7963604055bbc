import math

import numpy as np
import pytest
from scipy import integrate

from cogarch import CogarchSpec
from cogarch.estimation import (
    ObservedSeries,
    cond_variance,
    embed_spec,
    estimate,
    initial_point,
    pseudo_loglik,
    read_series_csv,
    run_filter,
    state_update,
)
from cogarch.exceptions import DomainError, FilterDegeneracyError, InvalidOrderError
from cogarch.levy import CompoundPoissonSpec, Grid, first_jump_innovations, sample_jump_path
from cogarch.simulator import simulate_discrete, simulate_exact, stationary_mean

from conftest import taylor_expm_squared


def _series(spec, T=400.0, dt=1.0, seed=0):
    noise = sample_jump_path(CompoundPoissonSpec(1.0), T, seed)
    grid = Grid.uniform(T, dt)
    return ObservedSeries.from_path(simulate_exact(spec, noise, grid), grid.knots)


class TestCondVariance:
    @pytest.mark.parametrize("dt", [0.01, 0.5, 3.0])
    @pytest.mark.parametrize("y", [0.0, 1.3, 5.0])
    def test_q1_closed_form(self, spec11, dt, y):
        a, b, a0 = 0.038, 0.053, 0.04
        bt = -b + a
        ey = a0 / (b - a)
        oracle = a0 * dt * b / (b - a) + a * (math.exp(bt * dt) - 1) / bt * (y - ey)
        assert cond_variance(spec11, dt, [y]) == pytest.approx(oracle, rel=1e-12)

    def test_q2_quadrature_oracle(self, spec22):
        dt, y = 0.7, np.array([0.4, -0.1])
        Bt = spec22.B_tilde(1.0)
        ey = stationary_mean(spec22)
        row = [
            integrate.quad(lambda s, k=k: (spec22.a_vec @ taylor_expm_squared(Bt, s))[k], 0, dt, epsabs=1e-14)[0]
            for k in range(2)
        ]
        oracle = 0.04 * dt * 0.5 / (0.5 - 0.2) + np.dot(row, y - ey)
        assert cond_variance(spec22, dt, y) == pytest.approx(oracle, rel=1e-10)

    def test_el1sq_scales(self, spec22):
        y = [0.3, 0.0]
        assert cond_variance(spec22, 0.2, y, EL1sq=2.5) == pytest.approx(2.5 * cond_variance(spec22, 0.2, y))

    @pytest.mark.parametrize("y", [[0.0, 0.0], [0.5, 0.2], [2.0, -0.4]])
    def test_small_dt_limit(self, spec22, y):
        dt = 1e-6
        v = spec22.variance(np.array(y))
        assert cond_variance(spec22, dt, y) / dt == pytest.approx(v, rel=1e-4)

    def test_stationary_state(self, spec11):
        ey = stationary_mean(spec11)
        assert cond_variance(spec11, 2.0, ey) == pytest.approx(2.0 * 0.04 * 0.053 / 0.015)

    def test_floor(self, spec11):
        assert cond_variance(spec11, 1.0, [-100.0], floor=1e-9) == 1e-9

    def test_bad_dt(self, spec11):
        with pytest.raises(DomainError):
            cond_variance(spec11, 0.0, [1.0])


class TestStateUpdate:
    def test_q1_example(self, spec11):
        y, dG, dt = 1.0, 0.3, 0.5
        v = 0.04 + 0.038 * y
        z = math.exp(-0.053 * dt) * y
        expected = z + dG**2 / v * (0.04 + 0.038 * z)
        assert state_update(spec11, [y], dG, dt)[0] == pytest.approx(expected, rel=1e-14)

    def test_zero_increment_decays(self, spec22):
        y = np.array([0.4, 0.1])
        np.testing.assert_allclose(state_update(spec22, y, 0.0, 0.3), taylor_expm_squared(spec22.B, 0.3) @ y)

    def test_degenerate(self):
        spec = CogarchSpec([0.1, -1.0], [1.5, 0.5], 0.01)
        with pytest.raises(FilterDegeneracyError):
            state_update(spec, [0.0, 1.0], 0.1, 0.1)

    def test_round_trip_discrete(self, spec22):
        noise_spec = CompoundPoissonSpec(1.0)
        grid = Grid.uniform(50.0, 0.25)
        inn = first_jump_innovations(sample_jump_path(noise_spec, 50.0, 3), grid, 0.2, noise_spec)
        path = simulate_discrete(spec22, inn)
        series = ObservedSeries.from_levels(path.times, path.G)
        res = run_filter(spec22, series)
        np.testing.assert_allclose(res.Y, path.Y, rtol=1e-9, atol=1e-12)
        y = path.Y[0]
        for i in range(5):
            y = state_update(spec22, y, series.increments[i], 0.25)
            np.testing.assert_allclose(y, path.Y[i + 1], rtol=1e-12)


class TestLoglik:
    def test_single_increment(self, spec11):
        series = ObservedSeries([0.0, 1.0], [0.2])
        s2 = cond_variance(spec11, 1.0, stationary_mean(spec11))
        oracle = -0.5 * (0.04 / s2 + math.log(s2)) - 0.5 * math.log(2 * math.pi)
        assert pseudo_loglik(spec11, series) == pytest.approx(oracle, rel=1e-13)

    def test_deterministic(self, spec22):
        series = _series(spec22, T=200.0)
        assert pseudo_loglik(spec22, series) == pseudo_loglik(spec22, series)

    def test_inadmissible_is_minus_inf(self):
        series = ObservedSeries([0.0, 1.0, 2.0], [0.1, -0.2])
        assert pseudo_loglik(CogarchSpec([0.6], [0.5], 0.1), series) == -np.inf

    def test_uneven_steps(self, spec11):
        series = ObservedSeries([0.0, 0.3, 1.0, 2.5], [0.1, -0.05, 0.3])
        y = stationary_mean(spec11)
        ll = 0.0
        for dg, dt in zip(series.increments, series.dt):
            s2 = cond_variance(spec11, dt, y)
            ll -= 0.5 * (dg * dg / s2 + math.log(s2) + math.log(2 * math.pi))
            y = state_update(spec11, y, dg, dt)
        assert pseudo_loglik(spec11, series) == pytest.approx(ll, rel=1e-12)


class TestEmbedding:
    def test_exact_embedding_preserves_loglik(self, spec11):
        series = _series(spec11, T=300.0)
        big = embed_spec(spec11, (2, 2))
        assert big.p == 2 and big.q == 2
        assert pseudo_loglik(big, series) == pytest.approx(pseudo_loglik(spec11, series), rel=1e-8)

    def test_bad_orders(self, spec22):
        with pytest.raises(InvalidOrderError):
            embed_spec(spec22, (1, 1))


class TestInitialPoint:
    def test_q1(self):
        series = ObservedSeries([0.0, 1.0, 2.0, 3.0], [1.0, -1.0, 1.0])
        s = initial_point(series, (1, 1))
        assert s.alpha0 == pytest.approx(0.1 * np.var([1.0, -1.0, 1.0]))
        assert s.a == (0.05,) and s.b == (0.1,)

    def test_q3(self):
        series = ObservedSeries([0.0, 1.0, 2.0], [1.0, -1.0])
        s = initial_point(series, (1, 3))
        np.testing.assert_allclose(s.b, [1.5, 0.75, 0.125])
        np.testing.assert_allclose(s.a_vec, [0.05, 0, 0])

    def test_bad_orders(self):
        with pytest.raises(InvalidOrderError):
            initial_point(ObservedSeries([0.0, 1.0], [1.0]), (2, 1))


class TestEstimate:
    def test_deterministic(self, spec11):
        series = _series(spec11, T=300.0, seed=5)
        r1 = estimate(series, n_starts=2, seed=4)
        r2 = estimate(series, n_starts=2, seed=4)
        assert r1.to_dict() == r2.to_dict()

    def test_trace_monotone(self, spec11):
        r = estimate(_series(spec11, T=300.0, seed=6), n_starts=3)
        assert np.all(np.diff(r.trace) >= 0)
        assert r.loglik >= max(x for x in r.start_logliks if x is not None) - 1e-9

    def test_beats_initial_point(self, spec11):
        series = _series(spec11, T=300.0, seed=2)
        r = estimate(series, n_starts=2)
        assert r.loglik >= pseudo_loglik(initial_point(series, (1, 1)), series)

    def test_nesting(self, spec22):
        series = _series(spec22, T=400.0, seed=1)
        low = estimate(series, (1, 1), n_starts=2)
        high = estimate(series, (2, 2), n_starts=2)
        assert high.loglik >= low.loglik - 1e-6

    def test_too_short(self):
        with pytest.raises(DomainError):
            estimate(ObservedSeries(np.arange(11.0), np.ones(10)), (1, 1))

    def test_degenerate_data(self):
        series = ObservedSeries(np.arange(101.0), np.zeros(100))
        r = estimate(series, n_starts=2)
        assert not r.converged
        assert r.constraint_report


class TestCsv:
    def _write(self, tmp_path, text):
        f = tmp_path / "data.csv"
        f.write_text(text)
        return f

    def test_dg_format(self, tmp_path):
        s = read_series_csv(self._write(tmp_path, "time,dG\n0,\n1,0.5\n2,-0.25\n"))
        np.testing.assert_array_equal(s.increments, [0.5, -0.25])

    def test_level_format(self, tmp_path):
        s = read_series_csv(self._write(tmp_path, "time,level\n0,1\n1,1.5\n3,1.25\n"))
        np.testing.assert_array_equal(s.increments, [0.5, -0.25])
        np.testing.assert_array_equal(s.dt, [1.0, 2.0])

    @pytest.mark.parametrize(
        "text,line",
        [
            ("", 1),
            ("t,x\n0,1\n", 1),
            ("time,dG\n0,0\n1,abc\n", 3),
            ("time,dG\n0,0\n1,0.1\n1,0.2\n", 4),
            ("time,dG\n0,0\n1,0.1,3\n", 3),
            ("time,dG\n0,0\n1,nan\n", 3),
        ],
    )
    def test_errors(self, tmp_path, text, line):
        with pytest.raises(DomainError, match=f"line {line}"):
            read_series_csv(self._write(tmp_path, text))
