import math
from datetime import date

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import ALL_KINDS, random_params, random_series, spec_for
from seasonpool import inference as inf
from seasonpool import model as mc
from seasonpool.errors import ConvergenceError, CurvatureError, InitializationError
from seasonpool.model import ModelSpec, TimeSeries
from conftest import daily_dates as date_range
from seasonpool.timebase import SeasonalityKind as S


class Quadratic:
    """Exactly Gaussian log density with mean ``mu`` and precision ``P``."""

    def __init__(self, mu, precision):
        self.mu = np.asarray(mu, float)
        self.P = np.asarray(precision, float)
        self.size = self.mu.size

    def value_and_grad(self, v):
        d = np.asarray(v) - self.mu
        return -0.5 * d @ self.P @ d, -self.P @ d

    def constrain(self, v):
        return np.asarray(v, float)

    def unconstrain(self, p):
        return np.asarray(p, float)

    def log_posterior(self, p):
        return self.value_and_grad(p)[0]


class TestSimplex:
    def test_zero_is_uniform(self):
        theta, _ = inf.simplex_from_unconstrained([0.0])
        np.testing.assert_allclose(theta, [0.5, 0.5], atol=1e-15)
        np.testing.assert_allclose(inf.simplex_to_unconstrained([0.5, 0.5]), [0.0], atol=1e-15)
        theta, _ = inf.simplex_from_unconstrained(np.zeros(3))
        np.testing.assert_allclose(theta, np.full(4, 0.25), atol=1e-15)

    @given(st.lists(st.floats(-6, 6), min_size=1, max_size=4))
    @settings(max_examples=60)
    def test_round_trip(self, u):
        theta, _ = inf.simplex_from_unconstrained(u)
        assert theta.sum() == pytest.approx(1.0, abs=1e-12)
        assert np.all(theta > 0)
        np.testing.assert_allclose(inf.simplex_to_unconstrained(theta), u, atol=1e-8)

    @pytest.mark.parametrize("n_free", [1, 2, 3])
    def test_log_jacobian_matches_numerical_determinant(self, rng, n_free):
        for _ in range(5):
            u = rng.normal(size=n_free)
            _, lj = inf.simplex_from_unconstrained(u)
            h = 1e-6
            jac = np.empty((n_free, n_free))
            for j in range(n_free):
                e = np.zeros(n_free)
                e[j] = h
                jac[:, j] = (inf.simplex_from_unconstrained(u + e)[0][:-1]
                             - inf.simplex_from_unconstrained(u - e)[0][:-1]) / (2 * h)
            assert lj == pytest.approx(math.log(abs(np.linalg.det(jac))), abs=1e-6)


class TestBijection:
    def test_sizes(self):
        W, M = S.DAY_OF_WEEK, S.DAY_OF_MONTH
        assert inf.Bijection.for_spec(ModelSpec.complete()).size == 3
        assert inf.Bijection.for_spec(ModelSpec.partial(W)).size == 4 + 14 + 1
        assert inf.Bijection.for_spec(ModelSpec.mixed([W, M])).size == 4 + 76 + 1 + 1
        tied = inf.Bijection.for_spec(ModelSpec.partial(W), tied={"k"})
        assert tied.size == 3 + 7 + 1
        assert len(tied.names()) == tied.size

    @pytest.mark.parametrize("kind", ALL_KINDS)
    def test_round_trip(self, rng, kind):
        spec = spec_for(kind)
        b = inf.Bijection.for_spec(spec)
        p = random_params(rng, spec)
        v = inf.to_unconstrained(p, b)
        back, _ = inf.to_constrained(v, b)
        for key, value in p.flat().items():
            if value is None:
                assert back.flat()[key] is None
            elif key in ("k", "m"):
                for a, b in zip(back.flat()[key], value):
                    np.testing.assert_allclose(a, b, rtol=1e-10, atol=1e-12)
            else:
                np.testing.assert_allclose(back.flat()[key], value, rtol=1e-10, atol=1e-12, err_msg=key)

    def test_zero_vector_is_unit_scales(self):
        spec = spec_for("mixed")
        p, _ = inf.to_constrained(np.zeros(inf.Bijection.for_spec(spec).size), inf.Bijection.for_spec(spec))
        assert p.k_sigma == p.m_sigma == p.sigma_obs == 1.0
        np.testing.assert_allclose(p.theta, [0.5, 0.5])

    @pytest.mark.parametrize("kind", ALL_KINDS + ("tied",))
    def test_target_gradient(self, rng, kind):
        spec = spec_for("partial-week" if kind == "tied" else kind)
        data, info = mc.prepare_data(random_series(rng, 90), spec)
        target = inf.PoolingTarget(data, spec, info, tied=("m",) if kind == "tied" else ())
        for _ in range(3):
            v = rng.normal(scale=0.5, size=target.size)
            f, g = target.value_and_grad(v)
            h = 1e-6
            fd = np.array([
                (target.value_and_grad(v + h * e)[0] - target.value_and_grad(v - h * e)[0]) / (2 * h)
                for e in np.eye(target.size)
            ])
            assert np.max(np.abs(fd - g) / np.maximum(1, np.abs(g))) < 1e-5


def _seasonal(n=150, seed=1):
    rng = np.random.default_rng(seed)
    dates = date_range(date(2018, 1, 1), n)
    dow = np.array([d.weekday() for d in dates])
    y = 10 + 0.02 * np.arange(n) + np.array([2, 1, 0, 0, 1, -3, -4])[dow] + rng.normal(0, 0.5, n)
    return TimeSeries("s", dates, y)


class TestOptimizer:
    def test_quadratic_mode(self):
        q = Quadratic([1.0, -2.0, 0.5], np.diag([1.0, 4.0, 0.25]))
        fit = inf.maximize(q)
        assert fit.converged
        np.testing.assert_allclose(fit.params, q.mu, atol=1e-8)

    def test_deterministic(self):
        spec = spec_for("partial-week")
        a = inf.map_fit(_seasonal(), spec, inf.OptimizerOptions(seed=3))
        b = inf.map_fit(_seasonal(), spec, inf.OptimizerOptions(seed=3))
        np.testing.assert_array_equal(a.unconstrained_opt, b.unconstrained_opt)
        assert a.trace == b.trace

    def test_complete_matches_ridge_at_its_sigma(self):
        series = _seasonal()
        spec = spec_for("complete")
        fit = inf.map_fit(series, spec)
        assert fit.converged
        data = fit.target.data
        s = fit.params.sigma_obs
        X = np.column_stack([data.t, np.ones(len(data))])
        beta = np.linalg.solve(X.T @ X / s**2 + np.eye(2) / 25, X.T @ data.y / s**2)
        np.testing.assert_allclose([fit.params.k[0][0], fit.params.m[0][0]], beta, atol=1e-6)

    def test_sigma_is_mode_of_jacobian_adjusted_profile(self):
        series = _seasonal()
        spec = spec_for("complete")
        fit = inf.map_fit(series, spec)
        from dataclasses import replace
        base = fit.params
        grid = base.sigma_obs * np.exp(np.linspace(-0.05, 0.05, 201))
        obj = [mc.log_posterior(replace(base, sigma_obs=s), fit.target.data, spec) + math.log(s) for s in grid]
        assert abs(grid[int(np.argmax(obj))] / base.sigma_obs - 1) < 1e-3

    @pytest.mark.parametrize("kind", ALL_KINDS)
    def test_converges_and_trace_is_monotone(self, kind):
        fit = inf.map_fit(_seasonal(), spec_for(kind))
        assert fit.converged
        # each ascent starts with an "init" row; a tied refit starts new ones
        segments, current = [], []
        for row in fit.trace:
            if row[1] == "init":
                segments.append(current)
                current = []
            elif row[1] in ("bfgs", "newton"):
                current.append(row[3])
        segments.append(current)
        for values in segments:
            assert all(b >= a - 1e-9 for a, b in zip(values, values[1:]))

    def test_best_restart_is_at_least_zero_start(self):
        spec = spec_for("partial-week")
        series = _seasonal()
        full = inf.map_fit(series, spec)
        single = inf.map_fit(series, spec, inf.OptimizerOptions(restarts=0))
        assert full.objective >= single.objective - 1e-9

    def test_write_trace(self, tmp_path):
        fit = inf.map_fit(_seasonal(), spec_for("complete"))
        fit.write_trace(tmp_path / "t.csv")
        lines = (tmp_path / "t.csv").read_text().splitlines()
        assert lines[0] == "restart,phase,iteration,objective,grad_norm"
        assert len(lines) == len(fit.trace) + 1

    def test_non_finite_start(self):
        class Bad(Quadratic):
            def value_and_grad(self, v):
                return math.nan, np.zeros(self.size)
        with pytest.raises(InitializationError):
            inf.maximize(Bad([0.0], [[1.0]]))

    def test_collapsed_group_sd_is_tied(self):
        # a trend with no weekday effect: the week sd of k runs to zero
        rng = np.random.default_rng(0)
        dates = date_range(date(2018, 1, 1), 120)
        y = 5 + 0.1 * np.arange(120) + rng.normal(0, 1, 120)
        fit = inf.map_fit(TimeSeries("flat", dates, y), spec_for("partial-week"))
        assert fit.converged
        for family in fit.tied:
            vals = getattr(fit.params, family)[0]
            np.testing.assert_allclose(vals, getattr(fit.params, f"{family}_mu"))


class TestLaplace:
    def test_hessian_of_quadratic(self):
        P = np.array([[2.0, 0.5], [0.5, 1.0]])
        H = inf.hessian_at(np.array([0.3, 0.1]), Quadratic([0, 0], P))
        np.testing.assert_allclose(H, -P, atol=1e-8)
        assert np.array_equal(H, H.T)

    def test_hessian_matches_normal_equations(self):
        # complete model, sigma fixed: the (k, m) block is -(X'X/s^2 + I/25)
        fit = inf.map_fit(_seasonal(), spec_for("complete"))
        H = inf.hessian_at(fit.unconstrained_opt, fit.target)
        data, s = fit.target.data, fit.params.sigma_obs
        X = np.column_stack([data.t, np.ones(len(data))])
        np.testing.assert_allclose(H[:2, :2], -(X.T @ X / s**2 + np.eye(2) / 25), rtol=1e-6)
        assert np.all(np.linalg.eigvalsh(H) < 0)

    def test_gaussian_target_draws(self):
        mu = np.array([1.0, -1.0])
        P = np.array([[2.0, 0.6], [0.6, 1.0]])
        q = Quadratic(mu, P)
        fit = inf.maximize(q)
        d = inf.laplace_draws(fit, 20000, seed=4)
        np.testing.assert_allclose(d.covariance, np.linalg.inv(P), atol=1e-6)
        np.testing.assert_allclose(d.draws.mean(axis=0), mu, atol=0.03)
        np.testing.assert_allclose(np.cov(d.draws.T), np.linalg.inv(P), atol=0.03)

    def test_draws_deterministic_and_constrained(self):
        fit = inf.map_fit(_seasonal(), spec_for("mixed"))
        a = inf.laplace_draws(fit, 50, seed=1)
        b = inf.laplace_draws(fit, 50, seed=1)
        np.testing.assert_array_equal(a.draws, b.draws)
        assert len(a) == 50
        for p in a.params:
            assert p.sigma_obs > 0 and p.theta.sum() == pytest.approx(1.0)

    def test_not_converged(self):
        fit = inf.maximize(Quadratic([0.0], [[1.0]]))
        fit.converged = False
        with pytest.raises(ConvergenceError):
            inf.laplace_draws(fit)

    def test_indefinite_curvature(self):
        class Saddle(Quadratic):
            pass
        q = Saddle([0.0, 0.0], np.diag([1.0, -1.0]))
        fit = inf.MapResult(np.zeros(2), 0.0, 0.0, np.zeros(2), 0, True, 0.0, target=q)
        with pytest.raises(CurvatureError):
            inf.laplace_draws(fit)
