import logging
import math
from datetime import date

import numpy as np
import pytest

from conftest import daily_dates
from seasonpool import baselines as bl
from seasonpool import inference as inf
from seasonpool import model as mc
from seasonpool.errors import AlignmentError, ConfigurationError, DomainError
from seasonpool.evaluation import mape
from seasonpool.model import ModelSpec, TimeSeries
from seasonpool.seriesio import write_csv

WEEK3 = bl.FourierConfig((bl.WEEKLY,))


class TestFeatures:
    def test_origin_row(self):
        np.testing.assert_array_equal(bl.fourier_features([0.0], WEEK3)[0], [1, 0, 1, 0, 1, 0])

    def test_quarter_period(self):
        row = bl.fourier_features([1.75], bl.FourierConfig(((7, 1),)))[0]
        np.testing.assert_allclose(row, [0, 1], atol=1e-15)

    def test_periodic(self, rng):
        t = rng.uniform(0, 100, 20)
        for cfg in (WEEK3, bl.FourierConfig((bl.MONTHLY,))):
            P = cfg.terms[0][0]
            np.testing.assert_allclose(bl.fourier_features(t, cfg), bl.fourier_features(t + P, cfg), atol=1e-10)

    @pytest.mark.parametrize("term", [bl.WEEKLY, bl.MONTHLY, (12.5, 4)])
    def test_zero_mean_over_whole_periods(self, term):
        P, _ = term
        for cycles in (1, 3):
            # a fine uniform grid covering an integer number of periods
            t = np.arange(0, cycles * P, P / 64)
            X = bl.fourier_features(t, bl.FourierConfig((term,)))
            assert np.max(np.abs(X.mean(axis=0))) < 1e-6

    def test_shape_and_order(self):
        cfg = bl.FourierConfig((bl.WEEKLY, bl.MONTHLY))
        X = bl.fourier_features(np.arange(5.0), cfg)
        assert X.shape == (5, 16) and cfg.n_features == 16
        np.testing.assert_allclose(X[:, 6], np.cos(2 * math.pi * np.arange(5) / 30.4375))

    def test_config_errors(self):
        with pytest.raises(ConfigurationError):
            bl.FourierConfig(((0, 2),))
        with pytest.raises(ConfigurationError):
            bl.FourierConfig(((7, 0),))
        with pytest.raises(ConfigurationError):
            bl.FourierConfig(((7, 1), (7.0, 2)))
        with pytest.raises(DomainError):
            bl.fourier_features([np.inf], WEEK3)

    def test_params(self):
        p = bl.FourierParams(1.0, 2.0, np.zeros(6), 0.5)
        p.validate(WEEK3)
        with pytest.raises(DomainError):
            p.validate(bl.FourierConfig())
        with pytest.raises(DomainError):
            bl.FourierParams(1.0, 2.0, [], 0.0)
        assert bl.FourierParams.from_flat(p.flat()) .flat() == p.flat()


class TestFit:
    def test_sinusoid_recovery(self):
        dates = daily_dates(date(2018, 1, 1), 140)
        y = np.cos(2 * math.pi * np.arange(140) / 7)
        fit = bl.fit_fourier(TimeSeries("sin", dates, y), WEEK3, standardize=False)
        # noise-free data drive sigma towards zero, so judge by the estimates
        np.testing.assert_allclose(fit.params.beta, [1, 0, 0, 0, 0, 0], atol=1e-2)
        assert abs(fit.params.k) < 1e-2
        np.testing.assert_allclose(bl.predict_fourier(fit.params, dates, WEEK3, fit.info), y, atol=1e-2)

    def test_penalized_least_squares_oracle(self, rng):
        dates = daily_dates(date(2018, 1, 1), 120)
        y = 3 + np.sin(2 * math.pi * np.arange(120) / 7) + rng.normal(0, 0.3, 120)
        fit = bl.fit_fourier(TimeSeries("s", dates, y), WEEK3)
        assert fit.converged
        d, s = fit.target.data, fit.params.sigma_obs
        X = np.column_stack([d.t, np.ones(len(d)), d.features])
        beta = np.linalg.solve(X.T @ X / s**2 + np.eye(X.shape[1]) / 25, X.T @ d.y / s**2)
        p = fit.params
        np.testing.assert_allclose([p.k, p.m, *p.beta], beta, atol=1e-6)

    def test_zero_beta_is_a_line(self):
        info = mc.StandardizationInfo(0.0, 1.0, mc.TimeScale(date(2018, 1, 1), 10))
        dates = daily_dates(date(2018, 1, 1), 11)
        out = bl.predict_fourier(bl.FourierParams(2.0, 1.0, np.zeros(6), 1.0), dates, WEEK3, info)
        np.testing.assert_allclose(out, 2 * np.arange(11) / 10 + 1, atol=1e-12)

    def test_white_noise_sigma(self):
        rng = np.random.default_rng(7)
        dates = daily_dates(date(2018, 1, 1), 2000)
        y = rng.normal(50, 4.0, 2000)
        fit = bl.fit_fourier(TimeSeries("wn", dates, y), WEEK3, standardize=False)
        assert abs(fit.params.sigma_obs / 4.0 - 1) < 0.1

    def test_empty_config_equals_complete_pooling(self, rng):
        dates = daily_dates(date(2018, 1, 1), 100)
        series = TimeSeries("x", dates, 2 + 0.05 * np.arange(100) + rng.normal(0, 1, 100))
        four = bl.fit_fourier(series, bl.FourierConfig(), noise_prior=None)
        comp = inf.map_fit(series, ModelSpec.complete())
        assert four.params.k == pytest.approx(comp.params.k[0][0], abs=1e-8)
        assert four.params.m == pytest.approx(comp.params.m[0][0], abs=1e-8)
        assert four.objective == pytest.approx(comp.objective, abs=1e-8)

    def test_gradient(self, rng):
        dates = daily_dates(date(2018, 1, 1), 60)
        series = TimeSeries("x", dates, rng.normal(size=60))
        info = mc.standardize(series)[1]
        cfg = bl.FourierConfig((bl.WEEKLY, bl.MONTHLY))
        target = bl.FourierTarget(bl.fourier_data(series, cfg, info), cfg, info)
        v = rng.normal(size=target.size)
        _, g = target.value_and_grad(v)
        fd = np.array([(target.value_and_grad(v + 1e-6 * e)[0] - target.value_and_grad(v - 1e-6 * e)[0]) / 2e-6
                       for e in np.eye(target.size)])
        np.testing.assert_allclose(fd, g, atol=1e-5)


class TestImport:
    def _file(self, tmp_path, dates, values):
        path = tmp_path / "ext.csv"
        write_csv(TimeSeries("ext", dates, values), path)
        return path

    def test_identical_forecast_gives_identical_mape(self, tmp_path, rng):
        dates = daily_dates(date(2018, 1, 1), 30)
        actual = rng.uniform(50, 100, 30)
        forecast = actual + rng.normal(0, 5, 30)
        ext = bl.import_external_forecast(self._file(tmp_path, dates, forecast), "sarima", dates)
        assert ext.is_forecast and ext.name == "sarima"
        assert mape(actual, ext.values) == mape(actual, forecast)

    def test_missing_date(self, tmp_path):
        dates = daily_dates(date(2018, 1, 1), 30)
        path = self._file(tmp_path, dates[:-1], np.ones(29))
        with pytest.raises(AlignmentError, match="2018-01-30"):
            bl.import_external_forecast(path, "x", dates)

    def test_extra_dates_warn(self, tmp_path, caplog):
        dates = daily_dates(date(2018, 1, 1), 40)
        path = self._file(tmp_path, dates, np.arange(40.0))
        with caplog.at_level(logging.WARNING):
            out = bl.import_external_forecast(path, "x", dates[5:35])
        assert out.values.tolist() == list(np.arange(5.0, 35.0))
        assert "ignoring 10" in caplog.text
