"""Fourier-regression baseline and import of externally produced forecasts.

The baseline is ``y ~ Normal(k * t + X(t) . beta + m, sigma)`` with a single
linear trend. Harmonics are evaluated on raw day offsets so that a period of
7 really means one week, while the trend uses the same scaled time axis as the
pooling models.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from datetime import date
from typing import Optional, Sequence

import numpy as np

from . import model as mc
from .errors import AlignmentError, ConfigurationError, DomainError
from .inference import OptimizerOptions, MapResult, maximize
from .model import StandardizationInfo, TimeSeries
from .seriesio import load_csv
from .timebase import day_offsets, scaled_time

log = logging.getLogger(__name__)

WEEKLY = (7.0, 3)
MONTHLY = (30.4375, 5)


@dataclass(frozen=True)
class FourierConfig:
    """Seasonal terms as ``(period_days, order)`` pairs."""

    terms: tuple[tuple[float, int], ...] = ()

    def __post_init__(self):
        terms = []
        for entry in self.terms:
            try:
                period, order = entry
            except (TypeError, ValueError):
                raise ConfigurationError(f"Fourier term {entry!r} is not a (period, order) pair") from None
            period = float(period)
            if not (math.isfinite(period) and period > 0):
                raise ConfigurationError(f"Fourier period must be positive, got {period}")
            if int(order) != order or int(order) < 1:
                raise ConfigurationError(f"Fourier order must be a positive integer, got {order}")
            terms.append((period, int(order)))
        periods = [p for p, _ in terms]
        if len(set(periods)) != len(periods):
            raise ConfigurationError(f"duplicate Fourier periods in {periods}")
        object.__setattr__(self, "terms", tuple(terms))

    @property
    def n_features(self) -> int:
        return sum(2 * n for _, n in self.terms)

    @property
    def label(self) -> str:
        if not self.terms:
            return "fourier()"
        return "fourier(" + "+".join(f"{p:g},{n}" for p, n in self.terms) + ")"


def fourier_features(t_days, config: FourierConfig) -> np.ndarray:
    """Columns ``cos(2 pi j t / P), sin(2 pi j t / P)`` for j = 1..n, term by term."""
    t = np.asarray(t_days, dtype=float)
    if not np.all(np.isfinite(t)):
        raise DomainError("Fourier features need finite times")
    cols = []
    for period, order in config.terms:
        if not period > 0:
            raise ConfigurationError(f"Fourier period must be positive, got {period}")
        for j in range(1, order + 1):
            arg = 2.0 * math.pi * j * t / period
            cols.append(np.cos(arg))
            cols.append(np.sin(arg))
    if not cols:
        return np.empty((t.size, 0))
    return np.column_stack(cols)


@dataclass(frozen=True)
class FourierParams:
    k: float
    m: float
    beta: np.ndarray
    sigma_obs: float

    def __post_init__(self):
        beta = np.array(self.beta, dtype=float).reshape(-1)
        beta.setflags(write=False)
        object.__setattr__(self, "beta", beta)
        if not self.sigma_obs > 0:
            raise DomainError(f"sigma_obs must be positive, got {self.sigma_obs}")

    def validate(self, config: FourierConfig) -> "FourierParams":
        if self.beta.size != config.n_features:
            raise DomainError(f"beta has {self.beta.size} entries, config needs {config.n_features}")
        return self

    def flat(self) -> dict:
        return {"k": self.k, "m": self.m, "beta": self.beta.tolist(), "sigma_obs": self.sigma_obs}

    @classmethod
    def from_flat(cls, obj: dict) -> "FourierParams":
        return cls(float(obj["k"]), float(obj["m"]), np.asarray(obj["beta"], dtype=float), float(obj["sigma_obs"]))


@dataclass(frozen=True)
class FourierData:
    y: np.ndarray
    t: np.ndarray
    features: np.ndarray

    def __len__(self) -> int:
        return self.y.size


class FourierTarget:
    """Jacobian-adjusted log posterior of the Fourier regression.

    Layout of the unconstrained vector: ``k, m, beta..., log sigma_obs``.
    ``noise_prior=None`` drops the half-normal on sigma_obs, which makes an
    empty config coincide with the complete pooling model.
    """

    def __init__(
        self,
        data: FourierData,
        config: FourierConfig,
        info: StandardizationInfo,
        priors: mc.PriorConstants = mc.PriorConstants(),
        noise_prior: Optional[float] = 0.5,
    ):
        self.data = data
        self.config = config
        self.info = info
        self.priors = priors
        self.noise_prior = noise_prior

    @property
    def size(self) -> int:
        return 3 + self.config.n_features

    @property
    def label(self) -> str:
        return self.config.label

    def constrain(self, v) -> FourierParams:
        v = np.asarray(v, dtype=float)
        if v.shape != (self.size,):
            raise DomainError(f"expected an unconstrained vector of length {self.size}, got {v.shape}")
        return FourierParams(float(v[0]), float(v[1]), v[2:-1].copy(), math.exp(v[-1]))

    def unconstrain(self, params: FourierParams) -> np.ndarray:
        params.validate(self.config)
        return np.concatenate([[params.k, params.m], params.beta, [math.log(params.sigma_obs)]])

    def predict_std(self, params: FourierParams, data: FourierData) -> np.ndarray:
        return params.k * data.t + data.features @ params.beta + params.m

    def sigma(self, params: FourierParams) -> float:
        return params.sigma_obs

    def log_posterior(self, params: FourierParams) -> float:
        scale = self.priors.trend_loc_scale
        value = float(
            mc.normal_logpdf(params.k, 0.0, scale)
            + mc.normal_logpdf(params.m, 0.0, self.priors.offset_loc_scale)
            + mc.normal_logpdf(params.beta, 0.0, scale).sum()
        )
        if self.noise_prior is not None:
            value += float(mc.normal_logpdf(params.sigma_obs, 0.0, self.noise_prior))
        return value + float(self.pointwise_log_lik(params, self.data).sum())

    def value_and_grad(self, v) -> tuple[float, np.ndarray]:
        v = np.asarray(v, dtype=float)
        if not np.all(np.isfinite(v)):
            raise DomainError("non-finite unconstrained coordinate")
        params = self.constrain(v)
        d = self.data
        sigma = params.sigma_obs
        resid = d.y - self.predict_std(params, d)
        w = resid / sigma**2
        k_scale = self.priors.trend_loc_scale
        m_scale = self.priors.offset_loc_scale
        grad = np.empty(self.size)
        grad[0] = w @ d.t - params.k / k_scale**2
        grad[1] = w.sum() - params.m / m_scale**2
        grad[2:-1] = d.features.T @ w - params.beta / k_scale**2
        g_sigma = -d.y.size / sigma + (resid @ resid) / sigma**3
        if self.noise_prior is not None:
            g_sigma -= sigma / self.noise_prior**2
        grad[-1] = g_sigma * sigma + 1.0
        return self.log_posterior(params) + v[-1], grad

    def make_data(self, series: TimeSeries) -> FourierData:
        return fourier_data(series, self.config, self.info)

    def pointwise_log_lik(self, params: FourierParams, data: FourierData) -> np.ndarray:
        return mc.normal_logpdf(data.y, self.predict_std(params, data), params.sigma_obs)

    def with_data(self, data: FourierData) -> "FourierTarget":
        return FourierTarget(data, self.config, self.info, self.priors, self.noise_prior)


def fourier_data(series: TimeSeries, config: FourierConfig, info: StandardizationInfo) -> FourierData:
    y = (series.values - info.y_mean) / info.y_sd
    t = scaled_time(series.dates, info.time_scale)
    days = day_offsets(series.dates, info.time_scale.origin)
    return FourierData(y, t, fourier_features(days, config))


def fit_fourier(
    series: TimeSeries,
    config: FourierConfig,
    opts: Optional[OptimizerOptions] = None,
    stream: Sequence[int] = (),
    standardize: bool = True,
    priors: mc.PriorConstants = mc.PriorConstants(),
    noise_prior: Optional[float] = 0.5,
) -> MapResult:
    """MAP fit of the Fourier regression; ``result.params`` is a :class:`FourierParams`."""
    info = mc.standardize(series)[1] if standardize else mc.identity_info(series)
    target = FourierTarget(fourier_data(series, config, info), config, info, priors, noise_prior)
    result = maximize(target, opts, stream)
    if not result.converged:
        log.warning("%s: not converged (grad norm %.3g)", config.label, result.grad_norm)
    return result


def predict_fourier(
    params: FourierParams, dates: Sequence[date], config: FourierConfig, info: StandardizationInfo
) -> np.ndarray:
    """Point forecast on the original scale."""
    params.validate(config)
    t = scaled_time(dates, info.time_scale)
    features = fourier_features(day_offsets(dates, info.time_scale.origin), config)
    return mc.destandardize(params.k * t + features @ params.beta + params.m, info)


# --- external forecasts ------------------------------------------------------


def align_forecast(forecast: TimeSeries, dates: Sequence[date]) -> np.ndarray:
    """Values of ``forecast`` on ``dates``; missing dates are an error, extras are dropped."""
    lookup = dict(zip(forecast.dates, forecast.values))
    missing = [d for d in dates if d not in lookup]
    if missing:
        shown = ", ".join(d.isoformat() for d in missing[:10])
        more = f" and {len(missing) - 10} more" if len(missing) > 10 else ""
        raise AlignmentError(f"{forecast.name}: missing forecast dates {shown}{more}")
    extra = len(lookup) - len(set(dates) & lookup.keys())
    if extra:
        log.warning("%s: ignoring %d forecast dates outside the requested range", forecast.name, extra)
    return np.array([lookup[d] for d in dates])


def import_external_forecast(
    path, name: Optional[str] = None, dates: Optional[Sequence[date]] = None
) -> TimeSeries:
    """Load a ``date,value`` forecast file, optionally restricted to ``dates``."""
    series = load_csv(path, name=name, is_forecast=True)
    if dates is None:
        return series
    values = align_forecast(series, dates)
    return TimeSeries(series.name, tuple(dates), values, is_forecast=True)
