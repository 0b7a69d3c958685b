"""Complete, partial and mixed pooling models of a linearly trending series.

All three share one prediction rule. With ``D`` seasonality dimensions, mixture
weights ``theta`` on the simplex, and per-subcategory growth ``k[d][j]`` and
offset ``m[d][j]``::

    yhat_i = (sum_d theta_d * k[d][pool_id]) * t_i + sum_d theta_d * m[d][pool_id]

Complete pooling is the special case of a single group (``D = 1``, one
subcategory); partial pooling has ``D = 1`` with the subcategories of one
seasonality. Observations are ``Normal(yhat, sigma_obs)``.

Everything here works on the standardized scale; :func:`standardize` and
:func:`destandardize` convert to and from original units.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from datetime import date
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigurationError, DataError, DomainError
from .timebase import (
    PoolingAssignment,
    SeasonalityKind,
    TimeScale,
    build_pooling,
    scaled_time,
)

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class TimeSeries:
    name: str
    dates: tuple[date, ...]
    values: np.ndarray
    is_forecast: bool = False

    def __post_init__(self):
        dates = tuple(self.dates)
        values = np.array(self.values, dtype=float)
        if values.ndim != 1 or len(dates) != values.size:
            raise DataError(f"{self.name}: {len(dates)} dates but {values.size} values")
        if values.size < 2:
            raise DataError(f"{self.name}: need at least 2 observations, got {values.size}")
        if not np.all(np.isfinite(values)):
            bad = int(np.flatnonzero(~np.isfinite(values))[0])
            raise DataError(f"{self.name}: non-finite value at {dates[bad].isoformat()}")
        for a, b in zip(dates, dates[1:]):
            if b <= a:
                raise DataError(f"{self.name}: dates not strictly increasing at {b.isoformat()}")
        values.setflags(write=False)
        object.__setattr__(self, "dates", dates)
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return len(self.dates)

    def window(self, start: Optional[date] = None, end: Optional[date] = None) -> "TimeSeries":
        """Sub-series with ``start <= date < end`` (either bound optional)."""
        keep = [
            i
            for i, d in enumerate(self.dates)
            if (start is None or d >= start) and (end is None or d < end)
        ]
        return TimeSeries(
            self.name, tuple(self.dates[i] for i in keep), self.values[keep], self.is_forecast
        )


@dataclass(frozen=True)
class PriorConstants:
    trend_loc_scale: float = 5.0
    offset_loc_scale: float = 5.0
    hyper_sd_rate: float = 1.0
    noise_sd_scale: float = 0.5

    def __post_init__(self):
        for name in ("trend_loc_scale", "offset_loc_scale", "hyper_sd_rate", "noise_sd_scale"):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"prior constant {name} must be positive")


class ModelKind(enum.Enum):
    COMPLETE = "complete"
    PARTIAL = "partial"
    MIXED = "mixed"


@dataclass(frozen=True)
class ModelSpec:
    """Which pooling model to use, over which seasonalities.

    ``Mixed`` with a single dimension is accepted; it has the same density as
    ``Partial`` on that dimension but keeps the (trivial) mixture weight.
    """

    kind: ModelKind
    dims: tuple[SeasonalityKind, ...] = ()
    priors: PriorConstants = field(default_factory=PriorConstants)
    standardize: bool = True

    def __post_init__(self):
        dims = tuple(self.dims)
        object.__setattr__(self, "dims", dims)
        if len(set(dims)) != len(dims):
            raise ConfigurationError("seasonality dimensions must be distinct")
        if self.kind is ModelKind.COMPLETE and dims:
            raise ConfigurationError("complete pooling takes no seasonality dimensions")
        if self.kind is ModelKind.PARTIAL and len(dims) != 1:
            raise ConfigurationError("partial pooling takes exactly one seasonality dimension")
        if self.kind is ModelKind.MIXED and len(dims) < 1:
            raise ConfigurationError("mixed pooling needs at least one seasonality dimension")

    @classmethod
    def complete(cls, **kw) -> "ModelSpec":
        return cls(ModelKind.COMPLETE, (), **kw)

    @classmethod
    def partial(cls, dim: SeasonalityKind, **kw) -> "ModelSpec":
        return cls(ModelKind.PARTIAL, (dim,), **kw)

    @classmethod
    def mixed(cls, dims: Sequence[SeasonalityKind], **kw) -> "ModelSpec":
        return cls(ModelKind.MIXED, tuple(dims), **kw)

    @property
    def hierarchical(self) -> bool:
        return self.kind is not ModelKind.COMPLETE

    @property
    def n_groups(self) -> int:
        return max(1, len(self.dims))

    @property
    def cardinalities(self) -> tuple[int, ...]:
        if self.kind is ModelKind.COMPLETE:
            return (1,)
        return tuple(d.cardinality for d in self.dims)

    @property
    def label(self) -> str:
        if self.kind is ModelKind.COMPLETE:
            return "complete"
        return f"{self.kind.value}-" + "+".join(d.value for d in self.dims)


@dataclass(frozen=True)
class ParameterSet:
    """Constrained parameters of a pooling model.

    ``k`` and ``m`` are ragged: ``k[d]`` has one entry per subcategory of
    dimension ``d``. For complete pooling ``k = (array([k]),)`` and the
    hyperparameters are ``None``. The same container holds gradients, in which
    case no constraint applies.
    """

    k: tuple[np.ndarray, ...]
    m: tuple[np.ndarray, ...]
    sigma_obs: float
    theta: np.ndarray = field(default_factory=lambda: np.ones(1))
    k_mu: Optional[float] = None
    k_sigma: Optional[float] = None
    m_mu: Optional[float] = None
    m_sigma: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "k", tuple(np.asarray(a, dtype=float) for a in self.k))
        object.__setattr__(self, "m", tuple(np.asarray(a, dtype=float) for a in self.m))
        object.__setattr__(self, "theta", np.asarray(self.theta, dtype=float))

    def validate(self, spec: ModelSpec, tied=()) -> "ParameterSet":
        """Check the constraints; ``tied`` families must sit exactly on their hypermean."""
        shapes = tuple(a.size for a in self.k)
        if shapes != spec.cardinalities or tuple(a.size for a in self.m) != spec.cardinalities:
            raise DomainError(f"parameter shapes {shapes} do not match {spec.cardinalities}")
        if not self.sigma_obs > 0:
            raise DomainError(f"sigma_obs must be positive, got {self.sigma_obs}")
        if spec.hierarchical:
            if self.k_mu is None or self.m_mu is None:
                raise DomainError("hierarchical model needs k_mu and m_mu")
            for family in ("k", "m"):
                value = getattr(self, f"{family}_sigma")
                if family in tied:
                    mu = getattr(self, f"{family}_mu")
                    if value != 0.0 or any(np.any(a != mu) for a in getattr(self, family)):
                        raise DomainError(f"tied family {family} is not at its hypermean")
                elif value is None or not value > 0:
                    raise DomainError(f"{family}_sigma must be positive, got {value}")
        if self.theta.size != spec.n_groups:
            raise DomainError(f"theta has {self.theta.size} entries, expected {spec.n_groups}")
        if np.any(self.theta < 0) or abs(self.theta.sum() - 1.0) > 1e-12:
            raise DomainError(f"theta {self.theta} is not on the simplex")
        return self

    def flat(self) -> dict:
        """Plain-python view for serialization."""
        return {
            "k_mu": self.k_mu,
            "k_sigma": self.k_sigma,
            "m_mu": self.m_mu,
            "m_sigma": self.m_sigma,
            "k": [a.tolist() for a in self.k],
            "m": [a.tolist() for a in self.m],
            "theta": self.theta.tolist(),
            "sigma_obs": self.sigma_obs,
        }

    @classmethod
    def from_flat(cls, obj: dict) -> "ParameterSet":
        return cls(
            k=tuple(np.array(a) for a in obj["k"]),
            m=tuple(np.array(a) for a in obj["m"]),
            sigma_obs=obj["sigma_obs"],
            theta=np.array(obj["theta"]),
            k_mu=obj.get("k_mu"),
            k_sigma=obj.get("k_sigma"),
            m_mu=obj.get("m_mu"),
            m_sigma=obj.get("m_sigma"),
        )


@dataclass(frozen=True)
class StandardizationInfo:
    y_mean: float
    y_sd: float
    time_scale: TimeScale

    def __post_init__(self):
        if not self.y_sd > 0:
            raise DomainError(f"y_sd must be positive, got {self.y_sd}")


@dataclass(frozen=True)
class ModelData:
    """Standardized observations with their time axis and pooling rows."""

    y: np.ndarray
    t: np.ndarray
    pooling: Optional[PoolingAssignment] = None

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float)
        t = np.asarray(self.t, dtype=float)
        if y.shape != t.shape:
            raise DataError(f"y has shape {y.shape} but t has shape {t.shape}")
        if self.pooling is not None and len(self.pooling) != t.size:
            raise DataError(f"pooling has {len(self.pooling)} rows for {t.size} times")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "t", t)

    def __len__(self) -> int:
        return self.t.size

    def take(self, rows) -> "ModelData":
        pooling = None if self.pooling is None else self.pooling.take(rows)
        return ModelData(self.y[rows], self.t[rows], pooling)


# --- standardization -------------------------------------------------------


def standardize(series: TimeSeries) -> tuple[np.ndarray, StandardizationInfo]:
    """Z-score the values with the population sd; time maps onto [0, 1]."""
    y = series.values
    mean = float(np.mean(y))
    sd = float(np.std(y))
    if not sd > 0:
        raise DataError(f"{series.name}: constant series cannot be standardized")
    info = StandardizationInfo(mean, sd, TimeScale.covering(series.dates))
    return (y - mean) / sd, info


def destandardize(y_std, info: StandardizationInfo) -> np.ndarray:
    return np.asarray(y_std, dtype=float) * info.y_sd + info.y_mean


def identity_info(series: TimeSeries) -> StandardizationInfo:
    return StandardizationInfo(0.0, 1.0, TimeScale.covering(series.dates))


def prepare_data(
    series: TimeSeries, spec: ModelSpec, info: Optional[StandardizationInfo] = None
) -> tuple[ModelData, StandardizationInfo]:
    """Model inputs for ``series``.

    Without ``info`` the series is the training window and defines the
    standardization (values are left alone when ``spec.standardize`` is off;
    time is always scaled). With ``info`` the series is scored against an
    existing fit.
    """
    if info is None:
        info = standardize(series)[1] if spec.standardize else identity_info(series)
    y = (series.values - info.y_mean) / info.y_sd
    t = scaled_time(series.dates, info.time_scale)
    pooling = build_pooling(series.dates, spec.dims) if spec.dims else None
    return ModelData(y, t, pooling), info


# --- densities -------------------------------------------------------------


def normal_logpdf(x, loc, scale):
    z = (np.asarray(x, dtype=float) - loc) / scale
    return -0.5 * _LOG_2PI - np.log(scale) - 0.5 * z * z


def exponential_logpdf(x, rate):
    return np.log(rate) - rate * np.asarray(x, dtype=float)


def _group_index(spec: ModelSpec, pooling: Optional[PoolingAssignment], n: int) -> np.ndarray:
    if spec.kind is ModelKind.COMPLETE:
        return np.zeros((n, 1), dtype=np.int64)
    if pooling is None:
        raise ConfigurationError(f"{spec.label} needs pooling indices")
    if tuple(pooling.dims) != spec.dims:
        raise ConfigurationError(
            f"pooling dims {[d.value for d in pooling.dims]} do not match "
            f"{[d.value for d in spec.dims]}"
        )
    if len(pooling) != n:
        raise DataError(f"pooling has {len(pooling)} rows for {n} times")
    return pooling.indices


def _group_effects(params: ParameterSet, idx: np.ndarray):
    """Per-row mixed growth and offset, plus the per-dimension lookups."""
    n_dims = idx.shape[1]
    if len(params.k) != n_dims or len(params.m) != n_dims:
        raise IndexError(f"parameters have {len(params.k)} groups, pooling has {n_dims}")
    pk = np.empty(idx.shape)
    pm = np.empty(idx.shape)
    for d in range(n_dims):
        kd, md = params.k[d], params.m[d]
        col = idx[:, d]
        if col.size and col.max() >= kd.size:
            raise IndexError(f"pooling index {col.max()} out of range for {kd.size} subcategories")
        pk[:, d] = kd[col]
        pm[:, d] = md[col]
    return pk @ params.theta, pm @ params.theta, pk, pm


def predict_mean(
    params: ParameterSet, t, pooling: Optional[PoolingAssignment], spec: ModelSpec
) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    idx = _group_index(spec, pooling, t.size)
    growth, offset, _, _ = _group_effects(params, idx)
    return growth * t + offset


def _check_scales(params: ParameterSet, spec: ModelSpec, tied=()) -> None:
    if not params.sigma_obs > 0:
        raise DomainError(f"sigma_obs must be positive, got {params.sigma_obs}")
    if spec.hierarchical:
        for family in ("k", "m"):
            if family in tied:
                continue
            value = getattr(params, f"{family}_sigma")
            if value is None or not value > 0:
                raise DomainError(f"{family}_sigma must be positive, got {value}")


def log_prior(params: ParameterSet, spec: ModelSpec) -> float:
    """Log prior density.

    The observation sd enters through the normal kernel restricted to the
    positive half-line, without the factor 2 that would normalize it. Complete
    pooling puts no prior on it at all. The mixture weights are uniform.
    """
    _check_scales(params, spec)
    pr = spec.priors
    if not spec.hierarchical:
        return float(
            normal_logpdf(params.k[0][0], 0.0, pr.trend_loc_scale)
            + normal_logpdf(params.m[0][0], 0.0, pr.offset_loc_scale)
        )
    k_all = np.concatenate(params.k)
    m_all = np.concatenate(params.m)
    lp = normal_logpdf(params.k_mu, 0.0, pr.trend_loc_scale)
    lp += exponential_logpdf(params.k_sigma, pr.hyper_sd_rate)
    lp += normal_logpdf(params.m_mu, 0.0, pr.offset_loc_scale)
    lp += exponential_logpdf(params.m_sigma, pr.hyper_sd_rate)
    lp += np.sum(normal_logpdf(k_all, params.k_mu, params.k_sigma))
    lp += np.sum(normal_logpdf(m_all, params.m_mu, params.m_sigma))
    lp += normal_logpdf(params.sigma_obs, 0.0, pr.noise_sd_scale)
    return float(lp)


def pointwise_log_lik(params: ParameterSet, data: ModelData, spec: ModelSpec) -> np.ndarray:
    _check_scales(params, spec)
    yhat = predict_mean(params, data.t, data.pooling, spec)
    return normal_logpdf(data.y, yhat, params.sigma_obs)


def log_likelihood(params: ParameterSet, data: ModelData, spec: ModelSpec) -> float:
    return float(np.sum(pointwise_log_lik(params, data, spec)))


def log_posterior(params: ParameterSet, data: ModelData, spec: ModelSpec) -> float:
    return log_prior(params, spec) + log_likelihood(params, data, spec)


def value_and_grad(
    params: ParameterSet, data: ModelData, spec: ModelSpec, tied=()
) -> tuple[float, ParameterSet]:
    """Log posterior and its partial derivatives in one pass.

    The theta entry of the gradient holds the partials with respect to each
    mixture weight taken independently (no simplex projection).

    ``tied`` names parameter families (``"k"`` and/or ``"m"``) collapsed onto
    their hypermean. Their group-level prior terms are left out, since the
    density is unbounded on that boundary; the gradient entries for the
    family then carry the likelihood part only.
    """
    _check_scales(params, spec, tied)
    pr = spec.priors
    idx = _group_index(spec, data.pooling, len(data))
    growth, offset, pk, pm = _group_effects(params, idx)
    t = data.t
    resid = data.y - (growth * t + offset)
    sigma = params.sigma_obs
    n = resid.size
    ssr = float(resid @ resid)
    value = -0.5 * n * _LOG_2PI - n * math.log(sigma) - 0.5 * ssr / sigma**2

    w = resid / sigma**2
    wt = w * t
    g_k = []
    g_m = []
    for d, size in enumerate(spec.cardinalities):
        g_k.append(params.theta[d] * np.bincount(idx[:, d], weights=wt, minlength=size))
        g_m.append(params.theta[d] * np.bincount(idx[:, d], weights=w, minlength=size))
    g_theta = pk.T @ wt + pm.T @ w
    g_sigma = -n / sigma + ssr / sigma**3

    if not spec.hierarchical:
        k0, m0 = params.k[0][0], params.m[0][0]
        value += float(
            normal_logpdf(k0, 0.0, pr.trend_loc_scale) + normal_logpdf(m0, 0.0, pr.offset_loc_scale)
        )
        g_k[0] = g_k[0] - k0 / pr.trend_loc_scale**2
        g_m[0] = g_m[0] - m0 / pr.offset_loc_scale**2
        grad = ParameterSet(tuple(g_k), tuple(g_m), g_sigma, g_theta)
        return value, grad

    value += float(normal_logpdf(sigma, 0.0, pr.noise_sd_scale))
    hyper = {}
    for family, loc_scale, groups, g_groups in (
        ("k", pr.trend_loc_scale, params.k, g_k),
        ("m", pr.offset_loc_scale, params.m, g_m),
    ):
        mu = getattr(params, f"{family}_mu")
        value += float(normal_logpdf(mu, 0.0, loc_scale))
        g_mu = -mu / loc_scale**2
        if family in tied:
            hyper[family] = (g_mu, 0.0)
            continue
        sd = getattr(params, f"{family}_sigma")
        dev = np.concatenate(groups) - mu
        value += float(exponential_logpdf(sd, pr.hyper_sd_rate))
        value += float(np.sum(normal_logpdf(dev, 0.0, sd)))
        for d in range(len(g_groups)):
            g_groups[d] = g_groups[d] - (groups[d] - mu) / sd**2
        hyper[family] = (
            g_mu + dev.sum() / sd**2,
            -pr.hyper_sd_rate - dev.size / sd + float(dev @ dev) / sd**3,
        )
    grad = ParameterSet(
        k=tuple(g_k),
        m=tuple(g_m),
        sigma_obs=g_sigma - sigma / pr.noise_sd_scale**2,
        theta=g_theta,
        k_mu=hyper["k"][0],
        k_sigma=hyper["k"][1],
        m_mu=hyper["m"][0],
        m_sigma=hyper["m"][1],
    )
    return value, grad


def grad_constrained(params: ParameterSet, data: ModelData, spec: ModelSpec) -> ParameterSet:
    return value_and_grad(params, data, spec)[1]


def initial_params(spec: ModelSpec) -> ParameterSet:
    """Parameters at the zero unconstrained point: unit scales, zero locations."""
    sizes = spec.cardinalities
    zeros = tuple(np.zeros(p) for p in sizes)
    theta = np.full(spec.n_groups, 1.0 / spec.n_groups)
    if not spec.hierarchical:
        return ParameterSet(zeros, zeros, 1.0, theta)
    return ParameterSet(zeros, zeros, 1.0, theta, 0.0, 1.0, 0.0, 1.0)


def with_theta(params: ParameterSet, theta) -> ParameterSet:
    return replace(params, theta=np.asarray(theta, dtype=float))
