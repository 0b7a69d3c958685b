"""Seeded synthetic series with known trend, seasonal effects and mixture weights.

The generator mirrors the mixed pooling model: each seasonality dimension ``d``
contributes ``trend + offset[d][slot]`` to growth and level, and the
dimensions are blended with simplex weights. Presets imitate three demand
shapes: a deep weekly drop, month-position spikes, and a blend of both.
"""

from __future__ import annotations

from dataclasses import dataclass
from datetime import date
from typing import Mapping

import numpy as np

from .errors import ConfigurationError
from .model import ModelSpec, ParameterSet, TimeSeries, predict_mean
from .timebase import (
    SeasonalityKind,
    TimeScale,
    build_pooling,
    date_range,
    parse_date,
    scaled_time,
)


@dataclass(frozen=True)
class SynthSpec:
    """Ground truth for :func:`synthesize`.

    ``effects`` maps each seasonality to a ``(cardinality, 2)`` array of
    ``(k_offset, m_offset)`` pairs, one row per subcategory.
    """

    start: date
    end: date
    trend_k: float
    trend_m: float
    effects: Mapping[SeasonalityKind, np.ndarray]
    weights: tuple[float, ...]
    noise_sd: float = 0.0
    seed: int = 0
    name: str = "synthetic"

    def __post_init__(self):
        if self.end <= self.start:
            raise ConfigurationError("end date must be after the start date")
        if not self.effects:
            raise ConfigurationError("at least one seasonality effect is required")
        effects = {}
        for kind, table in self.effects.items():
            arr = np.array(table, dtype=float)
            if arr.shape != (kind.cardinality, 2):
                raise ConfigurationError(
                    f"{kind.value} effects must have shape ({kind.cardinality}, 2), got {arr.shape}"
                )
            if not np.all(np.isfinite(arr)):
                raise ConfigurationError(f"{kind.value} effects must be finite")
            arr.setflags(write=False)
            effects[kind] = arr
        weights = tuple(float(w) for w in self.weights)
        if len(weights) != len(effects):
            raise ConfigurationError(f"{len(weights)} weights for {len(effects)} effect dimensions")
        if min(weights) < 0 or abs(sum(weights) - 1.0) > 1e-9:
            raise ConfigurationError(f"weights {weights} are not on the simplex")
        if not (self.noise_sd >= 0 and np.isfinite(self.noise_sd)):
            raise ConfigurationError(f"noise_sd must be finite and >= 0, got {self.noise_sd}")
        object.__setattr__(self, "effects", effects)
        object.__setattr__(self, "weights", weights)

    @property
    def dims(self) -> tuple[SeasonalityKind, ...]:
        return tuple(self.effects)

    @property
    def dates(self) -> list[date]:
        return date_range(self.start, self.end)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "start": self.start.isoformat(),
            "end": self.end.isoformat(),
            "trend_k": self.trend_k,
            "trend_m": self.trend_m,
            "effects": {k.value: v.tolist() for k, v in self.effects.items()},
            "weights": list(self.weights),
            "noise_sd": self.noise_sd,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, obj: Mapping) -> "SynthSpec":
        try:
            return cls(
                start=parse_date(obj["start"]),
                end=parse_date(obj["end"]),
                trend_k=float(obj["trend_k"]),
                trend_m=float(obj["trend_m"]),
                effects={SeasonalityKind.parse(k): v for k, v in obj["effects"].items()},
                weights=tuple(obj["weights"]),
                noise_sd=float(obj.get("noise_sd", 0.0)),
                seed=int(obj.get("seed", 0)),
                name=str(obj.get("name", "synthetic")),
            )
        except KeyError as exc:
            raise ConfigurationError(f"synthetic spec is missing field {exc.args[0]!r}") from None


def true_params(spec: SynthSpec) -> tuple[ModelSpec, ParameterSet]:
    """The mixed pooling model and parameters that reproduce the noiseless mean."""
    model = ModelSpec.mixed(spec.dims, standardize=False)
    k = tuple(spec.trend_k + spec.effects[d][:, 0] for d in spec.dims)
    m = tuple(spec.trend_m + spec.effects[d][:, 1] for d in spec.dims)
    return model, ParameterSet(k=k, m=m, sigma_obs=max(spec.noise_sd, 1e-300), theta=np.array(spec.weights))


def noiseless_mean(spec: SynthSpec) -> np.ndarray:
    dates = spec.dates
    t = scaled_time(dates, TimeScale.covering(dates))
    model, params = true_params(spec)
    return predict_mean(params, t, build_pooling(dates, model.dims), model)


def synthesize(spec: SynthSpec) -> tuple[TimeSeries, np.ndarray]:
    """Draw one series; returns it together with the exact noiseless mean."""
    mean = noiseless_mean(spec)
    rng = np.random.default_rng(spec.seed)
    values = mean + spec.noise_sd * rng.standard_normal(mean.size) if spec.noise_sd else mean.copy()
    return TimeSeries(spec.name, spec.dates, values), mean


def seasonal_amplitude(spec: SynthSpec) -> float:
    """Half the peak-to-peak range of the seasonal part of the level."""
    dates = spec.dates
    pooling = build_pooling(dates, spec.dims)
    level = sum(
        w * spec.effects[d][pooling.column(d), 1] for d, w in zip(spec.dims, spec.weights)
    )
    return 0.5 * float(np.max(level) - np.min(level))


# --- presets -----------------------------------------------------------------

_START = date(2017, 1, 1)
_END = date(2018, 12, 31)
_LEVEL = 100.0
_GROWTH = 30.0
NOISE_FRACTION = 0.1

# Monday..Sunday, with the deep Sunday drop
_WEEK = np.array([1.10, 1.12, 1.08, 1.05, 1.00, 0.70, 0.30])

# spikes at the start, middle and end of the month
_MONTH = np.full(31, 0.9)
_MONTH[[0, 1]] = [1.8, 1.4]
_MONTH[14] = 1.6
_MONTH[[28, 29, 30]] = [1.5, 1.7, 1.9]


def _multiplicative(mult: np.ndarray) -> np.ndarray:
    """Offsets that scale both growth and level by ``mult``."""
    return np.column_stack([_GROWTH * (mult - 1.0), _LEVEL * (mult - 1.0)])


def _centered(mult: np.ndarray, energy: float) -> np.ndarray:
    dev = mult - mult.mean()
    return dev * np.sqrt(energy / float(dev @ dev))


def _with_noise(spec: SynthSpec) -> SynthSpec:
    noise = NOISE_FRACTION * seasonal_amplitude(spec)
    return SynthSpec(**{**spec.__dict__, "noise_sd": noise})


def _delivery(seed: int) -> SynthSpec:
    return SynthSpec(
        _START, _END, _GROWTH, _LEVEL,
        {SeasonalityKind.DAY_OF_WEEK: _multiplicative(_WEEK)},
        (1.0,), seed=seed, name="delivery-like",
    )


def _restocking(seed: int) -> SynthSpec:
    return SynthSpec(
        _START, _END, _GROWTH, _LEVEL,
        {SeasonalityKind.DAY_OF_MONTH: _multiplicative(_MONTH)},
        (1.0,), seed=seed, name="restocking-like",
    )


def _shipment(seed: int) -> SynthSpec:
    # With one shared group sd the mode puts theta_d^3 in proportion to
    # w_d^2 * sum(offset_d^2), so offset energies in ratio 0.6 : 0.4 make the
    # generating weights the fitted ones.
    weights = (0.6, 0.4)
    week = 1.0 + _centered(_WEEK, 0.6)
    month = 1.0 + _centered(_MONTH, 0.4)
    return SynthSpec(
        _START, _END, _GROWTH, _LEVEL,
        {
            SeasonalityKind.DAY_OF_WEEK: _multiplicative(week),
            SeasonalityKind.DAY_OF_MONTH: _multiplicative(month),
        },
        weights, seed=seed, name="shipment-like",
    )


PRESETS = {
    "delivery-like": _delivery,
    "restocking-like": _restocking,
    "shipment-like": _shipment,
}


def preset(name: str, seed: int = 0) -> SynthSpec:
    """A named preset with noise at 10% of its seasonal amplitude."""
    try:
        build = PRESETS[name]
    except KeyError:
        raise ConfigurationError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    return _with_noise(build(seed))
