"""Expanding-window cross-validation, MAPE, predictive densities and reports.

Each fold trains on every observation before its test window, forecasts the
window with the MAP point prediction and scores the window with Laplace draws.
PSIS-LOO is computed once per model on the last fold's training fit.
"""

from __future__ import annotations

import csv
import io
import logging
import math
import zlib
from dataclasses import dataclass, field
from datetime import date, timedelta
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy.special import logsumexp

from . import model as mc
from .baselines import MONTHLY, WEEKLY, FourierConfig, align_forecast, fit_fourier
from .errors import ConfigurationError, DomainError, PlanningError, SeasonPoolError
from .inference import MapResult, OptimizerOptions, PosteriorDraws, laplace_draws, map_fit
from .model import ModelSpec, TimeSeries
from .psis import ParetoDiagnostic, psis_loo
from .timebase import SeasonalityKind

log = logging.getLogger(__name__)

FIRST_TEST_START = date(2018, 1, 1)
HORIZON_DAYS = 30
N_FOLDS = 12


# --- folds -------------------------------------------------------------------


@dataclass(frozen=True)
class Fold:
    train_end_exclusive: date
    test_start: date
    test_end_inclusive: date

    @property
    def test_dates(self) -> list[date]:
        n = (self.test_end_inclusive - self.test_start).days + 1
        return [self.test_start + timedelta(days=i) for i in range(n)]


@dataclass(frozen=True)
class FoldPlan:
    folds: tuple[Fold, ...]
    horizon_days: int = HORIZON_DAYS
    n_folds: int = N_FOLDS

    def __len__(self) -> int:
        return len(self.folds)

    def split(self, series: TimeSeries, fold: Fold) -> tuple[TimeSeries, TimeSeries]:
        train = series.window(None, fold.train_end_exclusive)
        test = series.window(fold.test_start, fold.test_end_inclusive + timedelta(days=1))
        return train, test


def make_folds(
    dates: Sequence[date],
    first_test_start: date = FIRST_TEST_START,
    horizon: int = HORIZON_DAYS,
    n_folds: int = N_FOLDS,
) -> FoldPlan:
    """Consecutive test windows of ``horizon`` days starting at ``first_test_start``."""
    if horizon < 1 or n_folds < 1:
        raise PlanningError(f"horizon and fold count must be positive, got {horizon} and {n_folds}")
    if len(dates) == 0:
        raise PlanningError("no dates to plan folds over")
    first, last = min(dates), max(dates)
    if first >= first_test_start:
        raise PlanningError(
            f"no training data: the series starts {first.isoformat()}, "
            f"on or after the first test date {first_test_start.isoformat()}"
        )
    final_day = first_test_start + timedelta(days=horizon * n_folds - 1)
    if final_day > last:
        short = (final_day - last).days
        raise PlanningError(
            f"{n_folds} folds of {horizon} days need data through {final_day.isoformat()}; "
            f"the series ends {last.isoformat()}, {short} days short"
        )
    folds = []
    for f in range(n_folds):
        start = first_test_start + timedelta(days=f * horizon)
        folds.append(Fold(start, start, start + timedelta(days=horizon - 1)))
    return FoldPlan(tuple(folds), horizon, n_folds)


# --- scores ------------------------------------------------------------------


def mape(actual, forecast, epsilon: Optional[float] = None) -> float:
    """Mean absolute percentage error in percent.

    A zero actual is an error unless ``epsilon`` is given, in which case the
    denominator is floored at ``epsilon``.
    """
    a = np.asarray(actual, dtype=float)
    f = np.asarray(forecast, dtype=float)
    if a.shape != f.shape or a.ndim != 1 or a.size == 0:
        raise DomainError(f"MAPE needs two equal-length non-empty vectors, got {a.shape} and {f.shape}")
    denom = np.abs(a)
    if epsilon is None:
        zeros = np.flatnonzero(denom == 0)
        if zeros.size:
            raise DomainError(f"MAPE undefined: actual value is 0 at index {int(zeros[0])}")
    else:
        if not epsilon > 0:
            raise ConfigurationError(f"MAPE epsilon must be positive, got {epsilon}")
        denom = np.maximum(denom, epsilon)
    return float(100.0 * np.mean(np.abs(a - f) / denom))


def draw_log_lik(draws: PosteriorDraws, series: TimeSeries) -> np.ndarray:
    """``S x N`` pointwise log likelihoods on the standardized scale."""
    target = draws.target
    data = target.make_data(series)
    return np.array([target.pointwise_log_lik(p, data) for p in draws.params])


def test_log_predictive_density(draws: PosteriorDraws, test: TimeSeries) -> tuple[np.ndarray, float]:
    """Log of the draw-averaged predictive density at each test point, in original units."""
    if draws is None or len(draws) == 0:
        raise DomainError("test log predictive density needs at least one draw")
    ll = draw_log_lik(draws, test)
    per_point = logsumexp(ll, axis=0) - math.log(ll.shape[0]) - math.log(draws.target.info.y_sd)
    return per_point, float(per_point.sum())


test_log_predictive_density.__test__ = False  # keep pytest from collecting it on import


def point_forecast(fit: MapResult, dates_or_series) -> np.ndarray:
    """MAP point forecast on the original scale."""
    series = dates_or_series
    if not isinstance(series, TimeSeries):
        dates = tuple(dates_or_series)
        series = TimeSeries("forecast", dates, np.zeros(len(dates)))
    target = fit.target
    return mc.destandardize(target.predict_std(fit.params, target.make_data(series)), target.info)


# --- models under comparison ---------------------------------------------------


W, M = SeasonalityKind.DAY_OF_WEEK, SeasonalityKind.DAY_OF_MONTH


@dataclass(frozen=True)
class ModelEntry:
    """A named model the benchmark fits per fold."""

    name: str
    spec: Optional[ModelSpec] = None
    fourier: Optional[FourierConfig] = None

    def fit(self, train: TimeSeries, opts: Optional[OptimizerOptions] = None, stream=()) -> MapResult:
        if self.fourier is not None:
            spec = self.spec or ModelSpec.complete()
            return fit_fourier(train, self.fourier, opts, stream, spec.standardize, spec.priors)
        return map_fit(train, self.spec, opts, stream)


_FOURIER_TERMS = {"week": (WEEKLY,), "month": (MONTHLY,), "both": (WEEKLY, MONTHLY)}

#: shorthand names; ``mixed`` means weekly plus monthly
MODEL_NAMES = (
    "complete", "partial-week", "partial-month", "mixed",
    "fourier-week", "fourier-month", "fourier-both",
)


def model_entry(
    name: str, priors: Optional[mc.PriorConstants] = None, standardize: bool = True
) -> ModelEntry:
    """Build a model from its name.

    Accepted forms: ``complete``, ``partial-<dim>``, ``mixed`` or
    ``mixed-<dim>[+<dim>...]``, and ``fourier-week|month|both``.
    """
    kw = {"standardize": standardize}
    if priors is not None:
        kw["priors"] = priors
    key = name.strip().lower()
    head, _, rest = key.partition("-")
    try:
        if key == "complete":
            return ModelEntry(key, ModelSpec.complete(**kw))
        if head == "partial" and rest:
            return ModelEntry(key, ModelSpec.partial(SeasonalityKind.parse(rest), **kw))
        if key == "mixed":
            return ModelEntry(key, ModelSpec.mixed([W, M], **kw))
        if head == "mixed" and rest:
            dims = [SeasonalityKind.parse(d) for d in rest.split("+")]
            return ModelEntry(key, ModelSpec.mixed(dims, **kw))
        if head == "fourier" and rest in _FOURIER_TERMS:
            return ModelEntry(key, ModelSpec.complete(**kw), FourierConfig(_FOURIER_TERMS[rest]))
    except ConfigurationError as exc:
        raise ConfigurationError(f"model {name!r}: {exc}") from None
    raise ConfigurationError(f"unknown model {name!r}; try one of {list(MODEL_NAMES)}")


#: models compared on each synthetic analog
BENCHMARK_MODELS = {
    "delivery-like": ("complete", "fourier-week", "partial-week", "mixed"),
    "restocking-like": ("complete", "fourier-month", "partial-month", "mixed"),
    "shipment-like": ("complete", "fourier-both", "partial-week", "partial-month", "mixed"),
}


# --- report ------------------------------------------------------------------


@dataclass
class CellResult:
    """Scores of one model on one dataset."""

    per_fold_mape: list = field(default_factory=list)
    per_fold_lpd: list = field(default_factory=list)
    loo_elpd: float = math.nan
    pareto: Optional[ParetoDiagnostic] = None
    forecast_dates: list = field(default_factory=list)
    forecasts: list = field(default_factory=list)
    errors: list = field(default_factory=list)
    external: bool = False
    last_fit: Optional[MapResult] = field(default=None, repr=False)

    @property
    def mean_mape(self) -> float:
        vals = np.asarray(self.per_fold_mape, dtype=float)
        return float(vals.mean()) if vals.size else math.nan

    @property
    def test_lpd(self) -> float:
        vals = np.asarray(self.per_fold_lpd, dtype=float)
        return float(vals.sum()) if vals.size else math.nan


@dataclass
class EvaluationReport:
    cells: dict = field(default_factory=dict)  # (dataset, model) -> CellResult
    actuals: dict = field(default_factory=dict)  # dataset -> (dates, values) over the test folds

    @property
    def datasets(self) -> list[str]:
        return list(dict.fromkeys(d for d, _ in self.cells))

    @property
    def models(self) -> list[str]:
        return list(dict.fromkeys(m for _, m in self.cells))

    def cell(self, dataset: str, model: str) -> CellResult:
        return self.cells[(dataset, model)]

    def merge(self, other: "EvaluationReport") -> "EvaluationReport":
        return EvaluationReport({**self.cells, **other.cells}, {**self.actuals, **other.actuals})

    def long_rows(self) -> list[tuple]:
        rows = []
        for (ds, name), cell in self.cells.items():
            for f, value in enumerate(cell.per_fold_mape, start=1):
                rows.append((ds, name, str(f), "mape", value))
            for f, value in enumerate(cell.per_fold_lpd, start=1):
                rows.append((ds, name, str(f), "test_lpd", value))
            rows.append((ds, name, "all", "mean_mape", cell.mean_mape))
            if not cell.external:
                rows.append((ds, name, "all", "test_lpd", cell.test_lpd))
                rows.append((ds, name, "all", "loo_elpd", cell.loo_elpd))
                if cell.pareto is not None:
                    rows.append((ds, name, "all", "pareto_k_max", cell.pareto.max_k))
                    rows.append((ds, name, "all", "pareto_k_flagged", float(cell.pareto.n_flagged)))
        return rows

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["dataset", "model", "fold", "metric", "value"])
        for ds, name, fold, metric, value in self.long_rows():
            writer.writerow([ds, name, fold, metric, repr(float(value))])
        return buf.getvalue()

    def to_text(self) -> str:
        """Aligned tables: mean MAPE, then test log predictive density and PSIS-LOO ELPD."""
        models = self.models
        out = []
        tables = (
            ("Out-of-sample MAPE (%), mean over folds", lambda c: c.mean_mape, "{:.2f}", True),
            ("Test log predictive density, summed over folds", lambda c: c.test_lpd, "{:.1f}", False),
            ("PSIS-LOO ELPD on the last training window (higher is better)", lambda c: c.loo_elpd, "{:.1f}", False),
        )
        for title, getter, fmt, external_ok in tables:
            header = ["dataset"] + models
            rows = []
            for ds in self.datasets:
                row = [ds]
                for name in models:
                    cell = self.cells.get((ds, name))
                    if cell is None or (cell.external and not external_ok):
                        row.append(".")
                        continue
                    value = getter(cell)
                    row.append("nan" if math.isnan(value) else fmt.format(value))
                rows.append(row)
            widths = [max(len(r[i]) for r in [header] + rows) for i in range(len(header))]
            out.append(title)
            for r in [header] + rows:
                cells = [c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(r, widths))]
                out.append("  ".join(cells))
            out.append("")
        return "\n".join(out)


# --- benchmark ---------------------------------------------------------------


def _stream(*labels) -> tuple[int, ...]:
    return tuple(zlib.crc32(str(x).encode()) for x in labels)


def run_benchmark(
    dataset: str,
    series: TimeSeries,
    models: Sequence[ModelEntry],
    plan: FoldPlan,
    seed: int = 0,
    n_draws: int = 1000,
    opts: Optional[OptimizerOptions] = None,
    imports: Optional[Mapping[str, TimeSeries]] = None,
    epsilon: Optional[float] = None,
    loo: bool = True,
) -> EvaluationReport:
    """Fit every model on every fold of ``series`` and score it.

    Failures are recorded in the affected cell (score NaN plus a message) and
    never abort the run. Results depend only on the inputs and ``seed``.
    """
    opts = opts or OptimizerOptions(seed=seed)
    report = EvaluationReport()
    actual_dates, actual_values = [], []
    tests = []
    for fold in plan.folds:
        train, test = plan.split(series, fold)
        if len(test) != plan.horizon_days:
            log.warning("%s: fold %s has %d of %d test dates", dataset, fold.test_start, len(test), plan.horizon_days)
        tests.append((fold, train, test))
        actual_dates.extend(test.dates)
        actual_values.extend(test.values.tolist())
    report.actuals[dataset] = (actual_dates, actual_values)

    for entry in models:
        cell = CellResult()
        report.cells[(dataset, entry.name)] = cell
        for f, (fold, train, test) in enumerate(tests, start=1):
            cell.forecast_dates.extend(test.dates)
            draws = None
            try:
                fit = entry.fit(train, opts, _stream(dataset, entry.name, f))
                forecast = point_forecast(fit, test)
            except SeasonPoolError as exc:
                cell.errors.append(f"fold {f}: fit failed: {exc.category}: {exc}")
                cell.per_fold_mape.append(math.nan)
                cell.per_fold_lpd.append(math.nan)
                cell.forecasts.extend([math.nan] * len(test))
                cell.last_fit = None
                continue
            cell.last_fit = fit
            cell.forecasts.extend(forecast.tolist())
            try:
                cell.per_fold_mape.append(mape(test.values, forecast, epsilon))
            except SeasonPoolError as exc:
                cell.errors.append(f"fold {f}: MAPE: {exc}")
                cell.per_fold_mape.append(math.nan)
            try:
                draw_seed = int(np.random.SeedSequence([seed, *_stream(dataset, entry.name, f)]).generate_state(1)[0])
                draws = laplace_draws(fit, n_draws, draw_seed)
                cell.per_fold_lpd.append(test_log_predictive_density(draws, test)[1])
            except SeasonPoolError as exc:
                draws = None
                cell.errors.append(f"fold {f}: draws: {exc.category}: {exc}")
                cell.per_fold_lpd.append(math.nan)
        if loo and draws is not None:
            try:
                result = psis_loo(draw_log_lik(draws, tests[-1][1]))
                cell.loo_elpd = result.elpd_loo - len(tests[-1][1]) * math.log(draws.target.info.y_sd)
                cell.pareto = result.pareto
            except SeasonPoolError as exc:
                cell.errors.append(f"PSIS-LOO: {exc}")
        for msg in cell.errors:
            log.warning("%s/%s: %s", dataset, entry.name, msg)

    for name, forecast in (imports or {}).items():
        cell = CellResult(external=True)
        report.cells[(dataset, name)] = cell
        for f, (fold, train, test) in enumerate(tests, start=1):
            cell.forecast_dates.extend(test.dates)
            try:
                values = align_forecast(forecast, test.dates)
                cell.forecasts.extend(values.tolist())
                cell.per_fold_mape.append(mape(test.values, values, epsilon))
            except SeasonPoolError as exc:
                cell.errors.append(f"fold {f}: {exc.category}: {exc}")
                cell.per_fold_mape.append(math.nan)
                cell.forecasts.extend([math.nan] * len(test))
    return report
