from datetime import date, timedelta

import numpy as np
import pytest

from seasonpool.model import TimeSeries

ACCEPTANCE_LINES: list[str] = []


def daily_dates(start: date, n: int) -> tuple:
    return tuple(start + timedelta(days=i) for i in range(n))


def random_series(rng, n: int = 120, start: date = date(2017, 1, 1), name: str = "s") -> TimeSeries:
    """Trend plus weekly and monthly bumps plus noise."""
    dates = daily_dates(start, n)
    dow = np.array([d.weekday() for d in dates])
    dom = np.array([d.day - 1 for d in dates])
    t = np.arange(n) / max(n - 1, 1)
    y = (
        50
        + 10 * t
        + rng.normal(0, 5, 7)[dow]
        + rng.normal(0, 3, 31)[dom]
        + rng.normal(0, 2, n)
    )
    return TimeSeries(name, dates, y)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def random_params(rng, spec, scale: float = 1.0):
    """A valid random ParameterSet for ``spec``."""
    from seasonpool.model import ParameterSet

    sizes = spec.cardinalities
    k = tuple(rng.normal(0, scale, p) for p in sizes)
    m = tuple(rng.normal(0, scale, p) for p in sizes)
    theta = rng.dirichlet(np.ones(spec.n_groups)) if spec.n_groups > 1 else np.ones(1)
    sigma = float(rng.uniform(0.2, 2.0))
    if not spec.hierarchical:
        return ParameterSet(k, m, sigma, theta)
    return ParameterSet(
        k, m, sigma, theta,
        k_mu=float(rng.normal()), k_sigma=float(rng.uniform(0.2, 2)),
        m_mu=float(rng.normal()), m_sigma=float(rng.uniform(0.2, 2)),
    )


ALL_KINDS = ("complete", "partial-week", "partial-month", "mixed")


def spec_for(name):
    from seasonpool.model import ModelSpec
    from seasonpool.timebase import SeasonalityKind as S

    return {
        "complete": ModelSpec.complete(),
        "partial-week": ModelSpec.partial(S.DAY_OF_WEEK),
        "partial-month": ModelSpec.partial(S.DAY_OF_MONTH),
        "mixed": ModelSpec.mixed([S.DAY_OF_WEEK, S.DAY_OF_MONTH]),
    }[name]
