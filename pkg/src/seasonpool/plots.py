"""Figure emission: every SVG has a sibling CSV holding the plotted numbers.

SVG output is made byte-reproducible by fixing matplotlib's hash salt and
dropping the creation date from the metadata.
"""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .errors import ConfigurationError  # noqa: E402
from .inference import MapResult, PosteriorDraws  # noqa: E402
from .outputs import group_table  # noqa: E402

_SVG_META = {"Date": None, "Creator": "seasonpool"}


def _save(fig, svg_path: Path) -> Path:
    with matplotlib.rc_context({"svg.hashsalt": "seasonpool", "svg.fonttype": "none"}):
        fig.savefig(svg_path, format="svg", metadata=_SVG_META)
    plt.close(fig)
    return svg_path


def _write_rows(path: Path, header: Sequence[str], rows) -> Path:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([c if isinstance(c, str) else repr(c) for c in row])
    return path


def forecast_overlay(out_dir, name: str, dates, actual, forecasts: Mapping[str, Sequence[float]]) -> list[Path]:
    """Actual series against each model's forecast."""
    out_dir = Path(out_dir)
    stem = out_dir / f"forecast-{name}"
    models = list(forecasts)
    rows = [
        [d.isoformat(), float(a), *(float(forecasts[m][i]) for m in models)]
        for i, (d, a) in enumerate(zip(dates, actual))
    ]
    csv_path = _write_rows(stem.with_suffix(".csv"), ["date", "actual", *models], rows)
    fig, ax = plt.subplots(figsize=(10, 4))
    x = np.arange(len(dates))
    ax.plot(x, np.asarray(actual, dtype=float), color="black", lw=1.2, label="y")
    for m in models:
        ax.plot(x, np.asarray(forecasts[m], dtype=float), lw=0.9, label=m)
    ticks = x[:: max(1, len(x) // 8)]
    ax.set_xticks(ticks, [dates[i].isoformat() for i in ticks], rotation=30, fontsize=7)
    ax.set_title(f"Forecast for {name}")
    ax.legend(fontsize=7)
    fig.tight_layout()
    return [_save(fig, stem.with_suffix(".svg")), csv_path]


def _need_draws(draws, what: str) -> None:
    if draws is None:
        raise ConfigurationError(f"{what} needs a fit with posterior draws; run with draws > 0 on a converged fit")


def parameter_intervals(out_dir, name: str, fit: MapResult, draws: PosteriorDraws) -> list[Path]:
    """Per-subcategory k and m as MAP plus and minus one Laplace sd."""
    _need_draws(draws, "the parameter interval plot")
    out_dir = Path(out_dir)
    stem = out_dir / f"params-{name}"
    rows = group_table(fit, draws)
    csv_path = _write_rows(stem.with_suffix(".csv"), ["dimension", "slot", "k", "k_sd", "m", "m_sd"],
                           [[r[0], int(r[1]), *map(float, r[2:])] for r in rows])
    dims = list(dict.fromkeys(r[0] for r in rows))
    fig, axes = plt.subplots(len(dims), 2, figsize=(10, 3 * len(dims)), squeeze=False)
    for i, dim in enumerate(dims):
        sub = [r for r in rows if r[0] == dim]
        slots = [r[1] for r in sub]
        for j, (col, sd_col, label) in enumerate(((2, 3, "k"), (4, 5, "m"))):
            ax = axes[i][j]
            ax.errorbar(slots, [r[col] for r in sub], yerr=[r[sd_col] for r in sub], fmt="o", ms=3, capsize=2)
            ax.set_title(f"{label} by {dim} slot")
            ax.set_xlabel("slot")
    fig.tight_layout()
    return [_save(fig, stem.with_suffix(".svg")), csv_path]


def theta_histogram(out_dir, name: str, fit: MapResult, draws: PosteriorDraws, bins: int = 40) -> list[Path]:
    """Histogram of each mixture weight over the posterior draws."""
    _need_draws(draws, "the theta histogram")
    out_dir = Path(out_dir)
    stem = out_dir / f"theta-{name}"
    thetas = np.array([np.atleast_1d(getattr(p, "theta", np.ones(1))) for p in draws.params])
    spec = getattr(fit.target, "spec", None)
    labels = [d.value for d in spec.dims] if spec is not None and spec.dims else ["all"]
    labels = labels[: thetas.shape[1]] if len(labels) >= thetas.shape[1] else [str(i) for i in range(thetas.shape[1])]
    edges = np.linspace(0.0, 1.0, bins + 1)
    counts = [np.histogram(thetas[:, d], bins=edges)[0] for d in range(thetas.shape[1])]
    rows = [[float(edges[b]), float(edges[b + 1]), *(int(c[b]) for c in counts)] for b in range(bins)]
    csv_path = _write_rows(stem.with_suffix(".csv"), ["bin_lo", "bin_hi", *labels], rows)
    fig, ax = plt.subplots(figsize=(6, 3.5))
    for d, label in enumerate(labels):
        ax.stairs(counts[d], edges, label=f"theta[{label}]")
    ax.set_xlim(0, 1)
    ax.set_title(f"Mixture weights, {name}")
    ax.legend(fontsize=7)
    fig.tight_layout()
    return [_save(fig, stem.with_suffix(".svg")), csv_path]
