"""Serialized fits, forecast tables and the run manifest."""

from __future__ import annotations

import csv
import hashlib
import json
import platform
import sys
from datetime import date, datetime, timezone
from pathlib import Path
from typing import Sequence

import numpy as np

from . import model as mc
from .inference import MapResult, PosteriorDraws
from .model import ParameterSet, TimeSeries

QUANTILES = (0.1, 0.9)


def fit_to_dict(fit: MapResult, model_name: str) -> dict:
    info = fit.info
    params = fit.params
    return {
        "model": model_name,
        "converged": fit.converged,
        "grad_norm": fit.grad_norm,
        "iterations": fit.iterations,
        "restart": fit.restart,
        "log_posterior": fit.log_post,
        "objective": fit.objective,
        "tied": list(fit.tied),
        "standardization": {
            "y_mean": info.y_mean,
            "y_sd": info.y_sd,
            "time_origin": info.time_scale.origin.isoformat(),
            "time_span_days": info.time_scale.span_days,
        },
        "params": params.flat(),
        "unconstrained": list(map(float, fit.unconstrained_opt)),
    }


def write_json(obj, path) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, allow_nan=True)
        fh.write("\n")


def predictive_table(draws: PosteriorDraws, dates: Sequence[date], seed: int = 0):
    """Point forecast and 10%/90% predictive quantiles on the original scale.

    The point forecast averages each draw's predictive mean. The quantiles add
    one observation-noise draw per posterior draw.
    """
    target = draws.target
    dates = tuple(dates)
    series = TimeSeries("horizon", dates, np.zeros(len(dates)))
    data = target.make_data(series)
    info = target.info
    means = np.array([mc.destandardize(target.predict_std(p, data), info) for p in draws.params])
    sigmas = np.array([target.sigma(p) for p in draws.params]) * info.y_sd
    noise = np.random.default_rng(seed).standard_normal(means.shape)
    predictive = means + sigmas[:, None] * noise
    point = means.mean(axis=0)
    lower, upper = np.quantile(predictive, QUANTILES, axis=0)
    return point, lower, upper


def write_forecast_csv(path, dates, point, lower, upper) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["date", "value", "q10", "q90"])
        for row in zip(dates, point, lower, upper):
            writer.writerow([row[0].isoformat(), *(repr(float(x)) for x in row[1:])])


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(out_dir, command: str, config_dict: dict, digest: str, outputs: Sequence) -> Path:
    """The one file allowed to carry a timestamp."""
    import matplotlib
    import scipy

    out_dir = Path(out_dir)
    manifest = {
        "command": command,
        "created": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "config_sha256": digest,
        "config": config_dict,
        "versions": {
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "matplotlib": matplotlib.__version__,
            "seasonpool": _package_version(),
        },
        "argv": sys.argv[1:],
        "outputs": {
            Path(p).name: _sha256(Path(p)) for p in sorted(map(str, outputs)) if Path(p).is_file()
        },
    }
    path = out_dir / "run-manifest.json"
    write_json(manifest, path)
    return path


def _package_version() -> str:
    try:
        from importlib.metadata import version

        return version("artifact")
    except Exception:  # not installed as a distribution
        return "unknown"


def group_table(fit: MapResult, draws: PosteriorDraws):
    """Per-subcategory k and m in original units with Laplace standard deviations.

    Rows are ``(dimension, slot, k, k_sd, m, m_sd)``. Standard deviations come
    from the Laplace covariance; a tied family uses its hypermean's.
    """
    target = fit.target
    spec = target.spec
    info = target.info
    params: ParameterSet = fit.params
    cov = draws.covariance
    sl = target.bijection.slices()
    rows = []
    if not spec.hierarchical:
        sd = {f: np.sqrt(cov[sl[f], sl[f]].diagonal()) for f in ("k", "m")}
        return [("all", 0, params.k[0][0] * info.y_sd, sd["k"][0] * info.y_sd,
                 params.m[0][0] * info.y_sd + info.y_mean, sd["m"][0] * info.y_sd)]
    sds = {}
    n_sub = sum(spec.cardinalities)
    for family in ("k", "m"):
        if family in fit.tied:
            i = sl[f"{family}_mu"].start
            sds[family] = np.full(n_sub, np.sqrt(cov[i, i]))
        else:
            sds[family] = np.sqrt(cov[sl[family], sl[family]].diagonal())
    start = 0
    for d, dim in enumerate(spec.dims):
        for j in range(dim.cardinality):
            rows.append((
                dim.value, j,
                params.k[d][j] * info.y_sd, sds["k"][start + j] * info.y_sd,
                params.m[d][j] * info.y_sd + info.y_mean, sds["m"][start + j] * info.y_sd,
            ))
        start += dim.cardinality
    return rows
