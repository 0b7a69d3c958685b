"""Command-line interface: ``seasonpool fit|forecast|evaluate|simulate|compare|plot``.

Errors end the process with status 2 and one line on stderr of the form
``error:<category>: <detail>``.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from datetime import timedelta
from pathlib import Path
from typing import Optional, Sequence

from . import datagen as dg
from . import plots
from .baselines import import_external_forecast
from .config import DEFAULT_MODELS, RunConfig, load_config
from .errors import ConfigurationError, DataError, SeasonPoolError
from .evaluation import (
    BENCHMARK_MODELS,
    EvaluationReport,
    make_folds,
    model_entry,
    run_benchmark,
)
from .inference import laplace_draws
from .model import TimeSeries
from .outputs import (
    fit_to_dict,
    predictive_table,
    write_forecast_csv,
    write_json,
    write_manifest,
)
from .seriesio import load_csv, write_csv
from .timebase import parse_date

log = logging.getLogger("seasonpool")


# --- argument handling -------------------------------------------------------


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON run configuration; flags override its fields")
    p.add_argument("--data", action="append", help="input CSV with header date,value (repeatable)")
    p.add_argument("--preset", action="append", help=f"synthetic preset: {', '.join(dg.PRESETS)}")
    p.add_argument("--models", help="comma-separated model names, e.g. complete,partial-week,mixed")
    p.add_argument("--seed", type=int)
    p.add_argument("--draws", type=int, help="Laplace draws per fit")
    p.add_argument("--out", help="output directory")
    p.add_argument("--horizon", type=int, help="forecast horizon / fold length in days")
    p.add_argument("--folds", type=int, help="number of cross-validation folds")
    p.add_argument("--first-test", help="first test date, YYYY-MM-DD")
    p.add_argument("--epsilon", type=float, help="MAPE denominator floor (default: zero actuals are errors)")
    p.add_argument("--no-standardize", action="store_true", help="fit on raw values")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="seasonpool", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="MAP fit; writes parameters and the convergence trace")
    _common(p)
    p.add_argument("--model", help="single model name (overrides --models)")

    p = sub.add_parser("forecast", help="point forecast with 10%%/90%% predictive quantiles")
    _common(p)
    p.add_argument("--model", help="single model name (overrides --models)")
    p.add_argument("--start", help="first forecast date; training uses earlier data only")

    p = sub.add_parser("evaluate", help="cross-validated MAPE, test density and PSIS-LOO")
    _common(p)

    p = sub.add_parser("simulate", help="write a synthetic series")
    _common(p)
    p.add_argument("--spec", help="JSON synthetic spec instead of a preset")

    p = sub.add_parser("compare", help="MAPE table including imported external forecasts")
    _common(p)
    p.add_argument("--import", dest="imports", action="append", metavar="NAME=PATH",
                   help="external forecast CSV (repeatable)")

    p = sub.add_parser("plot", help="figures with sibling CSVs")
    _common(p)
    p.add_argument("--model", help="single model name (overrides --models)")
    p.add_argument("--forecasts", help="forecasts.csv from evaluate, for the overlay charts")
    return parser


def resolve_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.data:
        cfg.data = list(args.data)
    if args.preset:
        cfg.presets = list(args.preset)
    if getattr(args, "model", None):
        cfg.models = [args.model]
    elif args.models:
        cfg.models = [m.strip() for m in args.models.split(",") if m.strip()]
    for flag, attr in (("seed", "seed"), ("draws", "draws"), ("out", "out"), ("epsilon", "epsilon")):
        value = getattr(args, flag)
        if value is not None:
            setattr(cfg, attr, value)
    if args.horizon is not None:
        cfg.horizon = args.horizon
        cfg.folds.horizon = args.horizon
    if args.folds is not None:
        cfg.folds.n_folds = args.folds
    if args.first_test is not None:
        cfg.folds.first_test_start = args.first_test
    if args.no_standardize:
        cfg.standardize = False
    if getattr(args, "imports", None):
        for item in args.imports:
            name, sep, path = item.partition("=")
            if not sep or not name or not path:
                raise ConfigurationError(f"--import expects NAME=PATH, got {item!r}")
            cfg.imports[name] = path
    return cfg.validate()


def _datasets(cfg: RunConfig) -> list[tuple[str, TimeSeries]]:
    out = [(Path(p).stem, load_csv(p)) for p in cfg.data]
    out += [(name, dg.synthesize(dg.preset(name, cfg.seed))[0]) for name in cfg.presets]
    if not out:
        raise ConfigurationError("no input: give --data or --preset")
    return out


def _entry(cfg: RunConfig, name: str):
    return model_entry(name, cfg.priors, cfg.standardize)


def _single(cfg: RunConfig):
    datasets = _datasets(cfg)
    if len(datasets) != 1:
        raise ConfigurationError("this command takes exactly one dataset")
    if not cfg.models or len(cfg.models) != 1:
        raise ConfigurationError("this command takes exactly one model; use --model")
    return datasets[0], _entry(cfg, cfg.models[0])


def _outdir(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# --- commands ----------------------------------------------------------------


def cmd_fit(cfg: RunConfig) -> list[Path]:
    (name, series), entry = _single(cfg)
    out = _outdir(cfg)
    fit = entry.fit(series, cfg.optimizer_options())
    fit_path = out / f"fit-{name}-{entry.name}.json"
    write_json(fit_to_dict(fit, entry.name), fit_path)
    trace_path = out / f"trace-{name}-{entry.name}.csv"
    fit.write_trace(trace_path)
    print(f"{entry.name}: converged={fit.converged} log_posterior={fit.log_post:.6g} -> {fit_path}")
    return [fit_path, trace_path]


def cmd_forecast(cfg: RunConfig, start: Optional[str] = None) -> list[Path]:
    (name, series), entry = _single(cfg)
    out = _outdir(cfg)
    first = parse_date(start) if start else series.dates[-1] + timedelta(days=1)
    train = series.window(None, first)
    if len(train) < 2:
        raise DataError(f"not enough data before {first.isoformat()} to fit")
    fit = entry.fit(train, cfg.optimizer_options())
    dates = [first + timedelta(days=i) for i in range(cfg.horizon)]
    draws = laplace_draws(fit, cfg.draws, cfg.seed)
    point, lower, upper = predictive_table(draws, dates, cfg.seed)
    path = out / f"forecast-{name}-{entry.name}.csv"
    write_forecast_csv(path, dates, point, lower, upper)
    fit_path = out / f"fit-{name}-{entry.name}.json"
    write_json(fit_to_dict(fit, entry.name), fit_path)
    print(f"{entry.name}: {len(dates)} days from {dates[0].isoformat()} -> {path}")
    return [path, fit_path]


def _benchmark(cfg: RunConfig, imports=None, loo: bool = True) -> EvaluationReport:
    report = EvaluationReport()
    for name, series in _datasets(cfg):
        models = cfg.models or BENCHMARK_MODELS.get(name, DEFAULT_MODELS)
        plan = make_folds(series.dates, cfg.folds.start_date, cfg.folds.horizon, cfg.folds.n_folds)
        ext = {}
        for ext_name, path in (imports or {}).items():
            ext[ext_name] = import_external_forecast(path, ext_name)
        report = report.merge(
            run_benchmark(
                name, series, [_entry(cfg, m) for m in models], plan, cfg.seed, cfg.draws,
                cfg.optimizer_options(), ext, cfg.epsilon, loo,
            )
        )
    return report


def _write_forecasts(report: EvaluationReport, path: Path) -> Path:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["dataset", "model", "date", "actual", "forecast"])
        for (ds, model), cell in report.cells.items():
            dates, actual = report.actuals[ds]
            lookup = dict(zip(dates, actual))
            for d, f in zip(cell.forecast_dates, cell.forecasts):
                writer.writerow([ds, model, d.isoformat(), repr(float(lookup[d])), repr(float(f))])
    return path


def cmd_evaluate(cfg: RunConfig) -> list[Path]:
    out = _outdir(cfg)
    report = _benchmark(cfg)
    csv_path = out / "report.csv"
    csv_path.write_text(report.to_csv())
    txt_path = out / "report.txt"
    txt_path.write_text(report.to_text())
    fc_path = _write_forecasts(report, out / "forecasts.csv")
    print(report.to_text())
    return [csv_path, txt_path, fc_path]


def cmd_compare(cfg: RunConfig) -> list[Path]:
    out = _outdir(cfg)
    report = _benchmark(cfg, cfg.imports, loo=False)
    csv_path = out / "compare.csv"
    csv_path.write_text(report.to_csv())
    txt_path = out / "compare.txt"
    text = report.to_text().split("\n\n")[0] + "\n"
    txt_path.write_text(text)
    print(text)
    return [csv_path, txt_path]


def cmd_simulate(cfg: RunConfig, spec_path: Optional[str] = None) -> list[Path]:
    out = _outdir(cfg)
    if spec_path:
        try:
            obj = json.loads(Path(spec_path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigurationError(f"cannot read synthetic spec {spec_path}: {exc}") from None
        obj.setdefault("seed", cfg.seed)
        specs = [dg.SynthSpec.from_dict(obj)]
    else:
        if not cfg.presets:
            raise ConfigurationError("simulate needs --preset or --spec")
        specs = [dg.preset(name, cfg.seed) for name in cfg.presets]
    paths = []
    for spec in specs:
        series, mean = dg.synthesize(spec)
        path = out / f"{spec.name}.csv"
        write_csv(series, path)
        truth = out / f"{spec.name}-truth.json"
        write_json({"spec": spec.to_dict(), "noiseless_mean": mean.tolist()}, truth)
        print(f"{spec.name}: {len(series)} days -> {path}")
        paths += [path, truth]
    return paths


def _read_forecasts(path) -> dict:
    by_ds: dict = {}
    try:
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                ds = by_ds.setdefault(row["dataset"], {"dates": [], "actual": {}, "models": {}})
                d = parse_date(row["date"])
                if d not in ds["actual"]:
                    ds["dates"].append(d)
                    ds["actual"][d] = float(row["actual"])
                ds["models"].setdefault(row["model"], {})[d] = float(row["forecast"])
    except (OSError, KeyError) as exc:
        raise DataError(f"cannot read forecasts file {path}: {exc}") from None
    return by_ds


def cmd_plot(cfg: RunConfig, forecasts: Optional[str] = None) -> list[Path]:
    out = _outdir(cfg)
    paths = []
    if forecasts:
        for ds, obj in _read_forecasts(forecasts).items():
            dates = obj["dates"]
            series = {m: [vals.get(d, float("nan")) for d in dates] for m, vals in obj["models"].items()}
            paths += plots.forecast_overlay(out, ds, dates, [obj["actual"][d] for d in dates], series)
    if cfg.data or cfg.presets:
        for name, series in _datasets(cfg):
            for model in cfg.models or DEFAULT_MODELS:
                entry = _entry(cfg, model)
                if entry.fourier is not None:
                    continue
                fit = entry.fit(series, cfg.optimizer_options())
                draws = laplace_draws(fit, cfg.draws, cfg.seed)
                label = f"{name}-{entry.name}"
                paths += plots.parameter_intervals(out, label, fit, draws)
                paths += plots.theta_histogram(out, label, fit, draws)
    if not paths:
        raise ConfigurationError("nothing to plot: give --forecasts and/or --data/--preset with --models")
    for p in paths:
        print(p)
    return paths


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        if args.command == "fit":
            outputs = cmd_fit(cfg)
        elif args.command == "forecast":
            outputs = cmd_forecast(cfg, args.start)
        elif args.command == "evaluate":
            outputs = cmd_evaluate(cfg)
        elif args.command == "simulate":
            outputs = cmd_simulate(cfg, args.spec)
        elif args.command == "compare":
            outputs = cmd_compare(cfg)
        else:
            outputs = cmd_plot(cfg, args.forecasts)
        write_manifest(cfg.out, args.command, cfg.to_dict(), cfg.digest(), outputs)
    except SeasonPoolError as exc:
        detail = " ".join(str(exc).split())
        print(f"error:{exc.category}: {detail}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error:io: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
