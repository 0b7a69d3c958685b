"""Run configuration: a JSON file whose every field can be overridden by a flag."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path
from typing import Any, Mapping, Optional

from .datagen import PRESETS
from .errors import ConfigurationError, ParseError
from .evaluation import FIRST_TEST_START, HORIZON_DAYS, N_FOLDS, model_entry
from .inference import OptimizerOptions
from .model import PriorConstants
from .timebase import parse_date


DEFAULT_MODELS = ("complete", "partial-week", "partial-month", "mixed")


@dataclass
class FoldSettings:
    first_test_start: str = FIRST_TEST_START.isoformat()
    horizon: int = HORIZON_DAYS
    n_folds: int = N_FOLDS

    @property
    def start_date(self) -> date:
        return parse_date(self.first_test_start)


@dataclass
class RunConfig:
    """Everything a command needs; ``seed`` is always set so runs are reproducible."""

    data: list = field(default_factory=list)
    presets: list = field(default_factory=list)
    models: Optional[list] = None  # None: the benchmark set for presets, else DEFAULT_MODELS
    imports: dict = field(default_factory=dict)
    priors: PriorConstants = field(default_factory=PriorConstants)
    optimizer: dict = field(default_factory=dict)
    folds: FoldSettings = field(default_factory=FoldSettings)
    draws: int = 1000
    seed: int = 0
    standardize: bool = True
    epsilon: Optional[float] = None
    horizon: int = HORIZON_DAYS
    out: str = "out"

    def validate(self) -> "RunConfig":
        for path in list(self.data) + list(self.imports.values()):
            if not Path(path).is_file():
                raise ConfigurationError(f"input file {path} does not exist")
        for name in self.presets:
            if name not in PRESETS:
                raise ConfigurationError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
        for name in self.models or ():
            model_entry(name)
        if self.draws < 1:
            raise ConfigurationError(f"draws must be at least 1, got {self.draws}")
        if self.horizon < 1:
            raise ConfigurationError(f"horizon must be at least 1, got {self.horizon}")
        if not isinstance(self.seed, int) or isinstance(self.seed, bool):
            raise ConfigurationError(f"seed must be an integer, got {self.seed!r}")
        if self.epsilon is not None and not self.epsilon > 0:
            raise ConfigurationError(f"epsilon must be positive, got {self.epsilon}")
        self.folds.start_date
        self.optimizer_options()
        return self

    def optimizer_options(self) -> OptimizerOptions:
        try:
            return OptimizerOptions(**{**self.optimizer, "seed": self.seed})
        except TypeError as exc:
            raise ConfigurationError(f"bad optimizer option: {exc}") from None

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        return out

    def digest(self) -> str:
        text = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()

    @classmethod
    def from_dict(cls, obj: Mapping[str, Any]) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise ConfigurationError(f"unknown config fields {sorted(unknown)}")
        values = dict(obj)
        try:
            if "priors" in values:
                values["priors"] = PriorConstants(**values["priors"])
            if "folds" in values:
                values["folds"] = FoldSettings(**values["folds"])
        except TypeError as exc:
            raise ConfigurationError(f"bad config section: {exc}") from None
        for key in ("data", "presets", "models"):
            if key in values and isinstance(values[key], str):
                values[key] = [values[key]]
        return cls(**values)


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}:{exc.lineno}: invalid JSON: {exc.msg}") from None
    if not isinstance(obj, dict):
        raise ConfigurationError(f"{path}: top level must be an object")
    return RunConfig.from_dict(obj)
