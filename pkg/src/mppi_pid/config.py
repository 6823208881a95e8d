"""Experiment configuration tree with JSON round-trip and dotted overrides."""
from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

from .control import TABLE3_GAINS, InputConstraints, OptimizerConfig, PidLaw
from .cost import CostWeights
from .data import GroundTruthPlant, LogConfig, PreprocessConfig
from .dynamics import ConfigurationError
from .learning import TrainConfig
from .sim import CONTROLLERS, Scenario, default_scenarios

SCHEMA_VERSION = 1
CHAINS = {"s_curve": ("s_curve_a", "s_curve_b")}


@dataclass(frozen=True)
class ScenarioConfig:
    """Preset name plus optional geometry overrides (``None`` keeps the preset)."""

    name: str = "curve"
    start: tuple | None = None
    goal: tuple | None = None
    duration: float | None = None
    path_points: int = 800
    controller: str = "mppi_pid"
    plant: str = "ground_truth"
    theta0: tuple = TABLE3_GAINS
    workers: int = 1
    backend: str | None = None

    def __post_init__(self):
        names = sorted(set(default_scenarios()) | set(CHAINS))
        if self.name not in names:
            raise ValueError(f"unknown scenario {self.name!r}; choose from {names}")
        if self.controller not in CONTROLLERS:
            raise ValueError(f"controller must be one of {CONTROLLERS}")
        if len(self.theta0) != 9:
            raise ValueError("theta0 must have 9 gains")


@dataclass(frozen=True)
class OutputConfig:
    data_dir: str = "out/data"
    model_path: str = "out/model.json"
    reports_dir: str = "out/reports"
    runs_dir: str = "out/runs"


@dataclass(frozen=True)
class ExperimentConfig:
    plant: GroundTruthPlant = field(default_factory=GroundTruthPlant)
    logs: LogConfig = field(default_factory=LogConfig)
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    training: TrainConfig = field(default_factory=TrainConfig)
    hidden: int = 50
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    constraints: InputConstraints = field(default_factory=InputConstraints)
    cost: CostWeights = field(default_factory=CostWeights)
    pid: PidLaw = field(default_factory=PidLaw)
    output: OutputConfig = field(default_factory=OutputConfig)
    seed: int = 0
    seeds: tuple = (0, 1, 2, 3, 4)
    budgets: tuple = (2048, 16)

    def __post_init__(self):
        hs = {self.logs.h, self.preprocess.h}
        if len(hs) != 1:
            raise ValueError(f"step size differs between logs and preprocessing: {sorted(hs)}")
        if self.hidden < 1 or not self.seeds or not self.budgets:
            raise ValueError("hidden, seeds and budgets must be non-empty/positive")

    @property
    def h(self) -> float:
        return self.preprocess.h

    def to_dict(self) -> dict:
        d = _plain(dataclasses.asdict(self))
        d["schema_version"] = SCHEMA_VERSION
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    def build_chain(self, **changes) -> list[Scenario]:
        """Scenarios to run back to back: one for a plain preset, several for a chain."""
        names = CHAINS.get(self.scenario.name, (self.scenario.name,))
        return [self.build_scenario(name, **changes) for name in names]

    def build_scenario(self, name: str | None = None, **changes) -> Scenario:
        """Concrete scenario from the preset, the overrides and the shared sections."""
        sc = self.scenario
        name = sc.name if name is None else name
        if name in CHAINS:
            raise ConfigurationError(f"{name!r} is a chain of runs; use build_chain")
        base = default_scenarios()[name]
        if name != sc.name:
            sc = replace(sc, start=None, goal=None)
        s = replace(
            base,
            start=tuple(sc.start) if sc.start is not None else base.start,
            goal=tuple(sc.goal) if sc.goal is not None else base.goal,
            duration=sc.duration if sc.duration is not None else base.duration,
            path_points=sc.path_points, h=self.h, controller=sc.controller,
            optimizer=self.optimizer, constraints=self.constraints, cost=self.cost, law=self.pid,
            theta0=tuple(sc.theta0), plant=sc.plant, seed=self.seed, workers=sc.workers, backend=sc.backend,
        )
        return replace(s, **changes)


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    return obj


def _coerce(current, value, key: str):
    """Check ``value`` against the type of the field's current value."""
    if dataclasses.is_dataclass(current):
        if not isinstance(value, dict):
            raise ConfigurationError(f"{key}: expected an object")
        return merge(current, value, key)
    if isinstance(current, bool):
        if not isinstance(value, bool):
            raise ConfigurationError(f"{key}: expected a boolean, got {value!r}")
        return value
    if isinstance(current, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigurationError(f"{key}: expected an integer, got {value!r}")
        return value
    if isinstance(current, float):
        if isinstance(value, str) and value in ("inf", "-inf", "nan"):
            return float(value)
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigurationError(f"{key}: expected a number, got {value!r}")
        return float(value)
    if isinstance(current, str):
        if not isinstance(value, str):
            raise ConfigurationError(f"{key}: expected a string, got {value!r}")
        return value
    if isinstance(current, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigurationError(f"{key}: expected a list, got {value!r}")
        if key.endswith(("seeds", "budgets")):
            return tuple(_coerce(current[0], v, f"{key}[{i}]") for i, v in enumerate(value))
        if len(value) != len(current):
            raise ConfigurationError(f"{key}: expected {len(current)} entries, got {len(value)}")
        return tuple(_coerce(c, v, f"{key}[{i}]") for i, (c, v) in enumerate(zip(current, value)))
    if current is None:
        if isinstance(value, list):
            return tuple(float(v) for v in value)
        if isinstance(value, int) and not isinstance(value, bool):
            return float(value)
        return value
    raise ConfigurationError(f"{key}: unsupported field type {type(current).__name__}")


def merge(obj, updates: dict, prefix: str = ""):
    """Return ``obj`` with ``updates`` applied recursively; unknown keys are errors."""
    names = {f.name for f in dataclasses.fields(obj)}
    changes = {}
    for k, v in updates.items():
        key = f"{prefix}.{k}" if prefix else k
        if k not in names:
            raise ConfigurationError(f"unknown config key {key!r}")
        changes[k] = _coerce(getattr(obj, k), v, key)
    try:
        return replace(obj, **changes)
    except (ValueError, TypeError) as exc:
        raise ConfigurationError(f"{prefix or 'config'}: {exc}") from exc


def from_dict(d: dict) -> ExperimentConfig:
    d = dict(d)
    version = d.pop("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigurationError(f"unsupported config schema_version {version}")
    return merge(ExperimentConfig(), d)


def load_config(path=None) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    try:
        d = json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise ConfigurationError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(d, dict):
        raise ConfigurationError("config file must hold a JSON object")
    return from_dict(d)


def parse_override(text: str) -> dict:
    """``a.b.c=value`` to a nested dict; the value is JSON if it parses, else a string."""
    if "=" not in text:
        raise ConfigurationError(f"override {text!r} must look like key=value")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    out: dict = {}
    node = out
    parts = key.strip().split(".")
    if not all(parts):
        raise ConfigurationError(f"bad override key {key!r}")
    for p in parts[:-1]:
        node = node.setdefault(p, {})
    node[parts[-1]] = value
    return out


def apply_overrides(cfg: ExperimentConfig, overrides) -> ExperimentConfig:
    for text in overrides or ():
        cfg = merge(cfg, parse_override(text))
    return cfg
