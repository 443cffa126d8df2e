"""Experiment configuration: one TOML file, every key defaulting to the case-study value."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .errors import ConfigurationError
from .heat import COMPOSITE_1, COMPOSITE_2, DEFAULT_CYCLE, CureCycle, MaterialProps, ThermalSetup
from .pinn import Normalization, TrainConfig


@dataclass(frozen=True)
class OracleConfig:
    n_elements: int = 40
    dt: float = 0.0015
    max_step_change: float = 1.0
    test_snapshots: int = 138
    label_snapshots: int = 501


@dataclass(frozen=True)
class LabelConfig:
    low_fidelity: int = 200
    pinn_data: int = 50
    cooldown: int = 30
    cooldown_window: tuple[float, float] = (2000.0, 2500.0)
    sweep: tuple[int, ...] = (10, 50, 100, 200, 400)


@dataclass(frozen=True)
class ExperimentConfig:
    low_material: MaterialProps = COMPOSITE_1
    high_material: MaterialProps = COMPOSITE_2
    thickness: float = 0.02
    htc_bottom: float = 50.0
    htc_top: float = 100.0
    initial_temperature: float = 0.0
    cycle: tuple = DEFAULT_CYCLE.knots
    oracle: OracleConfig = OracleConfig()
    hidden_layers: tuple[int, ...] = (30, 30, 30, 30, 30)
    temp_scale: float = 200.0
    points: tuple[int, int, int] = (1600, 80, 20)
    labels: LabelConfig = LabelConfig()
    train: TrainConfig = TrainConfig()
    seeds: tuple[int, ...] = (0, 1, 2)
    out_dir: str = "runs"
    workers: int = 1

    def __post_init__(self):
        if not self.seeds:
            raise ConfigurationError("at least one seed is required")
        if any(s < 0 for s in self.seeds):
            raise ConfigurationError("seeds must be nonnegative")
        sweep = list(self.labels.sweep)
        if any(n < 0 for n in sweep) or sweep != sorted(sweep):
            raise ConfigurationError(f"sweep sizes must be nonnegative and sorted, got {sweep}")
        if min(self.labels.low_fidelity, self.labels.pinn_data, self.labels.cooldown) < 0:
            raise ConfigurationError("label counts must be nonnegative")
        lo, hi = self.labels.cooldown_window
        if not lo < hi:
            raise ConfigurationError("cooldown_window must be (t_min, t_max) with t_min < t_max")
        if not self.hidden_layers or min(self.hidden_layers) < 1:
            raise ConfigurationError("hidden_layers must list positive widths")
        if self.workers < 1:
            raise ConfigurationError("workers must be >= 1")
        self.setup("low")  # validates the physical fields

    def setup(self, fidelity: str) -> ThermalSetup:
        material = {"low": self.low_material, "high": self.high_material}[fidelity]
        return ThermalSetup(material, self.thickness, self.htc_bottom, self.htc_top, self.initial_temperature,
                            CureCycle(tuple(tuple(k) for k in self.cycle)))

    def normalization(self) -> Normalization:
        return Normalization.for_setup(self.setup("high"), self.temp_scale)

    def layer_sizes(self, n_inputs: int) -> tuple[int, ...]:
        return (n_inputs, *self.hidden_layers, 1)

    def train_config(self, seed: int) -> TrainConfig:
        return replace(self.train, seed=seed)

    def with_seeds(self, seeds) -> "ExperimentConfig":
        return replace(self, seeds=tuple(int(s) for s in seeds))

    def to_dict(self) -> dict:
        train = asdict(self.train)
        train.pop("seed")
        return {
            "seeds": list(self.seeds),
            "out_dir": self.out_dir,
            "workers": self.workers,
            "materials": {"low": asdict(self.low_material), "high": asdict(self.high_material)},
            "setup": {"thickness": self.thickness, "htc_bottom": self.htc_bottom, "htc_top": self.htc_top,
                      "initial_temperature": self.initial_temperature,
                      "cycle": [list(k) for k in self.cycle]},
            "oracle": asdict(self.oracle),
            "network": {"hidden_layers": list(self.hidden_layers), "temp_scale": self.temp_scale},
            "points": dict(zip(("collocation", "boundary", "initial"), self.points)),
            "labels": {**asdict(self.labels), "cooldown_window": list(self.labels.cooldown_window),
                       "sweep": list(self.labels.sweep)},
            "train": train,
        }

    def hash(self) -> str:
        """Digest of everything that affects results (seeds, paths and pool size excluded)."""
        d = self.to_dict()
        for k in ("seeds", "out_dir", "workers"):
            d.pop(k)
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


def _take(section: dict, name: str, allowed) -> dict:
    unknown = set(section) - set(allowed)
    if unknown:
        raise ConfigurationError(f"unknown key(s) in [{name}]: {', '.join(sorted(unknown))}")
    return section


def from_dict(d: dict) -> ExperimentConfig:
    """Build a config from the nested TOML layout; missing keys keep their defaults."""
    top = {"seeds", "out_dir", "workers", "materials", "setup", "oracle", "network", "points", "labels", "train"}
    _take(d, "top level", top)
    base = ExperimentConfig()
    kw: dict = {}
    try:
        if "seeds" in d:
            kw["seeds"] = tuple(int(s) for s in d["seeds"])
        for k in ("out_dir", "workers"):
            if k in d:
                kw[k] = d[k]
        mats = _take(d.get("materials", {}), "materials", ("low", "high"))
        for fid in ("low", "high"):
            if fid in mats:
                m = _take(mats[fid], f"materials.{fid}", ("density", "specific_heat", "conductivity"))
                kw[f"{fid}_material"] = replace(getattr(base, f"{fid}_material"), **{k: float(v) for k, v in m.items()})
        setup = _take(d.get("setup", {}), "setup",
                      ("thickness", "htc_bottom", "htc_top", "initial_temperature", "cycle"))
        for k, v in setup.items():
            kw[k] = tuple(tuple(float(c) for c in knot) for knot in v) if k == "cycle" else float(v)
        oracle = _take(d.get("oracle", {}), "oracle", [f.name for f in fields(OracleConfig)])
        kw["oracle"] = replace(base.oracle, **oracle)
        net = _take(d.get("network", {}), "network", ("hidden_layers", "temp_scale"))
        if "hidden_layers" in net:
            kw["hidden_layers"] = tuple(int(w) for w in net["hidden_layers"])
        if "temp_scale" in net:
            kw["temp_scale"] = float(net["temp_scale"])
        pts = _take(d.get("points", {}), "points", ("collocation", "boundary", "initial"))
        kw["points"] = tuple(int(pts.get(k, v)) for k, v in zip(("collocation", "boundary", "initial"), base.points))
        lab = dict(_take(d.get("labels", {}), "labels", [f.name for f in fields(LabelConfig)]))
        if "cooldown_window" in lab:
            lab["cooldown_window"] = tuple(float(v) for v in lab["cooldown_window"])
        if "sweep" in lab:
            lab["sweep"] = tuple(int(v) for v in lab["sweep"])
        kw["labels"] = replace(base.labels, **lab)
        train = _take(d.get("train", {}), "train", [f.name for f in fields(TrainConfig) if f.name != "seed"])
        kw["train"] = replace(base.train, **train)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigurationError):
            raise
        raise ConfigurationError(f"bad config value: {exc}") from exc
    return ExperimentConfig(**kw)


def load_config(path: str | Path | None) -> ExperimentConfig:
    """Read a TOML config; ``None`` gives the defaults."""
    if path is None:
        return ExperimentConfig()
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except FileNotFoundError as exc:
        raise ConfigurationError(f"config file not found: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigurationError(f"{path}: {exc}") from exc
    return from_dict(data)
