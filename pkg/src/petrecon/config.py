"""Run configuration: one JSON document, overridable from the command line."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .geometry import GeometryError, preset
from .nn.ced import CedSpec, ced_preset
from .nn.training import TrainConfig
from .recon import FbpConfig, OsemConfig
from .simulator import DEFAULT_SPLITS, NoiseLevelPlan, SimulationConfig

DEFAULT_ARCHITECTURE = {"toy": "toy", "paper": "deeppet"}


class ConfigError(ValueError):
    pass


@dataclass
class BenchConfig:
    repetitions: int = 3
    warmup: int = 1
    n_bins: int = 4


@dataclass
class RunConfig:
    preset: str = "toy"
    seed: int = 0
    phantom_count: int = 10
    threads: int = 1
    deterministic: bool = False
    architecture: str | dict | None = None  # preset name or a full CedSpec dict
    splits: tuple = DEFAULT_SPLITS
    simulation: SimulationConfig = field(default_factory=SimulationConfig)
    plan: NoiseLevelPlan = field(default_factory=NoiseLevelPlan)
    fbp: FbpConfig = field(default_factory=FbpConfig)
    osem: OsemConfig = field(default_factory=OsemConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    bench: BenchConfig = field(default_factory=BenchConfig)

    def __post_init__(self):
        try:
            preset(self.preset)
        except GeometryError as exc:
            raise ConfigError(str(exc)) from None
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")

    def geometry(self):
        return preset(self.preset)

    def ced_spec(self) -> CedSpec:
        arch = self.architecture or DEFAULT_ARCHITECTURE[self.preset]
        if isinstance(arch, dict):
            return CedSpec.from_dict(arch)
        return ced_preset(arch)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["splits"] = list(self.splits)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        d = dict(d)
        nested = {"simulation": SimulationConfig.from_dict, "plan": NoiseLevelPlan.from_dict,
                  "fbp": lambda v: FbpConfig(**v), "osem": lambda v: OsemConfig(**v),
                  "train": lambda v: TrainConfig(**v), "bench": lambda v: BenchConfig(**v)}
        try:
            for key, make in nested.items():
                if key in d:
                    d[key] = make(d[key])
            if "splits" in d:
                d["splits"] = tuple(d["splits"])
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None


def load_config(path=None, **overrides) -> RunConfig:
    """Read ``path`` (if given) and apply non-None keyword overrides."""
    d = {}
    if path is not None:
        try:
            d = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
    d.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig.from_dict(d)


def echo_config(cfg: RunConfig, out_dir) -> Path:
    path = Path(out_dir) / "run_config.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    return path
