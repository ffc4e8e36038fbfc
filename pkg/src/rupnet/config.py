"""Configuration: process settings from the environment and validated run configs.

Run config files are flat JSON objects with dotted keys, e.g.::

    {"net.encoder_channels": [8, 16, 32], "train.lr": 1e-4, "data.synthetic.count": 200}

Precedence is defaults < file < ``--override key=value`` flags.
"""

import json
import logging
import os
from pathlib import Path
from typing import Any, TypeVar

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, PositiveInt, ValidationError, model_validator

from .errors import ConfigurationError
from .model import NetworkConfig
from .synth import SynthConfig
from .train import TrainConfig

logger = logging.getLogger(__name__)

M = TypeVar("M", bound=BaseModel)


class Settings:
    """Process-level settings read from environment variables (and a .env file)"""

    def __init__(self):
        self.debug: bool = os.getenv("RUPNET_DEBUG", "false").lower() == "true"
        self.runs_dir: str = os.getenv("RUPNET_RUNS_DIR", "runs")
        self.progress: bool = os.getenv("RUPNET_PROGRESS", "true").lower() == "true"
        self.seed: int = int(os.getenv("RUPNET_SEED", "0"))


def load_settings() -> Settings:
    load_dotenv()
    return Settings()


class DataConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    root: str | None = Field(default=None, description="Directory with images/ and masks/; synthetic data when unset")
    synthetic: SynthConfig = Field(default_factory=SynthConfig)
    train_fraction: float = Field(default=0.88, gt=0, lt=1)


class EvalConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    threshold: float = Field(default=0.5, gt=0, lt=1)
    baselines: str | None = Field(default=None, description="JSON file of published baseline rows for speedup ratios")


class BenchConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    size: PositiveInt = 512
    warmup: int = Field(default=5, ge=0)
    iters: PositiveInt = 100


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    seed: int = 0
    run_dir: str = "runs/default"
    net: NetworkConfig = Field(default_factory=NetworkConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    data: DataConfig = Field(default_factory=DataConfig)
    eval: EvalConfig = Field(default_factory=EvalConfig)
    bench: BenchConfig = Field(default_factory=BenchConfig)

    @model_validator(mode="after")
    def _propagate_seed(self):
        # sections without an explicit seed follow the global one
        if "seed" not in self.train.model_fields_set:
            self.train = self.train.model_copy(update={"seed": self.seed})
        if "seed" not in self.data.synthetic.model_fields_set:
            self.data.synthetic = self.data.synthetic.model_copy(update={"seed": self.seed})
        return self


def parse_section(model: type[M], data: dict[str, Any]) -> M:
    """Validate ``data`` as ``model``, reporting problems as ConfigurationError"""
    try:
        return model.model_validate(data)
    except ValidationError as e:
        problems = "; ".join(f"{'.'.join(str(p) for p in err['loc']) or '<root>'}: {err['msg']}" for err in e.errors())
        raise ConfigurationError(f"invalid {model.__name__}: {problems}") from None


def unflatten(flat: dict[str, Any]) -> dict[str, Any]:
    nested: dict[str, Any] = {}
    for key, value in flat.items():
        node = nested
        *parents, leaf = key.split(".")
        for part in parents:
            child = node.setdefault(part, {})
            if not isinstance(child, dict):
                raise ConfigurationError(f"config key {key} conflicts with a value at {part}")
            node = child
        if isinstance(value, dict) and isinstance(node.get(leaf), dict):
            node[leaf] = _merge(node[leaf], unflatten(value))
        else:
            node[leaf] = unflatten(value) if isinstance(value, dict) else value
    return nested


def flatten(nested: dict[str, Any], prefix: str = "") -> dict[str, Any]:
    flat = {}
    for key, value in nested.items():
        name = f"{prefix}{key}"
        if isinstance(value, dict) and value:
            flat.update(flatten(value, f"{name}."))
        else:
            flat[name] = value
    return flat


def _merge(base: dict[str, Any], update: dict[str, Any]) -> dict[str, Any]:
    merged = dict(base)
    for key, value in update.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def parse_override(text: str) -> tuple[str, Any]:
    """``key=value`` with a JSON value, or a plain string when it is not JSON"""
    key, sep, raw = text.partition("=")
    if not sep or not key.strip():
        raise ConfigurationError(f"override must look like key=value, got {text!r}")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


def load_run_config(path: str | Path | None = None, overrides: list[str] | None = None) -> RunConfig:
    data: dict[str, Any] = {}
    if path is not None:
        path = Path(path)
        try:
            loaded = json.loads(path.read_text())
        except FileNotFoundError:
            raise ConfigurationError(f"config file not found: {path}") from None
        except json.JSONDecodeError as e:
            raise ConfigurationError(f"config file {path} is not valid JSON: {e}") from None
        if not isinstance(loaded, dict):
            raise ConfigurationError(f"config file {path} must hold a JSON object")
        data = unflatten(loaded)
    if overrides:
        data = _merge(data, unflatten(dict(parse_override(o) for o in overrides)))
    return parse_section(RunConfig, data)


def dump_run_config(config: RunConfig) -> dict[str, Any]:
    """Flat dotted-key form of the effective config; loads back to an equal RunConfig"""
    return flatten(config.model_dump(mode="json", by_alias=True))


def write_run_config(config: RunConfig, path: str | Path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(dump_run_config(config), indent=2) + "\n")
