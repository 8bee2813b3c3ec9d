"""Experiment configuration shared by the command line and the grid runner."""

import itertools
import json
from dataclasses import asdict, dataclass, fields

from soundseg.dataset import Axis, NormalizationSpec, Scaler
from soundseg.errors import ConfigError
from soundseg.nn.unet import LossKind, UNetConfig

__all__ = ["ExperimentConfig", "grid_configs"]

AXES = ("time", "frequency")
SCALERS = ("minmax", "quantile")
LOSSES = ("mae", "mse")


@dataclass(frozen=True)
class ExperimentConfig:
    axis: str = "frequency"
    scaler: str = "minmax"
    loss: str = "mae"
    epochs: int = 20
    batch_size: int = 64
    learning_rate: float = 0.001
    seed: int = 0
    depth: int = 4
    base_filters: int = 16
    validation_fraction: float = 0.1

    def __post_init__(self):
        for name, allowed in (("axis", AXES), ("scaler", SCALERS), ("loss", LOSSES)):
            value = getattr(self, name)
            if value not in allowed:
                raise ConfigError(f"invalid {name} {value!r}; allowed values: {', '.join(allowed)}")
        for name in ("epochs", "batch_size", "depth", "base_filters"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, int) or value < 1:
                raise ConfigError(f"invalid {name} {value!r}; must be an integer >= 1")
        if isinstance(self.seed, bool) or not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError(f"invalid seed {self.seed!r}; must be a non-negative integer")
        if not isinstance(self.learning_rate, (int, float)) or not self.learning_rate > 0:
            raise ConfigError(f"invalid learning_rate {self.learning_rate!r}; must be > 0")
        if not 0 < self.validation_fraction < 1:
            raise ConfigError(f"invalid validation_fraction {self.validation_fraction!r}; must lie in (0, 1)")
        try:
            self.unet_config()
        except ValueError as exc:
            raise ConfigError(f"invalid depth {self.depth!r}: {exc}") from exc

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config field(s): {', '.join(unknown)}; allowed: {', '.join(sorted(known))}")
        d = dict(d)
        if isinstance(d.get("learning_rate"), int):
            d["learning_rate"] = float(d["learning_rate"])
        return cls(**d)

    @classmethod
    def from_json(cls, text):
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config JSON must be an object")
        return cls.from_dict(data)

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def normalization(self):
        return NormalizationSpec(Scaler(self.scaler), Axis(self.axis))

    def loss_kind(self):
        return LossKind(self.loss)

    def unet_config(self):
        return UNetConfig(depth=self.depth, base_filters=self.base_filters)

    def tag(self):
        return f"{self.axis}_{self.scaler}_{self.loss}"


def grid_configs(base):
    """All axis x scaler x loss combinations on top of ``base``."""
    out = []
    for axis, scaler, loss in itertools.product(AXES, SCALERS, LOSSES):
        d = base.to_dict()
        d.update(axis=axis, scaler=scaler, loss=loss)
        out.append(ExperimentConfig.from_dict(d))
    return out
