"""Training configuration, presets and config-file IO."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import yaml

from .errors import ConfigError
from .losses import LossWeights, NCEConfig

VARIANTS = ("simit", "simit-c", "simit-cs")


@dataclass
class TrainConfig:
    """Every training hyperparameter.

    Defaults are the full-scale values; ``PRESETS["toy"]`` shrinks sizes and
    epochs for the 64x64 toy simulator.
    """

    variant: str = "simit"
    lr_G: float = 1e-3
    lr_F: float = 1e-4
    adam_betas: tuple[float, float] = (0.0, 0.99)
    epochs: int = 400
    batch_size: int = 1
    crop: int = 256
    num_locations: int = 256
    num_layers: int = 4
    tau: float = 0.07
    nce_reduction: str = "sum"
    lambda_G: float = 5.0
    lambda_F: float = 1.0
    gamma_I: float = 0.01
    gamma_L: float = 1.0
    base_width: int = 64
    d_base_width: int = 64
    num_resblocks: int = 6
    ada: bool = True
    ada_target: float = 0.6
    ada_speed: float = 5e-4
    seed: int = 0
    val_every: int = 1
    val_samples: int = 8
    ckpt_every: int = 0
    num_workers: int = 0

    def __post_init__(self):
        self.adam_betas = tuple(float(b) for b in self.adam_betas)
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; choose from {', '.join(VARIANTS)}")
        if self.lr_G <= 0 or self.lr_F <= 0:
            raise ConfigError("learning rates must be positive")
        if self.epochs < 0 or self.batch_size < 1 or self.crop < 64:
            raise ConfigError("need epochs >= 0, batch_size >= 1, crop >= 64")
        if not 1 <= self.num_layers <= 4:
            raise ConfigError("num_layers must be in [1, 4]")
        if not 0.0 <= self.ada_target <= 1.0 or self.ada_speed < 0:
            raise ConfigError("ada_target must lie in [0, 1] and ada_speed >= 0")
        self.nce
        self.weights

    @property
    def nce(self) -> NCEConfig:
        return NCEConfig(self.tau, self.num_locations, self.num_layers, self.nce_reduction)

    @property
    def weights(self) -> LossWeights:
        return LossWeights(self.lambda_G, self.lambda_F, self.gamma_I, self.gamma_L)

    @property
    def trains_F(self) -> bool:
        return self.variant == "simit"

    def replace(self, **changes: Any) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        d = dataclasses.asdict(self)
        d["adam_betas"] = list(self.adam_betas)
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "TrainConfig":
        d = dict(d)
        preset = d.pop("preset", None)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        if preset and preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; choose from {', '.join(PRESETS)}")
        base = PRESETS[preset] if preset else cls()
        return base.replace(**d)


PRESETS: dict[str, TrainConfig] = {
    "full": TrainConfig(),
    "toy": TrainConfig(epochs=30, batch_size=4, crop=64, num_locations=64, base_width=16,
                       d_base_width=16, ada_speed=2e-3),
}


def load_config(path: str | Path, preset: str | None = None) -> TrainConfig:
    """Read a YAML (or JSON) config.

    An optional ``preset`` key in the file selects the base values; the
    ``preset`` argument is used when the file names none.
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"missing config file: {path}")
    try:
        d = yaml.safe_load(path.read_text()) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    if not isinstance(d, dict):
        raise ConfigError(f"{path}: expected a mapping at top level")
    if preset is not None:
        d.setdefault("preset", preset)
    return TrainConfig.from_dict(d)


def save_config(cfg: TrainConfig, path: str | Path) -> Path:
    path = Path(path)
    path.write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=True))
    return path
