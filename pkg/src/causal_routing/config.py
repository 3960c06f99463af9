"""Flat JSON training configuration with strict key checking."""

import json
from dataclasses import dataclass, field, fields

from .errors import ConfigError


@dataclass
class TrainConfig:
    train_path: str
    test_path: str
    dictionary_path: str
    checkpoint_path: str
    layers: int = 2
    width: int = 64
    block_width: int = 64
    hidden_width: int = 64
    dict_size: int = 32
    classes: int = 4
    n_x: int = 6
    n_z: int = 4
    batch_size: int = 32
    epochs: int = 15
    learning_rate: float = 1e-4
    lr_decay_epochs: list = field(default_factory=lambda: [10, 12])
    lr_decay_factor: float = 0.5
    warmup_epochs: int = 3
    tau_min: float = 0.05
    tau_floor_fraction: float = 0.8
    seed: int = 0
    variant: str = "full"

    def __post_init__(self):
        if self.layers < 1 or self.width < 1 or self.block_width < 1:
            raise ConfigError("model widths and depth must be positive")
        if self.hidden_width < 1 or self.dict_size < 1:
            raise ConfigError("hidden_width and dict_size must be positive")
        if self.classes < 2:
            raise ConfigError("classes must be at least 2")
        if self.batch_size < 1 or self.epochs < 1:
            raise ConfigError("batch_size and epochs must be positive")
        if self.learning_rate <= 0.0:
            raise ConfigError("learning_rate must be positive")
        if not 0.0 < self.lr_decay_factor <= 1.0:
            raise ConfigError("lr_decay_factor must lie in (0, 1]")
        if self.warmup_epochs < 0:
            raise ConfigError("warmup_epochs cannot be negative")
        if not 0.0 < self.tau_min <= 1.0:
            raise ConfigError("tau_min must lie in (0, 1]")
        if not 0.0 < self.tau_floor_fraction <= 1.0:
            raise ConfigError("tau_floor_fraction must lie in (0, 1]")
        if sorted(self.lr_decay_epochs) != list(self.lr_decay_epochs):
            raise ConfigError("lr_decay_epochs must be sorted ascending")


CONFIG_KEYS = tuple(f.name for f in fields(TrainConfig))


def config_from_dict(payload):
    unknown = sorted(set(payload) - set(CONFIG_KEYS))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    try:
        return TrainConfig(**payload)
    except TypeError as exc:
        raise ConfigError(f"bad config: {exc}") from exc


def load_config(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from exc
    if not isinstance(payload, dict):
        raise ConfigError(f"{path} must hold a flat JSON object")
    return config_from_dict(payload)


def save_config(config, path):
    payload = {name: getattr(config, name) for name in CONFIG_KEYS}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1)
        fh.write("\n")
