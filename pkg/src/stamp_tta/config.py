"""Experiment configuration: dataclass sections, JSON loading, dotted overrides.

A config file is a JSON object with sections data, model, method, output plus
a top-level seed. Unknown keys are rejected with their full dotted path so a
typo cannot silently fall back to a default. Command-line overrides use the
same dotted paths and win over the file.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field, fields

from .errors import ConfigError, ParseError

METHODS = ("source", "bn_stats", "tent", "stamp")
WEIGHT_STRATEGIES = ("plain", "self", "static", "eata")
OUTPUT_FORMATS = ("summary", "records", "roc")


@dataclass
class DataConfig:
    """Stream and source-generation knobs (see datagen)."""

    num_classes: int = 4
    input_dim: int = 2
    num_samples: int = 10000
    batch_size: int = 64
    severity: float = 5.0
    outlier_ratio: float = 0.2
    outlier_mode: str = "background-uniform"
    source_size: int = 4000
    source_seed: int = 0
    val_fraction: float = 0.25

    def validate(self):
        if not 0.0 < self.val_fraction < 1.0:
            raise ConfigError("data.val_fraction must lie in (0, 1)")
        if self.source_size < self.num_classes:
            raise ConfigError("data.source_size must cover every class")
        return self


@dataclass
class ModelConfig:
    """Architecture and pretraining knobs."""

    hidden_sizes: tuple = (32, 32)
    checkpoint: str | None = None
    seed: int = 0
    epochs: int = 40
    lr: float = 0.05
    batch_size: int = 64
    accuracy_floor: float = 0.9

    def validate(self):
        if len(self.hidden_sizes) == 0 or any(h < 1 for h in self.hidden_sizes):
            raise ConfigError("model.hidden_sizes must be positive widths")
        if self.epochs < 0:
            raise ConfigError("model.epochs must be >= 0")
        if self.lr <= 0:
            raise ConfigError("model.lr must be positive")
        if not 0.0 <= self.accuracy_floor <= 1.0:
            raise ConfigError("model.accuracy_floor must lie in [0, 1]")
        return self


@dataclass
class MethodConfig:
    """Adaptation method and its hyperparameters.

    h_thr_factor scales ln(num_classes) into the entropy admission threshold;
    delta_thr_factor does the same for the rejection threshold and defaults
    to h_thr_factor when null. The use_* toggles are the ablation switches;
    weight_strategy, when set, overrides the strategy implied by
    use_self_weight.
    """

    name: str = "stamp"
    base_lr: float = 0.05
    horizon: int = 150
    rho: float = 0.05
    norm_floor: float = 1e-12
    views: int = 16
    aug_strength: float = 1.0
    h_thr_factor: float = 0.8
    delta_thr_factor: float | None = None
    beta: float = 0.1
    capacity: int = 64
    use_memory: bool = True
    use_filtering: bool = True
    use_self_weight: bool = True
    use_sam: bool = True
    use_decay: bool = True
    use_augmentation: bool = True
    weight_strategy: str | None = None
    update_running_stats: bool = True

    def validate(self):
        if self.name not in METHODS:
            raise ConfigError(f"method.name must be one of {METHODS}")
        if self.base_lr <= 0:
            raise ConfigError("method.base_lr must be positive")
        if self.horizon < 1:
            raise ConfigError("method.horizon must be >= 1")
        if self.rho < 0:
            raise ConfigError("method.rho must be >= 0")
        if self.views < 1:
            raise ConfigError("method.views must be >= 1")
        if self.aug_strength < 0:
            raise ConfigError("method.aug_strength must be >= 0")
        if self.h_thr_factor <= 0:
            raise ConfigError("method.h_thr_factor must be positive")
        if self.delta_thr_factor is not None and self.delta_thr_factor <= 0:
            raise ConfigError("method.delta_thr_factor must be positive")
        if not 0 < self.beta <= 1:
            raise ConfigError("method.beta must lie in (0, 1]")
        if self.capacity < 1:
            raise ConfigError("method.capacity must be >= 1")
        if self.weight_strategy is not None and self.weight_strategy not in WEIGHT_STRATEGIES:
            raise ConfigError(f"method.weight_strategy must be one of {WEIGHT_STRATEGIES}")
        return self


@dataclass
class OutputConfig:
    directory: str = "out"
    formats: tuple = OUTPUT_FORMATS

    def validate(self):
        bad = [f for f in self.formats if f not in OUTPUT_FORMATS]
        if bad:
            raise ConfigError(f"output.formats contains unknown entries {bad}")
        return self


@dataclass
class ExperimentConfig:
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    method: MethodConfig = field(default_factory=MethodConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    seed: int = 0

    def validate(self):
        self.data.validate()
        self.model.validate()
        self.method.validate()
        self.output.validate()
        return self

    def h_thr(self):
        """Entropy admission threshold, h_thr_factor * ln(num_classes)."""
        return self.method.h_thr_factor * math.log(self.data.num_classes)

    def delta_thr(self):
        """Rejection threshold for detect(); defaults to the admission value."""
        factor = self.method.delta_thr_factor
        if factor is None:
            factor = self.method.h_thr_factor
        return factor * math.log(self.data.num_classes)

    def to_dict(self):
        out = dataclasses.asdict(self)
        out["model"]["hidden_sizes"] = list(self.model.hidden_sizes)
        out["output"]["formats"] = list(self.output.formats)
        return out


_SECTIONS = {
    "data": DataConfig,
    "model": ModelConfig,
    "method": MethodConfig,
    "output": OutputConfig,
}

_LIST_FIELDS = {("model", "hidden_sizes"), ("output", "formats")}


def _coerce(section, name, default, value):
    if (section, name) in _LIST_FIELDS:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{section}.{name} must be a list")
        return tuple(value)
    if default is None:
        # optional field: accept null or a scalar, validation vets the rest
        if value is None:
            return None
        if isinstance(value, (str, int, float)) and not isinstance(value, bool):
            return float(value) if isinstance(value, (int, float)) and name != "checkpoint" else value
        raise ConfigError(f"{section}.{name} has an unsupported type")
    if isinstance(default, bool):
        if isinstance(value, bool):
            return value
        raise ConfigError(f"{section}.{name} must be a boolean")
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or (isinstance(value, float) and value != int(value)):
            raise ConfigError(f"{section}.{name} must be an integer")
        if not isinstance(value, (int, float)):
            raise ConfigError(f"{section}.{name} must be an integer")
        return int(value)
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{section}.{name} must be a number")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{section}.{name} must be a string")
        return value
    return value


def config_from_dict(raw):
    """Build and validate an ExperimentConfig from a nested dict.

    Unknown sections or keys raise ConfigError naming the dotted path.
    """
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    known = set(_SECTIONS) | {"seed"}
    for key in raw:
        if key not in known:
            raise ConfigError(f"unknown config key {key!r}")
    sections = {}
    for section, cls in _SECTIONS.items():
        payload = raw.get(section, {})
        if not isinstance(payload, dict):
            raise ConfigError(f"section {section!r} must be an object")
        valid = {f.name: f for f in fields(cls)}
        kwargs = {}
        for name, value in payload.items():
            if name not in valid:
                raise ConfigError(f"unknown config key {section}.{name}")
            default = valid[name].default
            if default is dataclasses.MISSING:
                default = valid[name].default_factory()
            kwargs[name] = _coerce(section, name, default, value)
        sections[section] = cls(**kwargs)
    seed = raw.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int):
        raise ConfigError("seed must be an integer")
    return ExperimentConfig(seed=seed, **sections).validate()


def load_config(path):
    """Parse a JSON config file; JSON errors surface with the line number."""
    with open(path) as fh:
        text = fh.read()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, line=exc.lineno) from None
    return config_from_dict(raw)


def apply_overrides(raw, overrides):
    """Apply dotted-path overrides ('method.rho=0.1') onto a raw config dict.

    Values parse as JSON when possible and fall back to plain strings, so
    both --method.rho=0.1 and --data.outlier_mode=held-out-class work.
    """
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form section.key=value")
        path, text = item.split("=", 1)
        parts = path.split(".")
        try:
            value = json.loads(text)
        except json.JSONDecodeError:
            value = text
        if len(parts) == 1 and parts[0] == "seed":
            raw["seed"] = value
            continue
        if len(parts) != 2:
            raise ConfigError(f"override path {path!r} must be section.key")
        section, key = parts
        raw.setdefault(section, {})
        if not isinstance(raw[section], dict):
            raise ConfigError(f"section {section!r} must be an object")
        raw[section][key] = value
    return raw
