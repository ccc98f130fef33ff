"""Training/model configuration with canonical JSON serialization.

The canonical form (sorted keys, compact separators) is what checkpoints
embed, so a save -> load -> save round trip is byte-identical.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace

from .encoders import DEFAULT_CLASS_NAMES
from .features import HighPassConfig, TopoConfig


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    patch_size: int = 32
    channels: int = 32
    class_names: list[str] = field(default_factory=lambda: list(DEFAULT_CLASS_NAMES))
    learn_rate: float = 5e-5
    decay_factor: float = 0.1
    milestones: tuple = (0.5, 0.75)
    epochs: int = 40
    batch_size: int = 4
    seed: int = 0
    max_steps: int | None = None
    text_dim: int = 64
    text_len: int = 77
    model_dim: int = 64
    heads: int = 4
    downsample: int = 4
    use_mgfe: bool = True
    use_ppd: bool = True
    use_hf: bool = True
    use_topo: bool = True
    disabled_stages: tuple = ()
    highpass: HighPassConfig = field(default_factory=HighPassConfig)
    topo: TopoConfig = field(default_factory=TopoConfig)

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def validate(self) -> "TrainConfig":
        positive = {
            "patch_size": self.patch_size, "channels": self.channels,
            "decay_factor": self.decay_factor,
            "epochs": self.epochs, "batch_size": self.batch_size,
            "text_dim": self.text_dim, "text_len": self.text_len,
            "model_dim": self.model_dim, "heads": self.heads,
            "downsample": self.downsample,
        }
        for name, value in positive.items():
            if value <= 0:
                raise ConfigError(f"{name} must be positive, got {value}")
        if self.learn_rate < 0:  # zero is allowed for no-update diagnostics
            raise ConfigError(f"learn_rate must be >= 0, got {self.learn_rate}")
        if self.max_steps is not None and self.max_steps <= 0:
            raise ConfigError("max_steps must be positive when set")
        ms = tuple(self.milestones)
        if any(not 0.0 < m < 1.0 for m in ms) or list(ms) != sorted(set(ms)):
            raise ConfigError(f"milestones must be strictly increasing in (0,1), got {ms}")
        if self.num_classes < 2:
            raise ConfigError("need at least background plus one foreground class")
        if self.patch_size % (2 * self.downsample):
            raise ConfigError(
                f"patch_size {self.patch_size} must be divisible by {2 * self.downsample}"
            )
        if self.channels % 2:
            raise ConfigError("channels must be even (topo branch halves them)")
        if self.model_dim % self.heads:
            raise ConfigError("model_dim must be divisible by heads")
        unknown = set(self.disabled_stages) - {"q_h", "q_v", "q_t", "q_T"}
        if unknown:
            raise ConfigError(f"unknown disabled stage(s): {sorted(unknown)}")
        self.highpass.validate()
        self.topo.validate()
        return self

    def with_overrides(self, **kwargs) -> "TrainConfig":
        return replace(self, **kwargs).validate()

    def to_json(self) -> str:
        raw = asdict(self)
        raw["milestones"] = list(self.milestones)
        raw["disabled_stages"] = list(self.disabled_stages)
        return json.dumps(raw, sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_dict(cls, raw: dict) -> "TrainConfig":
        raw = dict(raw)
        known = set(cls.__dataclass_fields__)
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config key(s): {sorted(unknown)}")
        if "highpass" in raw and isinstance(raw["highpass"], dict):
            raw["highpass"] = HighPassConfig(**raw["highpass"])
        if "topo" in raw and isinstance(raw["topo"], dict):
            raw["topo"] = TopoConfig(**raw["topo"])
        if "milestones" in raw:
            raw["milestones"] = tuple(raw["milestones"])
        if "disabled_stages" in raw:
            raw["disabled_stages"] = tuple(raw["disabled_stages"])
        return cls(**raw).validate()

    @classmethod
    def from_json(cls, text: str) -> "TrainConfig":
        return cls.from_dict(json.loads(text))


def defaults_self_test() -> list[str]:
    """Verify the pinned default constants; returns a list of violations."""
    cfg = TrainConfig()
    problems = []
    if cfg.topo.k != 9:
        problems.append(f"default neighbor count is {cfg.topo.k}, expected 9")
    if cfg.text_len != 77:
        problems.append(f"default token truncation is {cfg.text_len}, expected 77")
    if cfg.learn_rate != 5e-5:
        problems.append(f"default learn rate is {cfg.learn_rate}, expected 5e-5")
    if cfg.decay_factor != 0.1:
        problems.append(f"default decay factor is {cfg.decay_factor}, expected 0.1")
    if cfg.epochs != 40:
        problems.append(f"default epochs is {cfg.epochs}, expected 40")
    return problems
