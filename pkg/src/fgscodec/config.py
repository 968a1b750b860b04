"""Model and training configuration.

Configs are plain dataclasses.  They can be loaded from a key-value text file
(``key = value`` per line, ``#`` comments) and overridden with ``key=value``
strings from the command line.  Keys of the embedded :class:`ModelConfig` are
addressed as ``model.<field>``.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any


class ConfigError(ValueError):
    pass


DOWNSAMPLE_FACTOR = 16


def default_group_size(c2: int) -> int:
    # keeps 24 distortion-weight groups across the scalable channels
    return max(1, round(c2 / 24))


@dataclass
class ModelConfig:
    C1: int = 32
    C2: int = 32
    N_hidden: int = 64
    hyper_channels: int = 32
    downsample_factor: int = DOWNSAMPLE_FACTOR
    group_size: int | None = None  # None -> default_group_size(C2)
    lam: float | None = None  # None -> 0.002 (MSE) / 7.0 (MS-SSIM)
    metric: str = "mse"
    use_frr: bool = True
    use_ffm: bool = True
    use_mem: bool = True
    single_rate: bool = False
    w_mode: str = "floor"
    include_basic_distortion: bool = True
    seed: int = 0

    def __post_init__(self) -> None:
        self.metric = self.metric.lower().replace("_", "-")
        if self.group_size is None:
            self.group_size = default_group_size(self.C2)
        if self.lam is None:
            self.lam = 0.002 if self.metric == "mse" else 7.0
        self.validate()

    def validate(self) -> None:
        if self.C1 < 1:
            raise ConfigError(f"C1 must be >= 1, got {self.C1}")
        if self.C2 < 0 or (self.C2 == 0 and not self.single_rate):
            raise ConfigError(f"C2 must be >= 1 unless single_rate, got {self.C2}")
        if self.N_hidden < 1 or self.hyper_channels < 1:
            raise ConfigError("N_hidden and hyper_channels must be positive")
        if self.downsample_factor != DOWNSAMPLE_FACTOR:
            raise ConfigError("downsample_factor is fixed at 16")
        if self.group_size < 1 or (self.C2 > 0 and self.group_size > self.C2):
            raise ConfigError(f"group_size must lie in [1, C2], got {self.group_size}")
        if not self.lam > 0:
            raise ConfigError(f"lambda must be positive, got {self.lam}")
        if self.metric not in ("mse", "ms-ssim"):
            raise ConfigError(f"unknown metric {self.metric!r}")
        if self.w_mode not in ("floor", "clamped"):
            raise ConfigError(f"unknown w_mode {self.w_mode!r}")

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ModelConfig":
        return cls(**d)

    def replace(self, **changes: Any) -> "ModelConfig":
        d = self.to_dict()
        d.update(changes)
        if "C2" in changes and "group_size" not in changes:
            d["group_size"] = None
        if "metric" in changes and "lam" not in changes:
            d["lam"] = None
        return ModelConfig(**d)


# Ablation matrix: (use_frr, use_ffm, use_mem) per case.
ABLATION_CASES: dict[int, tuple[bool, bool, bool]] = {
    1: (True, True, True),
    2: (True, True, False),
    3: (True, False, True),
    4: (True, False, False),
    5: (False, True, False),
    6: (False, False, True),
    7: (False, False, False),
}


def ablation_config(case: int, base: ModelConfig | None = None) -> ModelConfig:
    frr, ffm, mem = ABLATION_CASES[case]
    base = base or ModelConfig()
    return base.replace(use_frr=frr, use_ffm=ffm, use_mem=mem)


@dataclass
class TrainConfig:
    dataset_dir: str | None = None  # None -> bundled synthetic textures
    n_synthetic: int = 200
    synthetic_size: int = 96
    crop: int = 48
    batch: int = 8
    steps: int = 2000
    lr: float = 1e-3
    lr_drop: float = 1e-4
    lr_drop_step: int | None = None  # None -> 3/4 of the run (1500 of 2000)
    clip_grad: float = 1.0
    seed: int = 7
    deterministic: bool = True
    log_every: int = 50
    checkpoint_every: int = 500
    out_dir: str = "runs/desk"
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self) -> None:
        if isinstance(self.model, dict):
            self.model = ModelConfig.from_dict(self.model)
        self.validate()

    def validate(self) -> None:
        if self.crop <= 0 or self.crop % DOWNSAMPLE_FACTOR:
            raise ConfigError(f"crop must be a positive multiple of 16, got {self.crop}")
        for name in ("batch", "steps", "n_synthetic", "synthetic_size", "log_every", "checkpoint_every"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if not 0 <= self.drop_step <= self.steps:
            raise ConfigError("lr_drop_step must lie within the run")
        if self.synthetic_size < self.crop:
            raise ConfigError("synthetic_size must be at least the crop size")

    @property
    def drop_step(self) -> int:
        return (3 * self.steps) // 4 if self.lr_drop_step is None else self.lr_drop_step

    @property
    def metric(self) -> str:
        return self.model.metric

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)


def _coerce(value: str, current: Any, name: str) -> Any:
    v = value.strip()
    if v.lower() in ("none", "null", ""):
        return None
    if isinstance(current, bool):
        if v.lower() in ("1", "true", "yes", "on"):
            return True
        if v.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{name}: expected a boolean, got {value!r}")
    try:
        if isinstance(current, int):
            return int(v)
        if isinstance(current, float):
            return float(v)
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {value!r}") from None
    if current is None:
        # optional numeric fields
        for cast in (int, float):
            try:
                return cast(v)
            except ValueError:
                pass
    return v


def parse_kv_lines(lines: list[str]) -> dict[str, str]:
    out = {}
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def apply_overrides(cfg: TrainConfig, pairs: dict[str, str]) -> TrainConfig:
    top = cfg.to_dict()
    model = top.pop("model")
    model_changes: dict[str, Any] = {}
    for key, value in pairs.items():
        if key.startswith("model."):
            name = key[len("model."):]
            if name not in model:
                raise ConfigError(f"unknown config key {key!r}")
            model_changes[name] = _coerce(value, model[name], key)
        else:
            if key not in top:
                raise ConfigError(f"unknown config key {key!r}")
            top[key] = _coerce(value, top[key], key)
    mcfg = ModelConfig.from_dict(model)
    if model_changes:
        mcfg = mcfg.replace(**model_changes)
    return TrainConfig(**top, model=mcfg)


def load_train_config(path: str | Path | None = None, overrides: list[str] | None = None) -> TrainConfig:
    cfg = TrainConfig()
    if path is not None:
        cfg = apply_overrides(cfg, parse_kv_lines(Path(path).read_text().splitlines()))
    if overrides:
        cfg = apply_overrides(cfg, parse_kv_lines(list(overrides)))
    return cfg


def dump_train_config(cfg: TrainConfig) -> str:
    return json.dumps(cfg.to_dict(), indent=2, sort_keys=True)
