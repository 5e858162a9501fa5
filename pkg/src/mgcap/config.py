"""Run configuration: ``key = value`` text files plus ``--key=value`` overrides."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from .canonical import GranularitySpec, TransformSet
from .errors import ConfigError
from .model import PipelineConfig
from .sop import SopConfig
from .spectral import MODES


@dataclass
class RunConfig:
    manifest: str = "data/synth/manifest.csv"
    # 0 keeps the manifest's split tags; otherwise re-split with split_seed
    train_ratio: float = 0.0
    split_seed: int = 0
    image_size: int = 64
    crop_size: int = 56
    input_size: int = 56
    granularities: tuple[float, ...] = (1.0, 0.75, 0.5)
    transforms: int = 12
    norm: str = "sqrt_e"
    lam: float = 1e-4
    use_gaussian: bool = True
    mean_convention: str = "mean"
    eps_lo: float = 1e-5
    eps_hi: float = 1e5
    degeneracy_tol: float = 1e-10
    channels: int = 32
    head_bias: bool = True
    batch_size: int = 12
    epochs_stage1: int = 20
    epochs_stage2: int = 10
    lr_stage1: float = 0.1
    lr_stage2: float = 1e-3
    lr_decay: float = 0.15
    decay_every_stage1: int = 30
    decay_every_stage2: int = 3
    momentum: float = 0.9
    weight_decay: float = 5e-4
    # global gradient-norm cap for stage 2; 0 disables
    grad_clip: float = 1.0
    augment: bool = True
    seed: int = 0

    def validate(self) -> "RunConfig":
        if self.norm not in MODES:
            raise ConfigError(f"norm must be one of {MODES}, got {self.norm!r}")
        if self.mean_convention not in ("mean", "sum"):
            raise ConfigError("mean_convention must be 'mean' or 'sum'")
        if self.lam < 0:
            raise ConfigError("lambda must be non-negative")
        if not self.eps_hi > self.eps_lo > 0:
            raise ConfigError("need eps_hi > eps_lo > 0")
        if not 0.0 <= self.train_ratio < 1.0:
            raise ConfigError("train_ratio must lie in [0, 1)")
        if self.grad_clip < 0:
            raise ConfigError("grad_clip must be non-negative")
        if self.crop_size > self.image_size:
            raise ConfigError("crop_size exceeds image_size")
        for key in ("transforms", "channels", "batch_size", "crop_size", "input_size", "image_size"):
            if getattr(self, key) < 1:
                raise ConfigError(f"{key} must be positive")
        if self.epochs_stage1 < 0 or self.epochs_stage2 < 0:
            raise ConfigError("epoch counts must be non-negative")
        try:
            GranularitySpec(self.granularities)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        return self

    def pipeline(self, num_classes: int, in_channels: int) -> PipelineConfig:
        return PipelineConfig(
            num_classes=num_classes,
            in_channels=in_channels,
            channels=self.channels,
            input_size=self.input_size,
            transforms=TransformSet(self.transforms),
            granularity=GranularitySpec(self.granularities),
            norm=self.norm,
            sop=SopConfig(self.lam, self.use_gaussian, self.mean_convention),
            eps_lo=self.eps_lo,
            eps_hi=self.eps_hi,
            degeneracy_tol=self.degeneracy_tol,
            head_bias=self.head_bias,
        )

    def to_text(self) -> str:
        return "".join(f"{f.name} = {_format(getattr(self, f.name))}\n" for f in fields(self))


# "lambda" is the documented key; "lam" avoids the Python keyword internally
_ALIASES = {"lambda": "lam"}
_FIELDS = {f.name: f for f in fields(RunConfig)}


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(repr(v) for v in value)
    return str(value)


def _coerce(name: str, raw: str):
    default = getattr(RunConfig(), name)
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            return tuple(float(x) for x in raw.split(",") if x.strip())
    except ValueError as exc:
        raise ConfigError(f"bad value for {name}: {raw!r}") from exc
    return raw


def apply_overrides(cfg: RunConfig, pairs: dict[str, str]) -> RunConfig:
    updates = {}
    for key, raw in pairs.items():
        name = _ALIASES.get(key.replace("-", "_"), key.replace("-", "_"))
        if name not in _FIELDS:
            raise ConfigError(f"unknown config key {key!r}")
        updates[name] = _coerce(name, raw)
    return dataclasses.replace(cfg, **updates)


def parse_config_text(text: str) -> dict[str, str]:
    pairs = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        pairs[key.strip()] = value.strip()
    return pairs


def load_config(path: str | Path | None = None, overrides: dict[str, str] | None = None) -> RunConfig:
    cfg = RunConfig()
    if path is not None:
        cfg = apply_overrides(cfg, parse_config_text(Path(path).read_text(encoding="utf-8")))
    if overrides:
        cfg = apply_overrides(cfg, overrides)
    return cfg.validate()
