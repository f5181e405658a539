"""Run configuration: nested dataclasses loaded from / dumped to YAML.

Defaults follow the published training recipe wherever it gives a value
(guidance weight 8 above 32 px, sigma-2 blur and path-length regularization
gated at 200k images, 64-d latents, 16 -> 1024 growth).
"""
from __future__ import annotations

import dataclasses
import difflib
import os
import typing
from dataclasses import dataclass, field
from pathlib import Path

import yaml

OUTPUT_DIR_ENV = "SGXL_OUTPUT_DIR"


class ConfigError(ValueError):
    pass


@dataclass
class DataConfig:
    path: str | None = None
    class_count: int | None = None


@dataclass
class ScheduleConfig:
    start_resolution: int = 16
    final_resolution: int = 1024
    batch_divisor: int = 16
    shortened_final: bool | None = None
    max_images_per_stage: int | None = None


@dataclass
class GeneratorConfig:
    z_dim: int = 64
    w_dim: int = 512
    channel_base: int = 8192
    channel_max: int = 256
    margin: int = 10
    mapping_layers: int = 2
    use_filters: bool = True
    lr: float = 0.0025
    betas: list[float] = field(default_factory=lambda: [0.0, 0.99])
    ema: bool = True
    ema_images: int = 10_000
    ema_rampup: float | None = 0.05   # horizon capped at this fraction of images seen in the stage


@dataclass
class DiscriminatorConfig:
    lr: float = 0.002
    betas: list[float] = field(default_factory=lambda: [0.0, 0.99])
    width: int = 64
    blur_sigma: float = 2.0
    blur_cutoff: int = 200_000
    blur_ramp: bool = False


@dataclass
class LossConfig:
    form: str = "logistic"
    guidance_lambda: float = 8.0
    guidance_min_resolution: int = 32
    pl_threshold: int = 200_000
    pl_weight: float = 2.0
    pl_decay: float = 0.99
    pl_interval: int = 4


@dataclass
class ProjectorConfig:
    extractors: list[str] = field(default_factory=lambda: ["conv", "vit"])
    input_resolution: int = 224
    seed: int = 0
    augment: bool = True
    augment_p: float = 0.5
    augment_fakes: bool = True
    weights: dict[str, str] = field(default_factory=dict)


@dataclass
class ConditioningConfig:
    normalize_embeddings: bool = True


@dataclass
class EvalConfig:
    interval_images: int = 10_000
    plateau_patience: int = 3
    plateau_threshold: float = 0.01
    divergence_factor: float = 5.0
    num_samples: int = 1000
    extractor_seed: int = 0
    extractor_resolution: int = 299


@dataclass
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    discriminator: DiscriminatorConfig = field(default_factory=DiscriminatorConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    projector: ProjectorConfig = field(default_factory=ProjectorConfig)
    conditioning: ConditioningConfig = field(default_factory=ConditioningConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    output_dir: str = "runs/default"
    seed: int = 0

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def validate(self):
        if self.loss.form not in ("logistic", "hinge", "minimax"):
            raise ConfigError(f"loss.form must be logistic, hinge or minimax, got {self.loss.form!r}")
        if self.schedule.start_resolution > self.schedule.final_resolution:
            raise ConfigError("schedule.start_resolution exceeds schedule.final_resolution")
        for name in self.projector.extractors:
            if name not in ("conv", "vit"):
                raise ConfigError(f"projector.extractors: unknown extractor {name!r}")
        if not self.projector.extractors:
            raise ConfigError("projector.extractors must name at least one extractor")
        return self


def _check_type(value, tp, path):
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin is typing.Union or (origin is not None and str(origin) == "<class 'types.UnionType'>"):
        for a in args:
            if a is type(None) and value is None:
                return value
        errors = []
        for a in args:
            if a is type(None):
                continue
            try:
                return _check_type(value, a, path)
            except ConfigError as exc:
                errors.append(exc)
        raise errors[0] if errors else ConfigError(f"{path}: unexpected null")
    if origin is list:
        if not isinstance(value, list):
            raise ConfigError(f"{path}: expected a list, got {type(value).__name__}")
        return [_check_type(v, args[0], f"{path}[{i}]") for i, v in enumerate(value)]
    if origin is dict:
        if not isinstance(value, dict):
            raise ConfigError(f"{path}: expected a mapping, got {type(value).__name__}")
        return {str(k): _check_type(v, args[1], f"{path}.{k}") for k, v in value.items()}
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {type(value).__name__}")
        return float(value)
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer, got {type(value).__name__}")
        return value
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected true/false, got {type(value).__name__}")
        return value
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {type(value).__name__}")
        return value
    return value


def _key_paths(cls, prefix=""):
    hints = typing.get_type_hints(cls)
    for f in dataclasses.fields(cls):
        where = f"{prefix}.{f.name}" if prefix else f.name
        yield where
        if dataclasses.is_dataclass(hints[f.name]):
            yield from _key_paths(hints[f.name], where)


def _nearest_key(key: str, cls, path: str) -> str:
    """Closest known key, searching the current section first, then the whole config."""
    def score(candidate):
        leaf = candidate.rsplit(".", 1)[-1]
        return max(difflib.SequenceMatcher(None, key, tok).ratio() for tok in [leaf, *leaf.split("_")])

    local = [f"{path}.{f.name}" if path else f.name for f in dataclasses.fields(cls)]
    best_local = max(local, key=score)
    if score(best_local) >= 0.6:
        return best_local
    return max([best_local, *_key_paths(RunConfig)], key=score)


def _build(cls, raw, path):
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{path or 'config'}: expected a mapping")
    hints = typing.get_type_hints(cls)
    names = [f.name for f in dataclasses.fields(cls)]
    kwargs = {}
    for key, value in raw.items():
        where = f"{path}.{key}" if path else str(key)
        if key not in names:
            raise ConfigError(f"unknown key {where!r} (nearest match: {_nearest_key(str(key), cls, path)!r})")
        tp = hints[key]
        if dataclasses.is_dataclass(tp):
            kwargs[key] = _build(tp, value, where)
        else:
            kwargs[key] = _check_type(value, tp, where)
    return cls(**kwargs)


def config_from_dict(raw: dict | None) -> RunConfig:
    cfg = _build(RunConfig, raw or {}, "")
    env_out = os.environ.get(OUTPUT_DIR_ENV)
    if env_out:
        cfg.output_dir = env_out
    return cfg.validate()


def load_config(path) -> RunConfig:
    """Parse a YAML config file; missing keys take their defaults."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file {path} does not exist")
    raw = yaml.safe_load(path.read_text()) or {}
    cfg = config_from_dict(raw)
    if cfg.data.path is not None and not Path(cfg.data.path).exists():
        raise ConfigError(f"data.path {cfg.data.path!r} does not exist")
    return cfg


def dump_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)
