"""Experiment configuration: schema, defaults, and TOML/JSON loading.

Desk-scale defaults (2,000/500 scenes x 10 questions, 40 epochs, batch 64)
are sized so the ground-truth encoder run finishes on a workstation. The
reference full-scale schedule (warmup 10k iterations) is available by
setting training.warmup_iters explicitly; the "auto" default scales warmup
to 5% of the run's total iterations so short runs are not spent entirely
in warmup.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .errors import ConfigError
from .model import ReasoningConfig
from .questions import FAMILIES


@dataclass
class DatasetConfig:
    train_scenes: int = 2000
    val_scenes: int = 500
    questions_per_scene: int = 10
    min_objects: int = 3
    max_objects: int = 10
    seed: int = 0
    scenes_path: str | None = None  # load instead of sampling when set
    questions_path: str | None = None

    def per_family(self) -> dict[str, int]:
        base, extra = divmod(self.questions_per_scene, len(FAMILIES))
        return {f: base + (1 if i < extra else 0) for i, f in enumerate(FAMILIES)}


@dataclass
class EncoderConfig:
    profile: str = "gt"  # gt | raw | store:<path>
    raster_size: int = 48  # raw encoder image side, divisible by 3
    text: str = "builtin"  # builtin | store:<path>
    text_dim: int = 32


@dataclass
class TrainingConfig:
    epochs: int = 40
    batch_size: int = 64
    base_lr: float = 1e-4
    weight_decay: float = 1e-4
    warmup_iters: int | str = "auto"  # "auto" -> 5% of total iterations
    decay_epochs: tuple[int, ...] = (30, 35)
    decay_factor: float = 0.1
    log_interval: int = 100
    mode: str = "serial"  # serial | fast
    fraction: float = 1.0


@dataclass
class ExperimentConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    budget: int = 100
    model: ReasoningConfig = field(default_factory=ReasoningConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    sweep_fractions: tuple[float, ...] = (0.02, 0.05, 0.1, 0.2, 0.5, 1.0)
    out_dir: str = "runs/exp"

    def validate(self) -> None:
        d, t = self.dataset, self.training
        if d.train_scenes < 1 or d.val_scenes < 1:
            raise ConfigError("need at least one scene per split")
        if d.questions_per_scene < 1:
            raise ConfigError("questions_per_scene must be >= 1")
        if not (0 <= d.min_objects <= d.max_objects <= 10):
            raise ConfigError(f"object count range [{d.min_objects}, {d.max_objects}] invalid")
        if self.budget < 10:
            raise ConfigError(f"memory budget {self.budget} below the object capacity")
        if not (0.0 < t.fraction <= 1.0):
            raise ConfigError(f"training fraction {t.fraction} outside (0, 1]")
        if t.mode not in ("serial", "fast"):
            raise ConfigError(f"unknown training mode {t.mode!r}")
        if isinstance(t.warmup_iters, str) and t.warmup_iters != "auto":
            raise ConfigError(f"warmup_iters must be an integer or 'auto', got {t.warmup_iters!r}")
        if t.epochs < 0 or t.batch_size < 1:
            raise ConfigError("epochs must be >= 0 and batch_size >= 1")
        if self.encoder.raster_size % 3 != 0 or self.encoder.raster_size < 33:
            raise ConfigError("raster_size must be a multiple of 3 and >= 33")
        for f in self.sweep_fractions:
            if not (0.0 < f <= 1.0):
                raise ConfigError(f"sweep fraction {f} outside (0, 1]")

    def resolved_warmup(self, total_iters: int) -> int:
        w = self.training.warmup_iters
        if w == "auto":
            return max(20, round(0.05 * total_iters))
        return int(w)

    def to_dict(self) -> dict:
        return asdict(self)


def _update_dataclass(obj, data: dict, path: str):
    for key, value in data.items():
        if not hasattr(obj, key):
            raise ConfigError(f"unknown config key {path}.{key}")
        current = getattr(obj, key)
        if isinstance(value, dict):
            raise ConfigError(f"{path}.{key} must be a scalar or list")
        if isinstance(current, tuple) and isinstance(value, list):
            value = tuple(value)
        setattr(obj, key, value)


def config_from_dict(data: dict) -> ExperimentConfig:
    cfg = ExperimentConfig()
    known = {"dataset", "encoder", "budget", "model", "training", "sweep_fractions", "out_dir"}
    for key in data:
        if key not in known:
            raise ConfigError(f"unknown config section {key!r}")
    if "dataset" in data:
        _update_dataclass(cfg.dataset, data["dataset"], "dataset")
    if "encoder" in data:
        _update_dataclass(cfg.encoder, data["encoder"], "encoder")
    if "training" in data:
        _update_dataclass(cfg.training, data["training"], "training")
    if "model" in data:
        fields = dict(
            d_model=cfg.model.d_model, encoder_layers=cfg.model.encoder_layers,
            decoder_layers=cfg.model.decoder_layers, heads=cfg.model.heads,
            ffn_dim=cfg.model.ffn_dim, queries=cfg.model.queries,
            dropout=cfg.model.dropout, max_text_len=cfg.model.max_text_len,
            max_grid=cfg.model.max_grid, positional_objects=cfg.model.positional_objects,
        )
        for key, value in data["model"].items():
            if key not in fields:
                raise ConfigError(f"unknown config key model.{key}")
            fields[key] = value
        cfg.model = ReasoningConfig(**fields)
    if "budget" in data:
        cfg.budget = int(data["budget"])
    if "sweep_fractions" in data:
        cfg.sweep_fractions = tuple(data["sweep_fractions"])
    if "out_dir" in data:
        cfg.out_dir = str(data["out_dir"])
    cfg.validate()
    return cfg


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    text = path.read_text(encoding="utf-8")
    if path.suffix == ".toml":
        try:
            import tomllib  # py311+
        except ModuleNotFoundError:
            import tomli as tomllib
        try:
            data = tomllib.loads(text)
        except Exception as exc:
            raise ConfigError(f"{path}: TOML parse error: {exc}") from exc
    elif path.suffix == ".json":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: JSON parse error: {exc}") from exc
    else:
        raise ConfigError(f"{path}: config must be .toml or .json")
    return config_from_dict(data)
