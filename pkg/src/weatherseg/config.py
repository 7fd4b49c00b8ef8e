"""Experiment configuration: flat ``key = value`` files plus flag overrides."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .augment import AugmentConfig
from .corpus import DEFAULT_NUM_CLASSES
from .scenegen import MIN_SIZE, per_town_count
from .segnet.train import TrainConfig
from .segnet.unet import ConfigError, UNetConfig

FULL_TRAIN_SAMPLES = 1000
FULL_VAL_SAMPLES = 200
N_TOWNS = 8


def _parse_bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _parse_opt_int(s: str):
    return None if s.strip().lower() in ("", "none") else int(s)


def _tuple_of(conv, n):
    def parse(s: str):
        parts = [p for p in s.replace("(", "").replace(")", "").split(",") if p.strip()]
        if len(parts) != n:
            raise ValueError(f"expected {n} comma-separated values, got {s!r}")
        return tuple(conv(p) for p in parts)
    return parse


_AUG_PARSERS = {
    "gate_probability": float,
    "gamma_range": _tuple_of(float, 2),
    "rgb_shift_limit": int,
    "fog_coef_range": _tuple_of(float, 2),
    "fog_alpha": float,
    "fog_color": _tuple_of(int, 3),
    "rain_slant_range": _tuple_of(float, 2),
    "rain_drop_length": float,
    "rain_drop_color": _tuple_of(int, 3),
    "rain_density_range": _tuple_of(float, 2),
    "rain_brightness": float,
    "rain_blur_kernel": int,
    "flare_radius_frac": float,
    "flare_intensity": float,
}


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 42
    scale: float = 0.2
    image_size: int = 64
    num_classes: int = DEFAULT_NUM_CLASSES
    levels: int = 3
    base_channels: int = 8
    epochs: int = 50
    cv_epochs: int = 20
    learning_rate: float = 1e-3
    batch_size: int = 8
    folds: int = 2
    output_dir: str = "runs"
    jobs: int = 1
    welch: bool = False
    ignore_class: int | None = None
    augment: AugmentConfig = field(default_factory=AugmentConfig)

    # -- derived configs ---------------------------------------------------
    def unet_config(self) -> UNetConfig:
        return UNetConfig(self.levels, self.base_channels, self.num_classes, self.image_size)

    def dataset_size(self, kind: str = "D1") -> int:
        return N_TOWNS * per_town_count(kind, self.scale)

    def train_config(self, cv: bool = False) -> TrainConfig:
        n = self.dataset_size("D1")
        n_val = min(n - 1, max(1, math.floor(FULL_VAL_SAMPLES * self.scale + 0.5)))
        n_train = min(n - n_val, max(1, math.floor(FULL_TRAIN_SAMPLES * self.scale + 0.5)))
        return TrainConfig(
            epochs=self.cv_epochs if cv else self.epochs,
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            train_samples=n_train,
            val_samples=n_val,
            ignore_class=self.ignore_class,
        )

    def validate(self) -> "ExperimentConfig":
        """Build every downstream config so errors surface before any work."""
        try:
            if not 0 <= self.seed < 2 ** 64:
                raise ValueError(f"seed must be a 64-bit unsigned integer, got {self.seed}")
            if not self.scale > 0:
                raise ValueError(f"scale must be > 0, got {self.scale}")
            if self.image_size < MIN_SIZE:
                raise ValueError(f"image_size must be >= {MIN_SIZE}, got {self.image_size}")
            if self.num_classes < DEFAULT_NUM_CLASSES:
                raise ValueError(f"num_classes must be >= {DEFAULT_NUM_CLASSES} (renderer palette)")
            if self.jobs < 1:
                raise ValueError(f"jobs must be >= 1, got {self.jobs}")
            if self.ignore_class is not None and not 0 <= self.ignore_class < self.num_classes:
                raise ValueError(f"ignore_class {self.ignore_class} out of range")
            self.unet_config()
            self.train_config(cv=False)
            self.train_config(cv=True)
            n = self.dataset_size("D1")
            if self.folds < 1 or self.folds > n or n % self.folds:
                raise ValueError(f"folds={self.folds} must divide the training set size {n}")
        except ValueError as e:
            raise ConfigError(str(e)) from e
        return self

    # -- (de)serialisation -------------------------------------------------
    def items(self) -> list[tuple[str, str]]:
        out = []
        for f in fields(self):
            if f.name == "augment":
                continue
            v = getattr(self, f.name)
            out.append((f.name, "none" if v is None else str(v).lower() if isinstance(v, bool) else str(v)))
        for name in AugmentConfig.field_names():
            v = getattr(self.augment, name)
            out.append((name, ", ".join(str(x) for x in v) if isinstance(v, tuple) else str(v)))
        return out

    def to_text(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in self.items())

    def with_overrides(self, overrides: dict[str, str]) -> "ExperimentConfig":
        top, aug = {}, {}
        parsers = _top_parsers()
        for key, raw in overrides.items():
            try:
                if key in parsers:
                    top[key] = parsers[key](raw)
                elif key in _AUG_PARSERS:
                    aug[key] = _AUG_PARSERS[key](raw)
                else:
                    raise ConfigError(f"unknown config key {key!r}")
            except ValueError as e:
                if isinstance(e, ConfigError):
                    raise
                raise ConfigError(f"bad value for {key}: {e}") from e
        try:
            augment = replace(self.augment, **aug) if aug else self.augment
        except ValueError as e:
            raise ConfigError(str(e)) from e
        return replace(self, augment=augment, **top)


def _top_parsers():
    return {
        "seed": int, "scale": float, "image_size": int, "num_classes": int, "levels": int,
        "base_channels": int, "epochs": int, "cv_epochs": int, "learning_rate": float,
        "batch_size": int, "folds": int, "output_dir": str, "jobs": int, "welch": _parse_bool,
        "ignore_class": _parse_opt_int,
    }


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    out = {}
    for line_no, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{line_no}: expected 'key = value'")
        key, value = (p.strip() for p in line.split("=", 1))
        if key in out:
            raise ConfigError(f"{source}:{line_no}: duplicate key {key!r}")
        out[key] = value
    return out


def load_config(path=None, overrides: dict[str, str] | None = None) -> ExperimentConfig:
    cfg = ExperimentConfig()
    if path is not None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
        cfg = cfg.with_overrides(parse_config_text(text, str(path)))
    if overrides:
        cfg = cfg.with_overrides(overrides)
    return cfg.validate()
