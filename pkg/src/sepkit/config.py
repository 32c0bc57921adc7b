"""Run configuration: one INI file drives model, training, and data.

The file has three sections — [model], [training], [data] — and every
field has a default, so a partial file (or none at all) is valid. Values
survive a save/load round trip unchanged, and unknown sections or keys
are rejected rather than silently ignored: a typo in a sweep config
should fail loudly, not run the default.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, fields
from pathlib import Path

from .nets import ARCHITECTURES, BASIS_KINDS, MaskNetConfig
from .objectives import DEFAULT_SNR_TAU
from .training import TrainSettings
from .transforms import WINDOW_CHOICES_MS, FrameSpec


class ConfigError(ValueError):
    """Raised for unreadable, unknown, or out-of-range configuration."""


@dataclass(frozen=True)
class ModelConfig:
    arch: str = "single"
    basis: str = "stft"
    window_ms: float = 5.0
    n_basis: int = 64
    bottleneck: int = 32
    conv_channels: int = 64
    skip_channels: int = 32
    kernel_taps: int = 3
    blocks_per_repeat: int = 4
    repeats: int = 2
    n_sources: int = 2
    init_seed: int = 0

    def __post_init__(self):
        if self.arch not in ARCHITECTURES:
            raise ConfigError(f"model.arch must be one of {ARCHITECTURES}, "
                              f"got {self.arch!r}")
        if self.basis not in BASIS_KINDS:
            raise ConfigError(f"model.basis must be one of {BASIS_KINDS}, "
                              f"got {self.basis!r}")
        if self.window_ms not in WINDOW_CHOICES_MS:
            raise ConfigError(
                f"model.window_ms must be one of {WINDOW_CHOICES_MS}, "
                f"got {self.window_ms}")


@dataclass(frozen=True)
class TrainingConfig:
    steps: int = 2000
    batch_size: int = 2
    learning_rate: float = 1e-3
    tau: float = DEFAULT_SNR_TAU
    seed: int = 0

    def settings(self) -> TrainSettings:
        return TrainSettings(steps=self.steps, batch_size=self.batch_size,
                             learning_rate=self.learning_rate, tau=self.tau,
                             seed=self.seed)


@dataclass(frozen=True)
class DataConfig:
    sample_rate_hz: int = 8000
    clip_s: float = 3.0
    n_mixtures: int = 200
    n_sources: int = 2
    distinct_families: bool = False
    split_train: float = 0.7
    split_val: float = 0.2
    split_test: float = 0.1
    seed: int = 0

    @property
    def split_fractions(self) -> tuple[float, float, float]:
        return (self.split_train, self.split_val, self.split_test)


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig = ModelConfig()
    training: TrainingConfig = TrainingConfig()
    data: DataConfig = DataConfig()

    def frame_spec(self) -> FrameSpec:
        return FrameSpec.from_window_ms(self.model.window_ms,
                                        self.data.sample_rate_hz)

    def mask_net_config(self) -> MaskNetConfig:
        spec = self.frame_spec()
        model = self.model
        n_basis = spec.n_bins if model.basis == "stft" else model.n_basis
        return MaskNetConfig(
            n_basis=n_basis, bottleneck=model.bottleneck,
            conv_channels=model.conv_channels,
            skip_channels=model.skip_channels, kernel_taps=model.kernel_taps,
            blocks_per_repeat=model.blocks_per_repeat, repeats=model.repeats,
            n_sources=model.n_sources, basis_kind=model.basis,
            frame_spec=spec)


_SECTIONS = {"model": ModelConfig, "training": TrainingConfig,
             "data": DataConfig}


def default_config() -> RunConfig:
    return RunConfig()


def _parse_value(raw: str, kind: type, where: str):
    raw = raw.strip()
    try:
        if kind is bool:
            lowered = raw.lower()
            if lowered in ("true", "yes", "on", "1"):
                return True
            if lowered in ("false", "no", "off", "0"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def load_config(path) -> RunConfig:
    """Parse an INI file into a RunConfig; missing fields keep defaults."""
    path = Path(path)
    parser = configparser.ConfigParser()
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc

    unknown = set(parser.sections()) - set(_SECTIONS)
    if unknown:
        raise ConfigError(f"{path}: unknown section(s) {sorted(unknown)}")
    built = {}
    for section, cls in _SECTIONS.items():
        known = {f.name: f.type for f in fields(cls)}
        types = {name: type(getattr(cls(), name)) for name in known}
        values = {}
        if parser.has_section(section):
            for key, raw in parser.items(section):
                if key not in known:
                    raise ConfigError(
                        f"{path}: unknown key {key!r} in section [{section}]")
                values[key] = _parse_value(raw, types[key],
                                           f"{path} [{section}] {key}")
        try:
            built[section] = cls(**values)
        except (ConfigError, ValueError) as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    return RunConfig(**built)


def save_config(config: RunConfig, path) -> None:
    """Write every field of every section; the file round-trips exactly."""
    parser = configparser.ConfigParser()
    for section, value in (("model", config.model),
                           ("training", config.training),
                           ("data", config.data)):
        parser[section] = {f.name: str(getattr(value, f.name))
                           for f in fields(type(value))}
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        parser.write(fh)
