"""Run configuration: nested dataclasses loaded from an INI-style file.

Defaults carry the published hyperparameters. ``desk_config`` scales the
feature front-end and network down so a full three-regime comparison fits in
minutes on one CPU core.
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .augment import AugmentConfig
from .corpus import SyntheticSpec
from .net.model import NetConfig, feature_shape
from .net.optim import OptimConfig
from .segmenter import frames_per_segment
from .spectro import SpectroConfig
from .threshold import ThresholdConfig


class ConfigError(ValueError):
    pass


@dataclass
class SegmentConfig:
    length_s: float = 0.7
    pad_last: bool = True


@dataclass
class TrainConfig:
    epochs_binary: int = 150
    epochs_multiclass: int = 200
    batch_size: int = 32
    relabel_threshold: float = 0.5
    thresholding_enabled: bool = False
    warm_start: bool = True
    augment_binary: bool = True
    augment_multiclass: bool = True
    weighted_sampling: bool = True
    vote_models: int = 1
    split_ratio: tuple[float, float, float] = (3.0, 1.0, 1.0)


@dataclass
class RunConfig:
    seed: int = 0
    spectro: SpectroConfig = field(default_factory=SpectroConfig)
    segment: SegmentConfig = field(default_factory=SegmentConfig)
    threshold: ThresholdConfig = field(default_factory=ThresholdConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    net: NetConfig = field(default_factory=NetConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    synth: SyntheticSpec = field(default_factory=SyntheticSpec)

    @property
    def segment_frames(self) -> int:
        return frames_per_segment(self.segment.length_s, self.spectro.sample_rate, self.spectro.hop)

    @property
    def input_shape(self) -> tuple[int, int]:
        return (self.spectro.n_mels, self.segment_frames)

    def validate(self) -> None:
        self.augment.validate()
        self.synth.validate()
        net = dataclasses.replace(self.net, input_shape=self.input_shape)
        net.validate()
        feature_shape(net)
        if not 0.0 <= self.threshold.threshold <= 1.0:
            raise ConfigError("threshold.threshold must be in [0, 1]")
        if self.train.batch_size < 1:
            raise ConfigError("train.batch_size must be >= 1")
        if self.train.vote_models < 1:
            raise ConfigError("train.vote_models must be >= 1")

    # -- (de)serialization --------------------------------------------------

    def sections(self) -> dict[str, Any]:
        return {f.name: getattr(self, f.name) for f in dataclasses.fields(self) if f.name != "seed"}

    def to_dict(self) -> dict:
        out = {"seed": self.seed}
        for name, sec in self.sections().items():
            out[name] = {k: (list(v) if isinstance(v, tuple) else v)
                         for k, v in dataclasses.asdict(sec).items()}
        return out

    def to_ini(self) -> str:
        lines = ["[run]", f"seed = {self.seed}", ""]
        for name, sec in self.sections().items():
            lines.append(f"[{name}]")
            for f in dataclasses.fields(sec):
                lines.append(f"{f.name} = {_format(getattr(sec, f.name))}")
            lines.append("")
        return "\n".join(lines)

    def set(self, dotted: str, raw: str) -> None:
        """Apply one ``section.key=value`` override (``seed`` has no section)."""
        if dotted in ("seed", "run.seed"):
            self.seed = int(raw)
            return
        if "." not in dotted:
            raise ConfigError(f"override {dotted!r} must look like section.key")
        sec_name, key = dotted.split(".", 1)
        sections = self.sections()
        if sec_name not in sections:
            raise ConfigError(f"unknown config section {sec_name!r}")
        sec = sections[sec_name]
        names = {f.name for f in dataclasses.fields(sec)}
        if key not in names:
            raise ConfigError(f"unknown key {key!r} in section [{sec_name}]")
        setattr(sec, key, _coerce(getattr(sec, key), raw, f"{sec_name}.{key}"))


def _format(v) -> str:
    if isinstance(v, (tuple, list)):
        return ", ".join(str(x) for x in v)
    if isinstance(v, bool):
        return "true" if v else "false"
    return str(v)


def _coerce(current, raw: str, where: str):
    raw = raw.strip()
    try:
        if isinstance(current, bool):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(current, int):
            return int(raw)
        if isinstance(current, float):
            return float(raw)
        if isinstance(current, tuple):
            items = [x.strip() for x in raw.split(",") if x.strip()]
            proto = current[0] if current else ""
            if isinstance(proto, bool) or isinstance(proto, str):
                return tuple(items)
            if isinstance(proto, int):
                return tuple(int(x) for x in items)
            return tuple(float(x) for x in items)
        return raw
    except ValueError:
        raise ConfigError(f"bad value for {where}: {raw!r}") from None


def load_config(path=None, overrides: dict[str, str] | None = None) -> RunConfig:
    """Defaults, then the file (if any), then ``overrides``."""
    cfg = RunConfig()
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
        try:
            parser.read(path, encoding="utf-8")
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from None
        preset = parser.get("run", "preset", fallback="").strip()
        if preset:
            cfg = preset_config(preset)
        for sec in parser.sections():
            for key, value in parser.items(sec):
                if sec == "run" and key == "preset":
                    continue
                cfg.set("seed" if (sec == "run" and key == "seed") else f"{sec}.{key}", value)
    for k, v in (overrides or {}).items():
        cfg.set(k, v)
    cfg.validate()
    return cfg


def desk_config(seed: int = 0) -> RunConfig:
    """Scaled-down configuration for CPU-minute experiments on the synthetic corpus."""
    cfg = RunConfig(seed=seed)
    cfg.spectro = SpectroConfig(sample_rate=16000, n_fft=512, hop=256, n_mels=32)
    # no batchnorm/dropout in the multiclass stage either: at this scale a cold
    # start with them stays at chance for the whole budget
    cfg.net = NetConfig(channels=(8, 16, 16, 32, 32), use_batchnorm=False, use_dropout=False)
    cfg.optim = OptimConfig(learning_rate=1e-3, step_size=100, decay=0.05)
    # augmentation off for the binary stage: it blurs the event/noise boundary the
    # presort step depends on
    cfg.train = TrainConfig(epochs_binary=30, epochs_multiclass=30, augment_binary=False)
    cfg.synth = SyntheticSpec(duration_range=(0.3, 2.2))
    return cfg


PRESETS = {"paper": RunConfig, "desk": desk_config}


def preset_config(name: str) -> RunConfig:
    try:
        return PRESETS[name]()
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
