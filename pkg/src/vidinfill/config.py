"""Run configuration stored as sectioned key = value text (INI)."""

from __future__ import annotations

import configparser
import dataclasses
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .errors import ConfigError


@dataclass
class DataSection:
    paths: list[str] = field(default_factory=list)
    synthetic: bool = True
    synthetic_videos: int = 2
    synthetic_length: int = 64
    canvas: int = 32
    clip_length: int = 32
    sample_rate: int = 2
    prompt: str = ""


@dataclass
class ModelSection:
    base_channels: int = 32
    channel_mult: list[int] = field(default_factory=lambda: [1, 2, 4])
    heads: int = 4
    context_dim: int = 64
    temporal_kernel: int = 3


@dataclass
class DiffusionSection:
    T: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02
    sample_steps: int = 50
    eta: float = 0.0


@dataclass
class SamplerSection:
    l_lower: int = 2
    l_upper: int = 22


@dataclass
class GfmSection:
    enabled: bool = True
    f0: float = 0.6
    lam: float = 0.1


@dataclass
class GuidanceSection:
    enabled: bool = True
    k_img: int = 4
    seed: int = 0


@dataclass
class OptimSection:
    lr: float = 1e-4
    weight_decay: float = 0.01
    batch: int = 1  # independent (clip, t, boundaries) draws averaged per step


@dataclass
class RunSection:
    seed: int = 0
    max_steps: int = 2000
    eval_every: int = 500
    ckpt_every: int = 500
    out_dir: str = "runs/default"


@dataclass
class RunConfig:
    data: DataSection = field(default_factory=DataSection)
    model: ModelSection = field(default_factory=ModelSection)
    diffusion: DiffusionSection = field(default_factory=DiffusionSection)
    sampler: SamplerSection = field(default_factory=SamplerSection)
    gfm: GfmSection = field(default_factory=GfmSection)
    guidance: GuidanceSection = field(default_factory=GuidanceSection)
    optim: OptimSection = field(default_factory=OptimSection)
    run: RunSection = field(default_factory=RunSection)

    def sections(self):
        return [(f.name, getattr(self, f.name)) for f in dataclasses.fields(self)]

    def set(self, dotted: str, raw: str) -> None:
        """Apply one ``section.key=value`` style override."""
        try:
            sec_name, key = dotted.split(".", 1)
        except ValueError:
            raise ConfigError(f"override {dotted!r} must look like section.key") from None
        section = getattr(self, sec_name, None)
        if section is None or not dataclasses.is_dataclass(section):
            raise ConfigError(f"unknown config section {sec_name!r}")
        fields = {f.name: f for f in dataclasses.fields(section)}
        if key not in fields:
            raise ConfigError(f"unknown key {key!r} in section [{sec_name}]")
        setattr(section, key, _parse(raw, getattr(section, key), f"{sec_name}.{key}"))

    def validate(self) -> None:
        d = self.data
        for p in d.paths:
            if not Path(p).exists():
                raise ConfigError(f"data path does not exist: {p}")
        if not d.paths and not d.synthetic:
            raise ConfigError("no training data: give data.paths or enable data.synthetic")
        if d.clip_length < 4 or d.sample_rate < 1:
            raise ConfigError("clip_length must be >= 4 and sample_rate >= 1")
        if d.canvas % 16:
            raise ConfigError("synthetic canvas must be a multiple of 16")
        if not 1 <= self.sampler.l_lower <= self.sampler.l_upper <= d.clip_length - 2:
            raise ConfigError("need 1 <= l_lower <= l_upper <= clip_length - 2")
        if (self.sampler.l_upper - self.sampler.l_lower) % 2:
            raise ConfigError("l_upper - l_lower must be even for a symmetric boundary sampler")
        if self.optim.lr <= 0:
            raise ConfigError("learning rate must be positive")
        if self.optim.batch < 1:
            raise ConfigError("optim.batch must be >= 1")
        if self.run.max_steps < 0:
            raise ConfigError("max_steps must be >= 0")
        if not 0 <= self.gfm.f0 <= 1 or self.gfm.lam < 0:
            raise ConfigError("gfm.f0 must lie in [0, 1] and gfm.lam must be >= 0")

    def to_text(self) -> str:
        lines = []
        for name, section in self.sections():
            lines.append(f"[{name}]")
            for f in dataclasses.fields(section):
                lines.append(f"{f.name} = {_format(getattr(section, f.name))}")
            lines.append("")
        return "\n".join(lines)

    def write(self, path: str | os.PathLike) -> None:
        Path(path).write_text(self.to_text())

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        parser.read_string(text)
        cfg = cls()
        for sec in parser.sections():
            for key, raw in parser.items(sec):
                cfg.set(f"{sec}.{key}", raw)
        return cfg

    @classmethod
    def load(cls, path: str | os.PathLike) -> "RunConfig":
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        return cls.from_text(path.read_text())


def _format(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (list, tuple)):
        return ", ".join(str(v) for v in value)
    return str(value)


def _parse(raw: str, current: Any, where: str) -> Any:
    raw = raw.strip()
    try:
        if isinstance(current, bool):
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(current, int):
            return int(raw)
        if isinstance(current, float):
            return float(raw)
        if isinstance(current, list):
            items = [x.strip() for x in raw.split(",") if x.strip()]
            if current and isinstance(current[0], int):
                return [int(x) for x in items]
            return items
    except ValueError:
        raise ConfigError(f"bad value for {where}: {raw!r}") from None
    return raw
