"""Video containers, the patchify autoencoder, synthetic scenes and file I/O."""

from __future__ import annotations

import logging
import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .errors import PartitionError, ShapeError
from .tensorio import read_tensor, write_tensor

logger = logging.getLogger(__name__)

PATCH = 4
IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp", ".ppm", ".pgm", ".tif", ".tiff")


@dataclass
class PixelVideo:
    """``frames`` is an (n, H, W, 3) array with values in [0, 1]."""

    frames: np.ndarray
    fps: int = 8

    def __post_init__(self):
        frames = np.asarray(self.frames)
        if frames.ndim != 4 or frames.shape[-1] != 3:
            raise ShapeError(f"expected (n, H, W, 3) frames, got {frames.shape}")
        n, h, w, _ = frames.shape
        if n < 1:
            raise ShapeError("video must contain at least one frame")
        if h < 8 or w < 8:
            raise ShapeError(f"frames must be at least 8x8, got {h}x{w}")
        if not np.all(np.isfinite(frames)):
            raise ValueError("video contains non-finite values")
        if frames.min() < 0.0 or frames.max() > 1.0:
            raise ValueError("pixel values must lie in [0, 1]")
        if self.fps < 1:
            raise ValueError("fps must be a positive integer")
        self.frames = frames

    def __len__(self) -> int:
        return self.frames.shape[0]

    def __getitem__(self, idx) -> "PixelVideo":
        frames = self.frames[idx]
        if frames.ndim == 3:
            frames = frames[None]
        return PixelVideo(frames, self.fps)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.frames.shape

    @staticmethod
    def concat(videos: Sequence["PixelVideo"]) -> "PixelVideo":
        return PixelVideo(np.concatenate([v.frames for v in videos], axis=0), videos[0].fps)


@dataclass
class LatentVideo:
    """``z`` is an (n, h, w, ch) tensor; ``timestep`` records the diffusion level (0 = clean)."""

    z: torch.Tensor
    timestep: int | None = 0

    def __post_init__(self):
        if not isinstance(self.z, torch.Tensor):
            self.z = torch.as_tensor(self.z)
        if self.z.ndim != 4 or self.z.shape[0] < 1:
            raise ShapeError(f"expected (n, h, w, ch) latent, got {tuple(self.z.shape)}")
        if not torch.isfinite(self.z).all():
            raise ValueError("latent contains non-finite values")

    def __len__(self) -> int:
        return self.z.shape[0]


@dataclass(frozen=True)
class ClipPartition:
    """Frames ``0..s`` precede, ``s+1..e-1`` are infilled, ``e..L-1`` follow."""

    s: int
    e: int
    L: int

    def __post_init__(self):
        if not (0 <= self.s < self.e <= self.L - 1):
            raise PartitionError(f"need 0 <= s < e <= L-1, got s={self.s} e={self.e} L={self.L}")
        if self.e - self.s - 1 < 1:
            raise PartitionError(f"intermediate clip is empty (s={self.s}, e={self.e})")

    @property
    def length(self) -> int:
        return self.e - self.s - 1

    @property
    def intermediate(self) -> slice:
        return slice(self.s + 1, self.e)

    def reference_mask(self) -> np.ndarray:
        mask = np.ones(self.L, dtype=bool)
        mask[self.intermediate] = False
        return mask


# -- patchify autoencoder ---------------------------------------------------


def encode(video: PixelVideo | np.ndarray, patch: int = PATCH) -> LatentVideo:
    """Space-to-depth: (n, H, W, 3) -> (n, H/p, W/p, 3p^2), channel order (py, px, rgb)."""
    frames = video.frames if isinstance(video, PixelVideo) else np.asarray(video)
    n, H, W, c = frames.shape
    if H % patch or W % patch:
        raise ShapeError(f"frame size {H}x{W} not divisible by patch factor {patch}")
    z = frames.reshape(n, H // patch, patch, W // patch, patch, c)
    z = z.transpose(0, 1, 3, 2, 4, 5).reshape(n, H // patch, W // patch, patch * patch * c)
    return LatentVideo(torch.from_numpy(np.ascontiguousarray(z)), timestep=0)


def decode(latent: LatentVideo | torch.Tensor, patch: int = PATCH, fps: int = 8) -> PixelVideo:
    z = latent.z if isinstance(latent, LatentVideo) else latent
    z = z.detach().cpu().numpy()
    if z.ndim != 4 or z.shape[-1] % (patch * patch):
        raise ShapeError(f"latent shape {z.shape} incompatible with patch factor {patch}")
    n, h, w, ch = z.shape
    c = ch // (patch * patch)
    frames = z.reshape(n, h, w, patch, patch, c).transpose(0, 1, 3, 2, 4, 5)
    frames = frames.reshape(n, h * patch, w * patch, c)
    return PixelVideo(np.clip(frames, 0.0, 1.0), fps)


def to_diffusion_range(z: torch.Tensor) -> torch.Tensor:
    return z * 2.0 - 1.0


def from_diffusion_range(z: torch.Tensor) -> torch.Tensor:
    return (z + 1.0) * 0.5


# -- synthetic scenes -------------------------------------------------------


@dataclass(frozen=True)
class Segment:
    """Constant velocity ``(dx, dy)`` in pixels per frame, held for ``duration`` frame steps."""

    velocity: tuple[float, float]
    duration: int


@dataclass
class SyntheticSceneSpec:
    segments: list[Segment]
    kind: str = "disc"
    size: float = 6.0  # radius for discs, half-side for squares
    start: tuple[float, float] | None = None  # (x, y); canvas centre by default
    color: tuple[float, float, float] = (0.95, 0.85, 0.2)
    background_seed: int = 0
    canvas: tuple[int, int] = (64, 64)  # (H, W)
    texture: float = 0.08

    def __post_init__(self):
        if self.kind not in ("disc", "square"):
            raise ValueError(f"unknown object kind {self.kind!r}")
        self.segments = [s if isinstance(s, Segment) else Segment(tuple(s[0]), int(s[1])) for s in self.segments]
        if any(s.duration < 0 for s in self.segments):
            raise ValueError("segment durations must be non-negative")
        H, W = self.canvas
        if self.start is None:
            self.start = ((W - 1) / 2.0, (H - 1) / 2.0)
        path = self.centers(self.total_duration + 1)
        lo, hi = path.min(axis=0), path.max(axis=0)
        if lo[0] - self.size < 0 or lo[1] - self.size < 0 or hi[0] + self.size > W - 1 or hi[1] + self.size > H - 1:
            raise ValueError("trajectory leaves the canvas")

    @property
    def total_duration(self) -> int:
        return sum(s.duration for s in self.segments)

    def centers(self, length: int) -> np.ndarray:
        """Object centre (x, y) for frames ``0..length-1``; holds the last position past the trajectory."""
        steps = [np.asarray(s.velocity, dtype=np.float64) for s in self.segments for _ in range(s.duration)]
        out = np.empty((length, 2))
        pos = np.asarray(self.start, dtype=np.float64)
        for k in range(length):
            out[k] = pos
            if k < len(steps):
                pos = pos + steps[k]
        return out


def render_background(spec: SyntheticSceneSpec) -> np.ndarray:
    H, W = spec.canvas
    rng = np.random.default_rng(spec.background_seed)
    base = rng.uniform(0.2, 0.5, size=3)
    yy, xx = np.mgrid[0:H, 0:W].astype(np.float64)
    bg = np.broadcast_to(base, (H, W, 3)).copy()
    for _ in range(3):
        fx, fy = rng.uniform(0.5, 2.0, size=2) * 2 * np.pi / np.array([W, H])
        phase = rng.uniform(0, 2 * np.pi)
        amp = rng.uniform(0.3, 1.0, size=3) * spec.texture
        bg += amp * np.sin(fx * xx + fy * yy + phase)[..., None]
    return np.clip(bg, 0.0, 1.0)


def _coverage(spec: SyntheticSceneSpec, center: np.ndarray) -> np.ndarray:
    H, W = spec.canvas
    yy, xx = np.mgrid[0:H, 0:W].astype(np.float64)
    dx, dy = xx - center[0], yy - center[1]
    if spec.kind == "disc":
        return np.clip(spec.size + 0.5 - np.hypot(dx, dy), 0.0, 1.0)
    return np.clip(spec.size + 0.5 - np.abs(dx), 0.0, 1.0) * np.clip(spec.size + 0.5 - np.abs(dy), 0.0, 1.0)


def generate_synthetic(spec: SyntheticSceneSpec, length: int, fps: int = 8) -> PixelVideo:
    """Render ``length`` frames of an anti-aliased object moving over a smooth textured background."""
    if length < 1:
        raise ValueError("length must be >= 1")
    bg = render_background(spec)
    color = np.asarray(spec.color, dtype=np.float64)
    frames = np.empty((length,) + bg.shape)
    for k, c in enumerate(spec.centers(length)):
        cov = _coverage(spec, c)[..., None]
        frames[k] = bg * (1.0 - cov) + color * cov
    return PixelVideo(frames, fps)


# -- file I/O ---------------------------------------------------------------


def save_video(video: PixelVideo, path: str | os.PathLike) -> None:
    write_tensor(path, video.frames)


def _natural_key(name: str):
    return [int(tok) if tok.isdigit() else tok for tok in re.split(r"(\d+)", name)]


def load_image_sequence(directory: str | os.PathLike, fps: int = 8) -> PixelVideo:
    from PIL import Image

    directory = Path(directory)
    files = sorted(
        (p for p in directory.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES),
        key=lambda p: _natural_key(p.name),
    )
    if not files:
        raise FileNotFoundError(f"no image frames found in {directory}")
    frames = []
    for p in files:
        with Image.open(p) as im:
            frames.append(np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0)
    shapes = {f.shape for f in frames}
    if len(shapes) > 1:
        raise ShapeError(f"inconsistent frame shapes in {directory}: {sorted(shapes)}")
    return PixelVideo(np.stack(frames), fps)


def load_video(path: str | os.PathLike, fps: int = 8) -> PixelVideo:
    """Load a native tensor file, or an image-sequence directory (numerically sorted)."""
    path = Path(path)
    if path.is_dir():
        return load_image_sequence(path, fps)
    frames = read_tensor(path)
    if frames.ndim != 4:
        raise ShapeError(f"{path}: expected a rank-4 video tensor, got rank {frames.ndim}")
    return PixelVideo(frames, fps)


def subsample_clips(video: PixelVideo, clip_length: int, rate: int) -> list[PixelVideo]:
    """All ``clip_length``-frame clips taken every ``rate`` frames, one per start offset."""
    span = (clip_length - 1) * rate + 1
    return [video[start : start + span : rate] for start in range(0, len(video) - span + 1)]
