"""Frame-quality and temporal-smoothness metrics."""

from __future__ import annotations

import json
import math
import os
import subprocess
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np
from scipy.signal import convolve

from .errors import ShapeError
from .media import PixelVideo
from .tensorio import write_tensor

PSNR_CAP = 100.0
SIM_FLOOR = 1e-6
MS_SSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
MS_SSIM_MIN_SIDE = 32
_K1, _K2 = 0.01, 0.03


def _frames(video) -> np.ndarray:
    return video.frames if isinstance(video, PixelVideo) else np.asarray(video, dtype=np.float64)


def _gaussian_window(size: int, sigma: float = 1.5) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x**2) / (2 * sigma**2))
    g /= g.sum()
    return np.outer(g, g)


def _ssim_maps(a: np.ndarray, b: np.ndarray, win: int = 11, data_range: float = 1.0):
    """SSIM and contrast-structure maps of two single-channel images over the valid region."""
    win = min(win, a.shape[0], a.shape[1])
    k = _gaussian_window(win)
    filt = lambda x: convolve(x, k, mode="valid")
    c1, c2 = (_K1 * data_range) ** 2, (_K2 * data_range) ** 2
    mu_a, mu_b = filt(a), filt(b)
    var_a = filt(a * a) - mu_a**2
    var_b = filt(b * b) - mu_b**2
    cov = filt(a * b) - mu_a * mu_b
    cs = (2 * cov + c2) / (var_a + var_b + c2)
    lum = (2 * mu_a * mu_b + c1) / (mu_a**2 + mu_b**2 + c1)
    return lum * cs, cs


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Single-scale SSIM of two (H, W, 3) frames in [0, 1], averaged over channels."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"frame shapes differ: {a.shape} vs {b.shape}")
    return float(np.mean([_ssim_maps(a[..., c], b[..., c])[0].mean() for c in range(a.shape[-1])]))


def _pool2(x: np.ndarray) -> np.ndarray:
    h, w = x.shape[0] // 2 * 2, x.shape[1] // 2 * 2
    x = x[:h, :w]
    return 0.25 * (x[0::2, 0::2] + x[1::2, 0::2] + x[0::2, 1::2] + x[1::2, 1::2])


def _ms_ssim_channel(a: np.ndarray, b: np.ndarray) -> float:
    value = 1.0
    for i, w in enumerate(MS_SSIM_WEIGHTS):
        s_map, cs_map = _ssim_maps(a, b)
        last = i == len(MS_SSIM_WEIGHTS) - 1
        term = s_map.mean() if last else cs_map.mean()
        value *= max(term, 0.0) ** w
        if not last:
            a, b = _pool2(a), _pool2(b)
    return value


def ms_ssim(gen, gt) -> float:
    """Five-scale MS-SSIM averaged over frames and channels.

    The Gaussian window is truncated to the image size at coarse scales, so frames
    down to ``MS_SSIM_MIN_SIDE`` pixels are supported.
    """
    p, q = _frames(gen), _frames(gt)
    if p.shape != q.shape:
        raise ShapeError(f"video shapes differ: {p.shape} vs {q.shape}")
    if min(p.shape[1:3]) < MS_SSIM_MIN_SIDE:
        raise ShapeError(f"frames must be at least {MS_SSIM_MIN_SIDE}px per side for MS-SSIM")
    vals = [
        _ms_ssim_channel(p[i, ..., c].astype(np.float64), q[i, ..., c].astype(np.float64))
        for i in range(p.shape[0])
        for c in range(p.shape[-1])
    ]
    return float(np.mean(vals))


def psnr(gen, gt, cap: float = PSNR_CAP) -> float:
    """Per-frame PSNR with peak 1, averaged; identical frames score ``cap``."""
    p, q = _frames(gen), _frames(gt)
    if p.shape != q.shape:
        raise ShapeError(f"video shapes differ: {p.shape} vs {q.shape}")
    mse = ((p.astype(np.float64) - q) ** 2).reshape(p.shape[0], -1).mean(axis=1)
    with np.errstate(divide="ignore"):
        per_frame = np.where(mse > 0, -10.0 * np.log10(mse), np.inf)
    return float(np.mean(np.minimum(per_frame, cap)))


def _cosine(u: np.ndarray, v: np.ndarray) -> float:
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        raise ValueError("cannot take cosine similarity of a zero-norm embedding")
    return float(np.dot(u, v) / (nu * nv))


def clipsim(gen, gt, embedder) -> float:
    """Mean cosine similarity between embeddings of corresponding frames."""
    p, q = _frames(gen), _frames(gt)
    if p.shape[0] != q.shape[0]:
        raise ShapeError(f"video lengths differ: {p.shape[0]} vs {q.shape[0]}")
    sims = [
        _cosine(np.ravel(embedder.embed(a)), np.ravel(embedder.embed(b))) for a, b in zip(p, q)
    ]
    return float(np.mean(sims))


class SimilarityFn(Protocol):
    name: str

    def __call__(self, a: np.ndarray, b: np.ndarray) -> float: ...


class SSIMSimilarity:
    name = "ssim"

    def __call__(self, a, b) -> float:
        return ssim(a, b)


class EmbeddingCosine:
    """CLIPSIM-style similarity through any image embedder."""

    def __init__(self, embedder):
        self.embedder = embedder
        self.name = f"cosine[{embedder.name}]"

    def __call__(self, a, b) -> float:
        return _cosine(np.ravel(self.embedder.embed(a)), np.ravel(self.embedder.embed(b)))


def relative_smoothness(sims_gen: Sequence[float], sims_gt: Sequence[float], floor: float = SIM_FLOOR) -> float:
    a = np.maximum(np.asarray(sims_gen, dtype=np.float64), floor)
    b = np.maximum(np.asarray(sims_gt, dtype=np.float64), floor)
    if a.shape != b.shape or a.size == 0:
        raise ShapeError("similarity sequences must be non-empty and equally long")
    return float(np.mean(np.minimum(a, b) / np.maximum(a, b)))


def consecutive_similarities(video, sim: SimilarityFn) -> list[float]:
    f = _frames(video)
    return [sim(f[i - 1], f[i]) for i in range(1, f.shape[0])]


def clip_rs(gen, gt, sim: SimilarityFn | None = None) -> float:
    """Relative smoothness: how closely the generated frame-to-frame change tracks the ground truth's."""
    sim = sim or SSIMSimilarity()
    p, q = _frames(gen), _frames(gt)
    if p.shape[0] != q.shape[0]:
        raise ShapeError(f"video lengths differ: {p.shape[0]} vs {q.shape[0]}")
    if p.shape[0] < 2:
        raise ShapeError("need at least two frames")
    return relative_smoothness(consecutive_similarities(p, sim), consecutive_similarities(q, sim))


class ExternalScorer:
    """Video-pair metric computed by an outside program (e.g. LPIPS or FVD).

    Runs ``command + [gen.vtns, gt.vtns]`` and parses a single float from stdout.
    """

    def __init__(self, command: Sequence[str], name: str, timeout: float = 600.0):
        self.command, self.name, self.timeout = list(command), name, timeout

    def __call__(self, gen, gt) -> float:
        with tempfile.TemporaryDirectory() as tmp:
            a, b = Path(tmp) / "gen.vtns", Path(tmp) / "gt.vtns"
            write_tensor(a, _frames(gen).astype(np.float32))
            write_tensor(b, _frames(gt).astype(np.float32))
            proc = subprocess.run(
                self.command + [os.fspath(a), os.fspath(b)], capture_output=True, text=True, timeout=self.timeout
            )
        if proc.returncode != 0:
            raise RuntimeError(f"scorer {self.name} failed ({proc.returncode}): {proc.stderr.strip()[-500:]}")
        try:
            return float(proc.stdout.strip().split()[-1])
        except (ValueError, IndexError) as exc:
            raise RuntimeError(f"scorer {self.name} printed no number: {proc.stdout!r}") from exc


@dataclass
class MetricReport:
    records: list[dict] = field(default_factory=list)  # {"sample_id": ..., "metrics": {...}}
    config: dict = field(default_factory=dict)

    def add(self, sample_id: str, metrics: dict) -> None:
        clean = {k: float(v) for k, v in metrics.items()}
        if not all(math.isfinite(v) for v in clean.values()):
            raise ValueError(f"non-finite metric in sample {sample_id}: {clean}")
        self.records.append({"sample_id": sample_id, "metrics": clean})

    @property
    def aggregate(self) -> dict:
        keys = sorted({k for r in self.records for k in r["metrics"]})
        return {k: float(np.mean([r["metrics"][k] for r in self.records if k in r["metrics"]])) for k in keys}

    def write(self, path: str | os.PathLike) -> None:
        """One JSON record per line, then a footer line holding the aggregate and config echo."""
        lines = [json.dumps(r, sort_keys=True) for r in self.records]
        footer = {"aggregate": self.aggregate, "count": len(self.records), "config": self.config}
        lines.append(json.dumps(footer, sort_keys=True))
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def read(cls, path: str | os.PathLike) -> "MetricReport":
        lines = [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]
        if not lines or "aggregate" not in lines[-1]:
            raise ValueError(f"{path}: missing aggregate footer")
        return cls(records=lines[:-1], config=lines[-1].get("config", {}))
