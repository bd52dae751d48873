"""Automatic test-window selection by optical-flow magnitude, and shot-cut filtering."""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable

import numpy as np
from scipy.ndimage import uniform_filter

from .errors import ShapeError
from .media import PixelVideo
from .metrics import ssim

FlowEstimator = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class CurationThresholds:
    """Open interval ``(T_lower, T_upper)`` on the mean flow magnitude of the boundary frames."""

    T_lower: float
    T_upper: float
    l_test: int = 12

    def __post_init__(self):
        if not 0 <= self.T_lower < self.T_upper:
            raise ValueError(f"need 0 <= T_lower < T_upper, got ({self.T_lower}, {self.T_upper})")
        if self.l_test < 1:
            raise ValueError("l_test must be >= 1")


def _gray(frame: np.ndarray) -> np.ndarray:
    frame = np.asarray(frame, dtype=np.float64)
    return frame.mean(axis=-1) if frame.ndim == 3 else frame


def _pool2(x: np.ndarray) -> np.ndarray:
    h, w = x.shape[0] // 2 * 2, x.shape[1] // 2 * 2
    x = x[:h, :w]
    return 0.25 * (x[0::2, 0::2] + x[1::2, 0::2] + x[0::2, 1::2] + x[1::2, 1::2])


def _upsample_flow(flow: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    up = 2 * np.repeat(np.repeat(flow, 2, axis=0), 2, axis=1)
    out = np.zeros(shape + (2,), dtype=flow.dtype)
    h, w = min(shape[0], up.shape[0]), min(shape[1], up.shape[1])
    out[:h, :w] = up[:h, :w]
    # odd sizes leave one uncovered row/column; copy the neighbour
    if h < shape[0]:
        out[h:, :w] = out[h - 1 : h, :w]
    if w < shape[1]:
        out[:, w:] = out[:, w - 1 : w]
    return out


def _shifted(b: np.ndarray, dx: int, dy: int) -> np.ndarray:
    """``out[y, x] = b[y + dy, x + dx]`` with edge clamping."""
    h, w = b.shape
    ys = np.clip(np.arange(h) + dy, 0, h - 1)
    xs = np.clip(np.arange(w) + dx, 0, w - 1)
    return b[ys[:, None], xs[None, :]]


def _match_level(a: np.ndarray, b: np.ndarray, init: np.ndarray, block: int, radius: int) -> np.ndarray:
    """Dense block matching around a per-pixel prior displacement.

    Every candidate displacement is scored as a uniform shift over the whole block, so an
    exact translation always costs zero even where the prior is inconsistent between
    neighbours. A pixel may only take candidates within ``radius`` of its own prior; ties
    go to the smallest refinement, so flat regions and identical frames stay at the prior.
    """
    lo = init.min(axis=(0, 1)) - radius
    hi = init.max(axis=(0, 1)) + radius
    best_cost = np.full(a.shape, np.inf)
    best_ref = np.full(a.shape, np.inf)
    best = init.copy()
    for dy in range(int(lo[1]), int(hi[1]) + 1):
        for dx in range(int(lo[0]), int(hi[0]) + 1):
            rx, ry = dx - init[..., 0], dy - init[..., 1]
            allowed = (np.abs(rx) <= radius) & (np.abs(ry) <= radius)
            if not allowed.any():
                continue
            cost = uniform_filter((a - _shifted(b, dx, dy)) ** 2, size=block, mode="nearest")
            ref = rx**2 + ry**2
            better = allowed & ((cost < best_cost - 1e-12) | ((np.abs(cost - best_cost) <= 1e-12) & (ref < best_ref)))
            best_cost = np.where(better, cost, best_cost)
            best_ref = np.where(better, ref, best_ref)
            best[better] = (dx, dy)
    return best


def estimate_flow(frame_a: np.ndarray, frame_b: np.ndarray, levels: int = 3, block: int = 8, radius: int = 4) -> np.ndarray:
    """Coarse-to-fine block-matching flow from ``frame_a`` to ``frame_b``.

    Returns an (h, w, 2) field of (dx, dy) displacements: pixel (x, y) of ``frame_a``
    is found at (x + dx, y + dy) in ``frame_b``.
    """
    a, b = _gray(frame_a), _gray(frame_b)
    if a.shape != b.shape:
        raise ShapeError(f"frame shapes differ: {a.shape} vs {b.shape}")
    pyr = [(a, b)]
    for _ in range(levels - 1):
        if min(pyr[-1][0].shape) < 2 * block:
            break
        pyr.append((_pool2(pyr[-1][0]), _pool2(pyr[-1][1])))
    flow = np.zeros(pyr[-1][0].shape + (2,), dtype=np.int64)
    for depth in range(len(pyr) - 1, -1, -1):
        la, lb = pyr[depth]
        if flow.shape[:2] != la.shape:
            flow = _upsample_flow(flow, la.shape)
        flow = _match_level(la, lb, flow, block, radius)
    return flow.astype(np.float64)


def mean_flow_magnitude(flow: np.ndarray) -> float:
    """Average over all pixels of the per-pixel L2 displacement."""
    return float(np.hypot(flow[..., 0], flow[..., 1]).mean())


def scan_windows(video: PixelVideo, l_test: int, flow_fn: FlowEstimator = estimate_flow) -> list[tuple[int, int, float]]:
    frames = video.frames
    out = []
    for s in range(0, len(video) - l_test - 1):
        e = s + l_test + 1
        out.append((s, e, mean_flow_magnitude(flow_fn(frames[s], frames[e]))))
    return out


def select_boundaries(video: PixelVideo, thresholds: CurationThresholds, flow_fn: FlowEstimator = estimate_flow) -> list[tuple[int, int]]:
    return [
        (s, e)
        for s, e, mag in scan_windows(video, thresholds.l_test, flow_fn)
        if thresholds.T_lower < mag < thresholds.T_upper
    ]


def shot_filter(video: PixelVideo, min_length: int = 32, min_ssim: float = 0.1) -> bool:
    """True when the clip is long enough and has no consecutive-frame SSIM below ``min_ssim``."""
    if len(video) < min_length:
        return False
    f = video.frames
    return all(ssim(f[i - 1], f[i]) >= min_ssim for i in range(1, len(video)))


def write_manifest(path: str | os.PathLike, entries: Iterable[dict]) -> None:
    """JSON lines of ``{"video_id", "s", "e", "magnitude"}``."""
    lines = []
    for entry in entries:
        rec = {"video_id": str(entry["video_id"]), "s": int(entry["s"]), "e": int(entry["e"])}
        mag = entry.get("magnitude")
        rec["magnitude"] = None if mag is None else float(mag)
        lines.append(json.dumps(rec))
    Path(path).write_text("".join(line + "\n" for line in lines))


def read_manifest(path: str | os.PathLike) -> list[dict]:
    return [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]


def curate(videos: dict[str, PixelVideo], thresholds: CurationThresholds, flow_fn: FlowEstimator = estimate_flow) -> list[dict]:
    entries = []
    for vid, video in videos.items():
        for s, e, mag in scan_windows(video, thresholds.l_test, flow_fn):
            if thresholds.T_lower < mag < thresholds.T_upper:
                entries.append({"video_id": vid, "s": s, "e": e, "magnitude": mag})
    return entries
