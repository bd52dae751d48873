"""Guidance tokens built from the two boundary frames plus an optional short subject prompt."""

from __future__ import annotations

import hashlib
import os
import subprocess
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from .errors import EmbedderError, ShapeError
from .tensorio import read_tensor, write_tensor

MAX_PROMPT_WORDS = 8


class ImageEmbedder(Protocol):
    name: str
    k_img: int
    d_c: int

    def embed(self, image: np.ndarray) -> np.ndarray: ...


@dataclass(frozen=True)
class GuidanceTokens:
    tokens: np.ndarray  # (k, d_c), ordered [frame s | frame e | prompt]
    provenance: tuple[int, int, int]

    def __post_init__(self):
        if self.tokens.ndim != 2 or self.tokens.shape[0] != sum(self.provenance):
            raise ShapeError(f"{self.tokens.shape[0]} tokens but provenance {self.provenance}")
        if not np.all(np.isfinite(self.tokens)):
            raise ValueError("guidance tokens contain non-finite values")

    @property
    def width(self) -> int:
        return self.tokens.shape[1]


def _grid_means(image: np.ndarray, grid: int) -> np.ndarray:
    rows = np.array_split(np.arange(image.shape[0]), grid)
    cols = np.array_split(np.arange(image.shape[1]), grid)
    out = np.empty((grid, grid, image.shape[2]))
    for i, r in enumerate(rows):
        for j, c in enumerate(cols):
            out[i, j] = image[r[0] : r[-1] + 1, c[0] : c[-1] + 1].mean(axis=(0, 1))
    return out


class ToyImageEmbedder:
    """Average-pool to an 8x8 grid, flatten, then a fixed seeded projection (no bias) to k_img tokens."""

    def __init__(self, d_c: int = 64, k_img: int = 4, seed: int = 0, grid: int = 8):
        self.d_c, self.k_img, self.seed, self.grid = d_c, k_img, seed, grid
        self.name = f"toy-image-v1(seed={seed},k={k_img},d={d_c})"
        n_in = grid * grid * 3
        rng = np.random.default_rng(seed)
        self._proj = rng.standard_normal((n_in, k_img * d_c)) / np.sqrt(n_in)
        self._proj.setflags(write=False)

    def embed(self, image: np.ndarray) -> np.ndarray:
        image = np.asarray(image, dtype=np.float64)
        if image.ndim != 3 or image.shape[2] != 3:
            raise ShapeError(f"expected an (H, W, 3) image, got {image.shape}")
        if image.shape[0] < self.grid or image.shape[1] < self.grid:
            raise ShapeError(f"image smaller than the {self.grid}x{self.grid} pooling grid")
        feats = _grid_means(image, self.grid).reshape(-1)
        return (feats @ self._proj).reshape(self.k_img, self.d_c)


class ToyTextEncoder:
    """One token per word, looked up in a seeded table via a stable hash bucket."""

    def __init__(self, d_c: int = 64, buckets: int = 1024, seed: int = 1):
        self.d_c, self.buckets = d_c, buckets
        self._table = np.random.default_rng(seed).standard_normal((buckets, d_c)) / np.sqrt(d_c)
        self._table.setflags(write=False)

    def bucket(self, word: str) -> int:
        digest = hashlib.blake2b(word.lower().encode("utf-8"), digest_size=8).digest()
        return int.from_bytes(digest, "little") % self.buckets

    def encode(self, prompt: str) -> np.ndarray:
        words = prompt.split()
        if len(words) > MAX_PROMPT_WORDS:
            raise ValueError(f"prompt has {len(words)} words; at most {MAX_PROMPT_WORDS} allowed")
        if not words:
            return np.zeros((0, self.d_c))
        return self._table[[self.bucket(w) for w in words]].copy()


class ExternalImageEmbedder:
    """Runs ``command + [input.vtns, output.vtns]``; the command must write a (k_img, d_c) tensor."""

    def __init__(self, command: Sequence[str], k_img: int, d_c: int, name: str = "external", timeout: float = 120.0):
        self.command = list(command)
        self.k_img, self.d_c, self.name, self.timeout = k_img, d_c, name, timeout

    def embed(self, image: np.ndarray) -> np.ndarray:
        with tempfile.TemporaryDirectory() as tmp:
            src, dst = Path(tmp) / "image.vtns", Path(tmp) / "tokens.vtns"
            write_tensor(src, np.asarray(image, dtype=np.float32))
            proc = subprocess.run(
                self.command + [os.fspath(src), os.fspath(dst)],
                capture_output=True,
                text=True,
                timeout=self.timeout,
            )
            if proc.returncode != 0:
                raise EmbedderError(f"{self.name} exited with {proc.returncode}: {proc.stderr.strip()[-500:]}")
            tokens = read_tensor(dst).astype(np.float64)
        if tokens.shape != (self.k_img, self.d_c):
            raise EmbedderError(f"{self.name} returned shape {tokens.shape}, expected {(self.k_img, self.d_c)}")
        return tokens


def build_guidance(
    x_s: np.ndarray,
    x_e: np.ndarray,
    prompt: str | None,
    embedder: ImageEmbedder,
    text_encoder: ToyTextEncoder | None = None,
) -> GuidanceTokens:
    blocks = []
    for label, frame in (("s", x_s), ("e", x_e)):
        try:
            blocks.append(np.asarray(embedder.embed(frame), dtype=np.float64))
        except Exception as exc:
            raise EmbedderError(f"embedder {embedder.name!r} failed on boundary frame {label}: {exc}") from exc
    k_p = 0
    if prompt:
        text_encoder = text_encoder or ToyTextEncoder(d_c=embedder.d_c)
        words = text_encoder.encode(prompt)
        if words.shape[1] != blocks[0].shape[1]:
            raise ShapeError("text and image token widths differ")
        blocks.append(words)
        k_p = words.shape[0]
    return GuidanceTokens(np.concatenate(blocks, axis=0), (blocks[0].shape[0], blocks[1].shape[0], k_p))
