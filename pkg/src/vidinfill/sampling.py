"""Variable-length boundary sampling and timestep/length conditioning."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .media import ClipPartition


@dataclass(frozen=True)
class BoundarySamplerConfig:
    """``s ~ U{a_s..b_s}`` and ``e ~ U{a_e..b_e}``, both inclusive."""

    a_s: int
    b_s: int
    a_e: int
    b_e: int
    L: int

    def __post_init__(self):
        # a_s == b_s (and a_e == b_e) is allowed so fixed-length sampling is expressible.
        if not (0 < self.a_s <= self.b_s < self.a_e <= self.b_e < self.L - 1):
            raise ValueError(
                f"need 0 < a_s <= b_s < a_e <= b_e < L-1, got "
                f"({self.a_s}, {self.b_s}, {self.a_e}, {self.b_e}, L={self.L})"
            )
        if self.a_e - self.b_s - 1 < 1:
            raise ValueError("shortest intermediate clip would be empty")

    @classmethod
    def from_length_range(cls, l_lower: int, l_upper: int, L: int) -> "BoundarySamplerConfig":
        """Symmetric config whose support is exactly ``[l_lower, l_upper]``, centred in the clip."""
        if (l_upper - l_lower) % 2:
            raise ValueError("a symmetric config needs l_upper - l_lower to be even")
        width = (l_upper - l_lower) // 2
        span = l_upper + 1  # b_e - a_s
        a_s = (L - 1 - span) // 2
        return cls(a_s, a_s + width, a_s + span - width, a_s + span, L)

    @property
    def l_lower(self) -> int:
        return self.a_e - self.b_s - 1

    @property
    def l_upper(self) -> int:
        return self.b_e - self.a_s - 1


def sample_boundaries(config: BoundarySamplerConfig, rng: np.random.Generator) -> ClipPartition:
    s = int(rng.integers(config.a_s, config.b_s + 1))
    e = int(rng.integers(config.a_e, config.b_e + 1))
    return ClipPartition(s, e, config.L)


def triangular_pdf(l: int, config: BoundarySamplerConfig) -> float:
    """P(e - s - 1 = l): the discrete convolution of the two uniforms."""
    d = l + 1
    lo = max(config.a_s, config.a_e - d)
    hi = min(config.b_s, config.b_e - d)
    count = max(0, hi - lo + 1)
    return count / ((config.b_s - config.a_s + 1) * (config.b_e - config.a_e + 1))


def sinusoidal_embedding(values: torch.Tensor, dim: int, max_period: float = 10000.0) -> torch.Tensor:
    """(N,) -> (N, dim) with [cos | sin] halves over a geometric frequency ladder."""
    half = dim // 2
    freqs = torch.exp(-math.log(max_period) * torch.arange(half, dtype=torch.float64) / half)
    args = values.to(torch.float64)[:, None] * freqs[None]
    emb = torch.cat([torch.cos(args), torch.sin(args)], dim=-1)
    if dim % 2:
        emb = torch.cat([emb, torch.zeros_like(emb[:, :1])], dim=-1)
    return emb


def _mlp(dim: int) -> nn.Sequential:
    return nn.Sequential(nn.Linear(dim, 4 * dim), nn.SiLU(), nn.Linear(4 * dim, dim))


class ConditioningFuser(nn.Module):
    """sin(t) + MLP_len(sin(l scaled to the timestep range)) -> MLP_fuse."""

    def __init__(self, dim: int, T: int = 1000, max_length: int = 32):
        super().__init__()
        self.dim, self.T, self.max_length = dim, T, max_length
        self.length_mlp = _mlp(dim)
        self.fuse_mlp = _mlp(dim)

    def forward(self, t: int, length: int) -> torch.Tensor:
        if not 1 <= t <= self.T:
            raise ValueError(f"timestep {t} outside [1, {self.T}]")
        if not 1 <= length <= self.max_length - 2:
            raise ValueError(f"length {length} outside [1, {self.max_length - 2}]")
        dtype = self.fuse_mlp[0].weight.dtype
        t_emb = sinusoidal_embedding(torch.tensor([float(t)]), self.dim).to(dtype)
        scaled = torch.tensor([length * self.T / self.max_length])
        l_emb = self.length_mlp(sinusoidal_embedding(scaled, self.dim).to(dtype))
        return self.fuse_mlp(t_emb + l_emb)[0]


def fuse_conditioning(fuser: ConditioningFuser, t: int, length: int) -> torch.Tensor:
    return fuser(t, length)
