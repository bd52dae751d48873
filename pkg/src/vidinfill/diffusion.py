"""Forward noising of the intermediate clip, masked noise-prediction loss, and the reverse sampler."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import torch

from .errors import DivergenceError, PartitionError, ShapeError, TimestepError
from .media import ClipPartition

# denoiser(z_t, t, length, guidance_tokens) -> predicted noise with the shape of z_t
Denoiser = Callable[[torch.Tensor, int, int, Optional[torch.Tensor]], torch.Tensor]


@dataclass(frozen=True)
class NoiseSchedule:
    betas: np.ndarray

    def __post_init__(self):
        betas = np.asarray(self.betas, dtype=np.float64)
        if betas.ndim != 1 or betas.size < 1:
            raise ValueError("betas must be a non-empty 1-D sequence")
        if not np.all((betas > 0) & (betas < 1)):
            raise ValueError("every beta must lie strictly inside (0, 1)")
        alpha_bars = np.cumprod(1.0 - betas)
        if np.any(np.diff(alpha_bars) >= 0):
            raise ValueError("alpha_bar must be strictly decreasing")
        if alpha_bars[-1] >= 0.01:
            raise ValueError(f"final alpha_bar {alpha_bars[-1]:.4g} leaves too much signal (need < 0.01)")
        object.__setattr__(self, "betas", betas)
        object.__setattr__(self, "alpha_bars", alpha_bars)

    @classmethod
    def linear(cls, T: int = 1000, beta_start: float = 1e-4, beta_end: float = 0.02) -> "NoiseSchedule":
        return cls(np.linspace(beta_start, beta_end, T))

    @property
    def T(self) -> int:
        return self.betas.size

    def alpha_bar(self, t: int) -> float:
        """``alpha_bar`` at step ``t``; step 0 is the clean signal."""
        if not 0 <= t <= self.T:
            raise TimestepError(f"timestep {t} outside [0, {self.T}]")
        return 1.0 if t == 0 else float(self.alpha_bars[t - 1])


def diffuse(z0: torch.Tensor, eps: torch.Tensor, alpha_bar: float) -> torch.Tensor:
    return np.sqrt(alpha_bar) * z0 + np.sqrt(1.0 - alpha_bar) * eps


def q_sample(z0: torch.Tensor, t: int, eps: torch.Tensor, schedule: NoiseSchedule) -> torch.Tensor:
    if not 1 <= t <= schedule.T:
        raise TimestepError(f"timestep {t} outside [1, {schedule.T}]")
    if eps.shape != z0.shape:
        raise ShapeError(f"noise shape {tuple(eps.shape)} != latent shape {tuple(z0.shape)}")
    return diffuse(z0, eps, schedule.alpha_bar(t))


@dataclass
class NoisedBatch:
    z_t: torch.Tensor  # full sequence, references clean
    partition: ClipPartition
    t: int
    eps: torch.Tensor  # noise applied to the intermediate frames only


def make_noised_batch(
    z0: torch.Tensor,
    partition: ClipPartition,
    t: int,
    schedule: NoiseSchedule,
    generator: torch.Generator | None = None,
) -> NoisedBatch:
    if partition.L != z0.shape[0]:
        raise PartitionError(f"partition length {partition.L} != latent length {z0.shape[0]}")
    mid = partition.intermediate
    eps = torch.randn(z0[mid].shape, generator=generator, dtype=z0.dtype)
    z_t = z0.clone()
    z_t[mid] = q_sample(z0[mid], t, eps, schedule)
    return NoisedBatch(z_t, partition, t, eps)


def masked_loss(pred_noise: torch.Tensor, batch: NoisedBatch) -> torch.Tensor:
    """Mean squared error over the noised frames only."""
    if pred_noise.shape != batch.z_t.shape:
        raise ShapeError(f"prediction shape {tuple(pred_noise.shape)} != input shape {tuple(batch.z_t.shape)}")
    return ((pred_noise[batch.partition.intermediate] - batch.eps) ** 2).mean()


def sampling_timesteps(schedule: NoiseSchedule, steps: int) -> list[int]:
    """Descending, evenly spaced timesteps from T down to 1."""
    if steps <= 0:
        return []
    ts = np.unique(np.round(np.linspace(1, schedule.T, min(steps, schedule.T))).astype(int))
    return [int(t) for t in ts[::-1]]


@torch.no_grad()
def sample_infill(
    model: Denoiser,
    z_ref: torch.Tensor,
    partition: ClipPartition,
    init_noise: torch.Tensor,
    guidance: torch.Tensor | None,
    steps: int,
    schedule: NoiseSchedule,
    eta: float = 0.0,
    clip_x0: bool = True,
    generator: torch.Generator | None = None,
) -> torch.Tensor:
    """DDIM-style reverse process over the intermediate clip.

    Reference positions are reset to ``z_ref`` before every model call and in the
    output, so the network always sees clean boundaries like it did in training.
    ``eta=0`` is deterministic; ``eta=1`` gives ancestral DDPM-like stepping.
    """
    mid = partition.intermediate
    if partition.L != z_ref.shape[0]:
        raise PartitionError(f"partition length {partition.L} != reference length {z_ref.shape[0]}")
    if init_noise.shape != z_ref[mid].shape:
        raise ShapeError(f"init noise shape {tuple(init_noise.shape)} != intermediate shape {tuple(z_ref[mid].shape)}")

    ref_mask = torch.from_numpy(partition.reference_mask())
    z = z_ref.clone()
    z[mid] = init_noise.to(z.dtype)
    ts = sampling_timesteps(schedule, steps)
    for i, t in enumerate(ts):
        t_prev = ts[i + 1] if i + 1 < len(ts) else 0
        ab, ab_prev = schedule.alpha_bar(t), schedule.alpha_bar(t_prev)
        z[ref_mask] = z_ref[ref_mask]
        eps = model(z, t, partition.length, guidance)[mid]
        x = z[mid]
        x0 = (x - np.sqrt(1.0 - ab) * eps) / np.sqrt(ab)
        if clip_x0:
            x0 = x0.clamp(-1.0, 1.0)
            eps = (x - np.sqrt(ab) * x0) / np.sqrt(1.0 - ab)
        sigma = eta * np.sqrt((1.0 - ab_prev) / (1.0 - ab) * (1.0 - ab / ab_prev))
        x = np.sqrt(ab_prev) * x0 + np.sqrt(max(1.0 - ab_prev - sigma**2, 0.0)) * eps
        if sigma > 0:
            x = x + sigma * torch.randn(x.shape, generator=generator, dtype=x.dtype)
        if not torch.isfinite(x).all():
            raise DivergenceError(f"non-finite latent at sampler step {i} (t={t})")
        z[mid] = x
    z[ref_mask] = z_ref[ref_mask]
    return z
