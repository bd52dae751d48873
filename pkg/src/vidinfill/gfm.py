"""Gaussian filter mixer: inference-time noise initialisation for the intermediate clip.

Each intermediate frame keeps the low-frequency part of its nearest diffused
boundary latent and takes the high-frequency part from fresh Gaussian noise.
The low-pass bandwidth shrinks linearly with distance from that boundary.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np
import torch

from .diffusion import NoiseSchedule, q_sample
from .errors import ShapeError
from .media import ClipPartition


@dataclass(frozen=True)
class GfmConfig:
    f0: float = 0.6
    lam: float = 0.1

    def __post_init__(self):
        if not 0.0 <= self.f0 <= 1.0:
            raise ValueError(f"f0 must lie in [0, 1], got {self.f0}")
        if self.lam < 0:
            raise ValueError(f"decay coefficient must be >= 0, got {self.lam}")


def stop_frequency(n: int, s: int, e: int, config: GfmConfig) -> float:
    if not s < n < e:
        raise ValueError(f"frame {n} is not strictly between boundaries {s} and {e}")
    dist = min(abs(n - s), abs(n - e))
    return max(0.0, config.f0 - config.lam * dist * config.f0)


def _centered_coords(size: int) -> np.ndarray:
    # fftshift order, scaled so the coordinates span [-1, 1); DC sits at index size // 2.
    return 2.0 * np.fft.fftshift(np.fft.fftfreq(size))


@lru_cache(maxsize=256)
def _mask(fS: float, fT: float, dims: tuple[int, int, int]) -> np.ndarray:
    if fS == 0 or fT == 0:
        mask = np.zeros(dims)
    else:
        rt, rh, rw = (_centered_coords(d) for d in dims)
        spatial = (rh[:, None] ** 2 + rw[None, :] ** 2) / fS**2
        temporal = rt**2 / fT**2
        mask = np.exp(-0.5 * (spatial[None] + temporal[:, None, None]))
    mask.setflags(write=False)
    return mask


def gaussian_mask(fS: float, fT: float, dims: tuple[int, int, int]) -> np.ndarray:
    """3-D low-pass over centred (time, height, width) frequency bins; ``inf`` gives an all-pass mask."""
    if fS < 0 or fT < 0:
        raise ValueError("stop frequencies must be non-negative")
    return _mask(float(fS), float(fT), tuple(int(d) for d in dims))


def fft3(x: torch.Tensor) -> torch.Tensor:
    """Orthonormal, centred 3-D FFT over the leading (time, h, w) axes of an (l, h, w, c) volume."""
    return torch.fft.fftshift(torch.fft.fftn(x, dim=(0, 1, 2), norm="ortho"), dim=(0, 1, 2))


def ifft3(spec: torch.Tensor) -> torch.Tensor:
    return torch.fft.ifftn(torch.fft.ifftshift(spec, dim=(0, 1, 2)), dim=(0, 1, 2), norm="ortho")


StopFn = Callable[[int], "tuple[float, float]"]


def mix_from_diffused(
    zs_t: torch.Tensor,
    ze_t: torch.Tensor,
    noise: torch.Tensor,
    partition: ClipPartition,
    stop_fn: StopFn,
    return_imag: bool = False,
):
    """Mix already-diffused boundary latents (h, w, c) with an (l, h, w, c) noise volume.

    ``stop_fn(n)`` returns the (spatial, temporal) stop frequencies for absolute frame ``n``.
    """
    s, e, l = partition.s, partition.e, partition.length
    if noise.shape[0] != l or noise.shape[1:] != zs_t.shape or ze_t.shape != zs_t.shape:
        raise ShapeError("boundary latents and noise volume disagree in shape")
    dims = tuple(noise.shape[:3])
    work = torch.float64
    noise_spec = fft3(noise.to(work))
    ref_specs = {
        "s": fft3(zs_t.to(work)[None].expand(l, -1, -1, -1)),
        "e": fft3(ze_t.to(work)[None].expand(l, -1, -1, -1)),
    }
    out = torch.empty(noise.shape, dtype=work)
    max_imag = 0.0
    for k in range(l):
        n = s + 1 + k
        ref = ref_specs["s"] if n <= (s + e) / 2 else ref_specs["e"]
        fS, fT = stop_fn(n)
        g = torch.tensor(gaussian_mask(fS, fT, dims))[..., None]
        mixed = ifft3(ref * g + noise_spec * (1.0 - g))
        max_imag = max(max_imag, float(mixed.imag.abs().max()))
        out[k] = mixed.real[k]
    out = out.to(noise.dtype)
    return (out, max_imag) if return_imag else out


def mix_init(
    z_s: torch.Tensor,
    z_e: torch.Tensor,
    partition: ClipPartition,
    t: int,
    schedule: NoiseSchedule,
    config: GfmConfig,
    generator: torch.Generator | None = None,
    stop_fn: StopFn | None = None,
) -> torch.Tensor:
    """Initial latent for the intermediate frames given the clean boundary latents (h, w, c)."""
    if stop_fn is None:
        def stop_fn(n):
            f = stop_frequency(n, partition.s, partition.e, config)
            return f, f

    zs_t = q_sample(z_s, t, torch.randn(z_s.shape, generator=generator, dtype=z_s.dtype), schedule)
    ze_t = q_sample(z_e, t, torch.randn(z_e.shape, generator=generator, dtype=z_e.dtype), schedule)
    noise = torch.randn((partition.length,) + tuple(z_s.shape), generator=generator, dtype=z_s.dtype)
    return mix_from_diffused(zs_t, ze_t, noise, partition, stop_fn)
