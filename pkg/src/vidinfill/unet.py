"""Toy spatiotemporal denoiser.

Frames are processed as a batch by the spatial layers (conv, self-attention,
cross-attention on guidance tokens) and mixed along the frame axis by global
temporal attention plus a short temporal convolution.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import DivergenceError, ShapeError
from .sampling import ConditioningFuser, sinusoidal_embedding


@dataclass
class DenoiserConfig:
    in_channels: int = 48
    base_channels: int = 32
    channel_mult: tuple[int, ...] = (1, 2, 4)
    heads: int = 4
    context_dim: int = 64
    temporal_kernel: int = 3
    T: int = 1000
    max_length: int = 32
    beta_start: float = 1e-4
    beta_end: float = 0.02
    sigma_data: float = 0.5

    def __post_init__(self):
        self.channel_mult = tuple(int(m) for m in self.channel_mult)
        if len(self.channel_mult) < 2:
            raise ValueError("need at least two resolution levels")
        ints = (self.in_channels, self.base_channels, self.heads, self.context_dim, self.temporal_kernel, self.T)
        if min(ints) < 1 or min(self.channel_mult) < 1:
            raise ValueError("all config sizes must be positive")
        if self.sigma_data <= 0:
            raise ValueError("sigma_data must be positive")
        if self.temporal_kernel % 2 == 0:
            raise ValueError("temporal_kernel must be odd")
        for m in self.channel_mult:
            if (self.base_channels * m) % self.heads:
                raise ValueError(f"channel width {self.base_channels * m} not divisible by {self.heads} heads")

    @property
    def levels(self) -> int:
        return len(self.channel_mult)

    @property
    def cond_dim(self) -> int:
        return 4 * self.base_channels

    def to_dict(self) -> dict:
        return asdict(self)


def _norm(ch: int) -> nn.GroupNorm:
    return nn.GroupNorm(math.gcd(8, ch), ch)


class ResBlock(nn.Module):
    """Conv residual block; the fused (t, l) vector enters as a feature-wise scale and shift."""

    def __init__(self, ch_in: int, ch_out: int, cond_dim: int):
        super().__init__()
        self.norm1 = _norm(ch_in)
        self.conv1 = nn.Conv2d(ch_in, ch_out, 3, padding=1)
        self.film = nn.Linear(cond_dim, 2 * ch_out)
        self.norm2 = _norm(ch_out)
        self.conv2 = nn.Conv2d(ch_out, ch_out, 3, padding=1)
        self.skip = nn.Conv2d(ch_in, ch_out, 1) if ch_in != ch_out else nn.Identity()

    def forward(self, x, cond):
        h = self.conv1(F.silu(self.norm1(x)))
        scale, shift = self.film(F.silu(cond)).chunk(2, dim=-1)
        h = self.norm2(h) * (1 + scale[None, :, None, None]) + shift[None, :, None, None]
        h = self.conv2(F.silu(h))
        return self.skip(x) + h


class Attention(nn.Module):
    """Multi-head attention over (B, N, C) queries and (B, M, C_kv) keys/values."""

    def __init__(self, dim: int, heads: int, kv_dim: int | None = None):
        super().__init__()
        kv_dim = kv_dim or dim
        self.heads = heads
        self.to_q = nn.Linear(dim, dim)
        self.to_k = nn.Linear(kv_dim, dim)
        self.to_v = nn.Linear(kv_dim, dim)
        self.to_out = nn.Linear(dim, dim)

    def forward(self, x, ctx=None):
        ctx = x if ctx is None else ctx
        B, N, C = x.shape
        q = self.to_q(x).view(B, N, self.heads, -1).transpose(1, 2)
        k = self.to_k(ctx).view(B, ctx.shape[1], self.heads, -1).transpose(1, 2)
        v = self.to_v(ctx).view(B, ctx.shape[1], self.heads, -1).transpose(1, 2)
        w = torch.softmax(q @ k.transpose(-1, -2) / math.sqrt(q.shape[-1]), dim=-1)
        return self.to_out((w @ v).transpose(1, 2).reshape(B, N, C))

    def value_bias_path(self) -> torch.Tensor:
        """Output when every key/value input is zero: attention collapses onto the value bias."""
        return self.to_out(self.to_v.bias)


class SpatialSelfAttention(nn.Module):
    def __init__(self, ch: int, heads: int):
        super().__init__()
        self.norm = nn.LayerNorm(ch)
        self.attn = Attention(ch, heads)

    def forward(self, x):
        n, c, h, w = x.shape
        tokens = x.flatten(2).transpose(1, 2)
        out = self.attn(self.norm(tokens))
        return x + out.transpose(1, 2).reshape(n, c, h, w)


class CrossAttention(nn.Module):
    """Spatial tokens attend to guidance tokens; ``ctx=None`` takes the value-bias path."""

    def __init__(self, ch: int, heads: int, context_dim: int):
        super().__init__()
        self.context_dim = context_dim
        self.norm = nn.LayerNorm(ch)
        self.attn = Attention(ch, heads, kv_dim=context_dim)

    def forward(self, x, ctx):
        n, c, h, w = x.shape
        if ctx is None:
            return x + self.attn.value_bias_path()[None, :, None, None]
        if ctx.shape[-1] != self.context_dim:
            raise ShapeError(f"guidance width {ctx.shape[-1]} != context_dim {self.context_dim}")
        tokens = x.flatten(2).transpose(1, 2)
        out = self.attn(self.norm(tokens), ctx[None].expand(n, -1, -1))
        return x + out.transpose(1, 2).reshape(n, c, h, w)


class TemporalMixer(nn.Module):
    """Global attention along the frame axis (with frame-position encoding), then a temporal conv."""

    def __init__(self, ch: int, heads: int, kernel: int):
        super().__init__()
        self.norm = nn.LayerNorm(ch)
        self.attn = Attention(ch, heads)
        self.conv_norm = _norm(ch)
        self.conv = nn.Conv1d(ch, ch, kernel, padding=kernel // 2) if kernel > 1 else None

    def forward(self, x):
        n, c, h, w = x.shape
        seq = x.permute(2, 3, 0, 1).reshape(h * w, n, c)
        pos = sinusoidal_embedding(torch.arange(n), c).to(x.dtype)
        out = self.attn(self.norm(seq) + pos[None])
        x = x + out.reshape(h, w, n, c).permute(2, 3, 0, 1)
        if self.conv is not None:
            seq = F.silu(self.conv_norm(x)).permute(2, 3, 1, 0).reshape(h * w, c, n)
            x = x + self.conv(seq).reshape(h, w, c, n).permute(3, 2, 0, 1)
        return x


class STBlock(nn.Module):
    def __init__(self, ch_in: int, ch_out: int, cfg: DenoiserConfig):
        super().__init__()
        self.res = ResBlock(ch_in, ch_out, cfg.cond_dim)
        self.spatial = SpatialSelfAttention(ch_out, cfg.heads)
        self.cross = CrossAttention(ch_out, cfg.heads, cfg.context_dim)
        self.temporal = TemporalMixer(ch_out, cfg.heads, cfg.temporal_kernel)

    def forward(self, x, cond, ctx):
        x = self.res(x, cond)
        x = self.spatial(x)
        x = self.cross(x, ctx)
        return self.temporal(x)


class SpatioTemporalUNet(nn.Module):
    def __init__(self, cfg: DenoiserConfig):
        super().__init__()
        self.cfg = cfg
        chs = [cfg.base_channels * m for m in cfg.channel_mult]
        self.conv_in = nn.Conv2d(cfg.in_channels, chs[0], 3, padding=1)
        self.down = nn.ModuleList()
        self.downsample = nn.ModuleList()
        prev = chs[0]
        for i, ch in enumerate(chs):
            self.down.append(STBlock(prev, ch, cfg))
            if i < len(chs) - 1:
                self.downsample.append(nn.Conv2d(ch, ch, 3, stride=2, padding=1))
            prev = ch
        self.mid = STBlock(prev, prev, cfg)
        self.up = nn.ModuleList()
        self.upsample = nn.ModuleList()
        for i in reversed(range(len(chs))):
            self.up.append(STBlock(prev + chs[i], chs[i], cfg))
            prev = chs[i]
            if i > 0:
                self.upsample.append(nn.Conv2d(chs[i], chs[i - 1], 3, padding=1))
                prev = chs[i - 1]
        self.norm_out = _norm(chs[0])
        self.conv_out = nn.Conv2d(chs[0], cfg.in_channels, 3, padding=1)
        # Full-width linear path from input to output. The trunk starts narrower than the
        # latent (32 < 48 channels by default), so per-cell noise cannot pass through it.
        # Zero at init; Denoiser already adds the schedule-derived skip.
        self.skip_out = nn.Conv2d(cfg.in_channels, cfg.in_channels, 1)
        nn.init.zeros_(self.skip_out.weight)
        nn.init.zeros_(self.skip_out.bias)

    def forward(self, z: torch.Tensor, cond: torch.Tensor, ctx: torch.Tensor | None) -> torch.Tensor:
        """(n, h, w, ch) latent -> (n, h, w, ch) predicted noise."""
        if z.ndim != 4 or z.shape[-1] != self.cfg.in_channels:
            raise ShapeError(f"expected (n, h, w, {self.cfg.in_channels}) input, got {tuple(z.shape)}")
        factor = 2 ** (self.cfg.levels - 1)
        if z.shape[1] % factor or z.shape[2] % factor:
            raise ShapeError(f"latent size {tuple(z.shape[1:3])} not divisible by {factor}")
        z_in = z.permute(0, 3, 1, 2)
        x = self.conv_in(z_in)
        skips = []
        for i, block in enumerate(self.down):
            x = block(x, cond, ctx)
            skips.append(x)
            if i < len(self.downsample):
                x = self.downsample[i](x)
        x = self.mid(x, cond, ctx)
        for j, block in enumerate(self.up):
            x = block(torch.cat([x, skips.pop()], dim=1), cond, ctx)
            if j < len(self.upsample):
                x = self.upsample[j](F.interpolate(x, scale_factor=2.0, mode="nearest"))
        out = (self.conv_out(F.silu(self.norm_out(x))) + self.skip_out(z_in)).permute(0, 2, 3, 1)
        if not torch.isfinite(out).all():
            raise DivergenceError("non-finite activations in denoiser output")
        return out


class Denoiser(nn.Module):
    """Conditioning fuser + U-Net behind the ``(z_t, t, length, guidance)`` call signature.

    The output is still a noise prediction, assembled as
    ``c_skip(t) * z_t + c_out(t) * unet(z_t)``. ``c_skip`` is the best linear guess of the
    noise from ``z_t`` for latents of std ``sigma_data``; ``c_out`` is the std of what is
    left. Near t = T the target is almost exactly ``z_t`` and the x0 estimate divides
    noise errors by sqrt(alpha_bar), so an unscaled trunk is far too loud there.
    """

    def __init__(self, cfg: DenoiserConfig):
        super().__init__()
        self.cfg = cfg
        self.fuser = ConditioningFuser(cfg.cond_dim, cfg.T, cfg.max_length)
        self.unet = SpatioTemporalUNet(cfg)
        betas = np.linspace(cfg.beta_start, cfg.beta_end, cfg.T)
        self._alpha_bars = np.cumprod(1.0 - betas)

    def output_scales(self, t: int) -> tuple[float, float]:
        """(c_skip, c_out) at timestep ``t``."""
        ab = float(self._alpha_bars[t - 1])
        sig = ab * self.cfg.sigma_data**2
        denom = sig + 1.0 - ab
        return math.sqrt(1.0 - ab) / denom, math.sqrt(sig / denom)

    def forward(self, z_t: torch.Tensor, t: int, length: int, guidance=None) -> torch.Tensor:
        cond = self.fuser(t, length)
        ctx = None
        if guidance is not None:
            tokens = getattr(guidance, "tokens", guidance)
            ctx = torch.as_tensor(np.asarray(tokens) if not isinstance(tokens, torch.Tensor) else tokens)
            ctx = ctx.to(z_t.dtype)
        c_skip, c_out = self.output_scales(t)
        return c_skip * z_t + c_out * self.unet(z_t, cond, ctx)


def count_params(cfg: DenoiserConfig) -> int:
    with torch.device("meta"):
        model = Denoiser(cfg)
    return sum(p.numel() for p in model.parameters())
