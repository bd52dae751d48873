"""Training, infilling, multi-clip splicing and evaluation."""

from __future__ import annotations

import json
import logging
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch

from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig
from .curation import shot_filter
from .diffusion import NoiseSchedule, make_noised_batch, masked_loss, sample_infill, sampling_timesteps
from .errors import DivergenceError
from .gfm import GfmConfig, mix_init
from .guidance import ToyImageEmbedder, build_guidance
from .media import (
    ClipPartition,
    PixelVideo,
    Segment,
    SyntheticSceneSpec,
    decode,
    encode,
    from_diffusion_range,
    generate_synthetic,
    load_video,
    subsample_clips,
    to_diffusion_range,
)
from .metrics import SSIMSimilarity, clip_rs, clipsim, ms_ssim, psnr, MetricReport
from .sampling import BoundarySamplerConfig, sample_boundaries
from .unet import Denoiser, DenoiserConfig

log = logging.getLogger(__name__)


def denoiser_config(cfg: RunConfig) -> DenoiserConfig:
    m = cfg.model
    return DenoiserConfig(
        in_channels=48,
        base_channels=m.base_channels,
        channel_mult=tuple(m.channel_mult),
        heads=m.heads,
        context_dim=m.context_dim,
        temporal_kernel=m.temporal_kernel,
        T=cfg.diffusion.T,
        max_length=cfg.data.clip_length,
        beta_start=cfg.diffusion.beta_start,
        beta_end=cfg.diffusion.beta_end,
    )


def schedule_from(cfg: RunConfig) -> NoiseSchedule:
    d = cfg.diffusion
    return NoiseSchedule.linear(d.T, d.beta_start, d.beta_end)


def synthetic_corpus(cfg: RunConfig) -> list[PixelVideo]:
    """Seeded scenes whose object changes direction a few times (the 'action transitions')."""
    d = cfg.data
    rng = np.random.default_rng(cfg.run.seed)
    videos = []
    for i in range(d.synthetic_videos):
        for _ in range(100):
            n_seg = int(rng.integers(2, 4))
            cuts = np.sort(rng.choice(np.arange(1, d.synthetic_length - 1), n_seg - 1, replace=False))
            durs = np.diff(np.concatenate([[0], cuts, [d.synthetic_length - 1]]))
            speed = d.canvas / 64.0
            segs = [Segment(tuple(rng.uniform(-1, 1, 2) * speed), int(k)) for k in durs]
            try:
                spec = SyntheticSceneSpec(segs, kind=("disc", "square")[i % 2], size=d.canvas / 10,
                                          background_seed=cfg.run.seed * 1000 + i, canvas=(d.canvas, d.canvas))
            except ValueError:
                continue
            videos.append(generate_synthetic(spec, d.synthetic_length))
            break
    return videos


def training_clips(videos: Sequence[PixelVideo], clip_length: int, sample_rate: int) -> list[PixelVideo]:
    clips = []
    for i, v in enumerate(videos):
        candidates = subsample_clips(v, clip_length, sample_rate)
        if not candidates:
            log.info("video %d: %d frames, too short for a %d-frame clip at rate %d; discarded", i, len(v), clip_length, sample_rate)
        for j, clip in enumerate(candidates):
            if shot_filter(clip, min_length=clip_length):
                clips.append(clip)
            else:
                log.info("video %d clip %d: shot transition detected; excluded", i, j)
    return clips


@dataclass
class TrainResult:
    model: Denoiser
    history: list[dict]
    checkpoints: list[Path] = field(default_factory=list)


class _GuidanceCache:
    def __init__(self, embedder, prompt: str):
        self.embedder, self.prompt, self._cache = embedder, prompt, {}

    def __call__(self, clip_idx: int, frames: np.ndarray, s: int, e: int) -> torch.Tensor:
        key = (clip_idx, s, e)
        if key not in self._cache:
            g = build_guidance(frames[s], frames[e], self.prompt or None, self.embedder)
            self._cache[key] = torch.tensor(g.tokens, dtype=torch.float32)
        return self._cache[key]


def train(cfg: RunConfig, videos: Sequence[PixelVideo] | None = None, out_dir: str | Path | None = None) -> TrainResult:
    """Fit the denoiser on masked intermediate-clip noise prediction.

    Each step draws a clip, a timestep and a boundary pair; only the frames between the
    boundaries are noised and scored.
    """
    cfg.validate()
    out = Path(out_dir or cfg.run.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg.write(out / "config.ini")

    torch.manual_seed(cfg.run.seed)
    rng = np.random.default_rng(cfg.run.seed)
    gen = torch.Generator().manual_seed(cfg.run.seed)

    if videos is None:
        videos = [load_video(p) for p in cfg.data.paths] if cfg.data.paths else synthetic_corpus(cfg)
    clips = training_clips(videos, cfg.data.clip_length, cfg.data.sample_rate)
    if not clips:
        raise ValueError("no usable training clips after length and shot filtering")
    log.info("training on %d clips", len(clips))
    latents = [to_diffusion_range(encode(c).z.to(torch.float32)) for c in clips]

    schedule = schedule_from(cfg)
    bounds = BoundarySamplerConfig.from_length_range(cfg.sampler.l_lower, cfg.sampler.l_upper, cfg.data.clip_length)
    model = Denoiser(denoiser_config(cfg))
    opt = torch.optim.AdamW(model.parameters(), lr=cfg.optim.lr, weight_decay=cfg.optim.weight_decay)
    guide = None
    if cfg.guidance.enabled:
        guide = _GuidanceCache(ToyImageEmbedder(cfg.model.context_dim, cfg.guidance.k_img, cfg.guidance.seed), cfg.data.prompt)

    history: list[dict] = []
    ckpts: list[Path] = []
    metrics_log = open(out / "metrics.jsonl", "w")
    try:
        for step in range(1, cfg.run.max_steps + 1):
            loss = 0.0
            for _ in range(cfg.optim.batch):
                ci = int(rng.integers(len(clips)))
                t = int(rng.integers(1, schedule.T + 1))
                part = sample_boundaries(bounds, rng)
                batch = make_noised_batch(latents[ci], part, t, schedule, gen)
                tokens = guide(ci, clips[ci].frames, part.s, part.e) if guide else None
                loss = loss + masked_loss(model(batch.z_t, t, part.length, tokens), batch) / cfg.optim.batch
            if not torch.isfinite(loss):
                diag = save_checkpoint(out / f"diverged_{step:06d}", model, step, cfg.run.seed, history)
                raise DivergenceError(f"non-finite loss at step {step}; diagnostic checkpoint at {diag}")
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
            rec = {"step": step, "loss": loss.item()}
            if cfg.optim.batch == 1:
                rec.update(t=t, l=part.length)
            history.append(rec)
            metrics_log.write(json.dumps(rec) + "\n")
            if cfg.run.eval_every and step % cfg.run.eval_every == 0:
                recent = [h["loss"] for h in history[-cfg.run.eval_every :]]
                log.info("step %d  mean loss %.4f", step, float(np.mean(recent)))
            if (cfg.run.ckpt_every and step % cfg.run.ckpt_every == 0) or step == cfg.run.max_steps:
                path = save_checkpoint(out / f"ckpt_{step:06d}", model, step, cfg.run.seed, _compact(history))
                cfg.write(path / "config.ini")
                ckpts.append(path)
    finally:
        metrics_log.close()
    model.eval()
    return TrainResult(model, history, ckpts)


def _compact(history: list[dict], every: int = 50) -> list[dict]:
    return [h for h in history if h["step"] % every == 0]


class InfillModel:
    """A trained denoiser plus everything needed to generate transitions from pixels."""

    def __init__(self, model: Denoiser, cfg: RunConfig):
        self.model, self.cfg = model, cfg
        self.schedule = schedule_from(cfg)
        self.embedder = ToyImageEmbedder(cfg.model.context_dim, cfg.guidance.k_img, cfg.guidance.seed)
        self.gfm = GfmConfig(cfg.gfm.f0, cfg.gfm.lam)

    @classmethod
    def from_checkpoint(cls, directory: str | Path) -> "InfillModel":
        model, _ = load_checkpoint(directory)
        cfg_path = Path(directory) / "config.ini"
        cfg = RunConfig.load(cfg_path) if cfg_path.is_file() else RunConfig()
        return cls(model, cfg)

    def infill(
        self,
        preceding: PixelVideo,
        following: PixelVideo,
        l: int,
        use_gfm: bool | None = None,
        use_bfg: bool | None = None,
        seed: int = 0,
        steps: int | None = None,
        return_latent: bool = False,
    ):
        use_gfm = self.cfg.gfm.enabled if use_gfm is None else use_gfm
        use_bfg = self.cfg.guidance.enabled if use_bfg is None else use_bfg
        if not self.cfg.sampler.l_lower <= l <= self.cfg.sampler.l_upper:
            warnings.warn(
                f"infill length {l} outside trained range [{self.cfg.sampler.l_lower}, {self.cfg.sampler.l_upper}]",
                stacklevel=2,
            )
        z_p = to_diffusion_range(encode(preceding).z.to(torch.float32))
        z_f = to_diffusion_range(encode(following).z.to(torch.float32))
        part = ClipPartition(len(preceding) - 1, len(preceding) + l, len(preceding) + l + len(following))
        z_ref = torch.cat([z_p, torch.zeros((l,) + tuple(z_p.shape[1:])), z_f])
        tokens = None
        if use_bfg:
            g = build_guidance(preceding.frames[-1], following.frames[0], self.cfg.data.prompt or None, self.embedder)
            tokens = torch.tensor(g.tokens, dtype=torch.float32)
        steps = self.cfg.diffusion.sample_steps if steps is None else steps
        gen = torch.Generator().manual_seed(seed)
        if use_gfm and steps > 0:
            t0 = sampling_timesteps(self.schedule, steps)[0]
            init = mix_init(z_ref[part.s], z_ref[part.e], part, t0, self.schedule, self.gfm, gen)
        else:
            init = torch.randn((l,) + tuple(z_p.shape[1:]), generator=gen)
        z = sample_infill(self.model, z_ref, part, init, tokens, steps, self.schedule, eta=self.cfg.diffusion.eta, generator=gen)
        mid = z[part.intermediate]
        video = decode(from_diffusion_range(mid), fps=preceding.fps)
        return (video, mid) if return_latent else video


@dataclass
class SpliceJob:
    clips: list[PixelVideo]
    length: int = 12
    mode: str = "replace-junction"  # or "insert-noise"

    def __post_init__(self):
        if len(self.clips) < 2:
            raise ValueError("splicing needs at least two clips")
        if self.mode not in ("replace-junction", "insert-noise"):
            raise ValueError(f"unknown splice mode {self.mode!r}")
        if self.length < 1:
            raise ValueError("regeneration length must be >= 1")


def junction_windows(lengths: Sequence[int], length: int) -> list[tuple[int, int]]:
    """Half-open windows of ``length`` frames centred on each junction of the concatenation."""
    left = length // 2
    right = length - left
    starts = np.cumsum([0] + list(lengths))
    windows = []
    for k in range(1, len(lengths)):
        j = int(starts[k])
        windows.append((j - left, j + right))
    for k, n in enumerate(lengths):
        need = (right if k > 0 else 0) + (left if k < len(lengths) - 1 else 0)
        # every clip keeps at least one untouched frame at the outer ends so boundaries exist
        outer = int(k == 0) + int(k == len(lengths) - 1)
        if need + outer > n:
            raise ValueError(f"regeneration windows exceed clip {k} ({n} frames)")
    return windows


def splice(infiller: InfillModel, job: SpliceJob, seed: int = 0, context: int | None = None) -> PixelVideo:
    lo, hi = infiller.cfg.sampler.l_lower, infiller.cfg.sampler.l_upper
    if not lo <= job.length <= hi:
        raise ValueError(f"regeneration length {job.length} outside trained range [{lo}, {hi}]")
    ctx = context or max(1, (infiller.cfg.data.clip_length - job.length) // 2)

    if job.mode == "insert-noise":
        video = job.clips[0]
        for k, nxt in enumerate(job.clips[1:]):
            pre = video[max(0, len(video) - ctx) :]
            post = nxt[: min(ctx, len(nxt))]
            mid = infiller.infill(pre, post, job.length, seed=seed + k)
            video = PixelVideo.concat([video, mid, nxt])
        return video

    lengths = [len(c) for c in job.clips]
    windows = junction_windows(lengths, job.length)
    frames = np.concatenate([c.frames for c in job.clips]).copy()
    for k, (a, b) in enumerate(windows):
        pre = PixelVideo(frames[max(0, a - ctx) : a], job.clips[0].fps)
        post = PixelVideo(frames[b : b + ctx], job.clips[0].fps)
        frames[a:b] = infiller.infill(pre, post, b - a, seed=seed + k).frames
    return PixelVideo(frames, job.clips[0].fps)


# -- evaluation -------------------------------------------------------------

Generator = Callable[[PixelVideo, PixelVideo, int], PixelVideo]


def score_intermediate(generated: PixelVideo, ground_truth: PixelVideo, embedder=None) -> dict:
    """Metrics between two intermediate clips (references must already be stripped)."""
    embedder = embedder or ToyImageEmbedder()
    scores = {"psnr": psnr(generated, ground_truth), "clipsim": clipsim(generated, ground_truth, embedder)}
    if min(generated.shape[1:3]) >= 32:
        scores["ms_ssim"] = ms_ssim(generated, ground_truth)
    if len(generated) >= 2:
        scores["clip_rs"] = clip_rs(generated, ground_truth, SSIMSimilarity())
    return scores


def score_partitioned(generated_full: PixelVideo, gt_full: PixelVideo, partition: ClipPartition, embedder=None) -> dict:
    mid = partition.intermediate
    return score_intermediate(generated_full[mid], gt_full[mid], embedder)


def evaluate(generate: Generator, entries: Sequence[dict], videos: dict[str, PixelVideo], config_echo: dict | None = None) -> MetricReport:
    """Infill every manifest entry and score the intermediate frames only."""
    report = MetricReport(config=config_echo or {})
    embedder = ToyImageEmbedder()
    for entry in entries:
        sid = f"{entry.get('video_id')}:{entry.get('s')}-{entry.get('e')}"
        try:
            video = videos[entry["video_id"]]
            part = ClipPartition(int(entry["s"]), int(entry["e"]), len(video))
            gen = generate(video[: part.s + 1], video[part.e :], part.length)
            if len(gen) != part.length:
                raise ValueError(f"generator returned {len(gen)} frames, expected {part.length}")
            report.add(sid, score_intermediate(gen, video[part.intermediate], embedder))
        except (KeyError, ValueError) as exc:
            log.warning("skipping %s: %s", sid, exc)
    return report


def plot_report(report: MetricReport, out_dir: str | Path, history: Sequence[dict] | None = None) -> list[Path]:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    if history:
        steps = [h["step"] for h in history]
        losses = np.asarray([h["loss"] for h in history])
        window = max(1, len(losses) // 50)
        smooth = np.convolve(losses, np.ones(window) / window, mode="valid")
        fig, ax = plt.subplots(figsize=(6, 3.5))
        ax.plot(steps, losses, alpha=0.3, lw=0.8)
        ax.plot(steps[window - 1 :], smooth, lw=1.5)
        ax.set_xlabel("step")
        ax.set_ylabel("masked loss")
        ax.set_yscale("log")
        fig.tight_layout()
        fig.savefig(out_dir / "loss.png", dpi=100)
        plt.close(fig)
        written.append(out_dir / "loss.png")
    agg = report.aggregate
    if agg:
        keys = [k for k in agg if k != "psnr"]
        fig, axes = plt.subplots(1, 2, figsize=(8, 3.5), gridspec_kw={"width_ratios": [max(len(keys), 1), 1]})
        axes[0].bar(keys, [agg[k] for k in keys])
        axes[0].set_ylim(0, 1.05)
        axes[1].bar(["psnr"], [agg.get("psnr", 0.0)])
        fig.tight_layout()
        fig.savefig(out_dir / "metrics.png", dpi=100)
        plt.close(fig)
        written.append(out_dir / "metrics.png")
    return written
