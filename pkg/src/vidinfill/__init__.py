"""Transition-video infilling with a masked video diffusion model at desk scale."""

from .diffusion import NoiseSchedule, make_noised_batch, masked_loss, q_sample, sample_infill
from .gfm import GfmConfig, gaussian_mask, mix_init, stop_frequency
from .guidance import GuidanceTokens, ToyImageEmbedder, build_guidance
from .media import ClipPartition, LatentVideo, PixelVideo, SyntheticSceneSpec, decode, encode, generate_synthetic
from .metrics import clip_rs, clipsim, ms_ssim, psnr
from .sampling import BoundarySamplerConfig, sample_boundaries, triangular_pdf
from .unet import Denoiser, DenoiserConfig, count_params

__version__ = "0.1.0"
