"""Checkpoint directories: ``manifest.json`` plus one native tensor file per parameter."""

from __future__ import annotations

import json
import os
import re
from pathlib import Path

import numpy as np
import torch

from .tensorio import read_tensor, write_tensor
from .unet import Denoiser, DenoiserConfig

FORMAT = "vidinfill-checkpoint/1"


def _fname(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]", "_", name) + ".vtns"


def save_checkpoint(
    directory: str | os.PathLike,
    model: Denoiser,
    step: int,
    seed: int,
    metric_history: list | None = None,
    extra: dict | None = None,
) -> Path:
    directory = Path(directory)
    (directory / "params").mkdir(parents=True, exist_ok=True)
    params = {}
    for name, tensor in model.state_dict().items():
        fname = _fname(name)
        write_tensor(directory / "params" / fname, tensor.detach().cpu().numpy())
        params[name] = fname
    manifest = {
        "format": FORMAT,
        "step": int(step),
        "seed": int(seed),
        "config": model.cfg.to_dict(),
        "metric_history": metric_history or [],
        "params": params,
    }
    if extra:
        manifest.update(extra)
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=1))
    return directory


def load_checkpoint(directory: str | os.PathLike) -> tuple[Denoiser, dict]:
    directory = Path(directory)
    path = directory / "manifest.json"
    if not path.is_file():
        raise FileNotFoundError(f"no checkpoint manifest at {path}")
    manifest = json.loads(path.read_text())
    if manifest.get("format") != FORMAT:
        raise ValueError(f"{path}: unsupported checkpoint format {manifest.get('format')!r}")
    cfg = DenoiserConfig(**manifest["config"])
    model = Denoiser(cfg)
    state = {name: torch.from_numpy(read_tensor(directory / "params" / fname)) for name, fname in manifest["params"].items()}
    model.load_state_dict(state)
    model.eval()
    return model, manifest
