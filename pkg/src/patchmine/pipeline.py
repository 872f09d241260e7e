"""End-to-end forward pass: image -> dual encoders -> (extension) -> mining."""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .encoder import (ConfigError, EncoderConfig, EncoderWeights, derive_lr, encode_hr,
                      encode_lr)
from .extension import build_extended_batch, build_view_maps, encode_extended, mine_extended
from .io import read_ppm, tensor_checksum, write_tensor
from .mining import MiningWeights, build_subregion_map, gather_kv, mine
from .tensor import Rng, bilinear_resize

PRECISIONS = {"f64": np.float64, "f32": np.float32}


@dataclass(frozen=True)
class RunConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    extended: bool = False
    seed: int = 0
    precision: str = "f64"
    output_dir: Path | None = None

    def validate(self) -> "RunConfig":
        self.encoder.validate()
        if self.precision not in PRECISIONS:
            raise ConfigError(f"precision must be one of {sorted(PRECISIONS)}, got {self.precision!r}")
        if self.extended:
            build_view_maps(self.encoder)
            if self.encoder.hr_size < 2 * self.encoder.lr_size:
                raise ConfigError("config violates rule: hrSize >= 2*lrSize for token extension")
        return self

    @property
    def dtype(self):
        return PRECISIONS[self.precision]


def synthetic_image(size: int, seed: int = 0, kind: str = "noise") -> np.ndarray:
    """Deterministic test image in [0, 1].

    ``ramp``: per-channel linear gradients. ``noise``: a 16x16x3 grid of
    seeded uniform values, bilinearly resized to ``size``.
    """
    if kind == "ramp":
        yy, xx = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
        base = (yy + xx) / max(2 * (size - 1), 1)
        return np.stack([base, yy / max(size - 1, 1), xx / max(size - 1, 1)], axis=-1)
    if kind == "noise":
        coarse = Rng(seed).uniform_array((16, 16, 3))
        return bilinear_resize(coarse, size, size)
    raise ValueError(f"unknown synthetic image kind {kind!r}")


def run_forward(run: RunConfig, image: np.ndarray | str | os.PathLike | None = None,
                synthetic: str = "noise") -> tuple[dict, np.ndarray]:
    """Run the whole front-end and return ``(summary, T_V)``.

    Encoder weights come from ``Rng(seed)`` and mining weights from its
    first child stream, so one seed fixes every parameter.
    """
    run.validate()
    cfg = replace(run.encoder, seed=run.seed)
    dtype = run.dtype
    if image is None:
        img = synthetic_image(cfg.hr_size, run.seed, synthetic)
    elif isinstance(image, np.ndarray):
        img = image
    else:
        img = read_ppm(image)
    if img.shape != (cfg.hr_size, cfg.hr_size, 3):
        raise ConfigError(f"image must be {cfg.hr_size}x{cfg.hr_size}x3 to match hrSize, got {img.shape}")
    img = img.astype(dtype)

    enc_w = EncoderWeights.init(cfg, dtype)
    mine_w = MiningWeights.init(cfg.channels, seed=Rng(run.seed).child(0).seed, dtype=dtype)
    grid = encode_hr(img, cfg, enc_w)

    summary = {"N": cfg.num_patches, "S": cfg.hr_side, "M": cfg.window}
    if run.extended:
        maps = build_view_maps(cfg)
        tokens = encode_extended(build_extended_batch(img, cfg), cfg, enc_w)
        out = mine_extended(tokens, grid, maps, mine_w)
        summary["Mq"] = maps.quadrant_window
    else:
        tokens = encode_lr(derive_lr(img, cfg), cfg, enc_w)
        k, v = gather_kv(grid, build_subregion_map(cfg.grid, cfg.window))
        out = mine(tokens, k, v, mine_w)

    tv = out.data
    summary["tokenCount"] = int(tv.shape[0])
    summary["checksum"] = tensor_checksum(tv)
    if run.output_dir is not None:
        os.makedirs(run.output_dir, exist_ok=True)
        write_tensor(Path(run.output_dir) / "tv.tensor", tv)
    return summary, tv
