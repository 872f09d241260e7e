"""5N visual token extension.

Alongside the global LR view, the image is resized to twice the LR side
and cut into four LR-sized quadrants, giving five views and ``5N`` tokens.
Global-view patches mine ``M_g x M_g`` windows of the full HR grid
(``M_g = S / n``); each quadrant view mines ``M_q x M_q`` windows inside
its own quarter of the grid (``M_q = S / 2n = M_g / 2``).
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .encoder import (ConfigError, EncoderConfig, EncoderWeights, FeatureGrid,
                      VisualTokens, encode_lr)
from .io import write_tensor
from .mining import MiningWeights, SubregionMap, gather_kv, mine, window_map
from .tensor import bilinear_resize

VIEW_TAGS = ("global", "topLeft", "topRight", "bottomLeft", "bottomRight")
VIEW_SUFFIXES = ("_g", "_tl", "_tr", "_bl", "_br")
NUM_VIEWS = len(VIEW_TAGS)


@dataclass(frozen=True)
class ExtendedBatch:
    views: tuple[np.ndarray, ...]

    def __post_init__(self):
        if len(self.views) != NUM_VIEWS:
            raise ConfigError(f"expected {NUM_VIEWS} views, got {len(self.views)}")
        if len({v.shape for v in self.views}) != 1:
            raise ConfigError("views must share one shape")

    @property
    def layout(self) -> tuple[str, ...]:
        return VIEW_TAGS

    def dump(self, directory, stem: str = "view") -> list[Path]:
        os.makedirs(directory, exist_ok=True)
        paths = [Path(directory) / f"{stem}{sfx}.tensor" for sfx in VIEW_SUFFIXES]
        for path, view in zip(paths, self.views):
            write_tensor(path, view)
        return paths


@dataclass(frozen=True)
class ViewSubregionMaps:
    global_map: SubregionMap
    quadrant_maps: tuple[SubregionMap, ...]

    @property
    def maps(self) -> tuple[SubregionMap, ...]:
        return (self.global_map, *self.quadrant_maps)

    @property
    def global_window(self) -> int:
        return self.global_map.window

    @property
    def quadrant_window(self) -> int:
        return self.quadrant_maps[0].window


def build_extended_batch(img_hr: np.ndarray, cfg: EncoderConfig) -> ExtendedBatch:
    cfg.validate()
    if cfg.hr_size < 2 * cfg.lr_size:
        raise ConfigError(f"config violates rule: hrSize >= 2*lrSize for token extension "
                          f"({cfg.hr_size} < {2 * cfg.lr_size})")
    if img_hr.shape != (cfg.hr_size, cfg.hr_size, 3):
        raise ConfigError(f"HR image must be {cfg.hr_size}x{cfg.hr_size}x3, got {img_hr.shape}")
    lr = cfg.lr_size
    up = bilinear_resize(img_hr, 2 * lr, 2 * lr)
    quads = [up[r:r + lr, c:c + lr] for r in (0, lr) for c in (0, lr)]
    return ExtendedBatch((bilinear_resize(img_hr, lr, lr), *quads))


def build_view_maps(cfg: EncoderConfig) -> ViewSubregionMaps:
    cfg.validate()
    n, side = cfg.grid, cfg.hr_side
    if side % (2 * n):
        raise ConfigError(f"config violates rule: hrSize/4 divisible by 2*lrSize/patchSize "
                          f"for token extension ({side} % {2 * n} != 0)")
    mg, mq, half = side // n, side // (2 * n), side // 2
    quads = tuple(window_map(n, mq, side, r, c) for r in (0, half) for c in (0, half))
    maps = ViewSubregionMaps(window_map(n, mg, side), quads)
    assert maps.global_window == 2 * maps.quadrant_window
    return maps


def encode_extended(batch: ExtendedBatch, cfg: EncoderConfig, weights: EncoderWeights,
                    positional: bool = True) -> VisualTokens:
    """Encode every view with the LR encoder; all views share the positional term."""
    blocks = [encode_lr(view, cfg, weights, positional).data for view in batch.views]
    return VisualTokens(np.concatenate(blocks, axis=0), views=NUM_VIEWS)


def mine_extended(tokens: VisualTokens, grid: FeatureGrid, maps: ViewSubregionMaps,
                  w: MiningWeights, threads: int | None = None) -> VisualTokens:
    n_patches = maps.global_map.num_patches
    if tokens.count != NUM_VIEWS * n_patches:
        raise ConfigError(f"expected {NUM_VIEWS * n_patches} tokens, got {tokens.count}")
    if maps.global_window != 2 * maps.quadrant_window:
        raise ConfigError("global window must be twice the quadrant window")
    if any(m.grid_side != grid.side for m in maps.maps):
        raise ConfigError("view maps do not address this feature grid")
    out = []
    for i, smap in enumerate(maps.maps):
        k, v = gather_kv(grid, smap)
        q = tokens.data[i * n_patches:(i + 1) * n_patches]
        out.append(mine(q, k, v, w, threads).data)
    return VisualTokens(np.concatenate(out, axis=0), views=NUM_VIEWS)
