"""Dual-resolution vision encoders.

The LR flow turns the downsampled image into ``N = (lr_size / patch_size)**2``
tokens with a single patch-embedding layer. The HR flow runs three strided
3x3 conv stages over the full image, resizes every stage to 1/4 of the
input side and fuses them into an ``S x S x C`` grid, ``S = hr_size / 4``.
Each LR patch owns an ``M x M`` window of that grid, ``M = S / n``, so
``S**2 == N * M**2``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, fields

import numpy as np

from .io import read_tensor_dict, write_tensor_dict
from .tensor import Rng, bilinear_resize, gelu, matmul


class ConfigError(ValueError):
    """A configuration violates one of the divisibility/size rules."""


_JSON_NAMES = {
    "hr_size": "hrSize",
    "lr_size": "lrSize",
    "patch_size": "patchSize",
    "channels": "channels",
    "hr_stage_channels": "hrStageChannels",
    "seed": "seed",
}


@dataclass(frozen=True)
class EncoderConfig:
    hr_size: int = 768
    lr_size: int = 336
    patch_size: int = 14
    channels: int = 16
    hr_stage_channels: tuple[int, ...] = (8, 16, 32)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hr_stage_channels", tuple(self.hr_stage_channels))

    @property
    def grid(self) -> int:
        """LR patch grid side ``n``."""
        return self.lr_size // self.patch_size

    @property
    def num_patches(self) -> int:
        return self.grid**2

    @property
    def hr_side(self) -> int:
        return self.hr_size // 4

    @property
    def window(self) -> int:
        return self.hr_side // self.grid

    @property
    def hr_count(self) -> int:
        """Total HR feature count ``N' = S**2``."""
        return self.hr_side**2

    def validate(self) -> "EncoderConfig":
        checks = [
            (self.patch_size >= 1 and self.lr_size >= 1 and self.hr_size >= 1, "sizes must be positive"),
            (self.channels >= 1, "channels must be positive"),
            (len(self.hr_stage_channels) == 3 and all(c >= 1 for c in self.hr_stage_channels),
             "hrStageChannels must list three positive widths"),
            (self.lr_size <= self.hr_size, "lrSize <= hrSize"),
            (self.lr_size % self.patch_size == 0, "lrSize divisible by patchSize"),
            (self.hr_size % 4 == 0, "hrSize divisible by 4"),
            (0 <= self.seed < 2**64, "seed must be an unsigned 64-bit integer"),
        ]
        for ok, rule in checks:
            if not ok:
                raise ConfigError(f"config violates rule: {rule} ({self})")
        if self.hr_side % self.grid:
            raise ConfigError(
                f"config violates rule: hrSize/4 divisible by lrSize/patchSize "
                f"({self.hr_side} % {self.grid} != 0)")
        return self

    def to_json(self) -> str:
        d = {_JSON_NAMES[f.name]: getattr(self, f.name) for f in fields(self)}
        d["hrStageChannels"] = list(d["hrStageChannels"])
        return json.dumps(d)

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderConfig":
        inverse = {v: k for k, v in _JSON_NAMES.items()}
        unknown = set(d) - set(inverse)
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        return cls(**{inverse[k]: v for k, v in d.items()})

    @classmethod
    def from_json(cls, text: str) -> "EncoderConfig":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class FeatureGrid:
    """HR feature map: ``data`` is ``side x side x channels``."""

    side: int
    channels: int
    data: np.ndarray
    window_size: int

    def __post_init__(self):
        if self.data.shape != (self.side, self.side, self.channels):
            raise ConfigError(f"grid data shape {self.data.shape} != {(self.side, self.side, self.channels)}")
        if self.window_size < 1 or self.side % self.window_size:
            raise ConfigError(f"window {self.window_size} does not tile side {self.side}")

    @property
    def num_patches(self) -> int:
        return (self.side // self.window_size) ** 2


@dataclass(frozen=True)
class VisualTokens:
    """``count x channels`` token embeddings made of ``views`` blocks of N."""

    data: np.ndarray
    views: int = 1

    def __post_init__(self):
        if self.data.ndim != 2:
            raise ConfigError(f"tokens must be 2-D, got {self.data.shape}")
        if self.views < 1 or self.data.shape[0] % self.views:
            raise ConfigError(f"{self.data.shape[0]} tokens do not split into {self.views} views")

    @property
    def count(self) -> int:
        return self.data.shape[0]

    @property
    def channels(self) -> int:
        return self.data.shape[1]

    @property
    def per_view(self) -> int:
        return self.count // self.views

    def view(self, i: int) -> "VisualTokens":
        n = self.per_view
        return VisualTokens(self.data[i * n:(i + 1) * n])


WEIGHT_NAMES = ("patchW", "patchB", "conv1W", "conv1B", "conv2W", "conv2B",
                "conv3W", "conv3B", "fuseW", "fuseB")


@dataclass(frozen=True)
class EncoderWeights:
    patch_w: np.ndarray          # (p*p*3, C)
    patch_b: np.ndarray          # (C,)
    conv_w: tuple[np.ndarray, ...]  # each (3, 3, cin, cout)
    conv_b: tuple[np.ndarray, ...]
    fuse_w: np.ndarray           # (sum(stage widths), C)
    fuse_b: np.ndarray

    @classmethod
    def init(cls, cfg: EncoderConfig, dtype=np.float64) -> "EncoderWeights":
        """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) from ``Rng(cfg.seed)``."""
        cfg.validate()
        rng = Rng(cfg.seed)

        def uniform(shape, fan_in):
            bound = 1.0 / math.sqrt(fan_in)
            return rng.uniform_array(shape, -bound, bound).astype(dtype)

        fan = cfg.patch_size**2 * 3
        patch_w = uniform((fan, cfg.channels), fan)
        patch_b = uniform(cfg.channels, fan)
        conv_w, conv_b = [], []
        cin = 3
        for cout in cfg.hr_stage_channels:
            conv_w.append(uniform((3, 3, cin, cout), 9 * cin))
            conv_b.append(uniform(cout, 9 * cin))
            cin = cout
        total = sum(cfg.hr_stage_channels)
        fuse_w = uniform((total, cfg.channels), total)
        fuse_b = uniform(cfg.channels, total)
        return cls(patch_w, patch_b, tuple(conv_w), tuple(conv_b), fuse_w, fuse_b)

    def astype(self, dtype) -> "EncoderWeights":
        return EncoderWeights(
            self.patch_w.astype(dtype), self.patch_b.astype(dtype),
            tuple(w.astype(dtype) for w in self.conv_w), tuple(b.astype(dtype) for b in self.conv_b),
            self.fuse_w.astype(dtype), self.fuse_b.astype(dtype))

    def as_dict(self) -> dict[str, np.ndarray]:
        d = {"patchW": self.patch_w, "patchB": self.patch_b, "fuseW": self.fuse_w, "fuseB": self.fuse_b}
        for i, (w, b) in enumerate(zip(self.conv_w, self.conv_b), start=1):
            d[f"conv{i}W"] = w
            d[f"conv{i}B"] = b
        return d

    def save(self, directory) -> None:
        write_tensor_dict(directory, self.as_dict())

    @classmethod
    def load(cls, directory, dtype=np.float64) -> "EncoderWeights":
        d = read_tensor_dict(directory, WEIGHT_NAMES, dtype)
        return cls(d["patchW"], d["patchB"],
                   tuple(d[f"conv{i}W"] for i in (1, 2, 3)), tuple(d[f"conv{i}B"] for i in (1, 2, 3)),
                   d["fuseW"], d["fuseB"])


def _check_image(img: np.ndarray, size: int, what: str) -> None:
    if img.shape != (size, size, 3):
        raise ConfigError(f"{what} image must be {size}x{size}x3, got {img.shape}")


def derive_lr(img_hr: np.ndarray, cfg: EncoderConfig) -> np.ndarray:
    cfg.validate()
    _check_image(img_hr, cfg.hr_size, "HR")
    return bilinear_resize(img_hr, cfg.lr_size, cfg.lr_size)


def sinusoidal_positions(n: int, channels: int, dtype=np.float64) -> np.ndarray:
    """Fixed 2-D sinusoidal term for an ``n x n`` grid, row-major, ``(n*n, C)``.

    The first ``C // 2`` channels encode the row index, the rest the column;
    within each half, channel ``j`` is ``sin`` (even ``j``) or ``cos`` (odd)
    of ``pos / 10000**(2*(j//2)/d)``.
    """
    out = np.zeros((n, n, channels), dtype=np.float64)
    halves = [(0, channels // 2, "row"), (channels // 2, channels, "col")]
    pos = np.arange(n, dtype=np.float64)
    for lo, hi, axis in halves:
        d = hi - lo
        for j in range(d):
            freq = 1.0 / 10000.0 ** (2 * (j // 2) / d)
            wave = np.sin(pos * freq) if j % 2 == 0 else np.cos(pos * freq)
            if axis == "row":
                out[:, :, lo + j] = wave[:, None]
            else:
                out[:, :, lo + j] = wave[None, :]
    return out.reshape(n * n, channels).astype(dtype)


def patchify(img: np.ndarray, patch: int) -> np.ndarray:
    """Non-overlapping ``patch x patch`` tiles, row-major, flattened (row, col, rgb)."""
    size = img.shape[0]
    n = size // patch
    return (img.reshape(n, patch, n, patch, 3)
               .transpose(0, 2, 1, 3, 4)
               .reshape(n * n, patch * patch * 3))


def encode_lr(img_lr: np.ndarray, cfg: EncoderConfig, weights: EncoderWeights,
              positional: bool = True) -> VisualTokens:
    if cfg.lr_size % cfg.patch_size:
        raise ConfigError(f"config violates rule: lrSize divisible by patchSize "
                          f"({cfg.lr_size} % {cfg.patch_size} != 0)")
    _check_image(img_lr, cfg.lr_size, "LR")
    tokens = matmul(patchify(img_lr, cfg.patch_size), weights.patch_w) + weights.patch_b
    if positional:
        tokens = tokens + sinusoidal_positions(cfg.grid, cfg.channels, tokens.dtype)
    return VisualTokens(tokens)


def conv3x3_s2(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """3x3 convolution, stride 2, zero padding 1. ``x`` is ``H x W x Cin``."""
    h, wd, cin = x.shape
    ho, wo = (h + 1) // 2, (wd + 1) // 2
    xp = np.pad(x, ((1, 1), (1, 1), (0, 0)))
    cols = np.stack([xp[dy:dy + 2 * ho:2, dx:dx + 2 * wo:2, :]
                     for dy in range(3) for dx in range(3)], axis=2)
    out = matmul(cols.reshape(ho * wo, 9 * cin), w.reshape(9 * cin, -1)) + b
    return out.reshape(ho, wo, -1)


def encode_hr(img_hr: np.ndarray, cfg: EncoderConfig, weights: EncoderWeights) -> FeatureGrid:
    cfg.validate()
    _check_image(img_hr, cfg.hr_size, "HR")
    side = cfg.hr_side
    x = img_hr
    stages = []
    for w, b in zip(weights.conv_w, weights.conv_b):
        x = gelu(conv3x3_s2(x, w, b))
        stages.append(bilinear_resize(x, side, side))
    fused = np.concatenate(stages, axis=-1).reshape(side * side, -1)
    data = (matmul(fused, weights.fuse_w) + weights.fuse_b).reshape(side, side, cfg.channels)
    return FeatureGrid(side=side, channels=cfg.channels, data=data, window_size=cfg.window)
