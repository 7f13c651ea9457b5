"""Hierarchical 3D encoder: stem plus four stages of conv-mixer blocks.

Each stage begins with a non-overlapping patch downsample (stride 2) and
runs a stack of blocks whose token mixer is the axis-decomposed
convolution; a per-position MLP follows, both residual and pre-normalized.
Two taps are exposed: stage-3 output tokens (spatially detailed) and
stage-4 output tokens (semantically rich).

The full-scale configuration (depths [2,3,6,2], channels
[96,192,384,768], kernels [13,11,9,7], stem stride 4) turns a
128x256x256 single-channel volume into 256 low tokens of width 384 and
32 high tokens of width 768. The desk-scale variant divides widths by 4
and drops the stem stride to 1, preserving those token counts at
32x64x64 input.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autograd import ShapeError, Tensor, permute, reshape
from .conv import (
    DecomposedConvLayer,
    FullDWConv3dLayer,
    decomposed_block,
    dwconv1d_axis,
    full_dwconv3d,
)
from .costing import CostReport
from .layers import ConfigError, Layer, Linear, Mlp, SpatialNorm

MIXERS = ("decomposed", "full")


@dataclass(frozen=True)
class EncoderConfig:
    stage_depths: tuple[int, int, int, int] = (2, 3, 6, 2)
    stage_channels: tuple[int, int, int, int] = (96, 192, 384, 768)
    stage_kernels: tuple[int, int, int, int] = (13, 11, 9, 7)
    stem_stride: int = 4
    stage_stride: int = 2
    mlp_ratio: int = 4
    in_channels: int = 1
    token_mixer: str = "decomposed"

    def __post_init__(self):
        if not (len(self.stage_depths) == len(self.stage_channels)
                == len(self.stage_kernels) == 4):
            raise ConfigError("encoder needs exactly 4 stages")
        if list(self.stage_channels) != sorted(set(self.stage_channels)):
            raise ConfigError("stage channels must be strictly increasing")
        if self.token_mixer not in MIXERS:
            raise ConfigError(f"token_mixer must be one of {MIXERS}")

    @property
    def total_stride(self) -> int:
        return self.stem_stride * self.stage_stride ** 4

    @property
    def d_low(self) -> int:
        return self.stage_channels[2]

    @property
    def d_high(self) -> int:
        return self.stage_channels[3]

    @classmethod
    def dcformer_small(cls, **kw) -> "EncoderConfig":
        return cls(**kw)

    @classmethod
    def desk(cls, width_div: int = 4, **kw) -> "EncoderConfig":
        channels = tuple(c // width_div for c in (96, 192, 384, 768))
        return cls(stage_channels=channels, stem_stride=1, **kw)

    def token_counts(self, spatial: tuple[int, int, int]) -> tuple[int, int]:
        """(n_low, n_high) for the given input spatial dims."""
        f_high = self.total_stride
        f_low = f_high // self.stage_stride
        n_low = n_high = 1
        for dim in spatial:
            n_low *= dim // f_low
            n_high *= dim // f_high
        return n_low, n_high


@dataclass
class FeaturePair:
    """The encoder's dual tap: (B, n_low, d_low) and (B, n_high, d_high)."""

    low: Tensor
    high: Tensor


class PatchDownsample(Layer):
    """Non-overlapping s^3 patches folded into channels, then linear."""

    def __init__(self, c_in: int, c_out: int, stride: int,
                 rng: np.random.Generator, dtype=np.float32):
        self.c_in = c_in
        self.c_out = c_out
        self.stride = stride
        self.proj = Linear(stride ** 3 * c_in, c_out, rng, dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        b, c, h, w, d = x.shape
        s = self.stride
        if c != self.c_in:
            raise ConfigError(f"downsample expects {self.c_in} channels, got {c}")
        if h % s or w % s or d % s:
            raise ShapeError(
                f"spatial dims {(h, w, d)} must be divisible by stride {s}"
            )
        if s == 1:
            tokens = permute(x, (0, 2, 3, 4, 1))
        else:
            patches = reshape(x, (b, c, h // s, s, w // s, s, d // s, s))
            tokens = permute(patches, (0, 2, 4, 6, 3, 5, 7, 1))
            tokens = reshape(tokens, (b, h // s, w // s, d // s, s ** 3 * c))
        out = self.proj(tokens)
        return permute(out, (0, 4, 1, 2, 3))


class MetaformerBlock(Layer):
    """Pre-norm conv token mixer and pre-norm channel MLP, both residual."""

    def __init__(self, channels: int, kernel_size: int, mlp_ratio: int,
                 rng: np.random.Generator, token_mixer: str = "decomposed",
                 dtype=np.float32):
        self.channels = channels
        self.token_mixer = token_mixer
        self.norm_mixer = SpatialNorm(channels, dtype=dtype)
        self.norm_mlp = SpatialNorm(channels, dtype=dtype)
        if token_mixer == "decomposed":
            self.mixer = DecomposedConvLayer(channels, kernel_size, rng, dtype=dtype)
        else:
            self.mixer = FullDWConv3dLayer(channels, kernel_size, rng, dtype=dtype)
        self.mlp = Mlp(channels, mlp_ratio * channels, channels, rng, dtype=dtype)

    def _mixer_branches(self, u: Tensor) -> Tensor:
        if self.token_mixer == "decomposed":
            out = None
            for axis in ("h", "w", "d"):
                branch = self.mixer.axis_norm(axis)(dwconv1d_axis(u, axis, self.mixer))
                out = branch if out is None else out + branch
            return out
        return self.mixer.norm(full_dwconv3d(u, self.mixer))

    def _channel_mlp(self, u: Tensor) -> Tensor:
        b, c, h, w, d = u.shape
        tokens = permute(u, (0, 2, 3, 4, 1))
        out = self.mlp(tokens)
        return permute(out, (0, 4, 1, 2, 3))

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[1] != self.channels:
            raise ConfigError(
                f"block expects {self.channels} channels, got {x.shape[1]}"
            )
        x = x + self._mixer_branches(self.norm_mixer(x))
        return x + self._channel_mlp(self.norm_mlp(x))


class Encoder(Layer):
    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator | None = None,
                 dtype=np.float32):
        if rng is None:
            rng = np.random.default_rng(0)
        self.cfg = cfg
        self.stem = PatchDownsample(cfg.in_channels, cfg.stage_channels[0],
                                    cfg.stem_stride, rng, dtype)
        self.downsamples: list[PatchDownsample] = []
        self.stages: list[list[MetaformerBlock]] = []
        prev = cfg.stage_channels[0]
        for depth, channels, kernel in zip(cfg.stage_depths, cfg.stage_channels,
                                           cfg.stage_kernels):
            self.downsamples.append(
                PatchDownsample(prev, channels, cfg.stage_stride, rng, dtype)
            )
            self.stages.append([
                MetaformerBlock(channels, kernel, cfg.mlp_ratio, rng,
                                cfg.token_mixer, dtype)
                for _ in range(depth)
            ])
            prev = channels

    def _collect(self, prefix, out):  # lists of lists need one extra hop
        super()._collect(prefix, out)
        for i, stage in enumerate(self.stages):
            for j, block in enumerate(stage):
                block._collect(f"{prefix}stages.{i}.{j}.", out)

    def __call__(self, x: Tensor) -> FeaturePair:
        return self.forward(x)

    def forward(self, x: Tensor) -> FeaturePair:
        cfg = self.cfg
        if x.data.ndim != 5 or x.shape[1] != cfg.in_channels:
            raise ShapeError(
                f"encoder expects (B,{cfg.in_channels},H,W,D), got {x.shape}"
            )
        f = cfg.total_stride
        for dim in x.shape[2:]:
            if dim % f:
                raise ShapeError(
                    f"spatial dims {x.shape[2:]} must each be divisible by {f} "
                    f"(stem {cfg.stem_stride} x stride {cfg.stage_stride}^4)"
                )
        h = self.stem(x)
        low = None
        for i, (ds, stage) in enumerate(zip(self.downsamples, self.stages)):
            h = ds(h)
            for block in stage:
                h = block(h)
            if i == 2:
                low = _flatten_tokens(h)
        return FeaturePair(low=low, high=_flatten_tokens(h))


def _flatten_tokens(x: Tensor) -> Tensor:
    b, c, h, w, d = x.shape
    return permute(reshape(x, (b, c, h * w * d)), (0, 2, 1))


def encoder_forward(x: Tensor, encoder: Encoder) -> FeaturePair:
    return encoder.forward(x)


# ---------------------------------------------------------------------------
# analytic accounting

def _block_cost(report: CostReport, name: str, channels: int, kernel: int,
                mlp_ratio: int, positions: int, token_mixer: str) -> None:
    c, k, p, r = channels, kernel, positions, mlp_ratio
    if token_mixer == "decomposed":
        report.add(f"{name}.mixer_convs", p * c * 3 * k, c * 3 * k + 3 * c)
        report.add(f"{name}.mixer_norms", 0, 6 * c)
    else:
        report.add(f"{name}.mixer_conv3d", p * c * k ** 3, c * k ** 3 + c)
        report.add(f"{name}.mixer_norm", 0, 2 * c)
    report.add(f"{name}.pre_norms", 0, 4 * c)
    report.add(f"{name}.mlp", 2 * r * p * c * c, 2 * r * c * c + r * c + c)


def count_encoder_cost(cfg: EncoderConfig,
                       input_shape: tuple[int, int, int]) -> CostReport:
    """Exact per-layer multiply-adds and parameters for one forward pass
    of a single volume of the given spatial shape."""
    h, w, d = input_shape
    report = CostReport()
    s = cfg.stem_stride
    grid = (h // s, w // s, d // s)
    positions = grid[0] * grid[1] * grid[2]
    report.add("stem", positions * s ** 3 * cfg.in_channels * cfg.stage_channels[0],
               s ** 3 * cfg.in_channels * cfg.stage_channels[0] + cfg.stage_channels[0])
    prev = cfg.stage_channels[0]
    for i, (depth, channels, kernel) in enumerate(
            zip(cfg.stage_depths, cfg.stage_channels, cfg.stage_kernels), start=1):
        s = cfg.stage_stride
        grid = tuple(g // s for g in grid)
        positions = grid[0] * grid[1] * grid[2]
        report.add(f"stage{i}.downsample", positions * s ** 3 * prev * channels,
                   s ** 3 * prev * channels + channels)
        for j in range(depth):
            _block_cost(report, f"stage{i}.block{j}", channels, kernel,
                        cfg.mlp_ratio, positions, cfg.token_mixer)
        prev = channels
    return report


def count_encoder_params(cfg: EncoderConfig) -> CostReport:
    """Parameter accounting only (multiply-adds reported for a nominal
    single-voxel-per-position input would be meaningless, so they are
    taken at the full-scale 128x256x256 input when dims divide, else
    omitted)."""
    shape = (128, 256, 256)
    if all(dim % cfg.total_stride == 0 for dim in shape):
        return count_encoder_cost(cfg, shape)
    # fall back to the smallest valid grid for the stride pattern
    f = cfg.total_stride
    return count_encoder_cost(cfg, (2 * f, 2 * f, 2 * f))
