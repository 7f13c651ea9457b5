"""Axis-decomposed depthwise 3D convolution and its full-kernel baseline.

A k x k x k depthwise convolution costs k^3 multiply-adds per voxel per
channel; running three 1D depthwise convolutions (one per spatial axis)
in parallel and summing their normalized outputs onto the input costs 3k.
This module provides both layers with "same" zero padding, slow
triple-loop reference implementations with instrumented multiply
counters, the analytic cost model, and a wall-time benchmark.

Volumes are rank-5: (batch, channels, height, width, depth). Axis names
h/w/d map to tensor axes 2/3/4.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .autograd import Tensor, custom_op
from .costing import CostReport
from .layers import ConfigError, Layer, SpatialNorm, uniform_init

AXES = {"h": 2, "w": 3, "d": 4}


def _check_volume(x: Tensor, channels: int, opname: str) -> None:
    if x.data.ndim != 5:
        raise ConfigError(f"{opname} expects rank-5 (B,C,H,W,D), got {x.shape}")
    if x.shape[1] != channels:
        raise ConfigError(
            f"{opname}: layer has {channels} channels, input has {x.shape[1]}"
        )


def _check_kernel(k: int) -> None:
    if k < 1 or k % 2 == 0:
        raise ConfigError(f"kernel size must be odd and positive, got {k}")


class DecomposedConvLayer(Layer):
    """Three per-axis 1D depthwise kernels plus per-axis bias and norm."""

    def __init__(self, channels: int, kernel_sizes: int | tuple[int, int, int],
                 rng: np.random.Generator | None = None, dtype=np.float32):
        if isinstance(kernel_sizes, int):
            kernel_sizes = (kernel_sizes,) * 3
        for k in kernel_sizes:
            _check_kernel(k)
        if rng is None:
            rng = np.random.default_rng(0)
        self.channels = channels
        self.kernel_sizes = tuple(kernel_sizes)
        k_h, k_w, k_d = self.kernel_sizes
        self.weight_h = uniform_init(rng, (channels, k_h), k_h, dtype)
        self.weight_w = uniform_init(rng, (channels, k_w), k_w, dtype)
        self.weight_d = uniform_init(rng, (channels, k_d), k_d, dtype)
        self.bias_h = Tensor(np.zeros(channels, dtype=dtype), requires_grad=True)
        self.bias_w = Tensor(np.zeros(channels, dtype=dtype), requires_grad=True)
        self.bias_d = Tensor(np.zeros(channels, dtype=dtype), requires_grad=True)
        self.norm_h = SpatialNorm(channels, dtype=dtype)
        self.norm_w = SpatialNorm(channels, dtype=dtype)
        self.norm_d = SpatialNorm(channels, dtype=dtype)

    def axis_weight(self, axis: str) -> Tensor:
        return {"h": self.weight_h, "w": self.weight_w, "d": self.weight_d}[axis]

    def axis_bias(self, axis: str) -> Tensor:
        return {"h": self.bias_h, "w": self.bias_w, "d": self.bias_d}[axis]

    def axis_norm(self, axis: str) -> SpatialNorm:
        return {"h": self.norm_h, "w": self.norm_w, "d": self.norm_d}[axis]


class FullDWConv3dLayer(Layer):
    """One cubic depthwise kernel (C, k, k, k) with bias; the baseline."""

    def __init__(self, channels: int, kernel_size: int,
                 rng: np.random.Generator | None = None, dtype=np.float32):
        _check_kernel(kernel_size)
        if rng is None:
            rng = np.random.default_rng(0)
        self.channels = channels
        self.kernel_size = kernel_size
        k = kernel_size
        self.weight = uniform_init(rng, (channels, k, k, k), k ** 3, dtype)
        self.bias = Tensor(np.zeros(channels, dtype=dtype), requires_grad=True)
        self.norm = SpatialNorm(channels, dtype=dtype)


def _pad_axis(x: np.ndarray, axis: int, pad: int) -> np.ndarray:
    widths = [(0, 0)] * x.ndim
    widths[axis] = (pad, pad)
    return np.pad(x, widths)


def _axis_slices(length: int, k: int, axis: int, ndim: int = 5):
    for j in range(k):
        idx = [slice(None)] * ndim
        idx[axis] = slice(j, j + length)
        yield j, tuple(idx)


def dwconv1d_axis(x: Tensor, axis: str, layer: DecomposedConvLayer) -> Tensor:
    """Per-channel 1D convolution along one spatial axis, same zero padding."""
    if axis not in AXES:
        raise ConfigError(f"axis must be one of h/w/d, got {axis!r}")
    _check_volume(x, layer.channels, "dwconv1d_axis")
    weight = layer.axis_weight(axis)
    bias = layer.axis_bias(axis)
    ax = AXES[axis]
    k = weight.shape[1]
    pad = k // 2
    length = x.shape[ax]
    cshape = (1, layer.channels, 1, 1, 1)

    xd, wd = x.data, weight.data
    xp = _pad_axis(xd, ax, pad)
    out = np.zeros_like(xd)
    for j, idx in _axis_slices(length, k, ax):
        out += wd[:, j].reshape(cshape) * xp[idx]
    out += bias.data.reshape(cshape)

    def backward(g):
        gp = _pad_axis(g, ax, pad)
        wflip = wd[:, ::-1]
        gx = np.zeros_like(xd)
        for j, idx in _axis_slices(length, k, ax):
            gx += wflip[:, j].reshape(cshape) * gp[idx]
        gw = np.empty_like(wd)
        for j, idx in _axis_slices(length, k, ax):
            gw[:, j] = (g * xp[idx]).sum(axis=(0, 2, 3, 4))
        gb = g.sum(axis=(0, 2, 3, 4))
        return gx, gw, gb

    return custom_op(out, (x, weight, bias), backward)


def decomposed_block(x: Tensor, layer: DecomposedConvLayer) -> Tensor:
    """Residual sum of the three normalized axis convolutions."""
    out = x
    for axis in ("h", "w", "d"):
        branch = layer.axis_norm(axis)(dwconv1d_axis(x, axis, layer))
        out = out + branch
    return out


def full_dwconv3d(x: Tensor, layer: FullDWConv3dLayer) -> Tensor:
    """Depthwise 3D convolution with a cubic kernel, same zero padding."""
    _check_volume(x, layer.channels, "full_dwconv3d")
    k = layer.kernel_size
    pad = k // 2
    weight, bias = layer.weight, layer.bias
    xd, wd = x.data, weight.data

    def conv(inp: np.ndarray, kern: np.ndarray) -> np.ndarray:
        padded = np.pad(inp, ((0, 0), (0, 0), (pad, pad), (pad, pad), (pad, pad)))
        win = np.lib.stride_tricks.sliding_window_view(padded, (k, k, k), axis=(2, 3, 4))
        return np.einsum("bchwdijk,cijk->bchwd", win, kern, optimize=True)

    out = conv(xd, wd) + bias.data.reshape(1, -1, 1, 1, 1)

    def backward(g):
        gx = conv(g, wd[:, ::-1, ::-1, ::-1])
        padded = np.pad(xd, ((0, 0), (0, 0), (pad, pad), (pad, pad), (pad, pad)))
        win = np.lib.stride_tricks.sliding_window_view(padded, (k, k, k), axis=(2, 3, 4))
        gw = np.einsum("bchwdijk,bchwd->cijk", win, g, optimize=True)
        gb = g.sum(axis=(0, 2, 3, 4))
        return gx, gw, gb

    return custom_op(out, (x, weight, bias), backward)


def full_dwconv3d_block(x: Tensor, layer: FullDWConv3dLayer) -> Tensor:
    """Residual + normalized full conv; the single-branch analogue used by
    the full-kernel ablation encoder."""
    return x + layer.norm(full_dwconv3d(x, layer))


# ---------------------------------------------------------------------------
# slow references with instrumented multiply counters

class MultiplyCounter:
    def __init__(self):
        self.count = 0


def naive_dwconv1d_axis(x: np.ndarray, axis: str, weight: np.ndarray,
                        bias: np.ndarray,
                        counter: MultiplyCounter | None = None) -> np.ndarray:
    """Triple-loop reference; every kernel tap (padding included) counts
    as one multiply-add."""
    ax = AXES[axis]
    k = weight.shape[1]
    pad = k // 2
    b_n, c_n = x.shape[0], x.shape[1]
    spatial = x.shape[2:]
    out = np.zeros_like(x)
    for b in range(b_n):
        for c in range(c_n):
            for i0 in range(spatial[0]):
                for i1 in range(spatial[1]):
                    for i2 in range(spatial[2]):
                        pos = [i0, i1, i2]
                        acc = 0.0
                        for j in range(k):
                            p = list(pos)
                            p[ax - 2] = pos[ax - 2] + j - pad
                            if counter is not None:
                                counter.count += 1
                            if 0 <= p[ax - 2] < spatial[ax - 2]:
                                acc += weight[c, j] * x[b, c, p[0], p[1], p[2]]
                        out[b, c, i0, i1, i2] = acc + bias[c]
    return out


def naive_full_dwconv3d(x: np.ndarray, weight: np.ndarray, bias: np.ndarray,
                        counter: MultiplyCounter | None = None) -> np.ndarray:
    k = weight.shape[1]
    pad = k // 2
    b_n, c_n, h_n, w_n, d_n = x.shape
    out = np.zeros_like(x)
    for b in range(b_n):
        for c in range(c_n):
            for i in range(h_n):
                for j in range(w_n):
                    for l in range(d_n):
                        acc = 0.0
                        for u in range(k):
                            for v in range(k):
                                for t in range(k):
                                    if counter is not None:
                                        counter.count += 1
                                    ii, jj, ll = i + u - pad, j + v - pad, l + t - pad
                                    if 0 <= ii < h_n and 0 <= jj < w_n and 0 <= ll < d_n:
                                        acc += weight[c, u, v, t] * x[b, c, ii, jj, ll]
                        out[b, c, i, j, l] = acc + bias[c]
    return out


# ---------------------------------------------------------------------------
# analytic cost model

def count_cost(layer: DecomposedConvLayer | FullDWConv3dLayer,
               input_shape: tuple[int, ...]) -> CostReport:
    """Exact multiply-adds and parameters for one conv layer on one input.

    Multiply-adds count kernel taps only (padding taps included, matching
    the instrumented references); bias adds and normalization are free in
    this model but their parameters are reported.
    """
    if len(input_shape) != 5:
        raise ConfigError(f"input_shape must be rank-5, got {input_shape}")
    b, c, h, w, d = input_shape
    if c != layer.channels:
        raise ConfigError(
            f"input channels {c} != layer channels {layer.channels}"
        )
    positions = b * h * w * d
    report = CostReport()
    if isinstance(layer, DecomposedConvLayer):
        for axis, k in zip("hwd", layer.kernel_sizes):
            report.add(f"dwconv1d_{axis}", positions * c * k, c * k + c)
        report.add("norms", 0, 6 * c)
    else:
        k = layer.kernel_size
        report.add("dwconv3d", positions * c * k ** 3, c * k ** 3 + c)
        report.add("norm", 0, 2 * c)
    return report


# ---------------------------------------------------------------------------
# benchmark

@dataclass
class BenchmarkRecord:
    input_shape: tuple[int, ...]
    kernel_size: int
    repetitions: int
    decomposed_median_s: float
    full_median_s: float
    decomposed_mult_adds: int
    full_mult_adds: int

    @property
    def mult_add_ratio(self) -> float:
        """full / decomposed; equals k^2 / 3 for cubic kernels."""
        return self.full_mult_adds / self.decomposed_mult_adds

    @property
    def speedup(self) -> float:
        return self.full_median_s / self.decomposed_median_s


def benchmark_pair(input_shape: tuple[int, ...], k: int, repetitions: int = 5,
                   seed: int = 0) -> BenchmarkRecord:
    """Median forward wall time, decomposed vs full, identical shape/kernel."""
    rng = np.random.default_rng(seed)
    b, c = input_shape[0], input_shape[1]
    x = Tensor(rng.standard_normal(input_shape).astype(np.float32))
    dec = DecomposedConvLayer(c, k, np.random.default_rng(seed + 1))
    full = FullDWConv3dLayer(c, k, np.random.default_rng(seed + 2))

    def run_dec():
        for axis in ("h", "w", "d"):
            dwconv1d_axis(x, axis, dec)

    def run_full():
        full_dwconv3d(x, full)

    times = {}
    for name, fn in (("dec", run_dec), ("full", run_full)):
        fn()  # warmup
        samples = []
        for _ in range(repetitions):
            t0 = time.perf_counter()
            fn()
            samples.append(time.perf_counter() - t0)
        times[name] = float(np.median(samples))

    dec_cost = count_cost(dec, input_shape).records
    full_cost = count_cost(full, input_shape).records
    return BenchmarkRecord(
        input_shape=tuple(input_shape),
        kernel_size=k,
        repetitions=repetitions,
        decomposed_median_s=times["dec"],
        full_median_s=times["full"],
        decomposed_mult_adds=sum(r.multiply_adds for r in dec_cost),
        full_mult_adds=sum(r.multiply_adds for r in full_cost),
    )
