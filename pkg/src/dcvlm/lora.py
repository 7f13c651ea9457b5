"""Low-rank adaptation of linear layers: W = W0 + (alpha/r) * A @ B.

The base weight stays frozen (it never receives gradients while the
adapter is attached); only A (d x r) and B (r x k) train. B starts at
zero so a fresh adapter is an exact no-op. merge() materializes the
update into a dense weight for inference; unmerge() subtracts it back
out exactly at 64-bit.
"""

from __future__ import annotations

import numpy as np

from .autograd import Tensor, matmul, reshape
from .costing import CostReport
from .layers import ConfigError, Layer, Linear, uniform_init


class LoraError(RuntimeError):
    code = "E_LORA"


class LoraAdapter(Layer):
    """Wraps a Linear layer with a scaled low-rank residual path."""

    def __init__(self, base: Linear, rank: int, alpha: float = 32.0,
                 dropout: float = 0.0, rng: np.random.Generator | None = None):
        d, k = base.d_in, base.d_out
        if rank < 1 or rank > min(d, k) // 2:
            raise ConfigError(
                f"rank {rank} outside (0, min({d},{k})/2]; low-rank means r << min(d,k)"
            )
        if rng is None:
            rng = np.random.default_rng(0)
        dtype = base.weight.data.dtype
        self.base = base
        self.rank = rank
        self.alpha = alpha
        self.dropout = dropout
        self.down = uniform_init(rng, (d, rank), d, dtype)       # A
        self.up = Tensor(np.zeros((rank, k), dtype=dtype), requires_grad=True)  # B
        self.training = True
        self.merged = False
        self._rng = rng
        base.weight.requires_grad = False
        if base.bias is not None:
            base.bias.requires_grad = False

    @property
    def scaling(self) -> float:
        return self.alpha / self.rank

    def __call__(self, x: Tensor) -> Tensor:
        if self.merged:
            return self.base(x)
        out = self.base(x)
        h = x
        if self.training and self.dropout > 0.0:
            keep = (self._rng.random(x.shape) >= self.dropout)
            mask = Tensor((keep / (1.0 - self.dropout)).astype(x.data.dtype))
            h = h * mask
        lead = h.shape[:-1]
        flat = reshape(h, (-1, self.base.d_in)) if h.data.ndim != 2 else h
        delta = matmul(matmul(flat, self.down), self.up) * self.scaling
        if h.data.ndim != 2:
            delta = reshape(delta, lead + (self.base.d_out,))
        return out + delta

    def delta_weight(self) -> np.ndarray:
        return self.scaling * (self.down.data @ self.up.data)

    def merge(self) -> np.ndarray:
        """Fold the adapter into the base weight; eval mode only."""
        if self.training:
            raise LoraError("merge during training mode; call set_eval() first")
        if self.merged:
            raise LoraError("adapter already merged")
        self.base.weight.data = self.base.weight.data + self.delta_weight()
        self.merged = True
        return self.base.weight.data

    def unmerge(self) -> None:
        if not self.merged:
            raise LoraError("adapter is not merged")
        self.base.weight.data = self.base.weight.data - self.delta_weight()
        self.merged = False

    def set_eval(self) -> None:
        self.training = False

    def set_train(self) -> None:
        if self.merged:
            raise LoraError("unmerge before training")
        self.training = True


def attach_adapters(layer: Layer, rank: int, alpha: float = 32.0,
                    dropout: float = 0.0,
                    rng: np.random.Generator | None = None) -> dict[str, LoraAdapter]:
    """Replace every Linear reachable from layer with a LoRA-wrapped one.

    Returns adapters keyed by the attribute path of the wrapped layer.
    Linear layers too small for the rank bound are left untouched.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    adapters: dict[str, LoraAdapter] = {}

    def walk(obj: Layer, prefix: str) -> None:
        for name in sorted(vars(obj)):
            value = getattr(obj, name)
            path = f"{prefix}{name}"
            if isinstance(value, Linear):
                if rank <= min(value.d_in, value.d_out) // 2:
                    adapter = LoraAdapter(value, rank, alpha, dropout, rng)
                    setattr(obj, name, adapter)
                    adapters[path] = adapter
            elif isinstance(value, LoraAdapter):
                continue
            elif isinstance(value, Layer):
                walk(value, f"{path}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Layer):
                        walk(item, f"{path}.{i}.")

    walk(layer, "")
    return adapters


def _walk_adapters(model: Layer):
    def walk(obj, prefix: str):
        for name in sorted(vars(obj)):
            value = getattr(obj, name)
            path = f"{prefix}{name}"
            if isinstance(value, LoraAdapter):
                yield path, value
            elif isinstance(value, Layer):
                yield from walk(value, f"{path}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Layer):
                        yield from walk(item, f"{path}.{i}.")
    yield from walk(model, "")


def trainable_param_count(model: Layer,
                          extra_trainable: Layer | None = None) -> CostReport:
    """Per-adapter trainable parameters (A and B only; base weights are
    frozen and excluded). extra_trainable adds modules trained alongside
    the adapters, e.g. an unfrozen projector."""
    report = CostReport()
    for path, adapter in _walk_adapters(model):
        report.add(f"{path}.adapter", 0, adapter.down.size + adapter.up.size)
    if extra_trainable is not None:
        report.add("extra_trainable", 0, extra_trainable.param_count())
    return report


def frozen_param_count(model: Layer) -> int:
    """Parameters held fixed while adapters train (adapter bases)."""
    total = 0
    for _, adapter in _walk_adapters(model):
        total += adapter.base.weight.size
        if adapter.base.bias is not None:
            total += adapter.base.bias.size
    return total
