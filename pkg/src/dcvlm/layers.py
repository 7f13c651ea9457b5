"""Parameter-holding building blocks on top of the autograd tensors.

A Layer collects its parameters by walking attributes (Tensor, Layer, or
lists of either) in sorted attribute order, so parameter naming and
checkpoint layout are deterministic.
"""

from __future__ import annotations

import numpy as np

from .autograd import Tensor, gelu, layer_norm, matmul, reshape


class ConfigError(ValueError):
    """Layer wired up inconsistently with its inputs."""

    code = "E_CONFIG"


def uniform_init(rng: np.random.Generator, shape, fan_in: int, dtype=np.float32) -> Tensor:
    bound = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape).astype(dtype), requires_grad=True)


class Layer:
    def params(self) -> dict[str, Tensor]:
        """Flat name -> trainable parameter map, stable across runs."""
        out: dict[str, Tensor] = {}
        self._collect("", out, trainable_only=True)
        return out

    def tensors(self) -> dict[str, Tensor]:
        """All parameter tensors, frozen ones included (checkpoint state)."""
        out: dict[str, Tensor] = {}
        self._collect("", out, trainable_only=False)
        return out

    def _collect(self, prefix: str, out: dict[str, Tensor],
                 trainable_only: bool = True) -> None:
        for name in sorted(vars(self)):
            value = getattr(self, name)
            key = f"{prefix}{name}"
            if isinstance(value, Tensor):
                if value.requires_grad or not trainable_only:
                    out[key] = value
            elif isinstance(value, Layer):
                value._collect(f"{key}.", out, trainable_only)
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Layer):
                        item._collect(f"{key}.{i}.", out, trainable_only)
                    elif isinstance(item, Tensor):
                        if item.requires_grad or not trainable_only:
                            out[f"{key}.{i}"] = item

    def param_count(self) -> int:
        return sum(p.size for p in self.params().values())

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self.tensors().items()}

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        state = self.tensors()
        missing = set(state) - set(arrays)
        if missing:
            raise ConfigError(f"checkpoint missing parameters: {sorted(missing)}")
        for name, p in state.items():
            arr = arrays[name]
            if tuple(arr.shape) != p.shape:
                raise ConfigError(
                    f"checkpoint shape {arr.shape} != parameter shape {p.shape} for {name}"
                )
            p.data = arr.astype(p.data.dtype, copy=True)


class Linear(Layer):
    """y = x @ W + b over the trailing axis; leading axes are flattened."""

    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator,
                 bias: bool = True, dtype=np.float32):
        self.d_in = d_in
        self.d_out = d_out
        self.weight = uniform_init(rng, (d_in, d_out), d_in, dtype)
        self.bias = Tensor(np.zeros(d_out, dtype=dtype), requires_grad=True) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.d_in:
            raise ConfigError(f"Linear expects trailing dim {self.d_in}, got {x.shape}")
        lead = x.shape[:-1]
        flat = reshape(x, (-1, self.d_in)) if x.data.ndim != 2 else x
        out = matmul(flat, self.weight)
        if self.bias is not None:
            out = out + self.bias
        if x.data.ndim != 2:
            out = reshape(out, lead + (self.d_out,))
        return out


class TokenNorm(Layer):
    """Layer norm over the trailing feature axis of (..., d) tokens."""

    def __init__(self, dim: int, eps: float = 1e-5, dtype=np.float32):
        self.dim = dim
        self.eps = eps
        self.scale = Tensor(np.ones(dim, dtype=dtype), requires_grad=True)
        self.shift = Tensor(np.zeros(dim, dtype=dtype), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, -1, self.scale, self.shift, self.eps)


class SpatialNorm(Layer):
    """Per-channel norm over the spatial axes of a (B, C, H, W, D) volume."""

    def __init__(self, channels: int, eps: float = 1e-5, dtype=np.float32):
        self.channels = channels
        self.eps = eps
        self.scale = Tensor(np.ones((1, channels, 1, 1, 1), dtype=dtype), requires_grad=True)
        self.shift = Tensor(np.zeros((1, channels, 1, 1, 1), dtype=dtype), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        if x.data.ndim != 5 or x.shape[1] != self.channels:
            raise ConfigError(
                f"SpatialNorm({self.channels}) got volume of shape {x.shape}"
            )
        return layer_norm(x, (2, 3, 4), self.scale, self.shift, self.eps)


class Mlp(Layer):
    """Two linear layers with a GELU between them."""

    def __init__(self, d_in: int, d_hidden: int, d_out: int, rng: np.random.Generator,
                 dtype=np.float32):
        self.fc1 = Linear(d_in, d_hidden, rng, dtype=dtype)
        self.fc2 = Linear(d_hidden, d_out, rng, dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(gelu(self.fc1(x)))
