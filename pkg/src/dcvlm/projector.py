"""Token-mixing projector family bridging encoder features to an LLM width.

A MixerBlock alternates a token-mixing MLP (applied across the token axis
via the transposed view) and a channel-mixing MLP, each pre-normalized,
with residual connections on by default. The hybrid projector runs one
mixer stack per feature stream (low: spatially detailed tokens, high:
semantically rich tokens), sends each through a two-layer projection
head (linear-GELU-linear into the LLM width), and concatenates low-first.

Variants, named after the published ablation family:
  mlp2     high stream only, no mixer blocks (two-layer head alone)
  mlp2h    both streams, no mixer blocks
  mixer1h  both streams, one mixer block each
  mixer2h  both streams, two mixer blocks each (the full design)

Hidden widths default to twice the mixed dimension.
"""

from __future__ import annotations

import numpy as np

from .autograd import Tensor, concat, gelu, permute
from .costing import CostReport
from .encoder import FeaturePair
from .layers import ConfigError, Layer, Linear, Mlp, TokenNorm

VARIANTS = {"mlp2": (0, False), "mlp2h": (0, True),
            "mixer1h": (1, True), "mixer2h": (2, True)}


class MixerBlock(Layer):
    """Token mixing then channel mixing over (B, n, d) tokens.

    residual=False reproduces the two mixing equations literally (no
    residual paths); normalize=False bypasses both pre-norms, which makes
    the token/channel transpose duality exact.
    """

    def __init__(self, n_tokens: int, dim: int, rng: np.random.Generator,
                 hidden_tokens: int | None = None, hidden_dim: int | None = None,
                 residual: bool = True, normalize: bool = True, dtype=np.float32):
        self.n_tokens = n_tokens
        self.dim = dim
        self.residual = residual
        self.normalize = normalize
        h_t = 2 * n_tokens if hidden_tokens is None else hidden_tokens
        h_c = 2 * dim if hidden_dim is None else hidden_dim
        self.token_fc1 = Linear(n_tokens, h_t, rng, dtype=dtype)
        self.token_fc2 = Linear(h_t, n_tokens, rng, dtype=dtype)
        self.channel_fc1 = Linear(dim, h_c, rng, dtype=dtype)
        self.channel_fc2 = Linear(h_c, dim, rng, dtype=dtype)
        self.norm_token = TokenNorm(dim, dtype=dtype)
        self.norm_channel = TokenNorm(dim, dtype=dtype)

    def _check(self, x: Tensor) -> None:
        if x.data.ndim != 3 or x.shape[1] != self.n_tokens or x.shape[2] != self.dim:
            raise ConfigError(
                f"mixer block configured for (B,{self.n_tokens},{self.dim}), "
                f"got {x.shape}"
            )

    def token_mix(self, x: Tensor) -> Tensor:
        self._check(x)
        u = self.norm_token(x) if self.normalize else x
        t = permute(u, (0, 2, 1))
        t = self.token_fc2(gelu(self.token_fc1(t)))
        t = permute(t, (0, 2, 1))
        return x + t if self.residual else t

    def channel_mix(self, x: Tensor) -> Tensor:
        u = self.norm_channel(x) if self.normalize else x
        c = self.channel_fc2(gelu(self.channel_fc1(u)))
        return x + c if self.residual else c

    def __call__(self, x: Tensor) -> Tensor:
        return self.channel_mix(self.token_mix(x))


class StreamProjector(Layer):
    """N mixer blocks followed by the two-layer projection head."""

    def __init__(self, n_tokens: int, dim: int, d_llm: int, depth: int,
                 rng: np.random.Generator, dtype=np.float32):
        self.blocks = [
            MixerBlock(n_tokens, dim, rng, dtype=dtype) for _ in range(depth)
        ]
        self.head = Mlp(dim, d_llm, d_llm, rng, dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        for block in self.blocks:
            x = block(x)
        return self.head(x)


class HybridProjector(Layer):
    """Dual-stream projector; output tokens are low block then high block."""

    def __init__(self, n_low: int, d_low: int, n_high: int, d_high: int,
                 d_llm: int, depth: int = 2, include_low: bool = True,
                 rng: np.random.Generator | None = None, dtype=np.float32):
        if rng is None:
            rng = np.random.default_rng(0)
        self.n_low = n_low
        self.n_high = n_high
        self.d_llm = d_llm
        self.depth = depth
        self.include_low = include_low
        self.low_stream = (
            StreamProjector(n_low, d_low, d_llm, depth, rng, dtype)
            if include_low else None
        )
        self.high_stream = StreamProjector(n_high, d_high, d_llm, depth, rng, dtype)

    @property
    def n_out(self) -> int:
        return (self.n_low if self.include_low else 0) + self.n_high

    def __call__(self, pair: FeaturePair) -> Tensor:
        high = self.high_stream(pair.high)
        if not self.include_low:
            return high
        low = self.low_stream(pair.low)
        return concat([low, high], axis=1)


def make_variant(kind: str, n_low: int, d_low: int, n_high: int, d_high: int,
                 d_llm: int, rng: np.random.Generator | None = None,
                 dtype=np.float32) -> HybridProjector:
    if kind not in VARIANTS:
        raise ConfigError(f"unknown projector variant {kind!r}; choose from {sorted(VARIANTS)}")
    depth, include_low = VARIANTS[kind]
    return HybridProjector(n_low, d_low, n_high, d_high, d_llm,
                           depth=depth, include_low=include_low,
                           rng=rng, dtype=dtype)


def mixer_block_forward(x: Tensor, block: MixerBlock) -> Tensor:
    return block(x)


def hybrid_forward(pair: FeaturePair, proj: HybridProjector) -> Tensor:
    return proj(pair)


def variant_forward(pair: FeaturePair, proj: HybridProjector) -> Tensor:
    return proj(pair)


# ---------------------------------------------------------------------------
# analytic accounting

def _linear_cost(report: CostReport, name: str, tokens: int, d_in: int,
                 d_out: int) -> None:
    report.add(name, tokens * d_in * d_out, d_in * d_out + d_out)


def _stream_cost(report: CostReport, name: str, n: int, d: int, d_llm: int,
                 depth: int) -> None:
    h_t, h_c = 2 * n, 2 * d
    for i in range(depth):
        _linear_cost(report, f"{name}.block{i}.token_fc1", d, n, h_t)
        _linear_cost(report, f"{name}.block{i}.token_fc2", d, h_t, n)
        _linear_cost(report, f"{name}.block{i}.channel_fc1", n, d, h_c)
        _linear_cost(report, f"{name}.block{i}.channel_fc2", n, h_c, d)
        report.add(f"{name}.block{i}.norms", 0, 4 * d)
    _linear_cost(report, f"{name}.head.fc1", n, d, d_llm)
    _linear_cost(report, f"{name}.head.fc2", n, d_llm, d_llm)


def count_projector_cost(kind: str, n_low: int = 256, d_low: int = 384,
                         n_high: int = 32, d_high: int = 768,
                         d_llm: int = 3584) -> CostReport:
    """Exact per-layer multiply-adds and parameters for one variant.

    Defaults are the full-scale stream shapes and LLM width. Multiply-add
    counts are per batch element and scale linearly with token count;
    parameter counts are batch-independent.
    """
    if kind not in VARIANTS:
        raise ConfigError(f"unknown projector variant {kind!r}; choose from {sorted(VARIANTS)}")
    depth, include_low = VARIANTS[kind]
    report = CostReport()
    if include_low:
        _stream_cost(report, "low", n_low, d_low, d_llm, depth)
    _stream_cost(report, "high", n_high, d_high, d_llm, depth)
    return report
