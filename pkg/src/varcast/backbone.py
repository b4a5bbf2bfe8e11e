"""Forecasting backbone: embedding, latent-fused multi-head self-attention,
a feed-forward block with residual + layer norm, and a one-shot MLP head.

The attention input is the embedded normalized window plus alpha times the
fused latent; alpha = 0 (or fusion off) short-circuits so the output is
bitwise independent of latent samples.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .config import ModelConfig
from .errors import DimensionError

LAYER_NORM_EPS = 1e-12


@dataclass
class BackboneParams:
    value_proj: Tensor           # [V, d]
    time_proj: Tensor            # [F, d]
    w_query: list[Tensor]        # per head: [d, d_k]
    w_key: list[Tensor]
    w_value: list[Tensor]
    w_out: Tensor                # [m * d_k, d]
    ff_w1: Tensor                # [d, d_ff]
    ff_w2: Tensor                # [d_ff, d]
    ln_gain: Tensor              # [d]
    ln_bias: Tensor              # [d]
    head_w1: Tensor              # [T * d, d_ff]
    head_b1: Tensor              # [d_ff]
    head_w2: Tensor              # [d_ff, H * V]
    head_b2: Tensor              # [H * V]

    def named(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {
            "backbone.value_proj": self.value_proj,
            "backbone.time_proj": self.time_proj,
        }
        for name in ("w_query", "w_key", "w_value"):
            for i, t in enumerate(getattr(self, name)):
                out[f"backbone.{name}.{i}"] = t
        for name in ("w_out", "ff_w1", "ff_w2", "ln_gain", "ln_bias",
                     "head_w1", "head_b1", "head_w2", "head_b2"):
            out[f"backbone.{name}"] = getattr(self, name)
        return out


@dataclass
class BackboneState:
    """Intermediate activations of one forward pass."""

    embedded: Tensor       # [T, d]
    attention_out: Tensor  # [T, d]
    hidden: Tensor         # [T, d]; consumed by the latent priors and the head


def _uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_backbone_params(config: ModelConfig, rng: np.random.Generator) -> BackboneParams:
    v, d, f = config.channels, config.width, config.time_features
    m, dk, dff = config.heads, config.head_dim, config.ff_width
    t, h = config.input_len, config.horizon
    w_query = [Tensor(_uniform(rng, (d, dk), d), requires_grad=True) for _ in range(m)]
    w_key = [Tensor(_uniform(rng, (d, dk), d), requires_grad=True) for _ in range(m)]
    w_value = [Tensor(_uniform(rng, (d, dk), d), requires_grad=True) for _ in range(m)]
    return BackboneParams(
        value_proj=Tensor(_uniform(rng, (v, d), v), requires_grad=True),
        time_proj=Tensor(_uniform(rng, (f, d), f), requires_grad=True),
        w_query=w_query,
        w_key=w_key,
        w_value=w_value,
        w_out=Tensor(_uniform(rng, (m * dk, d), m * dk), requires_grad=True),
        ff_w1=Tensor(_uniform(rng, (d, dff), d), requires_grad=True),
        ff_w2=Tensor(_uniform(rng, (dff, d), dff), requires_grad=True),
        ln_gain=Tensor(np.ones(d), requires_grad=True),
        ln_bias=Tensor(np.zeros(d), requires_grad=True),
        head_w1=Tensor(_uniform(rng, (t * d, dff), t * d), requires_grad=True),
        head_b1=Tensor(_uniform(rng, (dff,), t * d), requires_grad=True),
        head_w2=Tensor(_uniform(rng, (dff, h * v), dff), requires_grad=True),
        head_b2=Tensor(_uniform(rng, (h * v,), dff), requires_grad=True),
    )


def positional_encoding(length: int, width: int) -> np.ndarray:
    """Fixed sinusoidal table: even columns sin, odd columns cos, so position
    zero reads [0, 1, 0, 1, ...]."""
    pos = np.arange(length, dtype=np.float64)[:, None]
    pairs = -(-width // 2)
    rates = np.power(10000.0, -2.0 * np.arange(pairs) / width)
    table = np.zeros((length, 2 * pairs))
    table[:, 0::2] = np.sin(pos * rates)
    table[:, 1::2] = np.cos(pos * rates)
    return table[:, :width]


def embed(x_norm: np.ndarray, time_features: np.ndarray,
          params: BackboneParams, config: ModelConfig) -> Tensor:
    """Value projection + calendar-feature projection + positional encoding."""
    x_norm = np.asarray(x_norm, dtype=np.float64)
    time_features = np.asarray(time_features, dtype=np.float64)
    if time_features.shape[1] != config.time_features:
        raise DimensionError(
            f"expected {config.time_features} time features, got {time_features.shape[1]}")
    if x_norm.shape[0] != time_features.shape[0]:
        raise DimensionError(
            f"values cover {x_norm.shape[0]} steps but features cover {time_features.shape[0]}")
    pe = Tensor(positional_encoding(x_norm.shape[0], config.width))
    return Tensor(x_norm) @ params.value_proj + Tensor(time_features) @ params.time_proj + pe


def fused_attention(embedded: Tensor, fused_latent: Tensor | None, alpha: float,
                    params: BackboneParams, config: ModelConfig) -> Tensor:
    """Multi-head self-attention over embedded + alpha * fused_latent.

    alpha == 0 (or fusion disabled) skips the latent term entirely, keeping
    the output bitwise identical no matter what was sampled.
    """
    if alpha < 0:
        raise ValueError(f"alpha must be >= 0, got {alpha}")
    if fused_latent is None or alpha == 0.0 or not config.fusion:
        u = embedded
    else:
        u = embedded + alpha * fused_latent
    inv_scale = 1.0 / math.sqrt(config.head_dim)
    heads = []
    for wq, wk, wv in zip(params.w_query, params.w_key, params.w_value):
        q = u @ wq
        k = u @ wk
        v = u @ wv
        weights = ad.softmax((q @ ad.transpose(k)) * inv_scale, axis=-1)
        heads.append(weights @ v)
    return ad.concat(heads, axis=1) @ params.w_out


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor) -> Tensor:
    """Normalize each position to zero mean and unit variance over features,
    then apply the learnable gain and bias."""
    centered = x - ad.mean(x, axis=-1, keepdims=True)
    std = ad.sqrt(ad.variance(x, axis=-1, keepdims=True) + LAYER_NORM_EPS)
    return centered / std * gain + bias


def feed_forward(attention_out: Tensor, params: BackboneParams) -> Tensor:
    """Position-wise two-layer network with residual connection and layer norm."""
    inner = ad.relu(attention_out @ params.ff_w1) @ params.ff_w2
    return layer_norm(attention_out + inner, params.ln_gain, params.ln_bias)


def forecast_head(hidden: Tensor, params: BackboneParams, config: ModelConfig) -> Tensor:
    """Flatten the backbone state and emit the whole horizon in one step."""
    t, d = hidden.shape
    flat = ad.reshape(hidden, (1, t * d))
    mid = ad.relu(flat @ params.head_w1 + params.head_b1)
    out = mid @ params.head_w2 + params.head_b2
    return ad.reshape(out, (config.horizon, config.channels))
