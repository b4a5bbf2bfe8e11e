"""Hierarchical Gaussian latent module over a shrinking time ladder.

A stack of L diagonal-Gaussian latent layers: layer 1 runs at the full input
length T and each layer above halves (more generally divides by the scale
factor, rounded up) the time dimension. Posteriors are inferred from the raw,
un-normalized window; priors condition on the sampled latent of the layer
above and on the backbone state pooled to the matching resolution. The fused
latent (all layers upsampled to T and summed) is what the backbone consumes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .config import ModelConfig
from .errors import DimensionError, HierarchyTooDeepError

SOFTPLUS_UNIT = math.log(math.e - 1.0)  # softplus(SOFTPLUS_UNIT) == 1


@dataclass
class GaussianParams:
    """Diagonal Gaussian over a [T_i, K] block; sigma strictly positive."""

    mu: Tensor
    sigma: Tensor

    def __post_init__(self):
        if self.mu.shape != self.sigma.shape:
            raise DimensionError(
                f"mu/sigma shapes disagree: {self.mu.shape} vs {self.sigma.shape}")

    @property
    def shape(self) -> tuple[int, ...]:
        return self.mu.shape


@dataclass
class LatentStack:
    """Per-layer posterior/prior/sample plus the fused full-length latent."""

    posteriors: list[GaussianParams]
    priors: list[GaussianParams]
    samples: list[Tensor]
    fused: Tensor  # [T, K]


@dataclass
class LatentParams:
    """Learnable parameters of the latent hierarchy.

    Inference weights for layer i aggregate the chunk of raw input the latent
    step covers (a strided convolution with kernel = stride = scale^(i-1),
    stored as a blockwise matrix). Prior scales are softplus-parameterized
    per layer, shared across time; the top-layer prior scale is fixed at 1.
    """

    post_w_mu: list[Tensor]      # layer i: [scale^(i-1) * V, K]
    post_w_sigma: list[Tensor]
    post_b_mu: list[Tensor]      # [K]
    post_b_sigma: list[Tensor]
    prior_w_z: list[Tensor]      # layers below the top: [K, K]
    prior_w_h: list[Tensor]      # layers below the top: [d, K]
    prior_rho: list[Tensor]      # layers below the top: [K]
    top_w_h: Tensor              # [d, K]
    recon_w_z: Tensor            # [K, V]
    recon_w_h: Tensor            # [d, V]
    recon_rho: Tensor            # [V]

    def named(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for name in ("post_w_mu", "post_w_sigma", "post_b_mu", "post_b_sigma",
                     "prior_w_z", "prior_w_h", "prior_rho"):
            for i, t in enumerate(getattr(self, name)):
                out[f"latent.{name}.{i}"] = t
        out["latent.top_w_h"] = self.top_w_h
        out["latent.recon_w_z"] = self.recon_w_z
        out["latent.recon_w_h"] = self.recon_w_h
        out["latent.recon_rho"] = self.recon_rho
        return out


def time_ladder(input_len: int, scale: int, layers: int) -> list[int]:
    """Per-layer time lengths: T_1 = T, T_{i+1} = ceil(T_i / scale)."""
    if input_len < scale ** (layers - 1):
        raise HierarchyTooDeepError(
            f"input length {input_len} cannot support {layers} layers at scale {scale}")
    dims = [input_len]
    for _ in range(layers - 1):
        dims.append(-(-dims[-1] // scale))
    return dims


def _uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_latent_params(config: ModelConfig, rng: np.random.Generator) -> LatentParams:
    v, k, d = config.channels, config.width, config.width
    post_w_mu, post_w_sigma, post_b_mu, post_b_sigma = [], [], [], []
    for i in range(config.layers):
        block = config.scale ** i
        fan = block * v
        post_w_mu.append(Tensor(_uniform(rng, (fan, k), fan), requires_grad=True))
        post_w_sigma.append(Tensor(_uniform(rng, (fan, k), fan), requires_grad=True))
        post_b_mu.append(Tensor(_uniform(rng, (k,), fan), requires_grad=True))
        post_b_sigma.append(Tensor(_uniform(rng, (k,), fan), requires_grad=True))
    prior_w_z, prior_w_h, prior_rho = [], [], []
    for _ in range(config.layers - 1):
        prior_w_z.append(Tensor(_uniform(rng, (k, k), k), requires_grad=True))
        prior_w_h.append(Tensor(_uniform(rng, (d, k), d), requires_grad=True))
        prior_rho.append(Tensor(np.full(k, SOFTPLUS_UNIT), requires_grad=True))
    return LatentParams(
        post_w_mu=post_w_mu,
        post_w_sigma=post_w_sigma,
        post_b_mu=post_b_mu,
        post_b_sigma=post_b_sigma,
        prior_w_z=prior_w_z,
        prior_w_h=prior_w_h,
        prior_rho=prior_rho,
        top_w_h=Tensor(_uniform(rng, (d, k), d), requires_grad=True),
        recon_w_z=Tensor(_uniform(rng, (k, v), k), requires_grad=True),
        recon_w_h=Tensor(_uniform(rng, (d, v), d), requires_grad=True),
        recon_rho=Tensor(np.full(v, SOFTPLUS_UNIT), requires_grad=True),
    )


def _activate(x: Tensor, config: ModelConfig) -> Tensor:
    return ad.relu(x) if config.activation == "relu" else ad.tanh(x)


def _chunked(x: np.ndarray, block: int) -> np.ndarray:
    """Group a [T, V] array into [ceil(T/block), block*V] rows, padding the
    tail by repeating the last frame. Row j holds the chunk of raw input the
    j-th latent step covers."""
    t = x.shape[0]
    n = -(-t // block)
    pad = n * block - t
    if pad:
        x = np.concatenate([x, np.repeat(x[-1:], pad, axis=0)], axis=0)
    return x.reshape(n, block * x.shape[1])


def infer_posteriors(x_raw: Tensor | np.ndarray, params: LatentParams,
                     config: ModelConfig) -> list[GaussianParams]:
    """Posterior Gaussians for every layer, from the raw (un-normalized) window.

    Layer i sees the input aggregated over chunks of scale^(i-1) steps; means
    go through the configured activation, scales through softplus of it, so
    sigma stays strictly positive.
    """
    x = x_raw.data if isinstance(x_raw, Tensor) else np.asarray(x_raw, dtype=np.float64)
    dims = time_ladder(x.shape[0], config.scale, config.layers)
    out = []
    for i, t_i in enumerate(dims):
        chunks = Tensor(_chunked(x, config.scale ** i))
        if chunks.shape[0] != t_i:
            raise DimensionError(f"layer {i + 1}: chunk count {chunks.shape[0]} != ladder {t_i}")
        mu = _activate(chunks @ params.post_w_mu[i] + params.post_b_mu[i], config)
        sigma = ad.softplus(_activate(chunks @ params.post_w_sigma[i] + params.post_b_sigma[i], config))
        out.append(GaussianParams(mu=mu, sigma=sigma))
    return out


def sample_reparameterized(g: GaussianParams, rng: np.random.Generator) -> Tensor:
    """Draw z = mu + sigma * eta with eta ~ N(0, I); gradients reach mu and sigma."""
    eta = Tensor(rng.standard_normal(g.mu.shape))
    return g.mu + g.sigma * eta


def pool_matrix(full_len: int, target_len: int) -> np.ndarray:
    """Parameter-free average pooling as a [target_len, full_len] matrix.

    Coarse step j averages the fine steps it covers under the same index map
    nearest-neighbor upsampling uses, so pooling and interpolation agree on
    block structure.
    """
    owner = (np.arange(full_len) * target_len) // full_len
    mat = np.zeros((target_len, full_len))
    for j in range(target_len):
        members = owner == j
        mat[j, members] = 1.0 / members.sum()
    return mat


def _broadcast_rows(vec: Tensor, rows: int) -> Tensor:
    """Spread a [K] vector to [rows, K] through the graph."""
    return vec + Tensor(np.zeros((rows, vec.shape[0])))


def compute_priors(z_samples: list[Tensor], h: Tensor, params: LatentParams,
                   config: ModelConfig) -> list[GaussianParams]:
    """Top-down conditional priors.

    Top layer: N(act(W h_top), I) with h pooled to the top resolution. Each
    layer below: the mean at a fine step combines the upper-layer sample at
    the covering coarse step (block parent) with the pooled backbone state at
    the fine step's own resolution; the scale is a learnable softplus shared
    across time.
    """
    dims = [z.shape[0] for z in z_samples]
    full_len = h.shape[0]
    priors: list[GaussianParams | None] = [None] * len(z_samples)
    top = len(z_samples) - 1
    h_top = Tensor(pool_matrix(full_len, dims[top])) @ h
    top_mu = _activate(h_top @ params.top_w_h, config)
    priors[top] = GaussianParams(mu=top_mu, sigma=Tensor(np.ones(top_mu.shape)))
    for i in range(top - 1, -1, -1):
        parent = ad.nearest_interpolate(z_samples[i + 1], dims[i], axis=0)
        h_i = Tensor(pool_matrix(full_len, dims[i])) @ h
        mu = _activate(parent @ params.prior_w_z[i] + h_i @ params.prior_w_h[i], config)
        sigma = _broadcast_rows(ad.softplus(params.prior_rho[i]), dims[i])
        priors[i] = GaussianParams(mu=mu, sigma=sigma)
    return priors  # type: ignore[return-value]


def reconstruction_params(z_bottom: Tensor, h: Tensor, params: LatentParams,
                          config: ModelConfig) -> GaussianParams:
    """Gaussian over the raw window: mean from the bottom latent and the
    backbone state, scale learnable per channel and shared across time."""
    mu = _activate(z_bottom @ params.recon_w_z + h @ params.recon_w_h, config)
    sigma = _broadcast_rows(ad.softplus(params.recon_rho), mu.shape[0])
    return GaussianParams(mu=mu, sigma=sigma)


def kl_gaussian(q: GaussianParams, p: GaussianParams) -> Tensor:
    """Closed-form KL(q || p) for diagonal Gaussians, summed over all entries."""
    if q.shape != p.shape:
        raise DimensionError(f"KL shapes disagree: {q.shape} vs {p.shape}")
    var_p = ad.square(p.sigma)
    term = (ad.log(p.sigma) - ad.log(q.sigma)
            + (ad.square(q.sigma) + ad.square(q.mu - p.mu)) / (2.0 * var_p)
            - 0.5)
    return ad.sum(term)


def fuse_latents(z_samples: list[Tensor], target_len: int) -> Tensor:
    """Upsample every layer's sample to the full length and sum them."""
    total = ad.nearest_interpolate(z_samples[0], target_len, axis=0)
    for z in z_samples[1:]:
        total = total + ad.nearest_interpolate(z, target_len, axis=0)
    return total


def gaussian_nll(value: np.ndarray, g: GaussianParams) -> Tensor:
    """Exact negative log density of ``value`` under the diagonal Gaussian."""
    value = np.asarray(value, dtype=np.float64)
    if value.shape != g.shape:
        raise DimensionError(f"value shape {value.shape} != params shape {g.shape}")
    target = Tensor(value)
    term = (ad.log(g.sigma)
            + ad.square(target - g.mu) / (2.0 * ad.square(g.sigma))
            + 0.5 * math.log(2.0 * math.pi))
    return ad.sum(term)
