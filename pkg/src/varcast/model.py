"""Combined model: parameter container, initialization, and the full forward
pass from a raw window to a de-normalized forecast plus latent bookkeeping.

Pipeline order: normalize the window; infer posteriors from the raw window
and sample every layer; fuse the samples; run the backbone on the normalized
window with the fused latent; condition priors and the reconstruction on the
backbone state; emit the horizon and map it back to series units.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor
from .backbone import (
    BackboneParams,
    BackboneState,
    embed,
    feed_forward,
    forecast_head,
    fused_attention,
    init_backbone_params,
)
from .config import ModelConfig
from .data import SeriesWindow
from .latent import (
    GaussianParams,
    LatentParams,
    LatentStack,
    compute_priors,
    fuse_latents,
    infer_posteriors,
    init_latent_params,
    reconstruction_params,
    sample_reparameterized,
)
from .stationarize import WindowStats, denormalize_inverse, normalize


@dataclass
class ModelParams:
    latent: LatentParams
    backbone: BackboneParams

    def named(self) -> dict[str, Tensor]:
        out = self.latent.named()
        out.update(self.backbone.named())
        return out

    def snapshot(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.named().items()}

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for name, t in self.named().items():
            t.data = np.ascontiguousarray(arrays[name], dtype=np.float64)

    def zero_grad(self) -> None:
        for t in self.named().values():
            t.grad = None

    def clone(self) -> "ModelParams":
        return copy.deepcopy(self)


def init_params(config: ModelConfig, rng: np.random.Generator) -> ModelParams:
    """Initialize all weights uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)).

    Consumption order of ``rng`` is the field order of the two parameter
    dataclasses, so a fixed seed reproduces the same model bit for bit.
    """
    return ModelParams(
        latent=init_latent_params(config, rng),
        backbone=init_backbone_params(config, rng),
    )


@dataclass
class ForwardPass:
    """Everything one forward pass produces."""

    x_norm: np.ndarray           # [T, V]
    stats: WindowStats
    latents: LatentStack
    state: BackboneState
    recon: GaussianParams        # over the raw window
    y_norm: Tensor               # [H, V] on normalized scale
    forecast: np.ndarray         # [H, V] in series units


def model_forward(window: SeriesWindow, params: ModelParams, config: ModelConfig,
                  rng: np.random.Generator | None = None) -> ForwardPass:
    """Run the full pipeline on one window.

    With ``rng`` the latents are reparameterized samples (training); without
    it the posterior means are used, making the pass fully deterministic
    (evaluation).
    """
    t = window.input_len
    x_norm, stats = normalize(window.x, config.eps)
    posteriors = infer_posteriors(Tensor(window.x), params.latent, config)
    if rng is not None:
        samples = [sample_reparameterized(g, rng) for g in posteriors]
    else:
        samples = [g.mu for g in posteriors]
    fused = fuse_latents(samples, t)
    embedded = embed(x_norm, window.time_features[:t], params.backbone, config)
    attention_out = fused_attention(embedded, fused, config.alpha, params.backbone, config)
    hidden = feed_forward(attention_out, params.backbone)
    priors = compute_priors(samples, hidden, params.latent, config)
    recon = reconstruction_params(samples[0], hidden, params.latent, config)
    y_norm = forecast_head(hidden, params.backbone, config)
    forecast = denormalize_inverse(y_norm.data, stats)
    return ForwardPass(
        x_norm=x_norm,
        stats=stats,
        latents=LatentStack(posteriors=posteriors, priors=priors, samples=samples, fused=fused),
        state=BackboneState(embedded=embedded, attention_out=attention_out, hidden=hidden),
        recon=recon,
        y_norm=y_norm,
        forecast=forecast,
    )
