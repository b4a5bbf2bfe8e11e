"""Training objective, optimizer, evaluation metrics, and the training loop.

The objective is a combined negative evidence lower bound, minimized:
reconstruction NLL of the raw window, gamma-weighted prediction NLL of the
normalized target under a unit-variance Gaussian, and one KL term per latent
layer. The "prediction" objective mode keeps the architecture intact but
weights reconstruction and KL at exactly zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, backward, fresh_tape, no_grad
from .config import ModelConfig, RunConfig, seed_streams
from .data import DatasetSplit, SeriesWindow
from .errors import DivergenceError, EmptyDatasetError, WindowError
from .latent import LatentStack, gaussian_nll, kl_gaussian
from .model import ForwardPass, ModelParams, init_params, model_forward

LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class LossBreakdown:
    """Scalar loss terms of one window (or a batch average), all in nats.

    ``total`` is the minimized objective. In combined mode it equals
    recon_nll + gamma * pred_nll + sum(kl_per_layer); in prediction mode the
    reconstruction and KL terms are weighted at exactly zero.
    """

    recon_nll: Tensor
    pred_nll: Tensor
    kl_per_layer: list[Tensor]
    total: Tensor
    gamma: float
    objective: str = "combined"

    def to_floats(self) -> dict:
        return {
            "recon": self.recon_nll.item(),
            "pred": self.pred_nll.item(),
            "kl": [k.item() for k in self.kl_per_layer],
            "total": self.total.item(),
        }


@dataclass
class Metrics:
    """Squared and absolute error on de-normalized forecasts vs raw targets."""

    mse: float
    mae: float

    def as_dict(self) -> dict:
        return {"mse": self.mse, "mae": self.mae}


def forward_step(window: SeriesWindow, params: ModelParams, config: ModelConfig,
                 rng: np.random.Generator | None,
                 objective: str = "combined") -> tuple[LossBreakdown, np.ndarray, LatentStack]:
    """One full pipeline pass plus the loss decomposition.

    Raises DivergenceError naming the first loss term that came out NaN.
    """
    fp = model_forward(window, params, config, rng)
    breakdown = loss_from_forward(fp, window, config, objective)
    return breakdown, fp.forecast, fp.latents


def loss_from_forward(fp: ForwardPass, window: SeriesWindow, config: ModelConfig,
                      objective: str = "combined") -> LossBreakdown:
    recon_nll = gaussian_nll(window.x, fp.recon)
    target_norm = (window.target - fp.stats.mu) / fp.stats.sigma
    resid = fp.y_norm - Tensor(target_norm)
    pred_nll = 0.5 * ad.sum(ad.square(resid)) + 0.5 * target_norm.size * LOG_2PI
    kls = [kl_gaussian(q, p) for q, p in zip(fp.latents.posteriors, fp.latents.priors)]
    if objective == "prediction":
        total = config.gamma * pred_nll
    else:
        total = recon_nll + config.gamma * pred_nll
        for k in kls:
            total = total + k
    breakdown = LossBreakdown(recon_nll=recon_nll, pred_nll=pred_nll, kl_per_layer=kls,
                              total=total, gamma=config.gamma, objective=objective)
    _check_finite(breakdown)
    return breakdown


def _check_finite(b: LossBreakdown) -> None:
    for name, term in (("recon_nll", b.recon_nll), ("pred_nll", b.pred_nll)):
        if math.isnan(term.item()):
            raise DivergenceError(name)
    for i, k in enumerate(b.kl_per_layer):
        if math.isnan(k.item()):
            raise DivergenceError(f"kl[{i}]")
    if math.isnan(b.total.item()):
        raise DivergenceError("total")


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    """First/second moment accumulators plus the shared step count."""

    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: dict[str, Tensor], grads: dict[str, np.ndarray], state: AdamState,
              lr: float = 1e-3, betas: tuple[float, float] = (0.9, 0.999),
              eps: float = 1e-8) -> None:
    """Standard Adam update with bias correction, in place on ``params``."""
    b1, b2 = betas
    state.step += 1
    t = state.step
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        m = state.m.setdefault(name, np.zeros_like(p.data))
        v = state.v.setdefault(name, np.zeros_like(p.data))
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1 ** t)
        v_hat = v / (1.0 - b2 ** t)
        p.data = p.data - lr * m_hat / (np.sqrt(v_hat) + eps)


def clip_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> dict[str, np.ndarray]:
    if max_norm <= 0:
        return grads
    total = math.sqrt(math.fsum(float(np.sum(g * g)) for g in grads.values()))
    if total <= max_norm:
        return grads
    factor = max_norm / total
    return {name: g * factor for name, g in grads.items()}


# ---------------------------------------------------------------------------
# evaluation


def evaluate(windows: list[SeriesWindow], params: ModelParams, config: ModelConfig) -> Metrics:
    """Sampling-free metrics: posterior means everywhere, so repeated calls
    are bit-identical."""
    if not windows:
        raise EmptyDatasetError("evaluation split holds no windows")
    sq_sum = 0.0
    abs_sum = 0.0
    count = 0
    with no_grad():
        for w in windows:
            fp = model_forward(w, params, config, rng=None)
            err = fp.forecast - w.target
            sq_sum += float(np.sum(err * err))
            abs_sum += float(np.sum(np.abs(err)))
            count += err.size
    return Metrics(mse=sq_sum / count, mae=abs_sum / count)


def persistence_forecast(window: SeriesWindow) -> np.ndarray:
    """Repeat the last observed value across the horizon."""
    return np.repeat(window.x[-1:], window.horizon, axis=0)


def seasonal_naive_forecast(window: SeriesWindow, period: int) -> np.ndarray:
    """Repeat the final season of the input across the horizon."""
    t = window.input_len
    if period < 1 or period > t:
        raise WindowError(f"seasonal period {period} does not fit input of length {t}")
    idx = t - period + (np.arange(window.horizon) % period)
    return window.x[idx]


def baseline_metrics(windows: list[SeriesWindow], kind: str, period: int = 0) -> Metrics:
    """Reference forecasters the evaluator provides: 'persistence' or 'seasonal'."""
    if not windows:
        raise EmptyDatasetError("evaluation split holds no windows")
    sq_sum = 0.0
    abs_sum = 0.0
    count = 0
    for w in windows:
        if kind == "persistence":
            y = persistence_forecast(w)
        elif kind == "seasonal":
            y = seasonal_naive_forecast(w, period)
        else:
            raise ValueError(f"unknown baseline '{kind}'")
        err = y - w.target
        sq_sum += float(np.sum(err * err))
        abs_sum += float(np.sum(np.abs(err)))
        count += err.size
    return Metrics(mse=sq_sum / count, mae=abs_sum / count)


# ---------------------------------------------------------------------------
# training loop


@dataclass
class TrainResult:
    params: ModelParams                 # best-validation snapshot
    records: list[dict]                 # one structured record per epoch
    step_history: list[dict]            # per optimizer step: loss terms
    best_epoch: int
    best_val: Metrics | None
    steps: int


def train(dataset: DatasetSplit, run_cfg: RunConfig, config: ModelConfig,
          streams: dict[str, np.random.Generator] | None = None) -> TrainResult:
    """Minibatch loop over shuffled training windows with early stopping on
    validation MSE. The best-validation parameter snapshot is returned.

    A NaN loss aborts with DivergenceError carrying the last finite record.
    """
    if not dataset.train:
        raise EmptyDatasetError("training split holds no windows")
    if streams is None:
        streams = seed_streams(run_cfg.seed)
    params = init_params(config, streams["init"])
    named = params.named()
    state = AdamState()
    records: list[dict] = []
    step_history: list[dict] = []
    best_val_mse = math.inf
    best_snapshot = params.snapshot()
    best_epoch = 0
    best_val: Metrics | None = None
    stale = 0
    steps = 0
    stop = False

    for epoch in range(1, run_cfg.epochs + 1):
        order = streams["shuffle"].permutation(len(dataset.train))
        epoch_terms: list[dict] = []
        for lo in range(0, len(order), run_cfg.batch):
            batch = [dataset.train[i] for i in order[lo:lo + run_cfg.batch]]
            with fresh_tape():
                try:
                    parts = [forward_step(w, params, config, streams["sample"],
                                          run_cfg.objective)[0] for w in batch]
                except DivergenceError as exc:
                    exc.last_record = records[-1] if records else None
                    raise
                total = parts[0].total
                for p in parts[1:]:
                    total = total + p.total
                total = total * (1.0 / len(parts))
                backward(total)
            grads = {name: t.grad for name, t in named.items() if t.grad is not None}
            grads = clip_global_norm(grads, run_cfg.grad_clip)
            if run_cfg.lr > 0:
                adam_step(named, grads, state, lr=run_cfg.lr)
            params.zero_grad()
            step_terms = _mean_terms([p.to_floats() for p in parts])
            epoch_terms.append(step_terms)
            step_history.append({"step": steps + 1, **step_terms})
            steps += 1
            if run_cfg.max_steps and steps >= run_cfg.max_steps:
                stop = True
                break
        epoch_mean = _mean_terms(epoch_terms)
        if dataset.val:
            val = evaluate(dataset.val, params, config)
            val_mse, val_mae = val.mse, val.mae
        else:
            val = None
            val_mse = val_mae = None
        records.append({
            "epoch": epoch,
            "step": steps,
            "recon": epoch_mean["recon"],
            "pred": epoch_mean["pred"],
            "kl": epoch_mean["kl"],
            "total": epoch_mean["total"],
            "val_mse": val_mse,
            "val_mae": val_mae,
        })
        if val is not None:
            if val.mse < best_val_mse:
                best_val_mse = val.mse
                best_snapshot = params.snapshot()
                best_epoch = epoch
                best_val = val
                stale = 0
            else:
                stale += 1
                if run_cfg.patience and stale >= run_cfg.patience:
                    stop = True
        else:
            best_snapshot = params.snapshot()
            best_epoch = epoch
        if stop:
            break

    params.load_arrays(best_snapshot)
    return TrainResult(params=params, records=records, step_history=step_history,
                       best_epoch=best_epoch, best_val=best_val, steps=steps)


def _mean_terms(terms: list[dict]) -> dict:
    if not terms:
        return {"recon": 0.0, "pred": 0.0, "kl": [], "total": 0.0}
    n = len(terms)
    n_layers = len(terms[0]["kl"])
    return {
        "recon": math.fsum(t["recon"] for t in terms) / n,
        "pred": math.fsum(t["pred"] for t in terms) / n,
        "kl": [math.fsum(t["kl"][i] for t in terms) / n for i in range(n_layers)],
        "total": math.fsum(t["total"] for t in terms) / n,
    }
