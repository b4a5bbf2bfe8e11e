"""Run configuration: declarative flat key-value files, validation, and the
master-seed splitting rule.

Config files hold one ``key = <json value>`` pair per line (# comments
allowed), so experiment records stay diffable. Command-line flags override
file values.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field, fields

import numpy as np

from .data import SynthSpec
from .errors import ConfigError

GAMMA_GRID = (0.1, 0.5, 1.0, 2.0, 5.0)  # candidate prediction weights for validation search


@dataclass
class ModelConfig:
    """Architecture hyperparameters, fixed at parameter construction."""

    input_len: int            # T
    horizon: int              # H
    channels: int             # V
    layers: int = 2           # latent hierarchy depth L
    width: int = 16           # model width d; also the shared latent width
    scale: int = 2            # time-dimension shrink factor between latent layers
    heads: int = 2            # attention heads m
    ff_width: int = 0         # feed-forward width; 0 means 2 * width
    head_dim: int = 0         # per-head projection width; 0 means width // heads
    alpha: float = 1.0        # weight of the fused latent in attention input
    gamma: float = 1.0        # weight of the prediction term in the objective
    eps: float = 1e-5         # floor for normalization sigma
    time_features: int = 4
    activation: str = "tanh"  # nonlinearity for latent means: "tanh" or "relu"
    fusion: bool = True       # feed the fused latent into attention at all

    def __post_init__(self):
        if self.ff_width == 0:
            self.ff_width = 2 * self.width
        if self.head_dim == 0:
            self.head_dim = max(1, self.width // self.heads)


@dataclass
class RunConfig:
    """Everything one train/eval/ablate invocation needs."""

    # data source: exactly one of dataset / synth
    dataset: str | None = None
    date_column: str = "date"
    synth: bool = False
    synth_channels: int = 4
    synth_length: int = 2000
    synth_seed: int = 7
    synth_trend: float | list = 0.0
    synth_period: float | list = 24.0
    synth_amplitude: float | list = 1.0
    synth_noise_std: float = 0.1
    synth_switch_times: list = field(default_factory=list)
    synth_switch_scales: list = field(default_factory=list)
    synth_mixing: list | None = None

    # window geometry
    input_len: int = 96
    horizon: int = 96
    stride: int = 1
    split_ratios: list = field(default_factory=lambda: [0.7, 0.1, 0.2])

    # model
    layers: int = 2
    width: int = 16
    scale: int = 2
    heads: int = 2
    ff_width: int = 0
    head_dim: int = 0
    activation: str = "tanh"

    # training
    lr: float = 1e-3
    epochs: int = 10
    batch: int = 8
    patience: int = 5
    seed: int = 0
    max_steps: int = 0        # 0 = no cap
    grad_clip: float = 0.0    # 0 = off; otherwise max global grad norm

    # objective
    alpha: float = 1.0
    gamma: float = 1.0
    eps: float = 1e-5
    objective: str = "combined"   # or "prediction"
    fusion: bool = True

    # reporting
    runs: int = 1
    out_dir: str = "runs"

    def synth_spec(self) -> SynthSpec:
        return SynthSpec(
            channels=self.synth_channels,
            length=self.synth_length,
            seed=self.synth_seed,
            trend=self.synth_trend,
            period=self.synth_period,
            amplitude=self.synth_amplitude,
            noise_std=self.synth_noise_std,
            switch_times=list(self.synth_switch_times),
            switch_scales=list(self.synth_switch_scales),
            mixing=self.synth_mixing,
        )

    def model_config(self, channels: int) -> ModelConfig:
        return ModelConfig(
            input_len=self.input_len,
            horizon=self.horizon,
            channels=channels,
            layers=self.layers,
            width=self.width,
            scale=self.scale,
            heads=self.heads,
            ff_width=self.ff_width,
            head_dim=self.head_dim,
            alpha=self.alpha,
            gamma=self.gamma,
            eps=self.eps,
            activation=self.activation,
            fusion=self.fusion,
        )


def validate(cfg: RunConfig) -> RunConfig:
    """Check cross-field invariants; raise ConfigError naming the offending field."""
    if cfg.dataset is None and not cfg.synth:
        raise ConfigError("dataset: no dataset path given and synth is false")
    if cfg.dataset is not None and cfg.synth:
        raise ConfigError("dataset: dataset path and synth are mutually exclusive")
    if cfg.layers < 1:
        raise ConfigError(f"layers: must be >= 1, got {cfg.layers}")
    if cfg.scale < 2:
        raise ConfigError(f"scale: must be >= 2, got {cfg.scale}")
    if cfg.input_len < cfg.scale ** (cfg.layers - 1):
        raise ConfigError(
            f"input_len: {cfg.input_len} < scale^(layers-1) = {cfg.scale ** (cfg.layers - 1)}; "
            "the latent hierarchy would be too deep")
    if cfg.horizon < 1:
        raise ConfigError(f"horizon: must be >= 1, got {cfg.horizon}")
    if cfg.stride < 1:
        raise ConfigError(f"stride: must be >= 1, got {cfg.stride}")
    if cfg.alpha < 0:
        raise ConfigError(f"alpha: must be >= 0, got {cfg.alpha}")
    if cfg.gamma < 0:
        raise ConfigError(f"gamma: must be >= 0, got {cfg.gamma}")
    if cfg.eps <= 0:
        raise ConfigError(f"eps: must be > 0, got {cfg.eps}")
    if cfg.heads < 1:
        raise ConfigError(f"heads: must be >= 1, got {cfg.heads}")
    if cfg.width < cfg.heads:
        raise ConfigError(f"width: must be >= heads, got width={cfg.width} heads={cfg.heads}")
    if cfg.batch < 1:
        raise ConfigError(f"batch: must be >= 1, got {cfg.batch}")
    if cfg.epochs < 0:
        raise ConfigError(f"epochs: must be >= 0, got {cfg.epochs}")
    if cfg.runs < 1:
        raise ConfigError(f"runs: must be >= 1, got {cfg.runs}")
    if cfg.objective not in ("combined", "prediction"):
        raise ConfigError(f"objective: must be 'combined' or 'prediction', got '{cfg.objective}'")
    if cfg.activation not in ("tanh", "relu"):
        raise ConfigError(f"activation: must be 'tanh' or 'relu', got '{cfg.activation}'")
    ratios = cfg.split_ratios
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(math.fsum(ratios) - 1.0) > 1e-9:
        raise ConfigError(f"split_ratios: need 3 non-negative values summing to 1, got {ratios}")
    try:
        cfg.synth_spec()
    except ValueError as exc:
        raise ConfigError(f"synth_mixing: {exc}") from None
    return cfg


# ---------------------------------------------------------------------------
# flat key = json-value files


def serialize(cfg: RunConfig) -> str:
    lines = []
    for f in fields(cfg):
        value = getattr(cfg, f.name)
        lines.append(f"{f.name} = {json.dumps(value)}")
    return "\n".join(lines) + "\n"


def parse(text: str) -> RunConfig:
    known = {f.name for f in fields(RunConfig)}
    values: dict = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {line_no}: expected 'key = value', got '{raw}'")
        key, _, payload = line.partition("=")
        key = key.strip()
        if key not in known:
            raise ConfigError(f"line {line_no}: unknown key '{key}'")
        try:
            values[key] = json.loads(payload.strip())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"line {line_no}: bad JSON value for '{key}': {exc}") from None
    return RunConfig(**values)


def load(path: str) -> RunConfig:
    with open(path) as fh:
        return parse(fh.read())


def save(cfg: RunConfig, path: str) -> None:
    with open(path, "w") as fh:
        fh.write(serialize(cfg))


def override(cfg: RunConfig, **updates) -> RunConfig:
    """Apply non-None flag overrides on top of a parsed config."""
    clean = {k: v for k, v in updates.items() if v is not None}
    return dataclasses.replace(cfg, **clean)


# ---------------------------------------------------------------------------
# seed policy


def seed_streams(master_seed: int) -> dict[str, np.random.Generator]:
    """Fan one master seed out to the three independent RNG streams.

    Fixed splitting rule: SeedSequence(master).spawn(3) yields, in order, the
    parameter-initialization stream, the shuffling stream, and the posterior
    sampling stream. Swept runs that share a master seed therefore differ
    only in the swept variable.
    """
    init_seq, shuffle_seq, sample_seq = np.random.SeedSequence(master_seed).spawn(3)
    return {
        "init": np.random.default_rng(init_seq),
        "shuffle": np.random.default_rng(shuffle_seq),
        "sample": np.random.default_rng(sample_seq),
    }
