"""Per-window z-score normalization of series windows and its inverses.

Each input window is normalized per channel with its own mean and biased
standard deviation; forecasts are mapped back to series units with the same
statistics. Statistics are never shared across windows.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, WindowTooShortError

DEFAULT_EPS = 1e-5


@dataclass(frozen=True)
class WindowStats:
    """Per-channel mean and standard deviation of one input window."""

    mu: np.ndarray     # [V], series units
    sigma: np.ndarray  # [V], series units, floored at eps

    @property
    def channels(self) -> int:
        return self.mu.shape[0]


def normalize(x: np.ndarray, eps: float = DEFAULT_EPS) -> tuple[np.ndarray, WindowStats]:
    """Z-score a [T, V] window per channel.

    The standard deviation is the biased (1/T) form, floored at ``eps`` so
    constant channels stay finite.
    """
    if eps <= 0.0:
        raise ValueError("eps must be positive")
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise DimensionError(f"normalize expects a [T, V] matrix, got shape {x.shape}")
    if x.shape[0] < 2:
        raise WindowTooShortError(f"need at least 2 time steps to normalize, got {x.shape[0]}")
    mu = x.mean(axis=0)
    sigma = np.maximum(np.sqrt(x.var(axis=0)), eps)
    return (x - mu) / sigma, WindowStats(mu=mu, sigma=sigma)


def _check_channels(y: np.ndarray, stats: WindowStats) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    if y.ndim != 2 or y.shape[1] != stats.channels:
        raise DimensionError(
            f"forecast shape {y.shape} does not match stats with {stats.channels} channels")
    return y


def denormalize_inverse(y_norm: np.ndarray, stats: WindowStats) -> np.ndarray:
    """Exact inverse of :func:`normalize`: sigma * y' + mu. Pipeline default."""
    y_norm = _check_channels(y_norm, stats)
    return y_norm * stats.sigma + stats.mu


def denormalize_variant(y_norm: np.ndarray, stats: WindowStats) -> np.ndarray:
    """Alternate ordering sometimes written for instance denormalization:
    sigma * (y' + mu).

    Not the algebraic inverse of :func:`normalize`; kept so the exact printed
    form of that convention stays auditable. Forecasting uses
    :func:`denormalize_inverse`.
    """
    y_norm = _check_channels(y_norm, stats)
    return stats.sigma * (y_norm + stats.mu)
