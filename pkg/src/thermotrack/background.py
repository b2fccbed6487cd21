"""Empty-scene statistics and their slow exponential-forgetting adaptation."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterable

import numpy as np

from .core import ThermalFrame, UsageError

DEFAULT_RIDGE = 1e-4


def _ro(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class BackgroundModel:
    """Gaussian model N(mu, cov) of the detectors with nobody in view.

    ``cov`` always includes the ridge ``ridge * I``; updates strip it,
    apply the forgetting recursion to the raw estimate, and add it back so
    the ridge does not accumulate.
    """

    mu: np.ndarray
    cov: np.ndarray
    lambda_mu: float = 0.99
    lambda_c: float = 0.995
    ridge: float = DEFAULT_RIDGE
    frames_seen: int = 0
    diagonal: bool = False

    def __post_init__(self) -> None:
        mu = _ro(self.mu)
        cov = np.array(self.cov, dtype=float)
        if cov.shape != (mu.size, mu.size):
            raise ValueError("cov must be M x M")
        for name in ("lambda_mu", "lambda_c"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ValueError(f"{name} must lie in (0, 1)")
        if self.ridge < 0:
            raise ValueError("ridge must be non-negative")
        cov = 0.5 * (cov + cov.T)
        if self.diagonal:
            cov = np.diag(np.diag(cov))
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "cov", _ro(cov))

    @property
    def m(self) -> int:
        return self.mu.size


def init_background(
    frames: Iterable[ThermalFrame | np.ndarray],
    lambda_mu: float = 0.99,
    lambda_c: float = 0.995,
    ridge: float = DEFAULT_RIDGE,
    diagonal: bool = False,
) -> BackgroundModel:
    """Sample mean and covariance (plus ridge) of empty-scene frames."""
    data = np.array(
        [f.temps if isinstance(f, ThermalFrame) else np.asarray(f, float) for f in frames]
    )
    if data.ndim != 2 or data.shape[0] < 2:
        raise UsageError("background initialisation needs at least 2 frames")
    mu = data.mean(axis=0)
    cov = np.cov(data, rowvar=False, ddof=1) + ridge * np.eye(data.shape[1])
    return BackgroundModel(mu, cov, lambda_mu, lambda_c, ridge, data.shape[0], diagonal)


def update_background(bg: BackgroundModel, frame: ThermalFrame | np.ndarray) -> BackgroundModel:
    """One MEWMA/MEWMC step. Callers gate this on empty-scene frames."""
    y = frame.temps if isinstance(frame, ThermalFrame) else np.asarray(frame, float)
    lm, lc = bg.lambda_mu, bg.lambda_c
    mu = lm * bg.mu + (1.0 - lm) * y
    dev = y - mu
    eye = np.eye(bg.m)
    raw = bg.cov - bg.ridge * eye
    if bg.diagonal:
        raw = lc * raw + (1.0 - lc) * np.diag(dev * dev)
    else:
        raw = lc * raw + (1.0 - lc) * np.outer(dev, dev)
    cov = 0.5 * (raw + raw.T) + bg.ridge * eye
    return replace(bg, mu=mu, cov=cov, frames_seen=bg.frames_seen + 1)


def gated_update(bg: BackgroundModel, frame: ThermalFrame | np.ndarray, occupancy, enabled: bool = True) -> BackgroundModel:
    """Update only when every ROI is reported empty (and gating is enabled)."""
    if not enabled or np.any(np.asarray(occupancy)):
        return bg
    return update_background(bg, frame)


def subset(bg: BackgroundModel, mask: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Mean and principal covariance block on the mask's support."""
    idx = np.flatnonzero(np.asarray(mask))
    if idx.size == 0:
        raise UsageError("mask selects no detector")
    return bg.mu[idx], bg.cov[np.ix_(idx, idx)]
