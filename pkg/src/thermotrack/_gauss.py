"""Masked Gaussian log-densities shared by the tracking and counting filters."""

from __future__ import annotations

import math
import weakref
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .background import BackgroundModel, subset
from .core import NumericError

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True, eq=False)
class MaskedGaussian:
    """Cholesky-factored N(mu_k, cov_k + extra_var * I) on one ROI support."""

    idx: np.ndarray
    mu: np.ndarray
    chol: np.ndarray
    logdet: float

    @classmethod
    def build(cls, bg: BackgroundModel, mask: np.ndarray, extra_var: float = 0.0) -> MaskedGaussian:
        mu, cov = subset(bg, mask)
        if extra_var:
            cov = cov + extra_var * np.eye(mu.size)
        try:
            chol = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError as exc:
            raise NumericError("masked covariance is not positive definite") from exc
        logdet = 2.0 * float(np.sum(np.log(np.diag(chol))))
        return cls(np.flatnonzero(mask), mu, chol, logdet)

    def logpdf_resid(self, resid: np.ndarray) -> np.ndarray | float:
        """Log-density of residuals (y_k - mean); rows are independent cases."""
        r = np.atleast_2d(resid)
        z = scipy.linalg.solve_triangular(self.chol, r.T, lower=True, check_finite=False)
        out = -0.5 * (np.sum(z * z, axis=0) + self.mu.size * _LOG_2PI + self.logdet)
        return float(out[0]) if np.ndim(resid) == 1 else out


class _RoiCache:
    """Per-background cache of ROI Gaussians keyed by (mask owner, k, var)."""

    def __init__(self) -> None:
        self._store: "weakref.WeakKeyDictionary[BackgroundModel, dict]" = (
            weakref.WeakKeyDictionary()
        )

    def get(self, bg: BackgroundModel, owner: object, k: int, mask: np.ndarray, extra_var: float):
        inner = self._store.setdefault(bg, {})
        key = (id(owner), k, float(extra_var))
        hit = inner.get(key)
        if hit is None or hit[0] is not owner:
            hit = (owner, MaskedGaussian.build(bg, mask, extra_var))
            inner[key] = hit
        return hit[1]


roi_cache = _RoiCache()


def logsumexp(a: np.ndarray, axis: int | None = None, keepdims: bool = False):
    """Max-shifted log-sum-exp; all -inf input gives -inf, never NaN.

    A lean stand-in for scipy.special.logsumexp on real arrays, which is
    slow for the small per-frame vectors used here.
    """
    a = np.asarray(a, dtype=float)
    m = np.max(a, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(a - m), axis=axis, keepdims=True)) + m
    if not keepdims:
        out = np.squeeze(out, axis=axis) if axis is not None else out.reshape(())
    return float(out) if np.ndim(out) == 0 else out
