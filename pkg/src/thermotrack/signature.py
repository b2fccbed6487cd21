"""Body-induced thermal signatures: the s-relu distance law, geometric ROI
masks, Lasso signature learning and s-relu parameter fitting."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import scipy.linalg
import scipy.optimize
import scipy.special

from .core import (
    GRID_SIDE,
    LayoutError,
    ModelParams,
    Mount,
    NumericError,
    SensorLayout,
    ThermoTrackError,
    UsageError,
    grid_index,
)


class FitError(ThermoTrackError, ValueError):
    pass


def srelu_mean(d, sigma0: float, gamma: float):
    """Mean temperature increase log(1 + exp(sigma0 - gamma * d)).

    Accepts scalars or arrays; ``np.logaddexp`` keeps it finite for any
    argument.
    """
    out = np.logaddexp(0.0, sigma0 - gamma * np.asarray(d, dtype=float))
    return float(out) if np.ndim(out) == 0 else out


class Variant(str, enum.Enum):
    WALL_DISTANCE_DEPENDENT = "wall"
    CEILING_CONSTANT = "ceiling"


@dataclass(frozen=True, eq=False)
class SignatureModel:
    layout: SensorLayout
    params: ModelParams = field(default_factory=ModelParams)

    def __post_init__(self) -> None:
        if not self.layout.has_masks:
            raise LayoutError("signature model needs a layout with masks")
        if self.variant is Variant.CEILING_CONSTANT and self.sigma_bar <= 0:
            raise LayoutError("ceiling sigma_bar must be positive")

    @property
    def variant(self) -> Variant:
        if self.layout.mount is Mount.WALL:
            return Variant.WALL_DISTANCE_DEPENDENT
        return Variant.CEILING_CONSTANT

    @property
    def sigma_bar(self) -> float:
        return self.params.sigma_bar_ceiling

    @property
    def sigma_T(self) -> float:
        if self.variant is Variant.WALL_DISTANCE_DEPENDENT:
            return self.params.sigma_T
        return self.params.sigma_T_ceiling

    def mean_increase(self, d=None):
        if self.variant is Variant.CEILING_CONSTANT:
            return self.sigma_bar
        return srelu_mean(d, self.params.sigma0, self.params.gamma)


def signature(model: SignatureModel, k: int | None, d: float | None = None) -> np.ndarray:
    """Signature vector of ROI ``k`` (0-based); ``k=None`` means no target."""
    m = model.layout.m
    wall = model.variant is Variant.WALL_DISTANCE_DEPENDENT
    if k is None:
        return np.zeros(m)
    if not 0 <= k < model.layout.k:
        raise UsageError(f"ROI index {k} out of range [0, {model.layout.k})")
    if wall and d is None:
        raise UsageError("wall signatures need a distance")
    if not wall and d is not None:
        raise UsageError("ceiling signatures take no distance")
    mask = model.layout.rois[k].mask
    return model.mean_increase(d) * mask.astype(float)


def _axis_angles(n: int, fov_deg: float) -> np.ndarray:
    """Centre azimuth of each of ``n`` detector columns spread over the FOV."""
    step = fov_deg / n
    return -fov_deg / 2 + (np.arange(n) + 0.5) * step


def build_geometric_masks(layout: SensorLayout) -> list[np.ndarray]:
    """ROI masks derived from mounting geometry alone.

    Wall: each ROI owns the detector columns whose azimuth lies in its
    angular sector (sector edges halfway between neighbouring ROI angles,
    outer edges at the FOV limits), across all rows.
    Ceiling: each ROI owns the detectors whose floor projection falls in
    its square cell of side ``cell_m``; a cell that catches no detector
    centre takes the nearest one.
    """
    side = GRID_SIDE
    if layout.m != side * side:
        raise LayoutError(f"geometric masks assume an {side}x{side} grid")
    rows, cols = grid_index(layout.m, side)
    half = layout.fov_deg / 2
    angles = _axis_angles(side, layout.fov_deg)

    if layout.mount is Mount.WALL:
        aoas = layout.aoas
        if np.any(np.abs(aoas) > half + 1e-9):
            raise LayoutError(f"ROI angle outside the +/-{half} deg field of view")
        order = np.argsort(aoas, kind="stable")
        sorted_aoas = aoas[order]
        edges = np.concatenate([[-half], (sorted_aoas[1:] + sorted_aoas[:-1]) / 2, [half]])
        masks: list[np.ndarray | None] = [None] * layout.k
        for pos, k in enumerate(order):
            lo, hi = edges[pos], edges[pos + 1]
            last = pos == layout.k - 1
            in_sector = (angles >= lo) & ((angles <= hi) if last else (angles < hi))
            sel_cols = np.flatnonzero(in_sector)
            if sel_cols.size == 0:
                raise LayoutError(
                    f"ROI {layout.rois[k].index}: sector [{lo:.1f}, {hi:.1f}] deg "
                    "contains no detector column"
                )
            masks[k] = np.isin(cols, sel_cols)
        return masks  # type: ignore[return-value]

    reach = layout.height_m * math.tan(math.radians(half))
    floor = layout.height_m * np.tan(np.radians(angles))
    px, py = floor[cols], floor[rows]
    masks = []
    for roi in layout.rois:
        x, y = roi.footprint_m
        if abs(x) > reach or abs(y) > reach:
            raise LayoutError(f"ROI {roi.index}: footprint outside the field of view")
        h = layout.cell_m / 2
        mask = (px >= x - h) & (px < x + h) & (py >= y - h) & (py < y + h)
        if not mask.any():
            nearest = int(np.argmin((px - x) ** 2 + (py - y) ** 2))
            mask = np.zeros(layout.m, dtype=bool)
            mask[nearest] = True
        masks.append(mask)
    return masks


def with_geometric_masks(layout: SensorLayout) -> SensorLayout:
    return layout.with_masks(build_geometric_masks(layout))


def estimate_mask(increases: np.ndarray, tau: float) -> np.ndarray:
    """Thresholded mask from observed increases y - mu (single frame or the
    average of several)."""
    inc = np.asarray(increases, dtype=float)
    if inc.ndim == 2:
        inc = inc.mean(axis=0)
    return inc > tau


@dataclass(frozen=True, eq=False)
class LearnedSignatureMatrix:
    H: np.ndarray
    lam: float
    residual: float
    sweeps: int
    objective_trace: tuple[float, ...] = ()

    @property
    def shape(self) -> tuple[int, int]:
        return self.H.shape


def _lasso_objective(H, R, B, S, Cinv, lam) -> float:
    # sum_i e_i' C^-1 e_i expanded with e_i = y_i - H r_i
    quad = S - 2.0 * np.sum(Cinv * (B @ H.T)) + np.sum((Cinv @ H) * (H @ R))
    return float(quad + lam * np.abs(H).sum())


def learn_signatures_lasso(
    training: Iterable[tuple[Sequence[float], Sequence[float]]],
    mu: Sequence[float],
    cov: np.ndarray,
    lam: float = 41.0,
    tol: float = 1e-8,
    max_sweeps: int = 10_000,
) -> LearnedSignatureMatrix:
    """Sparse signature matrix from labelled (occupancy, frame) pairs.

    Minimises sum_i (y_i - mu - H r_i)' C^-1 (y_i - mu - H r_i) + lam*|H|_1
    by cyclic coordinate descent with soft-thresholding. The covariance is
    whitened through its Cholesky factor; the loop runs on the Gram form of
    the whitened design, so each coordinate update costs O(MK).
    """
    pairs = list(training)
    if not pairs:
        raise UsageError("training set is empty")
    r = np.array([p[0] for p in pairs], dtype=float)
    y = np.array([p[1] for p in pairs], dtype=float) - np.asarray(mu, dtype=float)
    if r.ndim != 2 or y.ndim != 2 or r.shape[0] != y.shape[0]:
        raise UsageError("training pairs must have consistent shapes")
    if not np.all((r == 0) | (r == 1)):
        raise UsageError("occupancy vectors must be binary")
    m, k = y.shape[1], r.shape[1]
    cov = np.asarray(cov, dtype=float)
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise NumericError(
            "background covariance is not positive definite; add a ridge "
            "(e.g. cov + 1e-4 * I) before learning signatures"
        ) from exc
    # C^-1 = W' W with W = L^-1 (whitening transform)
    W = scipy.linalg.solve_triangular(chol, np.eye(m), lower=True)
    Cinv = W.T @ W

    R = r.T @ r  # K x K
    B = y.T @ r  # M x K
    S = float(np.einsum("ij,jk,ik->", y, Cinv, y))
    H = np.zeros((m, k))
    G = Cinv @ B  # C^-1 (B - H R) with H = 0
    diag_c = np.diag(Cinv)
    half_lam = lam / 2.0
    trace = [_lasso_objective(H, R, B, S, Cinv, lam)]
    sweeps = 0
    for sweeps in range(1, max_sweeps + 1):
        max_delta = 0.0
        for kk in range(k):
            if R[kk, kk] == 0:
                continue
            for mm in range(m):
                a = diag_c[mm] * R[kk, kk]
                old = H[mm, kk]
                c = G[mm, kk] + a * old
                new = math.copysign(max(abs(c) - half_lam, 0.0), c) / a
                delta = new - old
                if delta != 0.0:
                    H[mm, kk] = new
                    G -= delta * np.outer(Cinv[:, mm], R[kk, :])
                    max_delta = max(max_delta, abs(delta))
        trace.append(_lasso_objective(H, R, B, S, Cinv, lam))
        if max_delta < tol:
            break
    return LearnedSignatureMatrix(H, lam, trace[-1], sweeps, tuple(trace))


@dataclass(frozen=True)
class SreluFit:
    sigma0: float
    gamma: float
    rmse: float


def fit_srelu(d: Sequence[float], observed: Sequence[float]) -> SreluFit:
    """Least-squares fit of (sigma0, gamma) to observed mean increases."""
    d = np.asarray(d, dtype=float)
    obs = np.asarray(observed, dtype=float)
    if d.shape != obs.shape or d.ndim != 1:
        raise FitError("distances and observations must be equal-length vectors")
    if np.unique(d).size < 2:
        raise FitError("need at least two distinct distances")

    # start: slope from a straight-line fit, intercept lifted so the curve
    # passes near the largest observation
    slope, intercept = np.polyfit(d, obs, 1)
    gamma0 = max(-slope, 1e-2)
    sigma00 = max(intercept, float(obs.max())) + math.log(2.0)

    def residuals(p):
        return srelu_mean(d, p[0], p[1]) - obs

    def jacobian(p):
        s = scipy.special.expit(p[0] - p[1] * d)
        return np.column_stack([s, -d * s])

    sol = scipy.optimize.least_squares(
        residuals, x0=[sigma00, gamma0], jac=jacobian, method="lm",
        xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=10_000,
    )
    if not sol.success or not np.all(np.isfinite(sol.x)):
        raise FitError(f"s-relu fit did not converge: {sol.message}")
    rmse = float(np.sqrt(np.mean(sol.fun**2)))
    return SreluFit(float(sol.x[0]), float(sol.x[1]), rmse)

