"""Wall-mount occupancy, distance and angle-of-arrival tracking.

Each ROI is handled independently: an ML occupancy test against the
empty-scene model, then a grid Bayes filter over distance driven by a
truncated Gaussian random walk. All probabilities are kept as logs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from ._gauss import MaskedGaussian, logsumexp, roi_cache
from .background import BackgroundModel
from .core import ModelParams, ThermalFrame, UsageError, distance_grid
from .signature import SignatureModel, Variant


def _frame_temps(frame: ThermalFrame | np.ndarray) -> np.ndarray:
    return frame.temps if isinstance(frame, ThermalFrame) else np.asarray(frame, float)


def _gaussians(bg: BackgroundModel, sig: SignatureModel, k: int) -> tuple[MaskedGaussian, MaskedGaussian]:
    mask = sig.layout.rois[k].mask
    empty = roi_cache.get(bg, sig.layout, k, mask, 0.0)
    occupied = roi_cache.get(bg, sig.layout, k, mask, sig.sigma_T**2)
    return empty, occupied


def _occupied_grid_loglik(y: np.ndarray, bg, sig: SignatureModel, k: int, grid: np.ndarray) -> np.ndarray:
    _, g1 = _gaussians(bg, sig, k)
    inc = np.atleast_1d(sig.mean_increase(grid))
    resid = (y[g1.idx] - g1.mu)[None, :] - inc[:, None]
    return np.atleast_1d(g1.logpdf_resid(resid))


def log_likelihood_occupied(
    frame: ThermalFrame | np.ndarray,
    bg: BackgroundModel,
    sig: SignatureModel,
    k: int,
    d: float | None = None,
) -> float:
    """log N(y_k; mu_k + sigma_bar(d), C_k + sigma_T^2 I) on ROI k's support.

    ``d`` is ignored-by-contract for ceiling models (constant signature).
    """
    y = _frame_temps(frame)
    if sig.variant is Variant.WALL_DISTANCE_DEPENDENT:
        if d is None:
            raise UsageError("wall likelihood needs a distance")
        lay = sig.layout
        if not lay.d_min - 1e-12 <= d <= lay.d_max + 1e-12:
            raise UsageError(f"distance {d} outside [{lay.d_min}, {lay.d_max}]")
    _, g1 = _gaussians(bg, sig, k)
    return float(g1.logpdf_resid(y[g1.idx] - g1.mu - sig.mean_increase(d)))


def log_likelihood_empty(
    frame: ThermalFrame | np.ndarray, bg: BackgroundModel, sig: SignatureModel, k: int
) -> float:
    y = _frame_temps(frame)
    g0, _ = _gaussians(bg, sig, k)
    return float(g0.logpdf_resid(y[g0.idx] - g0.mu))


@dataclass(frozen=True)
class OccupancyTest:
    occupied: bool
    log_empty: float
    log_occupied: float
    grid_loglik: np.ndarray

    @property
    def log_ratio(self) -> float:
        return self.log_occupied - self.log_empty


def occupancy_test(
    frame: ThermalFrame | np.ndarray, bg: BackgroundModel, sig: SignatureModel, k: int
) -> OccupancyTest:
    """ML test of empty vs occupied, marginalising distance over the grid.

    Pr(y | occupied) is the Riemann sum of the uniform-distance integral:
    sum over grid of Gamma(y | d) * delta_d / (d_max - d_min).
    """
    y = _frame_temps(frame)
    lay, par = sig.layout, sig.params
    grid = distance_grid(lay, par)
    ll = _occupied_grid_loglik(y, bg, sig, k, grid)
    log_w = math.log(par.delta_d / (lay.d_max - lay.d_min))
    log1 = float(logsumexp(ll)) + log_w
    log0 = log_likelihood_empty(y, bg, sig, k)
    return OccupancyTest(bool(log1 > log0), log0, log1, ll)


def detect_occupancy(
    frame: ThermalFrame | np.ndarray, bg: BackgroundModel, sig: SignatureModel, k: int
) -> int:
    """1 if ROI k is more likely occupied than empty; ties go to empty."""
    return int(occupancy_test(frame, bg, sig, k).occupied)


@dataclass(frozen=True, eq=False)
class DistancePosterior:
    roi: int
    grid: np.ndarray
    log_weights: np.ndarray

    def __post_init__(self) -> None:
        if self.grid.size < 2 or self.grid.shape != self.log_weights.shape:
            raise ValueError("posterior needs a grid of at least 2 points with matching weights")

    @classmethod
    def uniform(cls, roi: int, grid: np.ndarray) -> DistancePosterior:
        return cls(roi, grid, np.full(grid.size, -math.log(grid.size)))

    @property
    def probs(self) -> np.ndarray:
        return np.exp(self.log_weights)

    def argmax(self) -> float:
        return float(self.grid[int(np.argmax(self.log_weights))])


@dataclass(frozen=True, eq=False)
class RoiTrack:
    roi: int
    occupied: bool
    posterior: DistancePosterior
    d_hat: float | None = None
    theta_hat: float | None = None
    log_ratio: float = 0.0


@dataclass(frozen=True, eq=False)
class TrackState:
    rois: tuple[RoiTrack, ...]
    ts_ms: int | None = None
    resets: int = 0

    @property
    def occupancy(self) -> np.ndarray:
        return np.array([r.occupied for r in self.rois], dtype=int)


def init_track_state(sig: SignatureModel) -> TrackState:
    grid = distance_grid(sig.layout, sig.params)
    return TrackState(
        tuple(RoiTrack(k, False, DistancePosterior.uniform(k, grid)) for k in range(sig.layout.k))
    )


def random_walk_log_kernel(grid: np.ndarray, step_std: float) -> np.ndarray:
    """log Pr(d | h) for a Gaussian step truncated to the grid (rows: h)."""
    diff = grid[None, :] - grid[:, None]
    if step_std <= 0:
        return np.where(diff == 0, 0.0, -np.inf)
    logk = -0.5 * (diff / step_std) ** 2
    return logk - logsumexp(logk, axis=1, keepdims=True)


def step_std(params: ModelParams) -> float:
    return params.walk_speed_mps * params.dt_s


def step_track(
    state: TrackState,
    frame: ThermalFrame | np.ndarray,
    bg: BackgroundModel,
    sig: SignatureModel,
    log_kernel: np.ndarray | None = None,
) -> TrackState:
    """Advance every ROI by one frame."""
    if sig.variant is not Variant.WALL_DISTANCE_DEPENDENT:
        raise UsageError("distance tracking needs a wall-mounted layout")
    y = _frame_temps(frame)
    grid = distance_grid(sig.layout, sig.params)
    if log_kernel is None:
        log_kernel = random_walk_log_kernel(grid, step_std(sig.params))
    resets = state.resets
    tracks = []
    for prev in state.rois:
        k = prev.roi
        test = occupancy_test(y, bg, sig, k)
        if not test.occupied:
            tracks.append(RoiTrack(k, False, DistancePosterior.uniform(k, grid), log_ratio=test.log_ratio))
            continue
        if prev.occupied:
            log_prior = logsumexp(prev.posterior.log_weights[:, None] + log_kernel, axis=0)
        else:
            log_prior = np.full(grid.size, -math.log(grid.size))
        log_post = log_prior + test.grid_loglik
        norm = logsumexp(log_post)
        if not np.isfinite(norm):
            resets += 1
            post = DistancePosterior.uniform(k, grid)
        else:
            post = DistancePosterior(k, grid, log_post - norm)
        tracks.append(
            RoiTrack(k, True, post, post.argmax(), float(sig.layout.rois[k].aoa_deg), test.log_ratio)
        )
    ts = frame.ts_ms if isinstance(frame, ThermalFrame) else state.ts_ms
    return TrackState(tuple(tracks), ts, resets)


def track_records(state: TrackState, sensor_id: int, with_posterior: bool = False) -> list[dict[str, Any]]:
    """Estimate records for one step, one per ROI."""
    out = []
    for r in state.rois:
        rec: dict[str, Any] = {
            "sensor_id": str(sensor_id),
            "ts_ms": state.ts_ms,
            "roi": r.roi,
            "occupied": r.occupied,
            "d_hat_m": r.d_hat,
            "theta_hat_deg": r.theta_hat,
            "log_ratio": round(r.log_ratio, 9),
        }
        if with_posterior:
            rec["posterior"] = [round(float(p), 12) for p in r.posterior.probs]
        out.append(rec)
    return out


@dataclass(frozen=True)
class RmseRow:
    d_true: float
    distance_rmse: float
    aoa_rmse: float
    n: int


@dataclass(frozen=True)
class RmseReport:
    distance_rmse: float
    aoa_rmse: float
    n: int
    missed: int
    extra: int = 0
    rows: tuple[RmseRow, ...] = field(default_factory=tuple)

    def row(self, d_true: float) -> RmseRow:
        for r in self.rows:
            if abs(r.d_true - d_true) < 1e-9:
                return r
        raise KeyError(d_true)

    def to_csv(self) -> str:
        lines = ["d_true_m,distance_rmse_m,aoa_rmse_deg,n"]
        lines += [f"{r.d_true:.2f},{r.distance_rmse:.4f},{r.aoa_rmse:.4f},{r.n}" for r in self.rows]
        lines.append(f"all,{self.distance_rmse:.4f},{self.aoa_rmse:.4f},{self.n}")
        return "\n".join(lines) + "\n"


def _rmse(e: Sequence[float]) -> float:
    a = np.asarray(e, dtype=float)
    return float(np.sqrt(np.mean(a * a))) if a.size else float("nan")


def rmse_report(
    estimates: Iterable[Mapping[str, Any]],
    ground_truth: Iterable[Mapping[str, Any]],
    distance_decimals: int = 2,
) -> RmseReport:
    """Distance and AOA RMSE of occupied-ROI estimates against ground truth.

    Every occupied estimate is attributed to the true body (same ts_ms)
    closest in angle. A body attributed several estimates keeps the one
    with the largest ``log_ratio`` (the first when absent); the others
    count as ``extra``. Rows group errors by the true distance rounded to
    ``distance_decimals``.
    """
    truth: dict[int, list[Mapping[str, Any]]] = {}
    for rec in ground_truth:
        truth.setdefault(int(rec["ts_ms"]), []).extend(rec.get("bodies", []))
    best: dict[tuple[int, int], Mapping[str, Any]] = {}
    extra = 0
    overlap: set[int] = set()
    for est in estimates:
        ts = int(est["ts_ms"])
        if ts not in truth:
            continue
        overlap.add(ts)
        if not est.get("occupied") or not truth[ts]:
            continue
        theta = float(est["theta_hat_deg"])
        bi = min(range(len(truth[ts])), key=lambda i: abs(float(truth[ts][i]["theta_deg"]) - theta))
        key = (ts, bi)
        held = best.get(key)
        if held is None:
            best[key] = est
            continue
        extra += 1
        if float(est.get("log_ratio", -np.inf)) > float(held.get("log_ratio", -np.inf)):
            best[key] = est
    if not overlap:
        raise UsageError("estimates and ground truth share no timestamps")
    d_err: dict[float, list[float]] = {}
    a_err: dict[float, list[float]] = {}
    for (ts, bi), est in best.items():
        body = truth[ts][bi]
        key = round(float(body["d_m"]), distance_decimals)
        d_err.setdefault(key, []).append(float(est["d_hat_m"]) - float(body["d_m"]))
        a_err.setdefault(key, []).append(float(est["theta_hat_deg"]) - float(body["theta_deg"]))
    all_d = [e for v in d_err.values() for e in v]
    all_a = [e for v in a_err.values() for e in v]
    rows = tuple(
        RmseRow(key, _rmse(d_err[key]), _rmse(a_err[key]), len(d_err[key])) for key in sorted(d_err)
    )
    n_bodies = sum(len(truth[ts]) for ts in overlap)
    return RmseReport(_rmse(all_d), _rmse(all_a), len(all_d), n_bodies - len(best), extra, rows)
