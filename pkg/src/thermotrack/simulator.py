"""Synthetic scenes: frames drawn from the linear signature-plus-background
model, with ground truth, trajectories and screening subjects.

Nothing here evaluates a likelihood; frames are composed by sampling, so the
filters can be checked against data they did not generate themselves.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Literal, Sequence

import numpy as np

from .core import (
    GRID_SIDE,
    ModelParams,
    Mount,
    SensorLayout,
    ThermalFrame,
    UsageError,
    grid_index,
)
from .screening import alpha_fraction, beta_correction

log = logging.getLogger(__name__)

NETD_STD_C = 0.08


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Positions for consecutive frames starting at frame ``start``.

    Wall scenes use (distance m, azimuth deg) rows; ceiling scenes (x m, y m).
    """

    positions: np.ndarray
    start: int = 0

    def __post_init__(self) -> None:
        pos = np.array(self.positions, dtype=float).reshape(-1, 2)
        pos.setflags(write=False)
        object.__setattr__(self, "positions", pos)

    def __len__(self) -> int:
        return self.positions.shape[0]

    def at(self, t: int) -> np.ndarray | None:
        i = t - self.start
        if 0 <= i < len(self):
            return self.positions[i]
        return None


@dataclass(frozen=True, eq=False)
class Body:
    trajectory: Trajectory
    t_body: float = 36.8


@dataclass(frozen=True, eq=False)
class Scene:
    layout: SensorLayout
    mu: np.ndarray
    cov: np.ndarray
    bodies: tuple[Body, ...] = ()
    params: ModelParams = field(default_factory=ModelParams)
    seed: int = 0
    n_frames: int = 0
    sensor_id: int = 1
    t0_ms: int = 0
    body_width_m: float = 0.0
    zeta: int | None = None

    def __post_init__(self) -> None:
        mu = np.array(self.mu, dtype=float)
        cov = np.array(self.cov, dtype=float)
        if mu.shape != (self.layout.m,) or cov.shape != (self.layout.m,) * 2:
            raise ValueError("background truth must match the layout's M")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "cov", cov)
        object.__setattr__(self, "bodies", tuple(self.bodies))
        object.__setattr__(self, "_noise_factor", _psd_factor(cov))
        if not self.n_frames:
            end = max((b.trajectory.start + len(b.trajectory) for b in self.bodies), default=0)
            object.__setattr__(self, "n_frames", end)
        zeta = self.zeta if self.zeta is not None else self.params.zeta
        for t in range(self.n_frames):
            present = sum(1 for b in self.bodies if b.trajectory.at(t) is not None)
            if present > zeta:
                raise ValueError(f"frame {t}: {present} bodies exceed zeta={zeta}")

    def ts_ms(self, t: int) -> int:
        return self.t0_ms + int(round(t * self.params.dt_s * 1000))


def default_background(m: int = 64, t_amb: float = 23.0, noise_std: float = NETD_STD_C,
                       spread: float = 0.3, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Background truth: ambient plus a fixed zero-mean pattern, diagonal noise."""
    rng = np.random.default_rng([seed, 0xB6])
    pattern = rng.normal(0.0, spread, m)
    mu = t_amb + pattern - pattern.mean()
    return mu, (noise_std**2) * np.eye(m)


def _psd_factor(cov: np.ndarray) -> np.ndarray:
    """A factor A with A A' = cov, tolerating singular (e.g. zero) covariances."""
    if not np.any(cov):
        return np.zeros_like(cov)
    if np.count_nonzero(cov - np.diag(np.diag(cov))) == 0:
        return np.diag(np.sqrt(np.clip(np.diag(cov), 0.0, None)))
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        w, v = np.linalg.eigh(cov)
        return v * np.sqrt(np.clip(w, 0.0, None))


def _column_angles(fov_deg: float) -> np.ndarray:
    step = fov_deg / GRID_SIDE
    return -fov_deg / 2 + (np.arange(GRID_SIDE) + 0.5) * step


def roi_of_position(layout: SensorLayout, pos: Sequence[float]) -> int | None:
    """ROI containing a body position, or None when outside every ROI."""
    if layout.mount is Mount.WALL:
        d, theta = pos
        if not layout.d_min <= d <= layout.d_max or abs(theta) > layout.fov_deg / 2:
            return None
        angles = _column_angles(layout.fov_deg)
        col = int(np.argmin(np.abs(angles - theta)))
        _, cols = grid_index(layout.m)
        for k, roi in enumerate(layout.rois):
            if roi.mask[cols == col].any():
                return k
        return None
    x, y = pos
    h = layout.cell_m / 2
    for k, roi in enumerate(layout.rois):
        cx, cy = roi.footprint_m
        if cx - h <= x < cx + h and cy - h <= y < cy + h:
            return k
    return None


def body_pattern(layout: SensorLayout, pos: Sequence[float], k: int, body_width_m: float) -> np.ndarray:
    """Detectors warmed by a body, as a 0/1 vector.

    The pattern is the mask of ROI ``k``. With ``body_width_m`` > 0 a wall
    body also fills every other ROI whose columns lie at least half inside
    its angular extent, so a close body occupies several ROIs at once.
    """
    mask = layout.rois[k].mask
    if layout.mount is not Mount.WALL or body_width_m <= 0:
        return mask.astype(float)
    d, theta = pos
    half = math.degrees(math.atan2(body_width_m / 2, d))
    lit = np.abs(_column_angles(layout.fov_deg) - theta) <= half
    _, cols = grid_index(layout.m)
    out = mask.copy()
    for roi in layout.rois:
        roi_cols = np.unique(cols[roi.mask])
        if lit[roi_cols].mean() >= 0.5:
            out |= roi.mask
    return out.astype(float)


def synth_frame(scene: Scene, t: int) -> tuple[ThermalFrame, dict[str, Any]]:
    """Frame ``t`` of the scene and its ground-truth record.

    The draw depends only on (seed, t), so frames can be produced in any
    order or in parallel.
    """
    if not 0 <= t < max(scene.n_frames, 1):
        raise UsageError(f"frame {t} outside scene horizon {scene.n_frames}")
    lay, par = scene.layout, scene.params
    rng = np.random.default_rng([scene.seed, t])
    y = scene.mu + scene._noise_factor @ rng.standard_normal(lay.m)
    truth = []
    r = np.zeros(lay.k, dtype=int)
    for bi, body in enumerate(scene.bodies):
        pos = body.trajectory.at(t)
        if pos is None:
            continue
        k = roi_of_position(lay, pos)
        if k is None:
            log.debug("frame %d: body %d at %s outside every ROI, dropped", t, bi, pos)
            continue
        if lay.mount is Mount.WALL:
            mean_inc = math.log1p(math.exp(par.sigma0 - par.gamma * pos[0]))
            sig_t = par.sigma_T
            rec = {"roi": k, "d_m": float(pos[0]), "theta_deg": float(pos[1])}
        else:
            mean_inc = par.sigma_bar_ceiling
            sig_t = par.sigma_T_ceiling
            rec = {"roi": k, "x_m": float(pos[0]), "y_m": float(pos[1]), "d_m": lay.height_m}
        rec["t_body_c"] = body.t_body
        sigma = mean_inc + sig_t * rng.standard_normal()
        y = y + sigma * body_pattern(lay, pos, k, scene.body_width_m)
        r[k] = 1
        truth.append(rec)
    frame = ThermalFrame(scene.sensor_id, scene.ts_ms(t), y)
    return frame, {"ts_ms": frame.ts_ms, "bodies": truth, "occupancy": r.tolist()}


def synth_frames(scene: Scene) -> tuple[list[ThermalFrame], list[dict[str, Any]]]:
    pairs = [synth_frame(scene, t) for t in range(scene.n_frames)]
    return [p[0] for p in pairs], [p[1] for p in pairs]


def empty_frames(layout: SensorLayout, mu: np.ndarray, cov: np.ndarray, n: int, seed: int,
                 params: ModelParams | None = None) -> list[ThermalFrame]:
    """Body-free frames for background start-up."""
    scene = Scene(layout, mu, cov, (), params or ModelParams(), seed=seed, n_frames=n)
    return synth_frames(scene)[0]


TrajectoryKind = Literal["static", "random_walk", "corridor_pass"]


def gen_trajectory(kind: TrajectoryKind, params: dict[str, Any], seed: int = 0) -> Trajectory:
    """Body trajectories.

    static:        ``position``, ``n_steps``
    random_walk:   ``position`` (d, theta), ``n_steps``, ``speed`` m/s,
                   ``dt`` s, ``d_min``, ``d_max``; reflected steps in distance
    corridor_pass: ``start`` (x, y), ``length`` m, ``speed`` m/s, ``dt`` s,
                   optional ``direction`` (+1 / -1 along x)
    Every kind accepts ``start_frame``.
    """
    start = int(params.get("start_frame", 0))
    if kind == "static":
        pos = np.asarray(params["position"], dtype=float)
        return Trajectory(np.tile(pos, (int(params["n_steps"]), 1)), start)
    if kind == "random_walk":
        d0, theta = params["position"]
        n = int(params["n_steps"])
        std = float(params.get("speed", 0.5)) * float(params.get("dt", 0.3))
        lo, hi = float(params.get("d_min", 0.25)), float(params.get("d_max", 3.5))
        rng = np.random.default_rng([seed, 0x3A1])
        d = np.empty(n)
        d[0] = d0
        for i in range(1, n):
            x = d[i - 1] + std * rng.standard_normal()
            # reflect into [lo, hi]
            span = hi - lo
            x = (x - lo) % (2 * span)
            d[i] = lo + (2 * span - x if x > span else x)
        return Trajectory(np.column_stack([d, np.full(n, float(theta))]), start)
    if kind == "corridor_pass":
        x0, y0 = params["start"]
        step = float(params["speed"]) * float(params.get("dt", 0.3))
        n = int(round(float(params["length"]) / step)) if step > 0 else 1
        direction = float(params.get("direction", 1.0))
        x = x0 + direction * step * np.arange(n)
        return Trajectory(np.column_stack([x, np.full(n, float(y0))]), start)
    raise UsageError(f"unknown trajectory kind {kind!r}")


@dataclass(frozen=True, eq=False)
class ScreeningSubject:
    frames: list[ThermalFrame]
    hot_index: np.ndarray
    distances: np.ndarray
    t_body: float
    t_amb: float


def synth_screening_subject(
    t_body: float,
    distances: Sequence[float],
    t_amb: float,
    seed: int,
    params: ModelParams | None = None,
    thetas: Sequence[float] | None = None,
    mu: np.ndarray | None = None,
    cov: np.ndarray | None = None,
    noise: bool = True,
    alpha_mode: str = "auto",
    sensor_id: int = 1,
    t0_ms: int = 0,
) -> ScreeningSubject:
    """Frames of a subject in front of a wall sensor for temperature screening.

    The hottest detector (nearest the subject azimuth, middle row) reads
    (alpha(d) T_body + (1 - alpha(d)) T_amb) / beta(T_amb) plus
    N(0, sigma_body^2) when ``noise``; the rest is background.
    """
    par = params or ModelParams()
    lo, hi = par.t_amb_range
    if not lo <= t_amb <= hi:
        raise UsageError(f"T_amb {t_amb} outside [{lo}, {hi}]")
    d = np.asarray(distances, dtype=float)
    th = np.zeros_like(d) if thetas is None else np.asarray(thetas, dtype=float)
    if mu is None:
        mu = np.full(64, t_amb)
    if cov is None:
        cov = np.zeros((mu.size, mu.size))
    factor = _psd_factor(cov) if noise else np.zeros_like(cov)
    rng = np.random.default_rng([seed, 0x5C])
    alpha = np.asarray(alpha_fraction(d, alpha_mode, par), dtype=float)
    beta = beta_correction(t_amb, par)
    hot = (alpha * t_body + (1 - alpha) * t_amb) / beta
    if noise:
        hot = hot + par.sigma_body * rng.standard_normal(d.size)
    angles = _column_angles(60.0)
    cols = np.argmin(np.abs(angles[None, :] - th[:, None]), axis=1)
    hot_index = (GRID_SIDE // 2 - 1) * GRID_SIDE + cols
    frames = []
    for i in range(d.size):
        y = mu + factor @ rng.standard_normal(mu.size)
        y[hot_index[i]] = hot[i]
        frames.append(
            ThermalFrame(sensor_id, t0_ms + int(round(i * par.dt_s * 1000)), y)
        )
    return ScreeningSubject(frames, hot_index, d, t_body, t_amb)


def corridor_scene(
    layout: SensorLayout,
    n_bodies: int,
    seed: int = 0,
    episodes: int = 40,
    params: ModelParams | None = None,
    mu: np.ndarray | None = None,
    cov: np.ndarray | None = None,
    gap_frames: int = 3,
    sensor_id: int = 1,
) -> Scene:
    """People walking along the rows of a ceiling grid.

    Each episode sends ``n_bodies`` walkers across the grid along x, each
    in a random row and direction with a start jitter of up to 4 frames.
    Episodes are separated by ``gap_frames`` empty frames.
    """
    if layout.mount is not Mount.CEILING:
        raise UsageError("corridor scenes need a ceiling layout")
    par = params or ModelParams()
    if n_bodies > par.zeta:
        raise UsageError(f"{n_bodies} walkers exceed zeta={par.zeta}")
    if mu is None or cov is None:
        mu, cov = default_background(layout.m, seed=seed)
    fp = layout.footprints
    rows = np.unique(fp[:, 1])
    x_lo, x_hi = fp[:, 0].min() - layout.cell_m / 2, fp[:, 0].max() + layout.cell_m / 2
    length = x_hi - x_lo - 1e-6
    rng = np.random.default_rng([seed, 0xC0])
    bodies = []
    t = 0
    for _ in range(episodes):
        end = t
        for _ in range(n_bodies):
            direction = 1.0 if rng.random() < 0.5 else -1.0
            y = float(rng.choice(rows))
            x0 = x_lo + 1e-6 if direction > 0 else x_hi - 1e-6
            traj = gen_trajectory(
                "corridor_pass",
                {"start": (x0, y), "length": length, "speed": par.walk_speed_mps, "dt": par.dt_s,
                 "direction": direction, "start_frame": t + int(rng.integers(0, 5))},
            )
            bodies.append(Body(traj))
            end = max(end, traj.start + len(traj))
        t = end + gap_frames
    return Scene(layout, mu, cov, tuple(bodies), par, seed=seed, n_frames=t, sensor_id=sensor_id)


def wall_scene(
    layout: SensorLayout,
    distance_m: float,
    seed: int = 0,
    segments: int = 10,
    steps: int = 200,
    params: ModelParams | None = None,
    mu: np.ndarray | None = None,
    cov: np.ndarray | None = None,
    body_width_m: float = 0.3,
    sensor_id: int = 1,
) -> Scene:
    """One person standing at a fixed distance, re-placed at a random
    azimuth every ``steps`` frames (with one empty frame between stays)."""
    if layout.mount is not Mount.WALL:
        raise UsageError("wall scenes need a wall layout")
    par = params or ModelParams()
    if mu is None or cov is None:
        mu, cov = default_background(layout.m, seed=seed)
    rng = np.random.default_rng([seed, 0xA0])
    half = layout.fov_deg / 2
    bodies = []
    for s in range(segments):
        theta = float(rng.uniform(-half, half))
        traj = gen_trajectory("static", {"position": (distance_m, theta), "n_steps": steps,
                                         "start_frame": s * (steps + 1)})
        bodies.append(Body(traj))
    return Scene(layout, mu, cov, tuple(bodies), par, seed=seed,
                 n_frames=segments * (steps + 1), sensor_id=sensor_id, body_width_m=body_width_m)
