"""Contactless body-temperature estimation and fever screening.

Per frame, the hottest detector excess gives an absolute reading; a
spot-fraction law alpha(d) and an ambient correction beta(T_amb) relate it to
body temperature. Screening votes a log-likelihood ratio over a window of Q
frames. Distances come from the wall tracker, optionally refined by an
external radar range stream.
"""

from __future__ import annotations

import csv
import enum
import io
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Iterable, Literal, Sequence

import numpy as np
from scipy.special import log_ndtr

from .background import BackgroundModel
from .core import ConfigError, ModelParams, RadarSample, ThermalFrame, UsageError
from .tracking import log_likelihood_occupied

AlphaMode = Literal["linear", "quadratic", "auto"]
ALPHA_FLOOR = 0.01


class ScreeningRangeWarning(UserWarning):
    """Result computed outside the model's validated operating range."""


class FeverState(str, enum.Enum):
    F0 = "F0"
    F1 = "F1"


def ambient_temperature(bg: BackgroundModel) -> float:
    """Ambient temperature taken as the mean of the background means."""
    return float(np.mean(bg.mu))


def hot_reading(temps: np.ndarray, mu: np.ndarray) -> float:
    """Absolute reading of the detector with the largest excess over mu
    (lowest index on ties)."""
    m = int(np.argmax(temps - mu))
    return float(temps[m])


def mean_max_temperature(frames: Sequence[ThermalFrame | np.ndarray], mu: np.ndarray) -> float:
    if not frames:
        raise UsageError("empty window")
    mu = np.asarray(mu, dtype=float)
    vals = [hot_reading(f.temps if isinstance(f, ThermalFrame) else np.asarray(f, float), mu)
            for f in frames]
    return float(np.mean(vals))


def _resolve_mode(d, mode: str, params: ModelParams):
    if mode == "auto":
        return np.asarray(d) < params.alpha_switch_m
    if mode == "linear":
        return np.ones(np.shape(d), dtype=bool)
    if mode == "quadratic":
        return np.zeros(np.shape(d), dtype=bool)
    raise ConfigError(f"unknown alpha mode {mode!r}")


def alpha_fraction(d, mode: AlphaMode = "auto", params: ModelParams | None = None):
    """Fraction of the detector spot filled by the body at distance d.

    linear:    a0 - a1 d
    quadratic: a0 - a1 d - a2 d^2
    auto:      linear below ``alpha_switch_m``, quadratic from there on.
    Clamped to [0.01, 1].
    """
    p = params or ModelParams()
    d_arr = np.asarray(d, dtype=float)
    if np.any(d_arr < 0):
        raise UsageError("distance must be non-negative")
    lin = p.alpha0_lin - p.alpha1_lin * d_arr
    quad = p.alpha0_quad - p.alpha1_quad * d_arr - p.alpha2_quad * d_arr**2
    a = np.clip(np.where(_resolve_mode(d_arr, mode, p), lin, quad), ALPHA_FLOOR, 1.0)
    return float(a) if a.ndim == 0 else a


def beta_correction(t_amb: float, params: ModelParams | None = None) -> float:
    p = params or ModelParams()
    return p.beta0 * (1.0 + p.beta1 * (t_amb - p.t_min) / p.t_min)


def forward_reading(t_body: float, d: float, t_amb: float, mode: AlphaMode = "auto",
                    params: ModelParams | None = None) -> float:
    """Noise-free hot reading produced by a body at distance d."""
    a = alpha_fraction(d, mode, params)
    return (a * t_body + (1 - a) * t_amb) / beta_correction(t_amb, params)


def estimate_body_temperature(t_bar: float, d: float, t_amb: float, mode: AlphaMode = "auto",
                              params: ModelParams | None = None) -> float:
    """Invert beta * T_bar = alpha T_body + (1 - alpha) T_amb for T_body."""
    a = alpha_fraction(d, mode, params)
    if a <= ALPHA_FLOOR:
        warnings.warn(
            f"alpha clamped at {ALPHA_FLOOR} for d={d:.2f} m; estimate unreliable",
            ScreeningRangeWarning,
            stacklevel=2,
        )
    b = beta_correction(t_amb, params)
    return (b * t_bar - (1 - a) * t_amb) / a


def range_warnings(d: float, t_amb: float, params: ModelParams | None = None) -> list[str]:
    p = params or ModelParams()
    out = []
    if d > p.screening_max_d:
        out.append(f"distance {d:.2f} m beyond screening range {p.screening_max_d} m")
    lo, hi = p.t_amb_range
    if not lo <= t_amb <= hi:
        out.append(f"ambient {t_amb:.2f} C outside validated range [{lo}, {hi}] C")
    if alpha_fraction(max(d, 0.0), "auto", p) <= ALPHA_FLOOR:
        out.append("alpha at clamp floor")
    return out


def llr_from_reading(t_bar: float, d: float, t_amb: float, params: ModelParams | None = None,
                     mode: AlphaMode = "auto") -> float:
    """log Pr(T > threshold) - log Pr(T < threshold) for T ~ N(t_bar, sigma_body^2).

    The threshold is the reading a body exactly at T_max would produce at
    distance d, (alpha T_max + (1 - alpha) T_amb) / beta.
    """
    p = params or ModelParams()
    if p.sigma_body <= 0:
        raise ConfigError("sigma_body must be positive")
    thr = forward_reading(p.t_max, d, t_amb, mode, p)
    z = (t_bar - thr) / p.sigma_body
    return float(log_ndtr(z) - log_ndtr(-z))


def llr(
    frame: ThermalFrame | np.ndarray,
    fused_d: float,
    k: int,
    bg: BackgroundModel,
    sig=None,
    t_amb: float | None = None,
    params: ModelParams | None = None,
    mode: AlphaMode = "auto",
    full_form: bool = False,
) -> float:
    """Per-frame fever log-likelihood ratio for a subject in ROI ``k``.

    With equal hypothesis priors the conditional likelihood Gamma(y | Theta)
    and the priors cancel. ``full_form=True`` keeps them in the computation
    (needs ``sig``), which is only useful for debugging.
    """
    p = params or (sig.params if sig is not None else ModelParams())
    y = frame.temps if isinstance(frame, ThermalFrame) else np.asarray(frame, float)
    if t_amb is None:
        t_amb = ambient_temperature(bg)
    t_bar = hot_reading(y, bg.mu)
    if not full_form:
        return llr_from_reading(t_bar, fused_d, t_amb, p, mode)
    if sig is None:
        raise UsageError("full-form LLR needs the signature model")
    lay = sig.layout
    d_clamped = min(max(fused_d, lay.d_min), lay.d_max)
    log_gamma = log_likelihood_occupied(y, bg, sig, k, d_clamped)
    thr = forward_reading(p.t_max, fused_d, t_amb, mode, p)
    z = (t_bar - thr) / p.sigma_body
    log_prior = math.log(0.5)
    num = log_ndtr(z) + log_gamma - log_prior
    den = log_ndtr(-z) + log_gamma - log_prior
    return float(num - den)


@dataclass(frozen=True, eq=False)
class ScreeningWindow:
    """The last ``q`` frames of one subject with their fused distances."""

    mu: np.ndarray
    t_amb: float
    q: int = 12
    frames: tuple[ThermalFrame, ...] = ()
    distances: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        if self.q < 1:
            raise UsageError("q must be at least 1")
        if len(self.frames) != len(self.distances):
            raise UsageError("one distance per frame")
        ts = [f.ts_ms for f in self.frames]
        if ts != sorted(ts):
            raise UsageError("window frames must be time-ordered")

    @property
    def full(self) -> bool:
        return len(self.frames) >= self.q

    def push(self, frame: ThermalFrame, d: float) -> ScreeningWindow:
        frames = (self.frames + (frame,))[-self.q:]
        dists = (self.distances + (float(d),))[-self.q:]
        return replace(self, frames=frames, distances=dists)


@dataclass(frozen=True)
class ScreeningVerdict:
    state: FeverState
    soft: float
    t_body_hat: float
    llr_trace: tuple[float, ...]
    t_amb: float
    d_m: float
    ts_ms: int | None = None
    warnings: tuple[str, ...] = ()

    def to_record(self) -> dict:
        return {
            "ts_ms": self.ts_ms,
            "state": self.state.value,
            "soft": self.soft,
            "t_body_c": round(self.t_body_hat, 4),
            "t_amb_c": round(self.t_amb, 4),
            "d_m": round(self.d_m, 4),
            "warnings": list(self.warnings),
        }


def vote(llrs: Sequence[float], xi: float) -> tuple[FeverState, float]:
    """Strict-majority vote of LLR >= xi; returns (state, soft indicator)."""
    v = np.asarray(llrs, dtype=float)
    if v.size == 0:
        raise UsageError("no LLR values to vote on")
    above = int(np.count_nonzero(v >= xi))
    state = FeverState.F1 if above > v.size - above else FeverState.F0
    return state, above / v.size


def screen(window: ScreeningWindow, xi: float | None = None, params: ModelParams | None = None,
           mode: AlphaMode = "auto") -> ScreeningVerdict:
    """Verdict for a full window: per-frame LLR votes plus a body-temperature
    estimate from the window-mean reading at the window-mean distance."""
    p = params or ModelParams()
    xi = p.xi if xi is None else xi
    if not window.frames:
        raise UsageError("empty screening window")
    llrs = []
    for f, d in zip(window.frames, window.distances):
        llrs.append(llr_from_reading(hot_reading(f.temps, window.mu), d, window.t_amb, p, mode))
    state, soft = vote(llrs, xi)
    d_mean = float(np.mean(window.distances))
    t_bar = mean_max_temperature(window.frames, window.mu)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ScreeningRangeWarning)
        t_body = estimate_body_temperature(t_bar, d_mean, window.t_amb, mode, p)
    notes = range_warnings(max(window.distances), window.t_amb, p)
    if len(window.frames) < window.q:
        notes.append(f"partial window ({len(window.frames)}/{window.q} frames)")
    return ScreeningVerdict(state, soft, t_body, tuple(llrs), window.t_amb, d_mean,
                            window.frames[-1].ts_ms, tuple(notes))


def fuse_distance(ir_d: float, radar_d: float | None = None, params: ModelParams | None = None) -> float:
    """Sequential IR + radar range fusion.

    No radar: the IR estimate. Radar and IR disagree by more than the gate:
    trust the radar. Otherwise the inverse-variance weighted mean.
    """
    p = params or ModelParams()
    if ir_d < 0 or (radar_d is not None and radar_d < 0):
        raise UsageError("distances must be non-negative")
    if radar_d is None:
        return float(ir_d)
    if abs(ir_d - radar_d) > p.fusion_gate_m:
        return float(radar_d)
    w_ir, w_radar = 1.0 / p.ir_std_m**2, 1.0 / p.radar_std_m**2
    return float((w_ir * ir_d + w_radar * radar_d) / (w_ir + w_radar))


def match_radar(samples: Sequence[RadarSample], ts_ms: int, dt_s: float = 0.3) -> float | None:
    """Radar distance closest in time to ``ts_ms`` within half a frame period."""
    best, best_gap = None, dt_s * 1000 / 2
    for s in samples:
        gap = abs(s.ts_ms - ts_ms)
        if gap <= best_gap:
            best, best_gap = s.d_m, gap
    return best


@dataclass(frozen=True)
class RocPoint:
    xi: float
    fpr: float
    tpr: float


@dataclass(frozen=True)
class ClassMetrics:
    recall: float
    precision: float


@dataclass(frozen=True)
class RocReport:
    points: tuple[RocPoint, ...]
    auc: float
    xi: float
    tpr: float
    fpr: float
    f1: ClassMetrics
    f0: ClassMetrics
    n_pos: int
    n_neg: int
    extra: dict = field(default_factory=dict)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["xi", "fpr", "tpr"])
        for pt in self.points:
            w.writerow([f"{pt.xi:.6g}", f"{pt.fpr:.6f}", f"{pt.tpr:.6f}"])
        w.writerow([])
        w.writerow(["class", "recall", "precision"])
        w.writerow(["F1", f"{self.f1.recall:.4f}", f"{self.f1.precision:.4f}"])
        w.writerow(["F0", f"{self.f0.recall:.4f}", f"{self.f0.precision:.4f}"])
        return buf.getvalue()


def majority_score(llrs: Sequence[float]) -> float:
    """Largest xi for which the window still votes F1.

    A window votes F1 iff at least floor(Q/2)+1 LLRs are >= xi, i.e. iff xi
    is at most the (floor(Q/2)+1)-th largest LLR.
    """
    v = np.sort(np.asarray(llrs, dtype=float))[::-1]
    return float(v[v.size // 2])


def _safe_div(a: float, b: float) -> float:
    return a / b if b else float("nan")


def roc_report(
    windows: Iterable[tuple[Sequence[float], bool]],
    xi: float = -0.2,
    xi_sweep: Sequence[float] | None = None,
) -> RocReport:
    """ROC over the screening threshold for labelled LLR windows.

    ``windows`` yields (llr_trace, is_fever). The operating point ``xi``
    supplies the precision/recall figures.
    """
    scores, labels = [], []
    for llrs, label in windows:
        scores.append(majority_score(llrs))
        labels.append(bool(label))
    s = np.asarray(scores)
    y = np.asarray(labels)
    n_pos, n_neg = int(y.sum()), int((~y).sum())
    if n_pos == 0 or n_neg == 0:
        raise UsageError("ROC needs both F0 and F1 examples")
    sweep = np.unique(s)[::-1] if xi_sweep is None else np.sort(np.asarray(xi_sweep, float))[::-1]
    points = [RocPoint(math.inf, 0.0, 0.0)]
    for x in sweep:
        pred = s >= x
        points.append(RocPoint(float(x), float((pred & ~y).sum() / n_neg), float((pred & y).sum() / n_pos)))
    points.append(RocPoint(-math.inf, 1.0, 1.0))
    fpr = np.array([pt.fpr for pt in points])
    tpr = np.array([pt.tpr for pt in points])
    auc = float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2))

    pred = s >= xi
    tp = int((pred & y).sum())
    fp = int((pred & ~y).sum())
    tn = int((~pred & ~y).sum())
    fn = int((~pred & y).sum())
    f1 = ClassMetrics(_safe_div(tp, tp + fn), _safe_div(tp, tp + fp))
    f0 = ClassMetrics(_safe_div(tn, tn + fp), _safe_div(tn, tn + fn))
    return RocReport(tuple(points), auc, xi, f1.recall, fp / n_neg, f1, f0, n_pos, n_neg)
