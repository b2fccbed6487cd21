"""Ceiling-mount occupancy: MAP decisions over ROIs, head counts and
mutual-distancing alerts.

The joint posterior lives on the bounded support of occupancy vectors with
at most ``zeta`` ones. For K=12 and zeta=3 that is 299 states, small enough
to keep exactly.
"""

from __future__ import annotations

import functools
import itertools
import math
from dataclasses import dataclass
from typing import Any, Iterable, Mapping, Protocol, Sequence

import numpy as np

from ._gauss import logsumexp
from .background import BackgroundModel
from .core import ModelParams, SensorLayout, ThermalFrame, UsageError
from .signature import SignatureModel, Variant
from .tracking import log_likelihood_empty, log_likelihood_occupied


def bounded_support(k: int, zeta: int) -> np.ndarray:
    """All binary K-vectors with at most ``zeta`` ones, all-zero first."""
    if k < 1 or zeta < 0:
        raise UsageError("support needs K >= 1 and zeta >= 0")
    return _support(k, min(zeta, k))


@functools.lru_cache(maxsize=32)
def _support(k: int, zeta: int) -> np.ndarray:
    rows = [np.zeros(k, dtype=np.int8)]
    for n in range(1, zeta + 1):
        for ones in itertools.combinations(range(k), n):
            r = np.zeros(k, dtype=np.int8)
            r[list(ones)] = 1
            rows.append(r)
    out = np.array(rows)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class OccupancyPosterior:
    """Pr(r_t | Y_t) over the bounded support."""

    support: np.ndarray
    log_probs: np.ndarray
    zeta: int

    def __post_init__(self) -> None:
        if self.support.shape[0] != self.log_probs.shape[0]:
            raise ValueError("support and log_probs differ in length")
        if self.support[0].any():
            raise ValueError("support must start with the all-zero vector")

    @classmethod
    def uniform(cls, k: int, zeta: int) -> OccupancyPosterior:
        sup = bounded_support(k, zeta)
        return cls(sup, np.full(sup.shape[0], -math.log(sup.shape[0])), zeta)

    @property
    def k(self) -> int:
        return self.support.shape[1]

    @property
    def probs(self) -> np.ndarray:
        return np.exp(self.log_probs)

    def marginals(self) -> np.ndarray:
        """Pr(r_{t,k} = 1 | Y_t) for every ROI."""
        return self.probs @ self.support


class TransitionModel(Protocol):
    def prob_on(self, states: np.ndarray) -> np.ndarray:
        """Pr(r_{t,k} = 1 | r_{t-1}) for each previous state (rows) and ROI k."""


@dataclass(frozen=True)
class IdentityTransition:
    """Nothing moves: r_t = r_{t-1}."""

    def prob_on(self, states: np.ndarray) -> np.ndarray:
        return np.asarray(states, dtype=float)


@dataclass(frozen=True)
class UniformTransition:
    """Every ROI is a fair coin whatever happened before."""

    def prob_on(self, states: np.ndarray) -> np.ndarray:
        return np.full(np.shape(states), 0.5)


def roi_adjacency(layout: SensorLayout, tol: float = 1e-6) -> np.ndarray:
    """Edge-adjacent ROIs: footprints one cell apart along x or y."""
    fp = layout.footprints
    dist = np.linalg.norm(fp[:, None, :] - fp[None, :, :], axis=-1)
    return np.abs(dist - layout.cell_m) < tol


def border_rois(layout: SensorLayout) -> np.ndarray:
    """ROIs on the outer ring of the grid, where new bodies can appear."""
    fp = layout.footprints
    lo, hi = fp.min(axis=0), fp.max(axis=0)
    on_edge = np.isclose(fp, lo) | np.isclose(fp, hi)
    return on_edge.any(axis=1)


@dataclass(frozen=True, eq=False)
class NearestNeighborChain:
    """Noisy-OR mobility model on the ROI grid.

    A body in ROI j stays with ``p_stay``, moves to each of its n_j
    neighbours with ``p_move / n_j`` (the rest of the move mass leaves when
    j has no neighbours) and leaves the scene with ``p_exit``. ROI k ends up
    occupied unless every occupied ROI fails to send a body there and no
    newcomer arrives (``p_birth``, border ROIs only).
    """

    adjacency: np.ndarray
    border: np.ndarray
    p_stay: float = 0.8
    p_move: float = 0.15
    p_birth: float = 0.05

    def __post_init__(self) -> None:
        adj = np.asarray(self.adjacency, dtype=bool)
        k = adj.shape[0]
        deg = adj.sum(axis=1)
        share = np.where(deg > 0, self.p_move / np.maximum(deg, 1), 0.0)
        send = adj * share[:, None]
        send[np.arange(k), np.arange(k)] = self.p_stay
        object.__setattr__(self, "_log_fail", np.log1p(-np.clip(send, 0.0, 1.0)))
        birth = np.where(np.asarray(self.border, dtype=bool), self.p_birth, 0.0)
        object.__setattr__(self, "_log_no_birth", np.log1p(-birth))

    @classmethod
    def from_layout(cls, layout: SensorLayout, params: ModelParams | None = None) -> NearestNeighborChain:
        p = params or ModelParams()
        return cls(roi_adjacency(layout), border_rois(layout), p.p_stay, p.p_move, p.p_birth)

    def prob_on(self, states: np.ndarray) -> np.ndarray:
        s = np.asarray(states, dtype=float)
        log_off = s @ self._log_fail + self._log_no_birth
        return -np.expm1(log_off)


def propagate_prior(posterior: OccupancyPosterior, transition: TransitionModel) -> np.ndarray:
    """Per-ROI priors Pr(r_{t,k} = 1 | Y_{t-1})."""
    on = transition.prob_on(posterior.support)
    return np.clip(posterior.probs @ on, 0.0, 1.0)


def roi_log_likelihoods(
    frame: ThermalFrame | np.ndarray, bg: BackgroundModel, sig: SignatureModel
) -> tuple[np.ndarray, np.ndarray]:
    """(log Pr(y | r_k = 0), log Pr(y | r_k = 1)) on each ROI's support."""
    if sig.variant is Variant.WALL_DISTANCE_DEPENDENT:
        raise UsageError("counting needs a ceiling layout")
    k = sig.layout.k
    ll0 = np.array([log_likelihood_empty(frame, bg, sig, i) for i in range(k)])
    ll1 = np.array([log_likelihood_occupied(frame, bg, sig, i) for i in range(k)])
    return ll0, ll1


def _log_prior_terms(priors: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(priors, dtype=float)
    with np.errstate(divide="ignore"):
        return np.log1p(-p), np.log(p)


def posterior_from_terms(
    log_off: np.ndarray, log_on: np.ndarray, zeta: int, support: np.ndarray | None = None
) -> OccupancyPosterior:
    """Normalise the product of per-ROI factors over the bounded support."""
    sup = bounded_support(log_off.size, zeta) if support is None else support
    on = sup.astype(bool)
    scores = np.where(on, log_on, log_off).sum(axis=1)
    norm = logsumexp(scores)
    if not np.isfinite(norm):
        return OccupancyPosterior.uniform(log_off.size, zeta)
    return OccupancyPosterior(sup, scores - norm, zeta)


def map_vector(log_off: np.ndarray, log_on: np.ndarray, zeta: int) -> np.ndarray:
    """argmax over vectors with at most zeta ones of the factor product.

    The product separates per ROI, so the best vector switches on the ROIs
    with positive log-odds, keeping the ``zeta`` largest. Ties go to empty.
    """
    gain = np.asarray(log_on, float) - np.asarray(log_off, float)
    order = np.argsort(-gain, kind="stable")[:zeta]
    r = np.zeros(gain.size, dtype=int)
    r[order[gain[order] > 0]] = 1
    return r


def map_occupancy(
    frame: ThermalFrame | np.ndarray,
    bg: BackgroundModel,
    sig: SignatureModel,
    priors: np.ndarray | None = None,
    zeta: int | None = None,
) -> tuple[np.ndarray, OccupancyPosterior]:
    """MAP occupancy vector and the updated posterior.

    ``priors`` are per-ROI Pr(r_k = 1); None means 1/2 everywhere.
    """
    z = sig.params.zeta if zeta is None else zeta
    k = sig.layout.k
    p = np.full(k, 0.5) if priors is None else np.asarray(priors, dtype=float)
    if p.shape != (k,):
        raise UsageError(f"expected {k} priors, got shape {p.shape}")
    ll0, ll1 = roi_log_likelihoods(frame, bg, sig)
    lp0, lp1 = _log_prior_terms(p)
    log_off, log_on = ll0 + lp0, ll1 + lp1
    return map_vector(log_off, log_on, z), posterior_from_terms(log_off, log_on, z)


def count(r_hat: Sequence[int] | np.ndarray) -> int:
    return int(np.sum(np.asarray(r_hat, dtype=int)))


@dataclass(frozen=True)
class CountStep:
    ts_ms: int | None
    r_hat: np.ndarray
    count: int
    posterior: OccupancyPosterior


class OccupancyCounter:
    """Frame-by-frame MAP occupancy for one ceiling sensor (single writer)."""

    def __init__(self, sig: SignatureModel, transition: TransitionModel | None = None,
                 zeta: int | None = None) -> None:
        self.sig = sig
        self.zeta = sig.params.zeta if zeta is None else zeta
        self.transition = transition or NearestNeighborChain.from_layout(sig.layout, sig.params)
        self.posterior: OccupancyPosterior | None = None

    def step(self, frame: ThermalFrame | np.ndarray, bg: BackgroundModel) -> CountStep:
        priors = None if self.posterior is None else propagate_prior(self.posterior, self.transition)
        r_hat, self.posterior = map_occupancy(frame, bg, self.sig, priors, self.zeta)
        ts = frame.ts_ms if isinstance(frame, ThermalFrame) else None
        return CountStep(ts, r_hat, count(r_hat), self.posterior)


@dataclass(frozen=True)
class DistancingAlert:
    ts_ms: int
    pair: tuple[int, int]
    distance_m: float
    window: int
    sensor_id: str | None = None

    def __post_init__(self) -> None:
        if self.pair[0] == self.pair[1]:
            raise ValueError("alert pair must name two different ROIs")

    def to_record(self) -> dict[str, Any]:
        return {
            "ts_ms": self.ts_ms,
            "sensor_id": self.sensor_id,
            "roi_pair": list(self.pair),
            "distance_m": round(self.distance_m, 6),
            "window": self.window,
        }


WINDOWS_MS = {"frame": None, "minute": 60_000, "quarter": 900_000, "hour": 3_600_000}


def close_pairs(r_hat: Sequence[int], footprints: np.ndarray, threshold_m: float) -> list[tuple[int, int, float]]:
    """Occupied ROI pairs whose footprints are closer than the threshold."""
    occ = np.flatnonzero(np.asarray(r_hat))
    out = []
    for a, b in itertools.combinations(occ, 2):
        d = float(np.linalg.norm(footprints[a] - footprints[b]))
        if d < threshold_m:
            out.append((int(a), int(b), d))
    return out


def distancing_alerts(
    steps: Iterable[tuple[int, Sequence[int]]],
    footprints: np.ndarray | Sequence[Sequence[float]],
    threshold_m: float = 1.0,
    window_ms: int | None = None,
    sensor_id: str | None = None,
) -> list[DistancingAlert]:
    """Alerts for occupied pairs closer than ``threshold_m``.

    ``steps`` yields (ts_ms, r_hat). With ``window_ms`` None every frame is
    its own window; otherwise a pair alerts at most once per window
    ``ts_ms // window_ms``.
    """
    fp = np.asarray(footprints, dtype=float)
    seen: set[tuple[tuple[int, int], int]] = set()
    alerts = []
    for ts, r in steps:
        win = int(ts) if not window_ms else int(ts) // int(window_ms)
        for a, b, d in close_pairs(r, fp, threshold_m):
            key = ((a, b), win)
            if key in seen:
                continue
            seen.add(key)
            alerts.append(DistancingAlert(int(ts), (a, b), d, win, sensor_id))
    return alerts


@dataclass(frozen=True)
class AlertScore:
    precision: float
    recall: float
    tp: int
    fp: int
    fn: int


def score_alerts(
    alerts: Iterable[DistancingAlert], truth_events: Iterable[tuple[int, tuple[int, int]]]
) -> AlertScore:
    """Precision and recall of alerts against true (window, pair) events.

    An empty prediction set has precision 1 by convention.
    """
    pred = {(a.window, tuple(a.pair)) for a in alerts}
    true = {(int(w), tuple(sorted(p))) for w, p in truth_events}
    tp = len(pred & true)
    fp = len(pred - true)
    fn = len(true - pred)
    precision = tp / (tp + fp) if pred else 1.0
    recall = tp / (tp + fn) if true else 1.0
    return AlertScore(precision, recall, tp, fp, fn)


def truth_events(
    truth: Iterable[Mapping[str, Any]],
    footprints: np.ndarray | Sequence[Sequence[float]],
    threshold_m: float = 1.0,
    window_ms: int | None = None,
) -> list[tuple[int, tuple[int, int]]]:
    """(window, pair) events from ground-truth occupancy records."""
    fp = np.asarray(footprints, dtype=float)
    out = set()
    for rec in truth:
        ts = int(rec["ts_ms"])
        win = ts if not window_ms else ts // int(window_ms)
        for a, b, _ in close_pairs(rec["occupancy"], fp, threshold_m):
            out.add((win, (a, b)))
    return sorted(out)
