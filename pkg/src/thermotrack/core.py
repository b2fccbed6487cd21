"""Domain types, parameters and the quantized frame codec.

Temperatures are carried as float degrees Celsius everywhere inside the
package. Quantization to 8-bit codes happens only when frames are written
to, or read from, the JSON wire format.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field, fields, replace
from typing import Any, Mapping, Sequence

import numpy as np

LSB_C = 0.25
MAX_CODE = 255
MAX_TEMP_C = LSB_C * MAX_CODE  # 63.75
DEFAULT_M = 64
GRID_SIDE = 8


class ThermoTrackError(Exception):
    """Base class for errors raised by this package."""


class FrameRangeError(ThermoTrackError, ValueError):
    def __init__(self, index: int, value: float):
        super().__init__(
            f"detector {index}: temperature {value!r} outside [0, {MAX_TEMP_C}] degC"
        )
        self.index = index
        self.value = value


class FrameParseError(ThermoTrackError, ValueError):
    pass


class LayoutError(ThermoTrackError, ValueError):
    pass


class ConfigError(ThermoTrackError, ValueError):
    pass


class UsageError(ThermoTrackError, ValueError):
    pass


class NumericError(ThermoTrackError, ArithmeticError):
    pass


def _frozen_array(values: Any, dtype: Any = float) -> np.ndarray:
    arr = np.array(values, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class ThermalFrame:
    """One timestamped reading of all M detectors.

    ``temps`` is stored as a read-only float array in degC.
    """

    sensor_id: int
    ts_ms: int
    temps: np.ndarray

    def __post_init__(self) -> None:
        temps = _frozen_array(self.temps)
        if temps.ndim != 1 or temps.size == 0:
            raise ValueError("temps must be a non-empty 1-D vector")
        if not np.all(np.isfinite(temps)):
            bad = int(np.flatnonzero(~np.isfinite(temps))[0])
            raise ValueError(f"detector {bad}: non-finite temperature")
        if not 0 <= int(self.sensor_id) < 2**64:
            raise ValueError("sensor_id must be an unsigned 64-bit integer")
        object.__setattr__(self, "temps", temps)
        object.__setattr__(self, "sensor_id", int(self.sensor_id))
        object.__setattr__(self, "ts_ms", int(self.ts_ms))

    @property
    def m(self) -> int:
        return int(self.temps.size)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ThermalFrame):
            return NotImplemented
        return (
            self.sensor_id == other.sensor_id
            and self.ts_ms == other.ts_ms
            and np.array_equal(self.temps, other.temps)
        )

    def __hash__(self) -> int:
        return hash((self.sensor_id, self.ts_ms, self.temps.tobytes()))


def quantize(temps: Sequence[float] | np.ndarray) -> np.ndarray:
    """Map degC values to 8-bit codes (round half up), checking range."""
    t = np.asarray(temps, dtype=float)
    out_of_range = ~((t >= 0.0) & (t <= MAX_TEMP_C))
    if out_of_range.any():
        i = int(np.flatnonzero(out_of_range)[0])
        raise FrameRangeError(i, float(t[i]))
    codes = np.floor(t / LSB_C + 0.5).astype(np.int64)
    return np.clip(codes, 0, MAX_CODE)


def dequantize(codes: Sequence[int] | np.ndarray) -> np.ndarray:
    return np.asarray(codes, dtype=float) * LSB_C


def encode_frame(frame: ThermalFrame) -> dict[str, Any]:
    """Wire record for one frame: ``{sensor_id, ts_ms, codes}``.

    ``sensor_id`` is a decimal string so 64-bit ids survive JSON readers
    that parse numbers as doubles.
    """
    return {
        "sensor_id": str(frame.sensor_id),
        "ts_ms": frame.ts_ms,
        "codes": [int(c) for c in quantize(frame.temps)],
    }


def decode_frame(record: Mapping[str, Any] | str, m: int | None = DEFAULT_M) -> ThermalFrame:
    """Parse a wire record (dict or JSON text) back into a frame.

    Pass ``m=None`` to accept any code count.
    """
    if isinstance(record, (str, bytes)):
        try:
            record = json.loads(record)
        except json.JSONDecodeError as exc:
            raise FrameParseError(f"invalid JSON: {exc}") from exc
    if not isinstance(record, Mapping):
        raise FrameParseError("frame record must be a JSON object")
    for key in ("sensor_id", "ts_ms", "codes"):
        if key not in record:
            raise FrameParseError(f"missing field {key!r}")
    try:
        sensor_id = int(record["sensor_id"])
    except (TypeError, ValueError) as exc:
        raise FrameParseError(f"bad sensor_id {record['sensor_id']!r}") from exc
    ts = record["ts_ms"]
    if isinstance(ts, bool) or not isinstance(ts, int):
        raise FrameParseError(f"ts_ms must be an integer, got {ts!r}")
    codes = record["codes"]
    if not isinstance(codes, list):
        raise FrameParseError("codes must be a list")
    if m is not None and len(codes) != m:
        raise FrameParseError(f"expected {m} codes, got {len(codes)}")
    for i, c in enumerate(codes):
        if isinstance(c, bool) or not isinstance(c, int) or not 0 <= c <= MAX_CODE:
            raise FrameParseError(f"code {i} invalid: {c!r}")
    try:
        return ThermalFrame(sensor_id, ts, dequantize(codes))
    except ValueError as exc:
        raise FrameParseError(str(exc)) from exc


def frame_to_json(frame: ThermalFrame) -> str:
    return json.dumps(encode_frame(frame), separators=(",", ":"))


class Mount(str, enum.Enum):
    WALL = "wall"
    CEILING = "ceiling"


@dataclass(frozen=True, eq=False)
class RoiSpec:
    """One region of interest.

    Wall ROIs carry an angle of arrival, ceiling ROIs a 2-D floor footprint.
    ``mask`` may be left empty (None) and filled from geometry later.
    """

    index: int
    tau: float
    aoa_deg: float | None = None
    footprint_m: tuple[float, float] | None = None
    mask: np.ndarray | None = None

    def __post_init__(self) -> None:
        if self.tau <= 0:
            raise LayoutError(f"ROI {self.index}: tau must be positive")
        if self.mask is not None:
            mask = _frozen_array(self.mask, dtype=bool)
            if mask.ndim != 1:
                raise LayoutError(f"ROI {self.index}: mask must be a vector")
            if not mask.any():
                raise LayoutError(f"ROI {self.index}: mask is all zero")
            object.__setattr__(self, "mask", mask)
        if self.footprint_m is not None:
            x, y = self.footprint_m
            object.__setattr__(self, "footprint_m", (float(x), float(y)))

    @property
    def support(self) -> np.ndarray:
        if self.mask is None:
            raise LayoutError(f"ROI {self.index}: mask not set")
        return np.flatnonzero(self.mask)


@dataclass(frozen=True, eq=False)
class SensorLayout:
    mount: Mount
    rois: tuple[RoiSpec, ...]
    m: int = DEFAULT_M
    fov_deg: float = 60.0
    d_min: float = 0.25
    d_max: float = 3.5
    height_m: float = 3.0
    cell_m: float = 0.5

    def __post_init__(self) -> None:
        object.__setattr__(self, "mount", Mount(self.mount))
        object.__setattr__(self, "rois", tuple(self.rois))
        if not self.rois:
            raise LayoutError("layout needs at least one ROI")
        if self.k > self.m:
            raise LayoutError(f"K={self.k} exceeds M={self.m}")
        if self.mount is Mount.WALL:
            if not self.d_min < self.d_max:
                raise LayoutError("d_min must be below d_max")
            if any(r.aoa_deg is None for r in self.rois):
                raise LayoutError("wall layouts need aoa_deg on every ROI")
        else:
            if self.height_m <= 0:
                raise LayoutError("ceiling height must be positive")
            if any(r.footprint_m is None for r in self.rois):
                raise LayoutError("ceiling layouts need footprint_m on every ROI")
        union = np.zeros(self.m, dtype=bool)
        for r in self.rois:
            if r.mask is not None:
                if r.mask.size != self.m:
                    raise LayoutError(f"ROI {r.index}: mask length {r.mask.size} != M")
                union |= r.mask
        if self.has_masks and not union.any():
            raise LayoutError("union of ROI masks is empty")

    @property
    def k(self) -> int:
        return len(self.rois)

    @property
    def has_masks(self) -> bool:
        return all(r.mask is not None for r in self.rois)

    @property
    def masks(self) -> np.ndarray:
        """K x M boolean matrix of ROI masks."""
        if not self.has_masks:
            raise LayoutError("layout masks not built; call with_geometric_masks")
        return np.stack([r.mask for r in self.rois])

    @property
    def aoas(self) -> np.ndarray:
        return np.array([r.aoa_deg for r in self.rois], dtype=float)

    @property
    def footprints(self) -> np.ndarray:
        return np.array([r.footprint_m for r in self.rois], dtype=float)

    def with_masks(self, masks: Sequence[np.ndarray]) -> SensorLayout:
        rois = tuple(replace(r, mask=mk) for r, mk in zip(self.rois, masks))
        return replace(self, rois=rois)


@dataclass(frozen=True)
class ModelParams:
    """Scalar model parameters; defaults are the published calibration."""

    # wall-mounted signature law
    sigma0: float = 4.5
    gamma: float = 1.1
    sigma_T: float = 1.5
    tau_wall: float = 0.8
    # ceiling-mounted constant signature
    sigma_bar_ceiling: float = 1.3
    sigma_T_ceiling: float = 0.3
    tau_ceiling: float = 0.4
    delta_d: float = 0.25
    # screening
    alpha0_lin: float = 0.67
    alpha1_lin: float = 0.45
    alpha0_quad: float = 0.66
    alpha1_quad: float = 0.54
    alpha2_quad: float = -0.21
    alpha_switch_m: float = 0.75
    beta0: float = 1.0
    beta1: float = -0.09
    sigma_body: float = 0.4
    xi: float = -0.2
    q: int = 12
    t_max: float = 37.5
    t_min: float = 20.0
    t_amb_range: tuple[float, float] = (20.0, 28.0)
    screening_max_d: float = 1.1
    # learning / background / motion
    lambda_lasso: float = 41.0
    mewma_mu: float = 0.99
    mewma_c: float = 0.995
    ridge: float = 1e-4
    walk_speed_mps: float = 0.5
    dt_s: float = 0.3
    # counting
    zeta: int = 3
    p_stay: float = 0.8
    p_move: float = 0.15
    p_exit: float = 0.05
    p_birth: float = 0.05
    alert_threshold_m: float = 1.0
    # fusion
    radar_std_m: float = 0.1
    ir_std_m: float = 0.32
    fusion_gate_m: float = 0.3

    def __post_init__(self) -> None:
        object.__setattr__(self, "t_amb_range", tuple(self.t_amb_range))
        if self.q < 1:
            raise ConfigError("q must be at least 1")
        if self.zeta < 1:
            raise ConfigError("zeta must be at least 1")
        for name in ("mewma_mu", "mewma_c"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ConfigError(f"{name} must lie in (0, 1), got {v}")
        if self.sigma_body <= 0:
            raise ConfigError("sigma_body must be positive")
        if self.delta_d <= 0:
            raise ConfigError("delta_d must be positive")
        if self.ridge < 0:
            raise ConfigError("ridge must be non-negative")
        if not math.isclose(self.p_stay + self.p_move + self.p_exit, 1.0, abs_tol=1e-9):
            raise ConfigError("p_stay + p_move + p_exit must equal 1")
        d = np.linspace(0.0, self.screening_max_d, 45)
        lin = self.alpha0_lin - self.alpha1_lin * d[d < self.alpha_switch_m]
        quad = self.alpha0_quad - self.alpha1_quad * d - self.alpha2_quad * d**2
        quad = quad[d >= self.alpha_switch_m]
        if np.any(lin <= 0) or np.any(lin >= 1) or np.any(quad <= 0) or np.any(quad >= 1):
            raise ConfigError("alpha(d) must stay inside (0, 1) over the screening range")

    def to_dict(self) -> dict[str, Any]:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = list(v) if isinstance(v, tuple) else v
        return out

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> ModelParams:
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown parameter(s): {', '.join(sorted(unknown))}")
        return cls(**dict(data))


def distance_grid(layout: SensorLayout, params: ModelParams) -> np.ndarray:
    """Distances d_min, d_min + delta_d, ..., d_max (inclusive)."""
    n = int(round((layout.d_max - layout.d_min) / params.delta_d)) + 1
    if n < 2:
        raise LayoutError("distance grid needs at least two points")
    return layout.d_min + params.delta_d * np.arange(n)


def grid_index(m: int, side: int = GRID_SIDE) -> tuple[np.ndarray, np.ndarray]:
    """Row and column of each detector in a row-major square grid."""
    idx = np.arange(m)
    return idx // side, idx % side


@dataclass(frozen=True)
class RadarSample:
    ts_ms: int
    d_m: float
    quality: float = 1.0


@dataclass
class Diagnostics:
    """Mutable counters shared by a stream's processing stages."""

    counts: dict[str, int] = field(default_factory=dict)

    def bump(self, key: str, n: int = 1) -> None:
        self.counts[key] = self.counts.get(key, 0) + n

    def __getitem__(self, key: str) -> int:
        return self.counts.get(key, 0)
