"""Standard layouts and the YAML layout/parameter/state files."""

from __future__ import annotations

from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np
import yaml

from .background import BackgroundModel
from .core import ConfigError, ModelParams, Mount, RoiSpec, SensorLayout
from .signature import with_geometric_masks

WALL_AOAS_DEG = (-30.0, -18.0, 0.0, 18.0, 30.0)


def wall_layout(
    aoas: Sequence[float] = WALL_AOAS_DEG,
    params: ModelParams | None = None,
    fov_deg: float = 60.0,
    d_min: float = 0.25,
    d_max: float = 3.5,
) -> SensorLayout:
    p = params or ModelParams()
    rois = tuple(RoiSpec(i, p.tau_wall, aoa_deg=float(a)) for i, a in enumerate(aoas))
    return with_geometric_masks(
        SensorLayout(Mount.WALL, rois, fov_deg=fov_deg, d_min=d_min, d_max=d_max)
    )


def ceiling_grid_footprints(nx: int = 4, ny: int = 3, cell_m: float = 0.5) -> list[tuple[float, float]]:
    """Cell centres of an nx x ny grid centred under the sensor, row by row."""
    xs = (np.arange(nx) - (nx - 1) / 2) * cell_m
    ys = (np.arange(ny) - (ny - 1) / 2) * cell_m
    return [(float(x), float(y)) for y in ys for x in xs]


def ceiling_layout(
    nx: int = 4,
    ny: int = 3,
    cell_m: float = 0.5,
    height_m: float = 3.0,
    params: ModelParams | None = None,
    fov_deg: float = 60.0,
) -> SensorLayout:
    p = params or ModelParams()
    rois = tuple(
        RoiSpec(i, p.tau_ceiling, footprint_m=fp)
        for i, fp in enumerate(ceiling_grid_footprints(nx, ny, cell_m))
    )
    return with_geometric_masks(
        SensorLayout(Mount.CEILING, rois, fov_deg=fov_deg, height_m=height_m, cell_m=cell_m)
    )


def layout_to_dict(layout: SensorLayout, include_masks: bool = True) -> dict[str, Any]:
    rois = []
    for r in layout.rois:
        entry: dict[str, Any] = {"index": r.index, "tau": r.tau}
        if r.aoa_deg is not None:
            entry["aoa_deg"] = r.aoa_deg
        if r.footprint_m is not None:
            entry["footprint_m"] = list(r.footprint_m)
        if include_masks and r.mask is not None:
            entry["mask"] = [int(v) for v in r.mask]
        rois.append(entry)
    return {
        "mount": layout.mount.value,
        "m": layout.m,
        "fov_deg": layout.fov_deg,
        "d_min": layout.d_min,
        "d_max": layout.d_max,
        "height_m": layout.height_m,
        "cell_m": layout.cell_m,
        "rois": rois,
    }


def layout_from_dict(data: Mapping[str, Any]) -> SensorLayout:
    try:
        rois = []
        for i, entry in enumerate(data["rois"]):
            fp = entry.get("footprint_m")
            mask = entry.get("mask")
            rois.append(
                RoiSpec(
                    int(entry.get("index", i)),
                    float(entry["tau"]),
                    aoa_deg=entry.get("aoa_deg"),
                    footprint_m=tuple(fp) if fp is not None else None,
                    mask=np.asarray(mask, dtype=bool) if mask is not None else None,
                )
            )
        layout = SensorLayout(
            Mount(data["mount"]),
            tuple(rois),
            m=int(data.get("m", 64)),
            fov_deg=float(data.get("fov_deg", 60.0)),
            d_min=float(data.get("d_min", 0.25)),
            d_max=float(data.get("d_max", 3.5)),
            height_m=float(data.get("height_m", 3.0)),
            cell_m=float(data.get("cell_m", 0.5)),
        )
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"malformed layout: {exc}") from exc
    return layout if layout.has_masks else with_geometric_masks(layout)


def _load_yaml(path: str | Path) -> Any:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"file not found: {p}")
    with p.open() as fh:
        return yaml.safe_load(fh) or {}


def _dump_yaml(data: Any, path: str | Path) -> None:
    with Path(path).open("w") as fh:
        yaml.safe_dump(data, fh, sort_keys=False, default_flow_style=None)


def load_layout(path: str | Path) -> SensorLayout:
    return layout_from_dict(_load_yaml(path))


def save_layout(layout: SensorLayout, path: str | Path) -> None:
    _dump_yaml(layout_to_dict(layout), path)


def load_params(path: str | Path | None) -> ModelParams:
    """Parameters from a YAML file; omitted keys keep their defaults.

    Optional extra sections (``learned``, ``background``) are ignored here
    and read by :func:`load_state`.
    """
    if path is None:
        return ModelParams()
    data = dict(_load_yaml(path))
    data.pop("learned", None)
    data.pop("background", None)
    return ModelParams.from_dict(data)


def save_params(params: ModelParams, path: str | Path, learned: Mapping[str, Any] | None = None,
                background: BackgroundModel | None = None) -> None:
    data: dict[str, Any] = params.to_dict()
    if learned:
        data["learned"] = {
            k: (np.asarray(v).tolist() if isinstance(v, np.ndarray) else v) for k, v in learned.items()
        }
    if background is not None:
        data["background"] = background_to_dict(background)
    _dump_yaml(data, path)


def background_to_dict(bg: BackgroundModel) -> dict[str, Any]:
    return {
        "mu": bg.mu.tolist(),
        "cov": bg.cov.tolist(),
        "lambda_mu": bg.lambda_mu,
        "lambda_c": bg.lambda_c,
        "ridge": bg.ridge,
        "frames_seen": bg.frames_seen,
        "diagonal": bg.diagonal,
    }


def background_from_dict(data: Mapping[str, Any]) -> BackgroundModel:
    return BackgroundModel(
        np.asarray(data["mu"], float),
        np.asarray(data["cov"], float),
        float(data.get("lambda_mu", 0.99)),
        float(data.get("lambda_c", 0.995)),
        float(data.get("ridge", 1e-4)),
        int(data.get("frames_seen", 0)),
        bool(data.get("diagonal", False)),
    )


def load_state(path: str | Path) -> tuple[dict[str, Any], BackgroundModel | None]:
    """Learned quantities and background stored alongside the parameters."""
    data = _load_yaml(path)
    bg = data.get("background")
    return dict(data.get("learned") or {}), background_from_dict(bg) if bg else None
