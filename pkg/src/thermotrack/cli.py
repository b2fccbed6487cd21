"""Command-line entry point: ``thermotrack <mode> [flags]``.

Modes: simulate, track, count, screen, fit, eval. ``--mode NAME`` is
accepted in place of the positional mode. Verbosity follows the
THERMOTRACK_LOG environment variable (DEBUG, INFO, WARNING, ...).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from contextlib import contextmanager
from dataclasses import replace
from pathlib import Path
from typing import Any, Iterable, Iterator, Sequence, TextIO

import numpy as np

from . import config
from .background import BackgroundModel, gated_update, init_background
from .core import (
    ConfigError,
    Diagnostics,
    ModelParams,
    Mount,
    RadarSample,
    SensorLayout,
    ThermalFrame,
    ThermoTrackError,
    UsageError,
    frame_to_json,
)
from .counting import OccupancyCounter, distancing_alerts, score_alerts, truth_events, WINDOWS_MS
from .ingest import ingest_stream, parse_endpoint, read_frames, split_by_sensor
from .screening import (
    ScreeningWindow,
    ambient_temperature,
    fuse_distance,
    match_radar,
    roc_report,
    screen,
)
from .signature import SignatureModel, fit_srelu, learn_signatures_lasso
from .simulator import (
    corridor_scene,
    default_background,
    empty_frames,
    synth_frames,
    synth_screening_subject,
    wall_scene,
)
from .tracking import init_track_state, rmse_report, step_track, track_records

log = logging.getLogger("thermotrack")

SCENES = ("corridor1", "corridor2", "corridor3", "wall", "screening")


def _dumps(rec: Any) -> str:
    return json.dumps(rec, separators=(",", ":"))


def write_jsonl(records: Iterable[Any], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(_dumps(rec) + "\n")


def read_jsonl(path: str | Path) -> list[dict[str, Any]]:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"file not found: {p}")
    with p.open(encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


@contextmanager
def _output(path: str | None) -> Iterator[TextIO]:
    if path is None or path == "-":
        yield sys.stdout
        return
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        yield fh


def _params(args: argparse.Namespace) -> ModelParams:
    p = config.load_params(args.params)
    over = {}
    if args.zeta is not None:
        over["zeta"] = args.zeta
    if args.q is not None:
        over["q"] = args.q
    if args.xi is not None:
        over["xi"] = args.xi
    if args.threshold_m is not None:
        over["alert_threshold_m"] = args.threshold_m
    return replace(p, **over) if over else p


def _layout(args: argparse.Namespace, default: SensorLayout | None = None) -> SensorLayout:
    if args.layout is None:
        if default is None:
            raise UsageError("--layout is required for this mode")
        return default
    name = str(args.layout)
    if name == "wall5":
        return config.wall_layout()
    if name == "ceiling12":
        return config.ceiling_layout()
    return config.load_layout(name)


def _frames(args: argparse.Namespace, diag: Diagnostics) -> list[ThermalFrame]:
    if args.frames is None:
        raise UsageError("--frames is required for this mode")
    if str(args.frames).startswith("tcp://"):
        return list(ingest_stream(parse_endpoint(args.frames), diag=diag))
    path = Path(args.frames)
    if not path.exists():
        raise ConfigError(f"file not found: {path}")
    return read_frames(path, diag=diag)


def _background(frames: Sequence[ThermalFrame], n: int, args: argparse.Namespace,
                params: ModelParams) -> tuple[BackgroundModel, list[ThermalFrame]]:
    """Background from a params state file when present, else from the
    first ``n`` frames (which are then not processed)."""
    if args.params:
        _, bg = config.load_state(args.params)
        if bg is not None:
            return bg, list(frames)
    if len(frames) < max(n, 2):
        raise UsageError(f"need at least {max(n, 2)} frames to learn the background")
    bg = init_background(frames[:n], lambda_mu=params.mewma_mu, lambda_c=params.mewma_c,
                         ridge=params.ridge)
    return bg, list(frames[n:])


def _report_diag(diag: Diagnostics) -> None:
    if diag.counts:
        log.warning("ingestion counters: %s", dict(sorted(diag.counts.items())))


# simulate ------------------------------------------------------------------

def _simulate(args: argparse.Namespace) -> int:
    params = _params(args)
    seed = args.seed
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    scene_name = args.scene
    if scene_name == "screening":
        return _simulate_screening(args, params, out)
    if scene_name.startswith("corridor"):
        n = int(scene_name.removeprefix("corridor"))
        layout = _layout(args, config.ceiling_layout(params=params))
        params = replace(params, zeta=max(params.zeta, n))
        scene = corridor_scene(layout, n, seed=seed, episodes=args.episodes, params=params)
    else:
        layout = _layout(args, config.wall_layout(params=params))
        scene = wall_scene(layout, args.distance, seed=seed, params=params)
    bg_frames = empty_frames(layout, scene.mu, scene.cov, args.bg_frames, seed=seed + 7919, params=params)
    t0 = bg_frames[-1].ts_ms + int(round(params.dt_s * 1000)) if bg_frames else 0
    scene = replace(scene, t0_ms=t0)
    frames, truth = synth_frames(scene)
    empty_truth = [{"ts_ms": f.ts_ms, "bodies": [], "occupancy": [0] * layout.k} for f in bg_frames]
    with (out / "frames.jsonl").open("w", encoding="utf-8", newline="\n") as fh:
        for f in bg_frames + frames:
            fh.write(frame_to_json(f) + "\n")
    write_jsonl(empty_truth + truth, out / "truth.jsonl")
    config.save_layout(layout, out / "layout.yaml")
    log.info("wrote %d frames to %s", len(bg_frames) + len(frames), out)
    return 0


def _simulate_screening(args: argparse.Namespace, params: ModelParams, out: Path) -> int:
    layout = _layout(args, config.wall_layout(params=params))
    rng = np.random.default_rng([args.seed, 0x5E])
    t_amb = 23.0
    mu, cov = default_background(layout.m, t_amb=t_amb, seed=args.seed)
    dt_ms = int(round(params.dt_s * 1000))
    bg = empty_frames(layout, mu, cov, args.bg_frames, seed=args.seed + 7919, params=params)
    frames: list[ThermalFrame] = list(bg)
    truth: list[dict[str, Any]] = [{"ts_ms": f.ts_ms, "bodies": []} for f in bg]
    radar: list[dict[str, Any]] = []
    t_next = len(bg) * dt_ms
    for s in range(args.subjects):
        fever = bool(rng.random() < 0.5)
        t_body = float(rng.uniform(37.8, 38.5) if fever else rng.uniform(36.0, 37.2))
        d = rng.uniform(0.3, 1.0, params.q)
        theta = float(rng.uniform(-25.0, 25.0))
        subj = synth_screening_subject(t_body, d, t_amb, seed=args.seed * 100003 + s, params=params,
                                       thetas=np.full(params.q, theta), mu=mu, cov=cov,
                                       sensor_id=1, t0_ms=t_next)
        for f, di in zip(subj.frames, d):
            frames.append(f)
            truth.append({"ts_ms": f.ts_ms, "subject": s, "fever": fever,
                          "bodies": [{"roi": None, "d_m": float(di), "theta_deg": theta, "t_body_c": t_body}]})
            radar.append({"ts_ms": f.ts_ms, "d_m": round(float(di + params.radar_std_m * rng.standard_normal()), 4)})
        t_next = subj.frames[-1].ts_ms + 3 * dt_ms
    with (out / "frames.jsonl").open("w", encoding="utf-8", newline="\n") as fh:
        for f in frames:
            fh.write(frame_to_json(f) + "\n")
    write_jsonl(truth, out / "truth.jsonl")
    write_jsonl(radar, out / "radar.jsonl")
    config.save_layout(layout, out / "layout.yaml")
    return 0


# track / count / screen ----------------------------------------------------

def _track(args: argparse.Namespace) -> int:
    params = _params(args)
    layout = _layout(args)
    if layout.mount is not Mount.WALL:
        raise UsageError("track needs a wall layout")
    sig = SignatureModel(layout, params)
    diag = Diagnostics()
    frames = _frames(args, diag)
    with _output(args.out) as fh:
        for sid, stream in split_by_sensor(frames).items():
            bg, rest = _background(stream, args.bg_frames, args, params)
            state = init_track_state(sig)
            for f in rest:
                state = step_track(state, f, bg, sig)
                bg = gated_update(bg, f, state.occupancy, args.adapt)
                for rec in track_records(state, f.sensor_id, with_posterior=args.posterior):
                    fh.write(_dumps(rec) + "\n")
    _report_diag(diag)
    return 0


def _count(args: argparse.Namespace) -> int:
    params = _params(args)
    layout = _layout(args)
    if layout.mount is not Mount.CEILING:
        raise UsageError("count needs a ceiling layout")
    sig = SignatureModel(layout, params)
    diag = Diagnostics()
    frames = _frames(args, diag)
    window_ms = WINDOWS_MS[args.window]
    alerts = []
    with _output(args.out) as fh:
        for sid, stream in split_by_sensor(frames).items():
            bg, rest = _background(stream, args.bg_frames, args, params)
            counter = OccupancyCounter(sig, zeta=params.zeta)
            steps = []
            for f in rest:
                step = counter.step(f, bg)
                bg = gated_update(bg, f, step.r_hat, args.adapt)
                steps.append((f.ts_ms, step.r_hat))
                fh.write(_dumps({"ts_ms": f.ts_ms, "sensor_id": sid, "r_hat": step.r_hat.tolist(),
                                 "count": step.count}) + "\n")
            alerts += distancing_alerts(steps, layout.footprints, params.alert_threshold_m,
                                        window_ms, sensor_id=sid)
    alert_path = args.alerts
    if alert_path is None and args.out not in (None, "-"):
        alert_path = str(Path(args.out).with_suffix(".alerts.jsonl"))
    if alert_path is not None:
        write_jsonl((a.to_record() for a in alerts), alert_path)
    _report_diag(diag)
    return 0


def _load_radar(path: str | None) -> list[RadarSample]:
    if path is None:
        return []
    return [RadarSample(int(r["ts_ms"]), float(r["d_m"]), float(r.get("quality", 1.0)))
            for r in read_jsonl(path)]


def _screen(args: argparse.Namespace) -> int:
    params = _params(args)
    layout = _layout(args)
    if layout.mount is not Mount.WALL:
        raise UsageError("screen needs a wall layout")
    sig = SignatureModel(layout, params)
    radar = _load_radar(args.radar)
    diag = Diagnostics()
    frames = _frames(args, diag)
    with _output(args.out) as fh:
        for sid, stream in split_by_sensor(frames).items():
            bg, rest = _background(stream, args.bg_frames, args, params)
            t_amb = ambient_temperature(bg)
            state = init_track_state(sig)
            window = ScreeningWindow(bg.mu, t_amb, params.q)
            for f in rest:
                state = step_track(state, f, bg, sig)
                bg = gated_update(bg, f, state.occupancy, args.adapt)
                occupied = [r for r in state.rois if r.occupied]
                if not occupied:
                    window = ScreeningWindow(bg.mu, t_amb, params.q)
                    continue
                ir_d = max(occupied, key=lambda r: r.log_ratio).d_hat
                d = fuse_distance(ir_d, match_radar(radar, f.ts_ms, params.dt_s), params)
                window = window.push(f, d)
                if window.full:
                    verdict = screen(window, params.xi, params)
                    rec = verdict.to_record()
                    rec["sensor_id"] = sid
                    rec["llr"] = [round(v, 9) for v in verdict.llr_trace]
                    fh.write(_dumps(rec) + "\n")
                    window = ScreeningWindow(bg.mu, t_amb, params.q)
    _report_diag(diag)
    return 0


# fit -------------------------------------------------------------------------

def _fit(args: argparse.Namespace) -> int:
    params = _params(args)
    layout = _layout(args)
    if args.truth is None:
        raise UsageError("fit needs --truth with the occupancy of each frame")
    diag = Diagnostics()
    frames = _frames(args, diag)
    truth = {int(r["ts_ms"]): r for r in read_jsonl(args.truth)}
    bg, rest = _background(frames, args.bg_frames, args, params)
    rest = [f for f in rest if f.ts_ms in truth]
    learned: dict[str, Any] = {}
    if layout.mount is Mount.WALL:
        d, inc = [], []
        for f in rest:
            for b in truth[f.ts_ms]["bodies"]:
                if b.get("roi") is None:
                    continue
                mask = layout.rois[int(b["roi"])].mask
                d.append(float(b["d_m"]))
                inc.append(float(np.mean(f.temps[mask] - bg.mu[mask])))
        fit = fit_srelu(d, inc)
        params = replace(params, sigma0=fit.sigma0, gamma=fit.gamma)
        learned = {"sigma0": fit.sigma0, "gamma": fit.gamma, "rmse": fit.rmse, "n": len(d)}
    else:
        pairs = [(truth[f.ts_ms]["occupancy"], f.temps) for f in rest]
        res = learn_signatures_lasso(pairs, bg.mu, bg.cov, lam=params.lambda_lasso)
        seen = np.array([p[0] for p in pairs]).any(axis=0)
        if not seen.any():
            raise UsageError("no occupied frames to learn from")
        # the constant ceiling signature is the mean learned increase on each ROI's own mask
        per_roi = [float(res.H[roi.mask, k].mean()) for k, roi in enumerate(layout.rois) if seen[k]]
        params = replace(params, sigma_bar_ceiling=float(np.mean(per_roi)))
        learned = {"H": np.round(res.H, 9), "sweeps": res.sweeps, "sigma_bar_ceiling": params.sigma_bar_ceiling}
    config.save_params(params, args.out or "params.yaml", learned=learned, background=bg)
    return 0


# eval ------------------------------------------------------------------------

def _eval(args: argparse.Namespace) -> int:
    if args.est is None or args.truth is None:
        raise UsageError("eval needs --est and --truth")
    est = read_jsonl(args.est)
    truth = read_jsonl(args.truth)
    if not est:
        raise UsageError(f"{args.est} holds no records")
    first = est[0]
    if "d_hat_m" in first:
        text = rmse_report(est, truth).to_csv()
    elif "llr" in first:
        text = _eval_screening(est, truth, _params(args).xi)
    elif "r_hat" in first:
        text = _eval_counting(est, truth, _params(args), args)
    else:
        raise UsageError("unrecognised estimate records")
    with _output(args.out) as fh:
        fh.write(text)
    return 0


def _eval_screening(est: list[dict[str, Any]], truth: list[dict[str, Any]], xi: float) -> str:
    labels = {int(r["ts_ms"]): r["fever"] for r in truth if "fever" in r}
    windows = [(r["llr"], bool(labels[int(r["ts_ms"])])) for r in est if int(r["ts_ms"]) in labels]
    if not windows:
        raise UsageError("no screening verdict matches a labelled truth frame")
    return roc_report(windows, xi=xi).to_csv()


def _eval_counting(est: list[dict[str, Any]], truth: list[dict[str, Any]], params: ModelParams,
                   args: argparse.Namespace) -> str:
    true_occ = {int(r["ts_ms"]): np.asarray(r["occupancy"], dtype=bool) for r in truth}
    rows = [(np.asarray(r["r_hat"], dtype=bool), true_occ[int(r["ts_ms"])])
            for r in est if int(r["ts_ms"]) in true_occ]
    if not rows:
        raise UsageError("estimates and ground truth share no timestamps")
    pred = np.stack([p for p, _ in rows])
    act = np.stack([t for _, t in rows])
    tp, fp, fn = (pred & act).sum(), (pred & ~act).sum(), (~pred & act).sum()
    count_acc = float(np.mean(pred.sum(axis=1) == act.sum(axis=1)))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["metric", "value"])
    w.writerow(["occupancy_precision", f"{tp / max(tp + fp, 1):.4f}"])
    w.writerow(["occupancy_recall", f"{tp / max(tp + fn, 1):.4f}"])
    w.writerow(["count_accuracy", f"{count_acc:.4f}"])
    if args.layout is not None:
        fp_xy = _layout(args).footprints
        steps = [(int(r["ts_ms"]), r["r_hat"]) for r in est]
        alerts = distancing_alerts(steps, fp_xy, params.alert_threshold_m)
        score = score_alerts(alerts, truth_events(truth, fp_xy, params.alert_threshold_m))
        w.writerow(["alert_precision", f"{score.precision:.4f}"])
        w.writerow(["alert_recall", f"{score.recall:.4f}"])
    return buf.getvalue()


# argument parsing ----------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--frames", help="frame JSONL file or tcp://host:port")
    common.add_argument("--layout", help="layout YAML, or wall5 / ceiling12")
    common.add_argument("--params", help="parameter YAML (defaults for omitted keys)")
    common.add_argument("--out", help="output file (directory for simulate); default stdout")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--radar", help="radar range JSONL for screening")
    common.add_argument("--zeta", type=int, help="max co-present bodies")
    common.add_argument("--threshold-m", type=float, dest="threshold_m", help="distancing threshold")
    common.add_argument("--q", type=int, help="screening window length")
    common.add_argument("--xi", type=float, help="screening LLR threshold")
    common.add_argument("--bg-frames", type=int, default=50, dest="bg_frames",
                        help="leading empty frames used to learn the background")
    common.add_argument("--no-adapt", action="store_false", dest="adapt",
                        help="freeze the background instead of updating it on empty frames")

    parser = argparse.ArgumentParser(prog="thermotrack", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="mode", metavar="MODE")
    sub.required = True
    p = sub.add_parser("simulate", parents=[common], help="write synthetic frames and truth")
    p.add_argument("--scene", choices=SCENES, default="corridor2")
    p.add_argument("--distance", type=float, default=1.0, help="wall scene distance (m)")
    p.add_argument("--episodes", type=int, default=20, help="corridor episodes")
    p.add_argument("--subjects", type=int, default=20, help="screening subjects")
    p = sub.add_parser("track", parents=[common], help="wall occupancy, distance and AOA")
    p.add_argument("--posterior", action="store_true", help="include distance posteriors")
    p = sub.add_parser("count", parents=[common], help="ceiling occupancy, counts and alerts")
    p.add_argument("--alerts", help="alert JSONL path")
    p.add_argument("--window", choices=sorted(WINDOWS_MS), default="frame",
                   help="alert aggregation window")
    sub.add_parser("screen", parents=[common], help="fever screening verdicts")
    p = sub.add_parser("fit", parents=[common], help="learn signatures from labelled frames")
    p.add_argument("--truth", help="ground-truth JSONL")
    p = sub.add_parser("eval", parents=[common], help="RMSE / ROC / counting metrics as CSV")
    p.add_argument("--est", help="estimate JSONL")
    p.add_argument("--truth", help="ground-truth JSONL")
    return parser


def _hoist_mode(argv: list[str]) -> list[str]:
    """Turn ``--mode X`` / ``--mode=X`` into the positional mode."""
    for i, tok in enumerate(argv):
        if tok == "--mode" and i + 1 < len(argv):
            return [argv[i + 1]] + argv[:i] + argv[i + 2:]
        if tok.startswith("--mode="):
            return [tok.split("=", 1)[1]] + argv[:i] + argv[i + 1:]
    return argv


_HANDLERS = {
    "simulate": _simulate,
    "track": _track,
    "count": _count,
    "screen": _screen,
    "fit": _fit,
    "eval": _eval,
}


def main(argv: Sequence[str] | None = None) -> int:
    level = os.environ.get("THERMOTRACK_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(_hoist_mode(list(sys.argv[1:] if argv is None else argv)))
    try:
        return _HANDLERS[args.mode](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"thermotrack {args.mode}: error: {exc}", file=sys.stderr)
        return 2
    except ThermoTrackError as exc:
        print(f"thermotrack {args.mode}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
