"""``trackbench`` command line.

Every command takes ``--config FILE`` (a flat JSON object whose keys are the
long flag names with underscores) and ``--out DIR``. Flags given on the
command line override the file, the file overrides built-in defaults, and
the effective configuration is printed and saved as ``config.json`` in the
output directory. ``TRACKBENCH_OUT`` changes the default output root.

Exit codes: 0 success, 2 usage, 3 data or geometry, 4 environment.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

from trackbench import __version__
from trackbench.core import RigidTransform, Trajectory, apply_transform, quat_to_matrix
from trackbench.errors import CaptureError, InputError, TrackbenchError
from trackbench.ingest.capture import CaptureSession, file_sha256
from trackbench.ingest.formats import read_trajectory_csv, write_trajectory_csv
from trackbench.metrics import (
    absolute_error,
    covariates_to_csv,
    descriptive_stats,
    descriptive_stats_values,
    group_stats,
    relative_error,
    stats_to_csv,
    stats_to_json,
)
from trackbench.patterns import DistortionModel, distort, generate, robot_pattern
from trackbench.registration import (
    apply_tool_offset,
    compute_centroid,
    pivot_calibrate,
    registration_residual,
    rigid_register,
    similarity_register,
    transform_from_dict,
    transform_to_dict,
)
from trackbench.sync import DEFAULT_SEARCH_WINDOW, build_pairs, estimate_latency, estimate_true_rate

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_ENV = 0, 2, 3, 4
OUT_ENV = "TRACKBENCH_OUT"
DEFAULT_OUT_ROOT = "trackbench-out"


class UsageError(Exception):
    pass


DEFAULTS = {
    "generate": {
        "pattern": None,
        "speed": 0.1,
        "rate": 120.0,
        "repetitions": 1,
        "origin": [0.0, 0.0, 0.0],
        "plane": "xy",
        "kinds": ["cube", "circle"],
        "seed": 0,
        "distort": True,
        "noise_sigma": 0.0,
        "scale": 1.0,
        "center": [0.0, 0.0, 0.0],
        "latency": 0.0,
        "radial_gain": 0.0,
        "radial_deadband": 0.0,
        "radial_direction": None,
        "speed_gain": 0.0,
        "prediction_upsample": None,
        "test_frame": "test",
        "frame_rotvec": [0.0, 0.0, 0.0],
        "frame_translation": [0.0, 0.0, 0.0],
        "anchor_offset": None,
    },
    "calibrate": {
        "ref": None,
        "test": None,
        "pivot": None,
        "clock": "sender",
        "latency": None,
        "search_window": DEFAULT_SEARCH_WINDOW,
        "max_gap": None,
        "scale_tolerance": 0.01,
    },
    "analyze": {
        "transform": None,
        "ref": None,
        "test": None,
        "labels": None,
        "group_by": None,
        "mode": "global",
        "ref_anchor": None,
        "test_anchor": None,
        "center": None,
        "clock": "sender",
        "latency": None,
        "search_window": DEFAULT_SEARCH_WINDOW,
        "max_gap": None,
        "speed_window": 5,
        "estimate_rate": False,
    },
    "capture": {
        "host": "127.0.0.1",
        "port": 9000,
        "duration": None,
        "max_messages": None,
        "frame": "test",
        "sources": [],
    },
    "report": {
        "input": None,
    },
}

REQUIRED = {
    "generate": ("pattern",),
    "calibrate": ("ref", "test"),
    "analyze": ("transform", "ref", "test"),
    "capture": (),
    "report": ("input",),
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="trackbench", description="Evaluate pose trackers against a reference system.")
    p.add_argument("--version", action="version", version=f"trackbench {__version__}")
    sub = p.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    def cmd(name, help_):
        sp = sub.add_parser(name, help=help_, description=help_, argument_default=argparse.SUPPRESS)
        sp.add_argument("--config", help="JSON file of flat key/value settings")
        sp.add_argument("--out", help=f"output directory (default ${OUT_ENV}/{name} or ./{DEFAULT_OUT_ROOT}/{name})")
        return sp

    g = cmd("generate", "Write clean and distorted synthetic robot trajectories.")
    g.add_argument("--pattern", choices=list("ABCD"), help="robot pattern A-D")
    g.add_argument("--speed", type=float, help="average speed in m/s (default 0.1)")
    g.add_argument("--rate", type=float, help="sample rate in Hz (default 120)")
    g.add_argument("--repetitions", type=int, help="number of circuits or laps")
    g.add_argument("--origin", type=float, nargs=3, metavar=("X", "Y", "Z"), help="pattern center in m")
    g.add_argument("--plane", choices=["xy", "xz", "yz"], help="circle plane")
    g.add_argument("--kinds", nargs="+", choices=["cube", "circle"], help="which patterns to write")
    g.add_argument("--seed", type=int, help="distortion seed")
    g.add_argument("--no-distort", dest="distort", action="store_false", help="write clean files only")
    g.add_argument("--noise-sigma", type=float, help="isotropic noise SD in m")
    g.add_argument("--scale", type=float, help="scale error about --center")
    g.add_argument("--center", type=float, nargs=3, metavar=("X", "Y", "Z"), help="distortion center in m")
    g.add_argument("--latency", type=float, help="test stream delay in s")
    g.add_argument("--radial-gain", type=float, help="mm of error per m from the center")
    g.add_argument("--radial-deadband", type=float, help="radius in m inside which radial error is zero")
    g.add_argument("--radial-direction", type=float, nargs=3, metavar=("X", "Y", "Z"))
    g.add_argument("--speed-gain", type=float, help="mm of error per m/s of speed")
    g.add_argument("--prediction-upsample", type=float, help="re-emit the test stream at this rate in Hz")
    g.add_argument("--test-frame", help="frame name of the distorted stream")
    g.add_argument("--frame-rotvec", type=float, nargs=3, metavar=("RX", "RY", "RZ"), help="test-to-reference rotation vector in rad")
    g.add_argument("--frame-translation", type=float, nargs=3, metavar=("X", "Y", "Z"), help="test-to-reference translation in m")
    g.add_argument("--anchor-offset", type=float, nargs=3, metavar=("X", "Y", "Z"), help="also write a static anchor tracker at origin + offset")

    c = cmd("calibrate", "Register a test tracker's frame to the reference frame.")
    c.add_argument("--ref", help="reference calibration recording (CSV)")
    c.add_argument("--test", help="test calibration recording (CSV)")
    c.add_argument("--pivot", help="test recording of a pivoting motion (CSV)")
    c.add_argument("--clock", choices=["sender", "receive"], help="timestamp column for capture files")
    c.add_argument("--latency", type=float, help="fixed test latency in s (default: estimate)")
    c.add_argument("--search-window", type=float, help="latency search range in s")
    c.add_argument("--max-gap", type=float, help="largest reference gap to interpolate across, s")
    c.add_argument("--scale-tolerance", type=float, help="warn when |scale - 1| exceeds this")

    a = cmd("analyze", "Compute error statistics for test recordings.")
    a.add_argument("--transform", help="transform.json from calibrate")
    a.add_argument("--ref", nargs="+", help="reference recordings, one per session")
    a.add_argument("--test", nargs="+", help="test recordings, one per session")
    a.add_argument("--labels", nargs="+", help="per-session labels such as offset=center,run=1")
    a.add_argument("--group-by", help="label key to pool sessions by")
    a.add_argument("--mode", choices=["global", "relative"])
    a.add_argument("--ref-anchor", nargs="+", help="reference anchor recordings (relative mode)")
    a.add_argument("--test-anchor", nargs="+", help="test anchor recordings (relative mode)")
    a.add_argument("--center", type=float, nargs=3, metavar=("X", "Y", "Z"), help="distance covariate origin")
    a.add_argument("--clock", choices=["sender", "receive"])
    a.add_argument("--latency", help="seconds, 'estimate', or omit to use the transform's")
    a.add_argument("--search-window", type=float)
    a.add_argument("--max-gap", type=float)
    a.add_argument("--speed-window", type=int, help="odd smoothing window of the speed covariate")
    a.add_argument("--estimate-rate", action="store_true", help="report the detected true update rate")

    k = cmd("capture", "Record OSC pose streams from UDP.")
    k.add_argument("--host", help="listen address")
    k.add_argument("--port", type=int, help="listen port (0 picks a free one)")
    k.add_argument("--duration", type=float, help="stop after this many seconds")
    k.add_argument("--max-messages", type=int, help="stop after this many poses")
    k.add_argument("--frame", help="frame name written to the session files")
    k.add_argument("--sources", nargs="+", help="source ids whose files are created up front")

    r = cmd("report", "Render an analysis directory as a Markdown table.")
    r.add_argument("--input", help="analysis output directory")
    return p


def effective_config(command: str, args: argparse.Namespace) -> dict:
    cfg = dict(DEFAULTS[command])
    given = vars(args)
    path = given.pop("config", None)
    if path is not None:
        try:
            with open(path) as f:
                doc = json.load(f)
        except OSError as exc:
            raise UsageError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise UsageError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(doc, dict):
            raise UsageError("config file must hold a JSON object")
        unknown = sorted(set(doc) - set(cfg))
        if unknown:
            raise UsageError(f"unknown config keys for {command}: {', '.join(unknown)}")
        cfg.update(doc)
    for key, value in given.items():
        if key in cfg:
            cfg[key] = value
    missing = [k for k in REQUIRED[command] if cfg.get(k) is None]
    if missing:
        raise UsageError(f"{command} needs " + ", ".join("--" + m.replace("_", "-") for m in missing))
    return cfg


def _out_dir(command) -> Path:
    return Path(os.environ.get(OUT_ENV, DEFAULT_OUT_ROOT)) / command


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    raise TypeError(f"cannot serialize {type(o).__name__}")


def dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n"


def _write(path: Path, text: str):
    with open(path, "w", newline="") as f:
        f.write(text)


def _as_list(v):
    if v is None:
        return []
    return [v] if isinstance(v, str) else list(v)


# -- generate ---------------------------------------------------------------


def _model(cfg, direction):
    return DistortionModel(
        noise_sigma=cfg["noise_sigma"],
        scale=cfg["scale"],
        center=tuple(cfg["center"]),
        latency=cfg["latency"],
        radial_gain=cfg["radial_gain"],
        radial_deadband=cfg["radial_deadband"],
        radial_direction=tuple(direction),
        speed_gain=cfg["speed_gain"],
        prediction_upsample=cfg["prediction_upsample"],
    )


def cmd_generate(cfg: dict, out: Path) -> dict:
    kind_names = {"cube": "cube-circuit", "circle": "circle"}
    kinds = _as_list(cfg["kinds"])
    if not kinds or any(k not in kind_names for k in kinds):
        raise UsageError("kinds must be a non-empty subset of cube, circle")
    try:
        specs = [
            (k, robot_pattern(cfg["pattern"], kind_names[k], cfg["speed"], cfg["rate"],
                              repetitions=int(cfg["repetitions"]), origin=tuple(map(float, cfg["origin"])),
                              plane=cfg["plane"]))
            for k in kinds
        ]
        # One physical error field for every stream of the run: the radial
        # direction comes from the run seed unless pinned.
        seed = int(cfg["seed"])
        direction = cfg["radial_direction"]
        if direction is None:
            direction = np.random.default_rng(seed).normal(size=3)
        model = _model(cfg, direction)
        to_ref = RigidTransform(
            Rotation.from_rotvec(np.asarray(cfg["frame_rotvec"], dtype=float)).as_matrix(),
            np.asarray(cfg["frame_translation"], dtype=float),
            cfg["test_frame"],
            "reference",
        )
    except (InputError, ValueError, TypeError) as exc:
        raise UsageError(f"invalid pattern or distortion settings: {exc}") from exc

    out.mkdir(parents=True, exist_ok=True)
    files = []

    def emit(name, traj):
        path = out / name
        write_trajectory_csv(traj, path)
        files.append({"file": name, "rows": len(traj), "sha256": file_sha256(path)})

    stream_seed = seed
    for kind, spec in specs:
        clean = generate(spec)
        emit(f"{kind}_clean.csv", clean)
        anchor = None
        if cfg["anchor_offset"] is not None:
            at = np.asarray(spec.origin, dtype=float) + np.asarray(cfg["anchor_offset"], dtype=float)
            anchor = Trajectory(clean.t, np.tile(at, (len(clean), 1)), None, "reference", "anchor", spec.rate)
            emit(f"{kind}_anchor_clean.csv", anchor)
        if cfg["distort"]:
            test = apply_transform(to_ref.inverse(), distort(clean, model, stream_seed))
            emit(f"{kind}_distorted.csv", test.replace(source=f"{kind}-test"))
            if anchor is not None:
                a_test = apply_transform(to_ref.inverse(), distort(anchor, model, stream_seed + 1))
                emit(f"{kind}_anchor_distorted.csv", a_test.replace(source="anchor-test"))
        stream_seed += 2

    provenance = {
        "version": __version__,
        "seed": seed,
        "stream_seeds": "cube/circle streams use seed, seed+2 in kinds order; anchors add 1",
        "radial_direction": [float(v) for v in np.asarray(direction, dtype=float) / np.linalg.norm(direction)],
        "test_to_reference": transform_to_dict(to_ref),
        "files": files,
        "config": cfg,
    }
    _write(out / "provenance.json", dumps(provenance))
    return provenance


# -- calibrate ----------------------------------------------------------------


def _max_gap(cfg):
    return np.inf if cfg["max_gap"] is None else float(cfg["max_gap"])


def cmd_calibrate(cfg: dict, out: Path) -> dict:
    ref = read_trajectory_csv(cfg["ref"])
    test = read_trajectory_csv(cfg["test"], clock=cfg["clock"])
    pivot = None
    if cfg["pivot"] is not None:
        pv = read_trajectory_csv(cfg["pivot"], clock=cfg["clock"])
        pivot = pivot_calibrate(quat_to_matrix(pv.orientations), pv.positions)
        test = apply_tool_offset(test, pivot.tool_offset)

    if cfg["latency"] is None:
        est = estimate_latency(ref, test, cfg["search_window"])
        latency, latency_info = est.lag, est.as_dict()
    else:
        latency, latency_info = float(cfg["latency"]), {"lag": float(cfg["latency"]), "fixed": True}
    pairs = build_pairs(ref, test, latency, _max_gap(cfg))

    T, diag = rigid_register(pairs.test_points, pairs.ref_points, test.frame, ref.frame)
    S, sdiag = similarity_register(pairs.test_points, pairs.ref_points, test.frame, ref.frame)
    residual = registration_residual(pairs.test_points, pairs.ref_points, T)
    scale_warning = abs(S.scale - 1.0) > cfg["scale_tolerance"]
    if scale_warning:
        print(
            f"WARNING: similarity scale {S.scale:.6f} differs from 1 by more than "
            f"{cfg['scale_tolerance']:g}; check the tracker setup and repeat the calibration",
            file=sys.stderr,
        )

    extra = {
        "latency": latency,
        "calibration_center": compute_centroid(pairs.ref_points).tolist(),
        "similarity_scale": S.scale,
    }
    if pivot is not None:
        extra["tool_offset"] = pivot.tool_offset.tolist()
    doc = transform_to_dict(T, diag, **extra)
    _write(out / "transform.json", dumps(doc))
    report = {
        "version": __version__,
        "latency": latency_info,
        "n_pairs": len(pairs),
        "n_dropped": pairs.n_dropped,
        "residual": residual.as_dict(),
        "residual_row": residual.format_row(),
        "similarity": {"scale": S.scale, "rms_residual": sdiag.rms_residual},
        "scale_warning": bool(scale_warning),
        "pivot": None
        if pivot is None
        else {
            "tool_offset": pivot.tool_offset.tolist(),
            "pivot_point": pivot.pivot_point.tolist(),
            "rms_residual": pivot.rms_residual,
            "condition_number": pivot.condition_number,
        },
        "config": cfg,
    }
    _write(out / "calibration.json", dumps(report))
    return report


# -- analyze ------------------------------------------------------------------


def _parse_labels(items, n):
    if not items:
        return [{"session": f"{i:03d}"} for i in range(n)]
    if len(items) != n:
        raise UsageError(f"{len(items)} labels for {n} sessions")
    out = []
    for item in items:
        if isinstance(item, dict):
            out.append({str(k): str(v) for k, v in item.items()})
            continue
        d = {}
        for part in str(item).split(","):
            key, sep, value = part.partition("=")
            if not sep or not key.strip():
                raise UsageError(f"label {item!r} is not of the form key=value[,key=value]")
            d[key.strip()] = value.strip()
        out.append(d)
    return out


def _load_transform(path):
    with open(path) as f:
        doc = json.load(f)
    return transform_from_dict(doc), doc


def cmd_analyze(cfg: dict, out: Path) -> dict:
    refs, tests = _as_list(cfg["ref"]), _as_list(cfg["test"])
    if len(refs) != len(tests):
        raise UsageError(f"{len(refs)} reference files but {len(tests)} test files")
    relative = cfg["mode"] == "relative"
    if cfg["mode"] not in ("global", "relative"):
        raise UsageError("mode must be global or relative")
    ref_anchors, test_anchors = _as_list(cfg["ref_anchor"]), _as_list(cfg["test_anchor"])
    if relative and not (len(ref_anchors) == len(test_anchors) == len(refs)):
        raise UsageError("relative mode needs one --ref-anchor and --test-anchor per session")
    labels = _parse_labels(cfg["labels"], len(refs))
    group_by = cfg["group_by"] or next(iter(labels[0]))
    T, tdoc = _load_transform(cfg["transform"])
    center = cfg["center"] if cfg["center"] is not None else tdoc.get("calibration_center")
    tool_offset = tdoc.get("tool_offset")
    lat_cfg = cfg["latency"]
    max_gap = _max_gap(cfg)

    def load_test(path):
        traj = read_trajectory_csv(path, clock=cfg["clock"])
        if tool_offset is not None:
            traj = apply_tool_offset(traj, tool_offset)
        return apply_transform(T, traj)

    series, sessions = [], []
    for i, (ref_path, test_path) in enumerate(zip(refs, tests)):
        ref = read_trajectory_csv(ref_path)
        test = load_test(test_path)
        info = {"index": i, "ref": str(ref_path), "test": str(test_path), "labels": labels[i]}
        if lat_cfg is None:
            latency = float(tdoc.get("latency", 0.0))
        elif lat_cfg == "estimate":
            est = estimate_latency(ref, test, cfg["search_window"])
            latency = est.lag
            info["latency_estimate"] = est.as_dict()
        else:
            try:
                latency = float(lat_cfg)
            except ValueError:
                raise UsageError(f"latency must be a number or 'estimate', got {lat_cfg!r}") from None
        info["latency"] = latency
        if cfg["estimate_rate"]:
            try:
                info["rate"] = estimate_true_rate(read_trajectory_csv(test_path, clock=cfg["clock"])).as_dict()
            except TrackbenchError as exc:
                info["rate"] = {"error": str(exc)}
        if relative:
            ref_b = read_trajectory_csv(ref_anchors[i])
            test_b = load_test(test_anchors[i])
            s = relative_error(ref, ref_b, test, test_b, latency, max_gap)
            info["n_pairs"] = len(s)
        else:
            pairs = build_pairs(ref, test, latency, max_gap)
            s = absolute_error(pairs, center, cfg["speed_window"])
            info["n_pairs"], info["n_dropped"] = len(pairs), pairs.n_dropped
        s = s.with_labels(**labels[i])
        info["stats"] = descriptive_stats(s).as_dict()
        series.append(s)
        sessions.append(info)

    rows = group_stats(series, group_by)
    overall = descriptive_stats_values(np.concatenate([s.error for s in series]))
    out.mkdir(parents=True, exist_ok=True)
    _write(out / "stats.csv", stats_to_csv(rows))
    _write(out / "stats.json", dumps(stats_to_json(rows)))
    cov = out / "covariates"
    cov.mkdir(exist_ok=True)
    for info, s in zip(sessions, series):
        name = f"{info['index']:03d}.csv"
        _write(cov / name, covariates_to_csv(s))
        info["covariates"] = f"covariates/{name}"
    summary = {
        "version": __version__,
        "mode": cfg["mode"],
        "group_by": group_by,
        "center": center,
        "transform": tdoc,
        "groups": stats_to_json(rows),
        "overall": overall.as_dict(),
        "sessions": sessions,
    }
    _write(out / "summary.json", dumps(summary))
    return summary


# -- capture and report -------------------------------------------------------


def cmd_capture(cfg: dict, out: Path) -> dict:
    session = CaptureSession(out, cfg["host"], int(cfg["port"]), cfg["frame"], _as_list(cfg["sources"]))
    session.start()
    host, port = session.address
    print(f"listening on {host}:{port}, writing to {out}", file=sys.stderr, flush=True)
    manifest = session.run(cfg["duration"], cfg["max_messages"])
    return manifest.as_dict()


def render_report(summary: dict) -> str:
    lines = [
        f"# Error report ({summary['mode']} mode)",
        "",
        f"Grouped by `{summary['group_by']}`. Errors in mm as mean / SD / max.",
        "",
        "| label | n | mean / SD / max |",
        "|---|---:|---|",
    ]
    for g in summary["groups"]:
        lines.append(f"| {g['label']} | {g['n']} | {g['mean_mm']:.3f} / {g['sd_mm']:.3f} / {g['max_mm']:.1f} |")
    o = summary["overall"]
    lines.append(f"| all | {o['n']} | {o['mean_mm']:.3f} / {o['sd_mm']:.3f} / {o['max_mm']:.1f} |")
    return "\n".join(lines) + "\n"


def cmd_report(cfg: dict, out: Path) -> dict:
    src = Path(cfg["input"])
    with open(src / "summary.json") as f:
        summary = json.load(f)
    text = render_report(summary)
    _write(out / "report.md", text)
    sys.stdout.write(text)
    return {"report": str(out / "report.md")}


COMMANDS = {
    "generate": cmd_generate,
    "calibrate": cmd_calibrate,
    "analyze": cmd_analyze,
    "capture": cmd_capture,
    "report": cmd_report,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    command = args.command
    del args.command
    out = getattr(args, "out", None)
    if out is not None:
        del args.out
    try:
        cfg = effective_config(command, args)
        if out is None:
            # a report lands next to the analysis it renders
            out = Path(cfg["input"]) if command == "report" else _out_dir(command)
        out = Path(out)
        sys.stderr.write("effective config:\n" + dumps(cfg))
        out.mkdir(parents=True, exist_ok=True)
        if command != "capture":
            _write(out / "config.json", dumps(cfg))
        result = COMMANDS[command](cfg, out)
        if command == "capture":
            sys.stdout.write(dumps(result))
    except UsageError as exc:
        print(f"trackbench {command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except CaptureError as exc:
        print(f"trackbench {command}: {exc}", file=sys.stderr)
        return EXIT_ENV
    except TrackbenchError as exc:
        print(f"trackbench {command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"trackbench {command}: {exc}", file=sys.stderr)
        return EXIT_ENV
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
