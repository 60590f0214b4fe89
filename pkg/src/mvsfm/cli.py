"""``mvsfm`` command line: inspect, extract, track, export, synth, eval, run."""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from typing import Any

import numpy as np

from . import __version__
from .config import EMIT_CHOICES, LOG_LEVELS, configure_logging, load_config
from .container import (
    guess_frame_kinds,
    obu_histogram,
    parse_obus,
    read_ivf,
    validate_stream_profile,
)
from .errors import MissingInput, MvsfmError
from .export import PLY_FILE, PointCloudFile, check_integrity, export_colmap_text, read_name_manifest, read_ply, write_ply
from .metrics import align_similarity, cloud_distance, delta_q, psnr_y, q_metric, reprojection_error
from .motionfield import field_to_dict, load_mvf, save_mvf, upsample_zoh
from .pipeline import run_pipeline, triangulate_trajectories, upsample_all
from .synth import MOTIONS, generate_scene, load_scene, render_mv_fields, save_scene
from .trajectory import (
    TRAJECTORIES_FILE,
    build_trajectories,
    dump_trajectories,
    filter_persistent,
    load_trajectories,
    read_staged,
    trajectories_to_matches,
    trajectory_from_dict,
    write_staged,
)

log = logging.getLogger("mvsfm")


def _emit(args, payload: dict[str, Any], text: str) -> None:
    if args.json:
        print(json.dumps(_jsonable(payload), indent=1, sort_keys=True, allow_nan=False))
    else:
        print(text)


def _jsonable(o):
    # strict JSON has no inf/nan; spell them as strings
    if isinstance(o, dict):
        return {k: _jsonable(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_jsonable(v) for v in o]
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, (float, np.floating)):
        o = float(o)
        return o if math.isfinite(o) else str(o)
    return o


def _need(path, what):
    if path is None or not os.path.exists(path):
        raise MissingInput(f"{what} {path} does not exist")
    return path


# -- inspect -------------------------------------------------------------------


def cmd_inspect(args) -> int:
    info, packets = read_ivf(_need(args.file, "IVF file"))
    obus = [parse_obus(p.payload) for p in packets]
    if args.mvf:
        kinds = [f.frame_kind for f in load_mvf(_need(args.mvf, "MVF sidecar"))]
        source = "mvf"
    else:
        kinds = guess_frame_kinds(obus)
        source = "sequence-header heuristic"
    report = validate_stream_profile(obus, kinds)
    payload = {
        "stream": {
            "fourcc": info.fourcc, "width": info.width, "height": info.height,
            "timebase": [info.timebase_num, info.timebase_den],
            "frame_count_declared": info.frame_count_declared, "header_len": info.header_len,
        },
        "frames": [{"index": p.index, "pts": p.pts, "size": p.size} for p in packets],
        "obu_histogram": obu_histogram(obus),
        "frame_kinds_source": source,
        "validation": {
            "conforms": report.conforms,
            "key_frame_count": report.key_frame_count,
            "inter_frame_count": report.inter_frame_count,
            "violations": [
                {"code": v.code, "frame_index": v.frame_index, "message": v.message}
                for v in report.violations
            ],
        },
    }
    lines = [
        f"{info.fourcc} {info.width}x{info.height} timebase {info.timebase_num}/{info.timebase_den} "
        f"declared frames {info.frame_count_declared}, found {len(packets)}",
        "sizes: " + " ".join(str(p.size) for p in packets),
        "obus: " + ", ".join(f"{k}={v}" for k, v in payload["obu_histogram"].items()),
        f"profile ({source}): {'conforms' if report.conforms else 'VIOLATES'} "
        f"(key {report.key_frame_count}, inter {report.inter_frame_count})",
    ]
    lines += [f"  {v.code} @ {v.frame_index}: {v.message}" for v in report.violations]
    _emit(args, payload, "\n".join(lines))
    return 0


# -- extract -------------------------------------------------------------------


def cmd_extract(args) -> int:
    if args.synth_from:
        if not args.out:
            raise MissingInput("--synth-from needs --out <file.mvf>")
        scene = load_scene(_need(args.synth_from, "scene file"))
        fields = render_mv_fields(scene, args.noise)
        n = save_mvf(fields, args.out)
        _emit(args, {"frames": len(fields), "bytes": n, "out": args.out},
              f"wrote {len(fields)} frames ({n} bytes) to {args.out}")
        return 0
    fields = load_mvf(_need(args.mvf, "MVF file"))
    if args.frame is not None:
        fields = [f for f in fields if f.frame_index == args.frame]
        if not fields:
            raise MissingInput(f"frame {args.frame} not in {args.mvf}")
    out = []
    lines = []
    for f in fields:
        d = field_to_dict(f)
        dense = upsample_zoh(f)
        d["grid"] = [dense.grid_w, dense.grid_h]
        d["valid_cells"] = int(dense.valid.sum())
        out.append(d)
        lines.append(
            f"frame {f.frame_index} {d['frame_kind']} {f.width}x{f.height}: "
            f"{len(f.blocks)} blocks, {len(f.intra_mask)} intra rects, "
            f"{d['valid_cells']}/{dense.grid_w * dense.grid_h} valid cells"
        )
    _emit(args, {"fields": out}, "\n".join(lines))
    return 0


# -- track ---------------------------------------------------------------------


_FLAG_KEYS = {
    "tau": "tau", "min_frames": "min_frames", "link_radius": "link_radius",
    "pair_span": "pair_span", "min_mv": "min_mv",
}


def _overrides(args, extra: dict[str, Any] | None = None) -> dict[str, Any]:
    ov = {key: getattr(args, attr, None) for attr, key in _FLAG_KEYS.items()}
    ov.update(extra or {})
    return ov


def cmd_track(args) -> int:
    cfg = load_config(args.config, _overrides(args, {"mvf_path": args.mvf, "output_dir": args.out}))
    params = cfg.track_params()
    fields = load_mvf(_need(cfg.mvf_path, "MVF file"))
    trajs = build_trajectories(upsample_all(fields), params)
    kept = filter_persistent(trajs, params)
    images, matches = trajectories_to_matches(kept, params)
    os.makedirs(cfg.output_dir, exist_ok=True)
    dump_trajectories(kept, os.path.join(cfg.output_dir, TRAJECTORIES_FILE))
    write_staged(cfg.output_dir, images, matches)
    payload = {
        "trajectories_before": len(trajs), "trajectories_after": len(kept),
        "keypoints": sum(len(i.keypoints) for i in images.values()),
        "pairs": len(matches.pairs), "matches": matches.total(),
    }
    _emit(args, payload, " ".join(f"{k}={v}" for k, v in payload.items()))
    return 0


# -- export --------------------------------------------------------------------


def cmd_export(args) -> int:
    track_dir = _need(args.tracks, "tracks directory")
    images, matches = read_staged(track_dir)
    names = read_name_manifest(_need(args.name_manifest, "name manifest")) if args.name_manifest else None
    image_names = export_colmap_text(args.out, images, matches, names)
    payload = check_integrity(args.out, image_names)
    if args.scene:
        scene = load_scene(_need(args.scene, "scene file"))
        trajs = [trajectory_from_dict(d) for d in load_trajectories(os.path.join(track_dir, TRAJECTORIES_FILE))]
        pts, index = triangulate_trajectories(trajs, scene)
        lengths = [len(t.samples) for t, i in zip(trajs, index) if i is not None]
        with open(os.path.join(args.out, PLY_FILE), "wb") as fh:
            write_ply(PointCloudFile(pts, track_lengths=np.array(lengths, dtype=np.int64)), fh, args.binary_ply)
        dump_trajectories(trajs, os.path.join(args.out, TRAJECTORIES_FILE), index)
        payload["cloud_points"] = len(pts)
    _emit(args, payload, " ".join(f"{k}={v}" for k, v in payload.items()))
    return 0


# -- synth ---------------------------------------------------------------------


def cmd_synth(args) -> int:
    scene = generate_scene(args.points, args.frames, args.motion, args.seed)
    os.makedirs(args.out, exist_ok=True)
    save_scene(scene, os.path.join(args.out, "scene.json"))
    fields = render_mv_fields(scene, args.noise)
    n = save_mvf(fields, os.path.join(args.out, "scene.mvf"))
    payload = {"points": len(scene.points), "frames": scene.n_frames, "mvf_bytes": n, "out": args.out}
    _emit(args, payload, f"wrote scene.json and scene.mvf ({n} bytes) to {args.out}")
    return 0


# -- eval ----------------------------------------------------------------------


def _read_cloud(path):
    with open(_need(path, "PLY file"), "rb") as fh:
        return read_ply(fh)


def cmd_eval(args) -> int:
    if args.what == "cloud":
        a, b = _read_cloud(args.a), _read_cloud(args.b)
        if args.align:
            a = align_similarity(a, b)
        d = cloud_distance(a, b, squared=args.squared)
        payload = {"chamfer": d.chamfer, "hausdorff": d.hausdorff, "aligned": args.align,
                   "squared": args.squared}
        _emit(args, payload, f"chamfer {d.chamfer:.6g}  hausdorff {d.hausdorff:.6g}")
    elif args.what == "reproj":
        scene = load_scene(_need(args.scene, "scene file"))
        cloud = _read_cloud(args.cloud)
        dicts = load_trajectories(_need(os.path.join(args.tracks, TRAJECTORIES_FILE), "trajectories"))
        pts, obs = [], []
        for n, d in enumerate(dicts):
            i = d.get("point_index", n)
            if i is None:
                continue
            pts.append(cloud[i])
            obs.append([(f, tuple(p)) for f, p in zip(d["frames"], d["positions"])])
        s = reprojection_error(np.array(pts).reshape(-1, 3), scene.poses, scene.intrinsics, obs)
        payload = {"mean": s.mean, "median": s.median, "p95": s.p95, "count": s.count}
        _emit(args, payload, f"reprojection mean {s.mean:.4f}px median {s.median:.4f}px "
                             f"p95 {s.p95:.4f}px over {s.count} observations")
    else:
        from PIL import Image

        ref = np.asarray(Image.open(_need(args.ref, "reference image")).convert("RGB"), dtype=float)
        tst = np.asarray(Image.open(_need(args.test, "test image")).convert("RGB"), dtype=float)
        p = psnr_y(ref, tst)
        q_ref = q_metric(ref, args.patch_size, args.threshold).q
        q_hat = q_metric(tst, args.patch_size, args.threshold).q
        dq = delta_q(ref, tst, args.patch_size, args.threshold)
        payload = {"psnr_y": p, "q_ref": q_ref, "q_hat": q_hat, "delta_q": dq}
        _emit(args, payload, f"PSNR-Y {p:.4f} dB  Q_ref {q_ref:.6g}  Q {q_hat:.6g}  dQ {dq:.6g}")
    return 0


# -- run -----------------------------------------------------------------------


def cmd_run(args) -> int:
    extra = {
        "mvf_path": args.mvf, "ivf_path": args.ivf, "scene_path": args.scene,
        "output_dir": args.out, "name_manifest": args.name_manifest,
        "emit": args.emit, "log_level": args.log_level,
    }
    cfg = load_config(args.config, _overrides(args, extra))
    configure_logging(cfg.log_level)
    m = run_pipeline(cfg)
    c = m.counts
    _emit(args, m.to_dict(), f"frames {c['frames']}  trajectories {c['trajectories_after']}/"
                             f"{c['trajectories_before']}  matches {c['matches_total']}  -> {cfg.output_dir}")
    return 0


# -- parser --------------------------------------------------------------------


def _pair_span(v: str):
    return v if v.lower() == "unlimited" else int(v)


def build_parser() -> argparse.ArgumentParser:
    # globals are accepted before or after the subcommand
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help="key = value config file")
    common.add_argument("--json", action="store_true", default=argparse.SUPPRESS, help="machine-readable output")
    common.add_argument("--log-level", type=str.upper, choices=LOG_LEVELS, default=argparse.SUPPRESS)

    p = argparse.ArgumentParser(prog="mvsfm", parents=[common],
                                description="Codec motion vectors to SfM correspondences.")
    p.add_argument("--version", action="version", version=f"mvsfm {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("inspect", parents=[common], help="IVF/OBU summary and profile check")
    s.add_argument("file")
    s.add_argument("--mvf", help="MVF sidecar supplying frame kinds")
    s.set_defaults(func=cmd_inspect)

    s = sub.add_parser("extract", parents=[common], help="dump motion fields, or render them from a scene")
    s.add_argument("--mvf")
    s.add_argument("--frame", type=int)
    s.add_argument("--synth-from", dest="synth_from")
    s.add_argument("--noise", type=float, default=0.0)
    s.add_argument("--out")
    s.set_defaults(func=cmd_extract)

    def track_flags(s):
        s.add_argument("--tau", type=float)
        s.add_argument("--min-frames", dest="min_frames", type=int)
        s.add_argument("--link-radius", dest="link_radius", type=float)
        s.add_argument("--pair-span", dest="pair_span", type=_pair_span)
        s.add_argument("--min-mv", dest="min_mv", type=float)

    s = sub.add_parser("track", parents=[common], help="build and filter trajectories")
    s.add_argument("--mvf")
    s.add_argument("--out")
    track_flags(s)
    s.set_defaults(func=cmd_track)

    s = sub.add_parser("export", parents=[common], help="write COLMAP text files from staged tracks")
    s.add_argument("--tracks", required=True)
    s.add_argument("--format", choices=["colmap-text"], default="colmap-text")
    s.add_argument("--out", required=True)
    s.add_argument("--name-manifest", dest="name_manifest")
    s.add_argument("--scene", help="scene.json; triangulates trajectories into cloud.ply")
    s.add_argument("--binary-ply", dest="binary_ply", action="store_true")
    s.set_defaults(func=cmd_export)

    s = sub.add_parser("synth", parents=[common], help="generate a synthetic scene and its motion fields")
    s.add_argument("--points", type=int, default=500)
    s.add_argument("--frames", type=int, default=30)
    s.add_argument("--motion", choices=MOTIONS, default="orbit")
    s.add_argument("--seed", type=int, default=1)
    s.add_argument("--noise", type=float, default=0.0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("eval", parents=[common], help="quality metrics")
    ev = s.add_subparsers(dest="what", required=True)
    e = ev.add_parser("cloud", parents=[common])
    e.add_argument("--a", required=True)
    e.add_argument("--b", required=True)
    e.add_argument("--align", action="store_true")
    e.add_argument("--squared", action="store_true")
    e = ev.add_parser("reproj", parents=[common])
    e.add_argument("--scene", required=True)
    e.add_argument("--cloud", required=True)
    e.add_argument("--tracks", required=True)
    e = ev.add_parser("image", parents=[common])
    e.add_argument("--ref", required=True)
    e.add_argument("--test", required=True)
    e.add_argument("--patch-size", dest="patch_size", type=int, default=8)
    e.add_argument("--threshold", type=float, default=0.5)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("run", parents=[common], help="full pipeline with a manifest")
    s.add_argument("--mvf")
    s.add_argument("--ivf")
    s.add_argument("--scene")
    s.add_argument("--out")
    s.add_argument("--name-manifest", dest="name_manifest")
    s.add_argument("--emit", help=f"comma list from {','.join(EMIT_CHOICES)}")
    track_flags(s)
    s.set_defaults(func=cmd_run)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    for name, default in (("config", None), ("json", False), ("log_level", None)):
        if not hasattr(args, name):
            setattr(args, name, default)
    configure_logging(args.log_level or "WARNING")
    try:
        return args.func(args)
    except MvsfmError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except Exception as exc:  # anything unplanned is an internal failure
        log.debug("internal error", exc_info=True)
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
