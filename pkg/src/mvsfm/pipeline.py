"""End-to-end run: motion fields in, COLMAP text files, trajectories and a cloud out."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from . import __version__
from .config import PipelineConfig
from .container import parse_obus, read_ivf, validate_stream_profile
from .errors import BehindCamera, DegenerateBaseline, MissingInput, PipelineError
from .export import PLY_FILE, PointCloudFile, export_colmap_text, read_name_manifest, write_ply
from .motionfield import BlockMotionField, DenseMotionField, load_mvf, upsample_zoh, valid_cell_count
from .synth import Scene, load_scene, triangulate_track
from .trajectory import (
    TRAJECTORIES_FILE,
    Trajectory,
    build_trajectories,
    dump_trajectories,
    filter_persistent,
    pair_count,
    trajectories_to_matches,
    write_staged,
)

log = logging.getLogger(__name__)

MANIFEST_FILE = "manifest.json"


@dataclass
class RunManifest:
    version: str
    config: dict[str, Any]
    inputs: dict[str, str]
    counts: dict[str, Any] = field(default_factory=dict)
    durations: dict[str, float] = field(default_factory=dict)

    def to_dict(self, with_durations: bool = True) -> dict[str, Any]:
        d = {"version": self.version, "config": self.config, "inputs": self.inputs, "counts": self.counts}
        if with_durations:
            d["durations"] = self.durations
        return d


def thread_count() -> int:
    """Worker cap from ``MVSFM_THREADS``; 0 or unset means one per CPU."""
    raw = os.environ.get("MVSFM_THREADS", "0").strip() or "0"
    n = int(raw)
    return n if n > 0 else (os.cpu_count() or 1)


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def upsample_all(fields: Sequence[BlockMotionField], threads: int | None = None) -> list[DenseMotionField]:
    threads = thread_count() if threads is None else threads
    if threads <= 1 or len(fields) < 2:
        return [upsample_zoh(f) for f in fields]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(upsample_zoh, fields))


def triangulate_trajectories(trajs: Sequence[Trajectory], scene: Scene):
    """Triangulate each trajectory with the scene's poses.

    Returns the points and, per trajectory, its row in the point array or
    ``None`` where triangulation failed.
    """
    pts, index = [], []
    for tr in trajs:
        try:
            X = triangulate_track(tr.frames, [(s.x, s.y) for s in tr.samples], scene.poses, scene.intrinsics)
        except (DegenerateBaseline, BehindCamera, IndexError):
            index.append(None)
            continue
        index.append(len(pts))
        pts.append(X)
    return np.array(pts, dtype=float).reshape(-1, 3), index


@contextmanager
def _stage(name: str, durations: dict[str, float]):
    t0 = time.perf_counter()
    try:
        yield
    except PipelineError:
        raise
    except Exception as exc:
        raise PipelineError(name, exc) from exc
    finally:
        durations[name] = time.perf_counter() - t0


def _check_inputs(cfg: PipelineConfig) -> None:
    if cfg.mvf_path is None:
        raise MissingInput("mvf_path is not set")
    for key in ("mvf_path", "ivf_path", "scene_path", "name_manifest"):
        path = getattr(cfg, key)
        if path is not None and not os.path.exists(path):
            raise MissingInput(f"{key} {path} does not exist")


def run_pipeline(cfg: PipelineConfig) -> RunManifest:
    _check_inputs(cfg)
    inputs = {
        key: sha256_file(getattr(cfg, key))
        for key in ("mvf_path", "ivf_path", "scene_path", "name_manifest")
        if getattr(cfg, key) is not None
    }
    manifest = RunManifest(__version__, cfg.snapshot(), inputs)
    counts, durations = manifest.counts, manifest.durations
    params = cfg.track_params()

    with _stage("extract", durations):
        fields = load_mvf(cfg.mvf_path)
        counts["frames"] = len(fields)
        counts["blocks"] = sum(len(f.blocks) for f in fields)
        if cfg.ivf_path is not None:
            _info, packets = read_ivf(cfg.ivf_path)
            obus = [parse_obus(p.payload, strict=True) for p in packets]
            report = validate_stream_profile(obus, [f.frame_kind for f in fields])
            counts["profile_violations"] = report.codes()
            for v in report.violations:
                log.warning("profile violation %s at frame %s: %s", v.code, v.frame_index, v.message)
        dense = upsample_all(fields)
        counts["cells"] = valid_cell_count(dense)

    with _stage("track", durations):
        trajs = build_trajectories(dense, params)
        kept = filter_persistent(trajs, params)
        images, matches = trajectories_to_matches(kept, params)
        counts["trajectories_before"] = len(trajs)
        counts["trajectories_after"] = len(kept)
        counts["keypoints_per_frame"] = {str(f): len(img.keypoints) for f, img in images.items()}
        counts["matches_per_pair"] = {f"{a}-{b}": len(m) for (a, b), m in matches.pairs.items()}
        counts["matches_total"] = matches.total()
        counts["match_bound"] = sum(pair_count(len(t.samples), params.pair_span_cap) for t in kept)

    with _stage("export", durations):
        out = cfg.output_dir
        os.makedirs(out, exist_ok=True)
        names = read_name_manifest(cfg.name_manifest) if cfg.name_manifest else None
        colmap = [e for e in ("features", "matches") if e in cfg.emit]
        if colmap:
            export_colmap_text(out, images, matches, names, colmap)
        point_index = None
        if cfg.scene_path is not None and "ply" in cfg.emit:
            scene = load_scene(cfg.scene_path)
            pts, point_index = triangulate_trajectories(kept, scene)
            lengths = [len(t.samples) for t, i in zip(kept, point_index) if i is not None]
            with open(os.path.join(out, PLY_FILE), "wb") as fh:
                write_ply(PointCloudFile(pts, track_lengths=np.array(lengths, dtype=np.int64)), fh)
            counts["cloud_points"] = len(pts)
        elif "ply" in cfg.emit:
            log.info("no scene_path configured; skipping %s", PLY_FILE)
        if "trajectories" in cfg.emit:
            dump_trajectories(kept, os.path.join(out, TRAJECTORIES_FILE), point_index)
            write_staged(out, images, matches)

    with open(os.path.join(cfg.output_dir, MANIFEST_FILE), "w") as fh:
        json.dump(manifest.to_dict(), fh, indent=1, sort_keys=True)
        fh.write("\n")
    return manifest
