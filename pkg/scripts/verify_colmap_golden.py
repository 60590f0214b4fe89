"""Golden integration check of the COLMAP text-import files.

Exports a 100-keypoint-per-image fixture, then:

* with the ``colmap`` binary on PATH, runs ``feature_importer`` and
  ``matches_importer --match_type raw`` against a scratch database and checks
  the stored keypoint and match counts;
* otherwise, if ``pycolmap`` is importable, loads the parsed files into a
  pycolmap database and reads them back (structural check only, since
  pycolmap has no text importer).

This is a manual check and is not part of the pytest suite.
"""

from __future__ import annotations

import argparse
import shutil
import sqlite3
import subprocess
import sys
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from mvsfm.export import (
    MATCHES_FILE,
    export_colmap_text,
    feature_file_name,
    read_feature_file,
    read_match_file,
)
from mvsfm.trajectory import Sample, TrackParams, Trajectory, trajectories_to_matches


@dataclass
class GoldenConfig:
    n_keypoints: int = 100
    n_frames: int = 3
    width: int = 640
    height: int = 480
    seed: int = 0


def fixture_trajectories(cfg: GoldenConfig) -> list[Trajectory]:
    rng = np.random.default_rng(cfg.seed)
    # one keypoint per 10 px lattice cell so quantized positions never collide
    cols = cfg.width // 10
    cells = rng.choice(cols * (cfg.height // 10 - 1), cfg.n_keypoints, replace=False)
    out = []
    for tid, c in enumerate(sorted(cells)):
        x0, y0 = 10.0 * (c % cols) + 2.5, 10.0 * (c // cols) + 2.5
        out.append(Trajectory(tid, [Sample(f, x0, y0 + f) for f in range(cfg.n_frames)]))
    return out


def export_fixture(cfg: GoldenConfig, out: Path) -> dict[int, str]:
    images, matches = trajectories_to_matches(fixture_trajectories(cfg), TrackParams(pair_span_cap=None))
    names = export_colmap_text(out / "features", images, matches)
    (out / "images").mkdir(parents=True, exist_ok=True)
    blank = Image.new("L", (cfg.width, cfg.height))
    for name in names.values():
        blank.save(out / "images" / name)
    return names


def run_colmap(out: Path, names: dict[int, str]) -> tuple[int, int]:
    db = out / "golden.db"
    base = ["colmap"]
    subprocess.run(base + ["database_creator", "--database_path", str(db)], check=True)
    subprocess.run(base + ["feature_importer", "--database_path", str(db), "--image_path", str(out / "images"),
                           "--import_path", str(out / "features")], check=True)
    subprocess.run(base + ["matches_importer", "--database_path", str(db), "--match_list_path",
                           str(out / "features" / MATCHES_FILE), "--match_type", "raw"], check=True)
    with sqlite3.connect(db) as con:
        kps = con.execute("SELECT SUM(rows) FROM keypoints").fetchone()[0]
        ms = con.execute("SELECT SUM(rows) FROM matches").fetchone()[0]
    return int(kps), int(ms)


def run_pycolmap(out: Path, names: dict[int, str], cfg: GoldenConfig) -> tuple[int, int]:
    import pycolmap

    db = pycolmap.Database.open(str(out / "golden.db"))
    cam = db.write_camera(pycolmap.Camera.create_from_model_name(1, "PINHOLE", 500.0, cfg.width, cfg.height))
    ids = {}
    for name in names.values():
        ids[name] = db.write_image(pycolmap.Image(name=name, camera_id=cam))
        with open(out / "features" / feature_file_name(name)) as fh:
            kps = np.array([(x, y, 1.0, 0.0) for x, y in read_feature_file(fh)], dtype=np.float32)
        db.write_keypoints(ids[name], kps)
    with open(out / "features" / MATCHES_FILE) as fh:
        for (a, b), pairs in read_match_file(fh).items():
            db.write_matches(ids[a], ids[b], np.array(pairs, dtype=np.uint32))
    kps, ms = db.num_keypoints(), db.num_matches()
    db.close()
    return kps, ms


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--keypoints", type=int, default=GoldenConfig.n_keypoints)
    ap.add_argument("--frames", type=int, default=GoldenConfig.n_frames)
    ap.add_argument("--keep", help="write into this directory instead of a temporary one")
    args = ap.parse_args(argv)
    cfg = GoldenConfig(n_keypoints=args.keypoints, n_frames=args.frames)

    out = Path(args.keep) if args.keep else Path(tempfile.mkdtemp(prefix="mvsfm-golden-"))
    names = export_fixture(cfg, out)
    want_k = cfg.n_keypoints * cfg.n_frames
    want_m = cfg.n_keypoints * cfg.n_frames * (cfg.n_frames - 1) // 2

    if shutil.which("colmap"):
        tool, (k, m) = "colmap", run_colmap(out, names)
    else:
        try:
            tool, (k, m) = "pycolmap (structural)", run_pycolmap(out, names, cfg)
        except ImportError:
            print("neither colmap nor pycolmap available; files left in", out)
            return 2
    ok = (k, m) == (want_k, want_m)
    print(f"{tool}: keypoints {k}/{want_k} matches {m}/{want_m} -> {'OK' if ok else 'MISMATCH'}")
    if not args.keep:
        shutil.rmtree(out)
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
