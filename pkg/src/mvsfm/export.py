"""COLMAP text-import files (features and raw matches) and PLY point clouds.

All numbers are printed with fixed precision so identical inputs give
byte-identical files.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from typing import IO, Mapping, Sequence

import numpy as np

from .errors import InvariantViolation, MissingImageName, NonFinitePoint, SinkFailure
from .trajectory import MatchSet

DESCRIPTOR_DIM = 128
IMAGE_NAME_FORMAT = "frame_{:06d}.png"
MATCHES_FILE = "matches.txt"
PLY_FILE = "cloud.ply"


@dataclass(frozen=True)
class FeatureFileSpec:
    image_name: str
    keypoints: Sequence[tuple[float, float]]
    descriptor_dim: int = DESCRIPTOR_DIM
    scale: float = 1.0
    orientation: float = 0.0

    def __post_init__(self):
        if self.descriptor_dim != DESCRIPTOR_DIM:
            raise InvariantViolation(f"descriptor_dim must be {DESCRIPTOR_DIM}, got {self.descriptor_dim}")


@dataclass(frozen=True)
class PointCloudFile:
    points: np.ndarray
    colors: np.ndarray | None = None
    track_lengths: np.ndarray | None = None


def image_name(frame: int, names: Sequence[str] | None = None) -> str:
    if names is None:
        return IMAGE_NAME_FORMAT.format(frame)
    if frame >= len(names):
        raise MissingImageName(f"name manifest has no entry for frame {frame}")
    return names[frame]


def feature_file_name(name: str) -> str:
    return name + ".txt"


def read_name_manifest(path) -> list[str]:
    """One image name per line, line k naming frame k."""
    with open(path) as fh:
        return [line.strip() for line in fh if line.strip()]


def _write(sink, text: str) -> None:
    try:
        sink.write(text)
    except (OSError, ValueError) as exc:
        raise SinkFailure(str(exc)) from exc


def write_feature_file(spec: FeatureFileSpec, sink: IO[str]) -> int:
    """Write ``N 128`` then one ``x y scale orientation d1..d128`` line per keypoint."""
    zeros = " ".join(["0"] * spec.descriptor_dim)
    lines = [f"{len(spec.keypoints)} {spec.descriptor_dim}\n"]
    for x, y in spec.keypoints:
        lines.append(f"{x:.6f} {y:.6f} {spec.scale:.6f} {spec.orientation:.6f} {zeros}\n")
    _write(sink, "".join(lines))
    return len(lines)


def write_match_file(matches: MatchSet, image_names: Mapping[int, str], sink: IO[str]) -> int:
    """Write one ``name_a name_b`` block per frame pair, in ascending pair order."""
    out = []
    pairs = matches.sorted_pairs()
    for a, b in pairs:
        for f in (a, b):
            if f not in image_names:
                raise MissingImageName(f"no image name for frame {f}")
        out.append(f"{image_names[a]} {image_names[b]}\n")
        out.extend(f"{i} {j}\n" for i, j in matches.pairs[(a, b)])
        out.append("\n")
    _write(sink, "".join(out))
    return len(pairs)


def _num(v: float) -> str:
    s = f"{v:.6f}".rstrip("0").rstrip(".")
    return "0" if s == "-0" else s


def write_ply(cloud: PointCloudFile, sink: IO[bytes], binary: bool = False) -> int:
    """Write a PLY vertex list; ASCII unless ``binary`` (little-endian)."""
    pts = np.asarray(cloud.points, dtype=float).reshape(-1, 3)
    bad = np.flatnonzero(~np.isfinite(pts).all(axis=1))
    if len(bad):
        raise NonFinitePoint(int(bad[0]))
    colors = None if cloud.colors is None else np.asarray(cloud.colors, dtype=np.uint8).reshape(-1, 3)
    tracks = None if cloud.track_lengths is None else np.asarray(cloud.track_lengths, dtype=np.int64)
    header = [
        "ply",
        f"format {'binary_little_endian' if binary else 'ascii'} 1.0",
        f"element vertex {len(pts)}",
        "property float x",
        "property float y",
        "property float z",
    ]
    if colors is not None:
        header += ["property uchar red", "property uchar green", "property uchar blue"]
    if tracks is not None:
        header.append("property int track_length")
    header.append("end_header")
    body = bytearray(("\n".join(header) + "\n").encode("ascii"))
    for i, p in enumerate(pts):
        if binary:
            body += struct.pack("<fff", *p)
            if colors is not None:
                body += struct.pack("<BBB", *colors[i])
            if tracks is not None:
                body += struct.pack("<i", int(tracks[i]))
        else:
            fields = [_num(v) for v in p]
            if colors is not None:
                fields += [str(int(c)) for c in colors[i]]
            if tracks is not None:
                fields.append(str(int(tracks[i])))
            body += (" ".join(fields) + "\n").encode("ascii")
    try:
        sink.write(bytes(body))
    except (OSError, ValueError) as exc:
        raise SinkFailure(str(exc)) from exc
    return len(pts)


# -- parse-back ----------------------------------------------------------------


def read_feature_file(src: IO[str]) -> list[tuple[float, float]]:
    lines = src.read().splitlines()
    if not lines:
        raise InvariantViolation("feature file is empty")
    n, dim = (int(v) for v in lines[0].split())
    if dim != DESCRIPTOR_DIM:
        raise InvariantViolation(f"descriptor dimension {dim}")
    if len(lines) - 1 != n:
        raise InvariantViolation(f"header declares {n} keypoints, file holds {len(lines) - 1}")
    kps = []
    for line in lines[1:]:
        cols = line.split()
        if len(cols) != 4 + dim:
            raise InvariantViolation(f"keypoint line has {len(cols)} columns")
        kps.append((float(cols[0]), float(cols[1])))
    return kps


def read_match_file(src: IO[str]) -> dict[tuple[str, str], list[tuple[int, int]]]:
    out: dict[tuple[str, str], list[tuple[int, int]]] = {}
    current = None
    for line in src.read().splitlines():
        if not line.strip():
            current = None
            continue
        cols = line.split()
        if current is None:
            current = (cols[0], cols[1])
            out[current] = []
        else:
            out[current].append((int(cols[0]), int(cols[1])))
    return out


def read_ply(src: IO[bytes]) -> np.ndarray:
    """Vertex coordinates of an ASCII or binary little-endian PLY written by :func:`write_ply`."""
    data = src.read()
    end = data.index(b"end_header\n") + len(b"end_header\n")
    header = data[:end].decode("ascii").splitlines()
    n = next(int(h.split()[2]) for h in header if h.startswith("element vertex"))
    props = [h.split()[1:] for h in header if h.startswith("property")]
    if "binary_little_endian" in header[1]:
        codes = {"float": "f", "uchar": "B", "int": "i"}
        rec = struct.Struct("<" + "".join(codes[t] for t, _ in props))
        rows = [rec.unpack_from(data, end + k * rec.size)[:3] for k in range(n)]
        return np.array(rows, dtype=float).reshape(-1, 3)
    lines = data[end:].decode("ascii").splitlines()[:n]
    return np.array([[float(v) for v in line.split()[:3]] for line in lines], dtype=float).reshape(-1, 3)


def check_integrity(out_dir, image_names: Mapping[int, str]) -> dict[str, int]:
    """Parse every feature file and the match file back and verify cross-file references."""
    by_name = {}
    for name in image_names.values():
        path = os.path.join(out_dir, feature_file_name(name))
        if os.path.exists(path):
            with open(path) as fh:
                by_name[name] = len(read_feature_file(fh))
    n_matches = 0
    mpath = os.path.join(out_dir, MATCHES_FILE)
    if os.path.exists(mpath):
        with open(mpath) as fh:
            pairs = read_match_file(fh)
        for (a, b), ms in pairs.items():
            if a not in by_name or b not in by_name:
                raise InvariantViolation(f"match pair {a} {b} names an image without features")
            for i, j in ms:
                if not (0 <= i < by_name[a] and 0 <= j < by_name[b]):
                    raise InvariantViolation(f"match {i} {j} out of range for {a} {b}")
            n_matches += len(ms)
    return {"images": len(by_name), "keypoints": sum(by_name.values()), "matches": n_matches}


def export_colmap_text(out_dir, images, matches: MatchSet, names: Sequence[str] | None = None,
                       emit: Sequence[str] = ("features", "matches")) -> dict[int, str]:
    """Write feature files and ``matches.txt`` for staged keypoints; returns frame -> image name."""
    os.makedirs(out_dir, exist_ok=True)
    frames = sorted(set(images) | {f for pair in matches.pairs for f in pair})
    image_names = {f: image_name(f, names) for f in frames}
    if "features" in emit:
        for f in frames:
            kps = images[f].keypoints if f in images else []
            path = os.path.join(out_dir, feature_file_name(image_names[f]))
            with open(path, "w", newline="\n") as fh:
                write_feature_file(FeatureFileSpec(image_names[f], kps), fh)
    if "matches" in emit:
        with open(os.path.join(out_dir, MATCHES_FILE), "w", newline="\n") as fh:
            write_match_file(matches, image_names, fh)
    return image_names
