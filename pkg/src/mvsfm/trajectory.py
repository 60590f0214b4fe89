"""Chain dense motion fields into point trajectories and turn them into matches.

Each inter frame is processed in order. A valid cell with center ``c`` and
backward vector ``m`` points at ``s = c + m/8`` in its reference frame. If a
live trajectory head sits within ``link_radius`` of ``s`` and the direction
change passes the cosine test, the trajectory advances to ``head - m/8``
(positions accumulate motion, so the chain constraint holds exactly);
otherwise the cell seeds a new two-sample trajectory ``(s, c)``.
"""

from __future__ import annotations

import enum
import json
import math
import os
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .errors import InvariantViolation, UnsortedFields
from .motionfield import CELL, DenseMotionField, MotionVector


class TerminationReason(str, enum.Enum):
    COSINE_BREAK = "CosineBreak"
    INVALID_CELL = "InvalidCell"
    OUT_OF_FRAME = "OutOfFrame"
    END_OF_SEQUENCE = "EndOfSequence"
    MAGNITUDE_GATE = "MagnitudeGate"


@dataclass(frozen=True)
class TrackParams:
    cos_diff_threshold: float = 0.3
    min_span_frames: int = 4
    link_radius: float = 2.0 * math.sqrt(2.0)  # covering radius of the 4 px cell grid
    pair_span_cap: int | None = 8  # None = unlimited
    min_mv_magnitude_px: float = 0.25
    keypoint_quantum: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.cos_diff_threshold <= 2.0:
            raise InvariantViolation(f"cos_diff_threshold {self.cos_diff_threshold} not in [0, 2]")
        if self.min_span_frames < 2:
            raise InvariantViolation("min_span_frames must be >= 2")
        if self.link_radius <= 0:
            raise InvariantViolation("link_radius must be positive")
        if self.pair_span_cap is not None and self.pair_span_cap < 1:
            raise InvariantViolation("pair_span_cap must be >= 1 or None")
        if self.min_mv_magnitude_px < 0:
            raise InvariantViolation("min_mv_magnitude_px must be >= 0")
        if self.keypoint_quantum <= 0:
            raise InvariantViolation("keypoint_quantum must be positive")


@dataclass(frozen=True)
class Sample:
    frame_index: int
    x: float
    y: float
    # backward vector linking this sample to the previous one; None on the first sample
    mv: MotionVector | None = None


@dataclass
class Trajectory:
    id: int
    samples: list[Sample]
    terminated_reason: TerminationReason = TerminationReason.END_OF_SEQUENCE
    # the rejected vector behind a CosineBreak / MagnitudeGate termination
    break_mv: MotionVector | None = None

    @property
    def frames(self) -> list[int]:
        return [s.frame_index for s in self.samples]

    @property
    def span(self) -> int:
        return len(set(self.frames))

    @property
    def head(self) -> Sample:
        return self.samples[-1]

    def positions(self) -> np.ndarray:
        return np.array([(s.x, s.y) for s in self.samples], dtype=float)


def _below_gate(dx: float, dy: float, gate_px: float) -> bool:
    mag = math.hypot(dx, dy) / 8.0
    return mag == 0.0 or mag < gate_px


def cosine_difference(a, b, min_magnitude_px: float = 0.25) -> float:
    """``1 - cos(angle)`` between two vectors, in [0, 2].

    Vectors under the magnitude gate have no usable direction: two such vectors
    score 0, exactly one scores 2.
    """
    ax, ay = (a.dx, a.dy) if isinstance(a, MotionVector) else a
    bx, by = (b.dx, b.dy) if isinstance(b, MotionVector) else b
    za = _below_gate(ax, ay, min_magnitude_px)
    zb = _below_gate(bx, by, min_magnitude_px)
    if za and zb:
        return 0.0
    if za or zb:
        return 2.0
    cos = (ax * bx + ay * by) / math.sqrt((ax * ax + ay * ay) * (bx * bx + by * by))
    return min(2.0, max(0.0, 1.0 - cos))


def _cell_centers(d: DenseMotionField, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    x0 = cols * CELL
    y0 = rows * CELL
    cx = (x0 + np.minimum(x0 + CELL, d.width)) / 2.0
    cy = (y0 + np.minimum(y0 + CELL, d.height)) / 2.0
    return np.stack([cx, cy], axis=1)


def _in_frame(x: float, y: float, d: DenseMotionField) -> bool:
    return 0.0 <= x < d.width and 0.0 <= y < d.height


def build_trajectories(
    fields: Sequence[DenseMotionField], params: TrackParams = TrackParams()
) -> list[Trajectory]:
    """Link dense fields into trajectories. Returns every trajectory, short ones included."""
    indices = [f.frame_index for f in fields]
    if any(b <= a for a, b in zip(indices, indices[1:])):
        raise UnsortedFields(f"fields must be strictly increasing by frame index: {indices}")

    max_ref = 1
    for f in fields:
        if f.valid.any():
            max_ref = max(max_ref, int(f.ref_offset[f.valid].max()))

    tau = params.cos_diff_threshold
    gate = params.min_mv_magnitude_px
    radius = params.link_radius

    trajs: list[Trajectory] = []
    live: dict[int, Trajectory] = {}
    pending: dict[int, tuple[TerminationReason, MotionVector | None]] = {}

    for d in fields:
        t = d.frame_index
        rows, cols = np.nonzero(d.valid)  # raster order
        n = len(rows)
        centers = _cell_centers(d, rows, cols)
        mvs = d.mv[rows, cols].astype(np.int64)
        refs = d.ref_offset[rows, cols].astype(np.int64)
        sources = centers + mvs / 8.0

        cell_taken = np.zeros(n, dtype=bool)
        linked: set[int] = set()
        # per head: (reason, break_mv, distance) of the closest rejected candidate
        notes: dict[int, list] = {}

        for r in np.unique(refs) if n else []:
            r = int(r)
            heads = [tr for tr in live.values() if tr.head.frame_index == t - r]
            if not heads:
                continue
            sel = np.flatnonzero(refs == r)
            head_pos = np.array([(tr.head.x, tr.head.y) for tr in heads])
            tree = cKDTree(head_pos)
            hits = tree.query_ball_point(sources[sel], radius + 1e-9)
            cands = []
            for k_local, hs in enumerate(hits):
                k = int(sel[k_local])
                mdx, mdy = int(mvs[k, 0]), int(mvs[k, 1])
                for h in hs:
                    tr = heads[h]
                    dist = math.hypot(sources[k, 0] - tr.head.x, sources[k, 1] - tr.head.y)
                    if dist > radius:
                        continue
                    hm = tr.head.mv
                    if not _below_gate(mdx, mdy, gate):
                        cd = cosine_difference(hm, (mdx, mdy), gate)
                        if cd > tau:
                            reason = (
                                TerminationReason.MAGNITUDE_GATE
                                if _below_gate(hm.dx, hm.dy, gate)
                                else TerminationReason.COSINE_BREAK
                            )
                            _note(notes, tr.id, reason, MotionVector(mdx, mdy), dist)
                            continue
                    nx, ny = tr.head.x - mdx / 8.0, tr.head.y - mdy / 8.0
                    if not _in_frame(nx, ny, d):
                        _note(notes, tr.id, TerminationReason.OUT_OF_FRAME, None, dist)
                        continue
                    cands.append((dist, tr.id, k, nx, ny))
            cands.sort(key=lambda c: (c[0], c[1], c[2]))
            for dist, tid, k, nx, ny in cands:
                if cell_taken[k] or tid in linked:
                    continue
                cell_taken[k] = True
                linked.add(tid)
                live[tid].samples.append(
                    Sample(t, nx, ny, MotionVector(int(mvs[k, 0]), int(mvs[k, 1])))
                )
            for _, tid, _, _, _ in cands:
                if tid not in linked:
                    _note(notes, tid, TerminationReason.INVALID_CELL, None, math.inf)

        # record why heads that could have continued into t did not
        for tid, tr in live.items():
            f = tr.head.frame_index
            if f >= t or tid in linked or tid in pending:
                continue
            if tid in notes:
                reason, bmv = notes[tid][:2]
            else:
                hm = tr.head.mv
                px, py = tr.head.x, tr.head.y
                if hm is not None:
                    px, py = px - hm.dx / 8.0, py - hm.dy / 8.0
                reason = (
                    TerminationReason.INVALID_CELL if _in_frame(px, py, d)
                    else TerminationReason.OUT_OF_FRAME
                )
                bmv = None
            pending[tid] = (reason, bmv)

        for k in np.flatnonzero(~cell_taken):
            sx, sy = float(sources[k, 0]), float(sources[k, 1])
            if not _in_frame(sx, sy, d):
                continue
            mv = MotionVector(int(mvs[k, 0]), int(mvs[k, 1]))
            tr = Trajectory(
                len(trajs),
                [
                    Sample(t - int(refs[k]), sx, sy, None),
                    Sample(t, float(centers[k, 0]), float(centers[k, 1]), mv),
                ],
            )
            trajs.append(tr)
            live[tr.id] = tr

        for tid in [tid for tid, tr in live.items() if tr.head.frame_index + max_ref <= t]:
            tr = live.pop(tid)
            if tid in pending:
                tr.terminated_reason, tr.break_mv = pending.pop(tid)
            else:
                tr.terminated_reason = TerminationReason.INVALID_CELL

        for tid in linked:
            pending.pop(tid, None)

    for tid, tr in live.items():
        if tid in pending:
            tr.terminated_reason, tr.break_mv = pending[tid]
        else:
            tr.terminated_reason = TerminationReason.END_OF_SEQUENCE
    return trajs


def _note(notes, tid, reason, mv, dist):
    # cosine/magnitude rejections outrank geometric ones; ties go to the nearest candidate
    rank = {
        TerminationReason.COSINE_BREAK: 0,
        TerminationReason.MAGNITUDE_GATE: 0,
        TerminationReason.OUT_OF_FRAME: 1,
        TerminationReason.INVALID_CELL: 2,
    }[reason]
    cur = notes.get(tid)
    if cur is None or (rank, dist) < (cur[3], cur[2]):
        notes[tid] = [reason, mv, dist, rank]


def filter_persistent(
    trajectories: Iterable[Trajectory], params: TrackParams = TrackParams()
) -> list[Trajectory]:
    """Keep trajectories spanning at least ``min_span_frames`` distinct frames."""
    return [t for t in trajectories if t.span >= params.min_span_frames]


# -- matches -------------------------------------------------------------------


@dataclass
class ImageKeypoints:
    frame_index: int
    keypoints: list[tuple[float, float]] = field(default_factory=list)
    dedup_index: dict[tuple[int, int], int] = field(default_factory=dict)

    def register(self, x: float, y: float, quantum: float) -> int:
        key = (math.floor(x / quantum + 0.5), math.floor(y / quantum + 0.5))
        idx = self.dedup_index.get(key)
        if idx is None:
            idx = len(self.keypoints)
            self.keypoints.append((x, y))
            self.dedup_index[key] = idx
        return idx


@dataclass
class MatchSet:
    pairs: dict[tuple[int, int], list[tuple[int, int]]] = field(default_factory=dict)

    def total(self) -> int:
        return sum(len(v) for v in self.pairs.values())

    def sorted_pairs(self) -> list[tuple[int, int]]:
        return sorted(self.pairs)


def pair_count(n_samples: int, cap: int | None) -> int:
    """Number of sample pairs (i < j) along a trajectory with j - i <= cap."""
    if cap is None or cap >= n_samples - 1:
        return n_samples * (n_samples - 1) // 2
    return sum(n_samples - k for k in range(1, cap + 1))


def trajectories_to_matches(
    trajectories: Sequence[Trajectory], params: TrackParams = TrackParams()
) -> tuple[dict[int, ImageKeypoints], MatchSet]:
    """Register samples as keypoints and emit one-to-one matches per frame pair.

    When two trajectories claim the same keypoint within a frame pair, the
    longer trajectory wins, then the lower id.
    """
    images: dict[int, ImageKeypoints] = {}
    kp_of: dict[int, list[int]] = {}
    for tr in trajectories:
        idxs = []
        for s in tr.samples:
            img = images.setdefault(s.frame_index, ImageKeypoints(s.frame_index))
            idxs.append(img.register(s.x, s.y, params.keypoint_quantum))
        kp_of[tr.id] = idxs

    cap = params.pair_span_cap
    claimed: dict[tuple[int, int], tuple[set[int], set[int]]] = {}
    matches = MatchSet()
    for tr in sorted(trajectories, key=lambda t: (-len(t.samples), t.id)):
        idxs = kp_of[tr.id]
        n = len(tr.samples)
        for i in range(n):
            for j in range(i + 1, n if cap is None else min(n, i + cap + 1)):
                fa, fb = tr.samples[i].frame_index, tr.samples[j].frame_index
                ka, kb = idxs[i], idxs[j]
                if fa > fb:
                    fa, fb, ka, kb = fb, fa, kb, ka
                used_a, used_b = claimed.setdefault((fa, fb), (set(), set()))
                if ka in used_a or kb in used_b:
                    continue
                used_a.add(ka)
                used_b.add(kb)
                matches.pairs.setdefault((fa, fb), []).append((ka, kb))
    matches.pairs = {k: sorted(matches.pairs[k]) for k in sorted(matches.pairs)}
    return dict(sorted(images.items())), matches


# -- staging I/O ---------------------------------------------------------------

TRAJECTORIES_FILE = "trajectories.jsonl"
KEYPOINTS_FILE = "keypoints.json"
MATCHES_FILE = "matches.json"


def trajectory_to_dict(tr: Trajectory, point_index: int | None = None) -> dict:
    out = {
        "id": tr.id,
        "frames": tr.frames,
        "positions": [[s.x, s.y] for s in tr.samples],
        "mvs": [None if s.mv is None else [s.mv.dx, s.mv.dy] for s in tr.samples],
        "terminated_reason": tr.terminated_reason.value,
    }
    if point_index is not None:
        out["point_index"] = point_index
    return out


def trajectory_from_dict(d: dict) -> Trajectory:
    samples = [
        Sample(f, float(p[0]), float(p[1]), None if m is None else MotionVector(*m))
        for f, p, m in zip(d["frames"], d["positions"], d["mvs"])
    ]
    return Trajectory(int(d["id"]), samples, TerminationReason(d["terminated_reason"]))


def dump_trajectories(trajs: Sequence[Trajectory], path, point_index=None) -> None:
    with open(path, "w") as fh:
        for n, tr in enumerate(trajs):
            pi = None if point_index is None else point_index[n]
            fh.write(json.dumps(trajectory_to_dict(tr, pi), separators=(",", ":")) + "\n")


def load_trajectories(path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def write_staged(out_dir, images: dict[int, ImageKeypoints], matches: MatchSet) -> None:
    os.makedirs(out_dir, exist_ok=True)
    kp = {str(f): [list(p) for p in img.keypoints] for f, img in images.items()}
    with open(os.path.join(out_dir, KEYPOINTS_FILE), "w") as fh:
        json.dump({"frames": kp}, fh, separators=(",", ":"))
    pairs = [{"a": a, "b": b, "matches": [list(m) for m in ms]} for (a, b), ms in matches.pairs.items()]
    with open(os.path.join(out_dir, MATCHES_FILE), "w") as fh:
        json.dump({"pairs": pairs}, fh, separators=(",", ":"))


def read_staged(track_dir) -> tuple[dict[int, ImageKeypoints], MatchSet]:
    with open(os.path.join(track_dir, KEYPOINTS_FILE)) as fh:
        kp = json.load(fh)["frames"]
    images = {}
    for f, pts in kp.items():
        img = ImageKeypoints(int(f), [(float(x), float(y)) for x, y in pts])
        images[img.frame_index] = img
    with open(os.path.join(track_dir, MATCHES_FILE)) as fh:
        pairs = json.load(fh)["pairs"]
    ms = MatchSet({(p["a"], p["b"]): [tuple(m) for m in p["matches"]] for p in pairs})
    return dict(sorted(images.items())), ms
