"""Synthetic ground truth: pinhole scenes, rendered block motion, triangulation.

Poses map world to camera: ``X_cam = R @ X_world + t``. Pixels follow
``u = fx * X / Z + cx``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .container import FrameKind
from .errors import BehindCamera, DegenerateBaseline, DegenerateMotion, InvariantViolation
from .motionfield import MV_LIMIT, BlockMotionField, MotionBlock, MotionVector, Rect

MOTIONS = ("lateral", "orbit", "forward")


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise InvariantViolation("focal lengths must be positive")
        if not (0 <= self.cx <= self.width and 0 <= self.cy <= self.height):
            raise InvariantViolation("principal point lies outside the frame")

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])


@dataclass(frozen=True, eq=False)
class Pose:
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        t = np.asarray(self.translation, dtype=float).reshape(3)
        if not np.allclose(R.T @ R, np.eye(3), atol=1e-9) or abs(np.linalg.det(R) - 1) > 1e-9:
            raise InvariantViolation("rotation is not a proper orthonormal matrix")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def from_center(cls, R, center) -> "Pose":
        R = np.asarray(R, dtype=float)
        return cls(R, -R @ np.asarray(center, dtype=float))

    @property
    def center(self) -> np.ndarray:
        return -self.rotation.T @ self.translation

    def to_camera(self, X: np.ndarray) -> np.ndarray:
        return np.asarray(X, dtype=float) @ self.rotation.T + self.translation

    def __eq__(self, other):
        return (
            isinstance(other, Pose)
            and np.array_equal(self.rotation, other.rotation)
            and np.array_equal(self.translation, other.translation)
        )


@dataclass(frozen=True)
class Observation:
    frame_index: int
    point_id: int
    pixel: tuple[float, float]
    depth: float


@dataclass(frozen=True, eq=False)
class Scene:
    intrinsics: Intrinsics
    poses: tuple[Pose, ...]
    points: np.ndarray
    seed: int = 0
    motion: str = "custom"

    def __post_init__(self):
        object.__setattr__(self, "poses", tuple(self.poses))
        object.__setattr__(self, "points", np.asarray(self.points, dtype=float).reshape(-1, 3))
        if len(self.poses) < 2:
            raise InvariantViolation("a scene needs at least 2 frames")

    @property
    def n_frames(self) -> int:
        return len(self.poses)

    def __eq__(self, other):
        return (
            isinstance(other, Scene)
            and self.intrinsics == other.intrinsics
            and self.poses == other.poses
            and np.array_equal(self.points, other.points)
            and self.seed == other.seed
        )


# -- scene generation ----------------------------------------------------------

DEFAULT_INTRINSICS = Intrinsics(1000.0, 1000.0, 960.0, 540.0, 1920, 1080)


def _look_at(center: np.ndarray, target: np.ndarray) -> np.ndarray:
    """World-to-camera rotation for a camera at ``center`` looking at ``target``, y down."""
    z = target - center
    z = z / np.linalg.norm(z)
    x = np.cross(np.array([0.0, 1.0, 0.0]), z)
    x = x / np.linalg.norm(x)
    y = np.cross(z, x)
    return np.stack([x, y, z])


def _poses(motion: str, n_frames: int, step: float, target_depth: float) -> list[Pose]:
    poses = []
    for k in range(n_frames):
        if motion == "lateral":
            poses.append(Pose.from_center(np.eye(3), [k * step, 0.0, 0.0]))
        elif motion == "forward":
            poses.append(Pose.from_center(np.eye(3), [0.0, 0.0, k * step]))
        elif motion == "orbit":
            # camera circles the point (0, 0, target_depth), always facing it
            a = k * step
            target = np.array([0.0, 0.0, target_depth])
            c = target + target_depth * np.array([math.sin(a), 0.0, -math.cos(a)])
            poses.append(Pose.from_center(_look_at(c, target), c))
        else:
            raise ValueError(f"unknown motion {motion!r}; choose from {MOTIONS}")
    return poses


def generate_scene(
    n_points: int,
    n_frames: int,
    motion: str = "orbit",
    seed: int = 0,
    *,
    intrinsics: Intrinsics = DEFAULT_INTRINSICS,
    step: float | None = None,
    depth_range: tuple[float, float] = (2.0, 3.0),
    min_separation_px: float = 12.0,
    max_tries: int = 200_000,
) -> Scene:
    """Sample a deterministic scene.

    Points are uniform in a box inside the first camera's frustum, conditioned
    on their projections staying ``min_separation_px`` apart in every frame
    (so each point owns its own 4x4 cell everywhere). ``step`` is the per-frame
    camera move: scene units for lateral/forward, radians for orbit.
    """
    if n_points < 1 or n_frames < 2:
        raise InvariantViolation("need n_points >= 1 and n_frames >= 2")
    if step is None:
        step = {"lateral": 0.05, "forward": 0.05, "orbit": math.radians(0.5)}.get(motion, 0.0)
    if step == 0:
        raise DegenerateMotion(f"{motion} motion with zero step has no baseline")
    z0, z1 = depth_range
    target_depth = 0.5 * (z0 + z1)
    poses = _poses(motion, n_frames, step, target_depth)
    if max(np.linalg.norm(p.center - poses[0].center) for p in poses) < 1e-9:
        raise DegenerateMotion("all camera centers coincide")

    K = intrinsics
    # half-extent of the box: 70% of the frustum at the near plane
    hx = 0.7 * z0 * min(K.cx, K.width - K.cx) / K.fx
    hy = 0.7 * z0 * min(K.cy, K.height - K.cy) / K.fy
    rng = np.random.default_rng(seed)
    R = np.stack([p.rotation for p in poses])
    T = np.stack([p.translation for p in poses])

    accepted: list[np.ndarray] = []
    proj = np.empty((0, n_frames, 2))
    tries = 0
    while len(accepted) < n_points:
        tries += 1
        if tries > max_tries:
            raise DegenerateMotion(
                f"could only place {len(accepted)} of {n_points} points at "
                f"{min_separation_px}px separation"
            )
        X = rng.uniform([-hx, -hy, z0], [hx, hy, z1])
        Xc = np.einsum("fij,j->fi", R, X) + T
        uv = np.stack(
            [K.fx * Xc[:, 0] / Xc[:, 2] + K.cx, K.fy * Xc[:, 1] / Xc[:, 2] + K.cy], axis=1
        )
        if min_separation_px > 0 and len(accepted):
            d = np.linalg.norm(proj - uv[None], axis=2)
            if (d < min_separation_px).any():
                continue
        accepted.append(X)
        proj = np.concatenate([proj, uv[None]], axis=0)
    return Scene(intrinsics, tuple(poses), np.array(accepted), seed, motion)


def project(scene: Scene, frame: int) -> list[Observation]:
    """Observations of every point in front of the camera and inside the frame."""
    K = scene.intrinsics
    Xc = scene.poses[frame].to_camera(scene.points)
    out = []
    for pid, (x, y, z) in enumerate(Xc):
        if z <= 0:
            continue
        u = K.fx * x / z + K.cx
        v = K.fy * y / z + K.cy
        if 0 <= u < K.width and 0 <= v < K.height:
            out.append(Observation(frame, pid, (float(u), float(v)), float(z)))
    return out


# -- motion rendering ----------------------------------------------------------


def _eighth_pel(d: float) -> int:
    return int(max(-MV_LIMIT, min(MV_LIMIT, round(d * 8.0))))


def render_mv_fields(
    scene: Scene,
    noise_sigma_px: float = 0.0,
    *,
    block_size: int = 16,
    isolate_size: int | None = 4,
    seed: int | None = None,
) -> list[BlockMotionField]:
    """Render backward block motion between consecutive frames.

    Frame 0 is a key frame. Each later frame is cut into ``block_size``
    blocks. A block holding observations with differing motion is split down
    to 4x4. With ``isolate_size`` set (4 by default) every block holding an
    observation is further split down to that size, so textureless
    surroundings do not inherit its motion; ``None`` disables this. Blocks without observations are
    intra. A block's vector is the displacement of its dominant observation
    (nearest to the block center) back to the previous frame, plus optional
    Gaussian noise, rounded to 1/8 pel.
    """
    K = scene.intrinsics
    rng = np.random.default_rng(scene.seed if seed is None else seed)
    fields = [BlockMotionField(0, FrameKind.KEY, K.width, K.height)]
    prev = {o.point_id: o.pixel for o in project(scene, 0)}
    for t in range(1, scene.n_frames):
        cur = {o.point_id: o.pixel for o in project(scene, t)}
        # points visible in both frames carry motion
        obs = [(pid, cur[pid], prev[pid]) for pid in sorted(cur) if pid in prev]
        blocks: list[MotionBlock] = []
        intra: list[Rect] = []
        buckets: dict[tuple[int, int], list] = {}
        for item in obs:
            u, v = item[1]
            buckets.setdefault((int(v // block_size), int(u // block_size)), []).append(item)
        for by in range(0, K.height, block_size):
            for bx in range(0, K.width, block_size):
                inside = buckets.get((by // block_size, bx // block_size), [])
                _emit(bx, by, block_size, inside, isolate_size or 0, noise_sigma_px, rng,
                      blocks, intra, K.width, K.height)
        f = BlockMotionField(t, FrameKind.INTER, K.width, K.height, tuple(blocks), tuple(intra))
        fields.append(f)
        prev = cur
    return fields


def _emit(x, y, size, inside, isolate, sigma, rng, blocks, intra, width, height):
    if x >= width or y >= height:
        return
    if not inside:
        intra.append(Rect(x, y, size, size))
        return
    if size > 4:
        split = 0 < isolate < size
        if not split and len(inside) > 1:
            flows = {(_eighth_pel(p[0] - c[0]), _eighth_pel(p[1] - c[1])) for _, c, p in inside}
            split = len(flows) > 1
        if split:
            half = size // 2
            for qy in (y, y + half):
                for qx in (x, x + half):
                    sub = [o for o in inside if qx <= o[1][0] < qx + half and qy <= o[1][1] < qy + half]
                    _emit(qx, qy, half, sub, isolate, sigma, rng, blocks, intra, width, height)
            return
    mx, my = x + size / 2.0, y + size / 2.0
    _, c, p = min(inside, key=lambda o: ((o[1][0] - mx) ** 2 + (o[1][1] - my) ** 2, o[0]))
    dx, dy = p[0] - c[0], p[1] - c[1]
    if sigma > 0:
        dx += rng.normal(0.0, sigma)
        dy += rng.normal(0.0, sigma)
    blocks.append(MotionBlock(x, y, size, size, MotionVector(_eighth_pel(dx), _eighth_pel(dy)), 1))


# -- triangulation -------------------------------------------------------------


def triangulate_views(pixels: Sequence, poses: Sequence[Pose], K: Intrinsics) -> np.ndarray:
    """Linear (DLT) triangulation from two or more views, in normalized coordinates."""
    Kinv = np.linalg.inv(K.K)
    rows = []
    for (u, v), pose in zip(pixels, poses):
        x, y, _ = Kinv @ np.array([u, v, 1.0])
        P = np.hstack([pose.rotation, pose.translation[:, None]])
        rows.append(x * P[2] - P[0])
        rows.append(y * P[2] - P[1])
    A = np.array(rows)
    _, _, Vt = np.linalg.svd(A)
    Xh = Vt[-1]
    if abs(Xh[3]) < 1e-15:
        raise DegenerateBaseline("triangulated point is at infinity")
    X = Xh[:3] / Xh[3]
    for pose in poses:
        if pose.to_camera(X)[2] <= 0:
            raise BehindCamera("triangulated point lies behind a camera")
    return X


def triangulate_pair(obs_a: Observation, obs_b: Observation, pose_a: Pose, pose_b: Pose,
                     K: Intrinsics) -> np.ndarray:
    if np.linalg.norm(pose_a.center - pose_b.center) < 1e-9:
        raise DegenerateBaseline("the two cameras share a center")
    return triangulate_views([obs_a.pixel, obs_b.pixel], [pose_a, pose_b], K)


def triangulate_track(frames: Sequence[int], pixels: Sequence, scene_poses: Sequence[Pose],
                      K: Intrinsics) -> np.ndarray:
    poses = [scene_poses[f] for f in frames]
    centers = np.array([p.center for p in poses])
    if np.linalg.norm(centers - centers[0], axis=1).max() < 1e-9:
        raise DegenerateBaseline("all cameras of the track share a center")
    return triangulate_views(pixels, poses, K)


# -- scene JSON ----------------------------------------------------------------

SCENE_SCHEMA_VERSION = 1


def scene_to_dict(scene: Scene) -> dict:
    K = scene.intrinsics
    obs = [o for f in range(scene.n_frames) for o in project(scene, f)]
    return {
        "version": SCENE_SCHEMA_VERSION,
        "seed": scene.seed,
        "motion": scene.motion,
        "intrinsics": {"fx": K.fx, "fy": K.fy, "cx": K.cx, "cy": K.cy,
                       "width": K.width, "height": K.height},
        "poses": [
            {"rotation": p.rotation.reshape(-1).tolist(), "translation": p.translation.tolist()}
            for p in scene.poses
        ],
        "points": scene.points.tolist(),
        "observations": [
            {"frame": o.frame_index, "point_id": o.point_id, "u": o.pixel[0], "v": o.pixel[1],
             "depth": o.depth}
            for o in obs
        ],
    }


def scene_from_dict(d: dict) -> Scene:
    if d.get("version") != SCENE_SCHEMA_VERSION:
        raise InvariantViolation(f"unsupported scene schema version {d.get('version')}")
    K = Intrinsics(**d["intrinsics"])
    poses = [Pose(np.array(p["rotation"]).reshape(3, 3), p["translation"]) for p in d["poses"]]
    return Scene(K, tuple(poses), np.array(d["points"], dtype=float).reshape(-1, 3),
                 int(d["seed"]), d.get("motion", "custom"))


def save_scene(scene: Scene, path) -> None:
    with open(path, "w") as fh:
        json.dump(scene_to_dict(scene), fh, indent=1)
        fh.write("\n")


def load_scene(path) -> Scene:
    with open(path) as fh:
        return scene_from_dict(json.load(fh))
