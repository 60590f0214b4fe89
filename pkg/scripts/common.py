"""Shared evaluation for the experiment scripts: track a synthetic scene and score it."""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass

import numpy as np

from mvsfm.metrics import chamfer, hausdorff, reprojection_error
from mvsfm.motionfield import upsample_zoh
from mvsfm.pipeline import triangulate_trajectories
from mvsfm.synth import Scene, project, render_mv_fields
from mvsfm.trajectory import TrackParams, build_trajectories, filter_persistent


@dataclass
class SceneScore:
    trajectories: int
    eligible: int
    recovered: int
    switches: int
    chamfer: float
    hausdorff: float
    reproj_mean: float
    reproj_median: float
    seconds: float

    @property
    def recall(self) -> float:
        return self.recovered / self.eligible if self.eligible else 0.0

    def row(self) -> dict:
        return {**asdict(self), "recall": self.recall}


def _labels(trajs, scene: Scene):
    """Nearest ground-truth point id per sample, vectorized per frame."""
    obs = {f: project(scene, f) for f in range(scene.n_frames)}
    pix = {f: np.array([o.pixel for o in lst]).reshape(-1, 2) for f, lst in obs.items()}
    ids = {f: np.array([o.point_id for o in lst]) for f, lst in obs.items()}
    seen = np.bincount(np.concatenate([ids[f] for f in ids]), minlength=len(scene.points))
    out = []
    for t in trajs:
        lab = set()
        for s in t.samples:
            d = ((pix[s.frame_index] - (s.x, s.y)) ** 2).sum(1)
            lab.add(int(ids[s.frame_index][np.argmin(d)]))
        out.append(lab)
    return out, {int(p) for p in np.flatnonzero(seen >= 4)}


def score_scene(scene: Scene, noise: float, params: TrackParams, seed: int | None = None) -> SceneScore:
    fields = render_mv_fields(scene, noise, seed=seed)
    t0 = time.perf_counter()
    kept = filter_persistent(build_trajectories([upsample_zoh(f) for f in fields], params), params)
    pts, index = triangulate_trajectories(kept, scene)
    seconds = time.perf_counter() - t0
    labels, eligible = _labels(kept, scene)
    recovered = {next(iter(lab)) for lab in labels if len(lab) == 1}
    obs = [[(s.frame_index, (s.x, s.y)) for s in t.samples] for t, i in zip(kept, index) if i is not None]
    stats = reprojection_error(pts, scene.poses, scene.intrinsics, obs)
    return SceneScore(
        trajectories=len(kept),
        eligible=len(eligible),
        recovered=len(recovered & eligible),
        switches=sum(len(lab) > 1 for lab in labels),
        chamfer=chamfer(pts, scene.points),
        hausdorff=hausdorff(pts, scene.points),
        reproj_mean=stats.mean,
        reproj_median=stats.median,
        seconds=seconds,
    )
