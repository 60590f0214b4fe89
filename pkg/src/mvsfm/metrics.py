"""Quality measures: reprojection error, cloud distances, PSNR-Y and the Q sharpness score."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree

from .errors import DimensionMismatch, EmptySet, EmptyTracks, ImageTooSmall
from .synth import Intrinsics, Pose


@dataclass(frozen=True)
class ReprojStats:
    mean: float
    median: float
    p95: float
    count: int


@dataclass(frozen=True)
class CloudDistance:
    chamfer: float
    hausdorff: float


@dataclass(frozen=True)
class SharpnessScore:
    q: float
    patch_size: int
    anisotropy_threshold: float


def reprojection_residuals(points, poses: Sequence[Pose], K: Intrinsics, observations) -> np.ndarray:
    """Pixel distance between each observation and the projection of its point.

    ``observations[i]`` is a list of ``(frame, (u, v))`` for ``points[i]``.
    """
    res = []
    for X, track in zip(np.asarray(points, dtype=float), observations):
        for frame, (u, v) in track:
            Xc = poses[frame].to_camera(X)
            pu = K.fx * Xc[0] / Xc[2] + K.cx
            pv = K.fy * Xc[1] / Xc[2] + K.cy
            res.append(math.hypot(pu - u, pv - v))
    return np.array(res)


def reprojection_error(points, poses: Sequence[Pose], K: Intrinsics, observations) -> ReprojStats:
    res = reprojection_residuals(points, poses, K, observations)
    if res.size == 0:
        raise EmptyTracks("no observations to evaluate")
    return ReprojStats(
        mean=math.fsum(res) / res.size,
        median=float(np.median(res)),
        p95=float(np.percentile(res, 95)),
        count=int(res.size),
    )


# -- point clouds --------------------------------------------------------------


def _as_cloud(a) -> np.ndarray:
    a = np.asarray(a, dtype=float).reshape(-1, 3)
    if len(a) == 0:
        raise EmptySet("point set is empty")
    return a


def nearest_distances(a, b) -> np.ndarray:
    """For each point of ``a``, the Euclidean distance to its nearest neighbor in ``b``."""
    a, b = _as_cloud(a), _as_cloud(b)
    _, idx = cKDTree(b).query(a)
    diff = a - b[idx]
    # same arithmetic as a direct evaluation, so values match a brute-force pass exactly
    return np.sqrt(diff[:, 0] * diff[:, 0] + diff[:, 1] * diff[:, 1] + diff[:, 2] * diff[:, 2])


def chamfer(a, b, squared: bool = False) -> float:
    """Symmetric mean nearest-neighbor distance: 0.5 * (mean a->b + mean b->a)."""
    dab, dba = nearest_distances(a, b), nearest_distances(b, a)
    if squared:
        dab, dba = dab * dab, dba * dba
    return 0.5 * (math.fsum(dab) / len(dab) + math.fsum(dba) / len(dba))


def hausdorff(a, b) -> float:
    return float(max(nearest_distances(a, b).max(), nearest_distances(b, a).max()))


def cloud_distance(a, b, squared: bool = False) -> CloudDistance:
    return CloudDistance(chamfer(a, b, squared), hausdorff(a, b))


def umeyama(src, dst) -> tuple[float, np.ndarray, np.ndarray]:
    """Similarity (s, R, t) minimizing ||dst - (s R src + t)|| for paired points."""
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    mu_s, mu_d = src.mean(0), dst.mean(0)
    xs, xd = src - mu_s, dst - mu_d
    cov = xd.T @ xs / len(src)
    U, S, Vt = np.linalg.svd(cov)
    D = np.eye(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        D[2, 2] = -1
    R = U @ D @ Vt
    var = (xs ** 2).sum() / len(src)
    s = float(np.trace(np.diag(S) @ D) / var) if var > 0 else 1.0
    t = mu_d - s * R @ mu_s
    return s, R, t


def align_similarity(src, dst, iterations: int = 30) -> np.ndarray:
    """Align unpaired cloud ``src`` onto ``dst``: nearest-neighbor pairing + Umeyama, iterated."""
    src, dst = _as_cloud(src), _as_cloud(dst)
    tree = cKDTree(dst)
    # start from matched centroid and RMS radius so ICP sees the right scale
    mu_s, mu_d = src.mean(0), dst.mean(0)
    rs = np.sqrt(((src - mu_s) ** 2).sum(1).mean())
    rd = np.sqrt(((dst - mu_d) ** 2).sum(1).mean())
    cur = (src - mu_s) * (rd / rs if rs > 0 else 1.0) + mu_d
    for _ in range(iterations):
        _, idx = tree.query(cur)
        s, R, t = umeyama(src, dst[idx])
        nxt = s * src @ R.T + t
        if np.allclose(nxt, cur, atol=1e-12):
            cur = nxt
            break
        cur = nxt
    return cur


# -- images --------------------------------------------------------------------


def to_luma(img) -> np.ndarray:
    """8-bit luma; RGB(A) input goes through BT.601 weights."""
    a = np.asarray(img, dtype=float)
    if a.ndim == 3:
        a = 0.299 * a[..., 0] + 0.587 * a[..., 1] + 0.114 * a[..., 2]
    return a


def psnr_y(reference, test) -> float:
    """PSNR in dB on luma; ``math.inf`` for identical images."""
    ref, tst = to_luma(reference), to_luma(test)
    if ref.shape != tst.shape:
        raise DimensionMismatch(f"{ref.shape} vs {tst.shape}")
    mse = float(np.mean((ref - tst) ** 2))
    if mse == 0:
        return math.inf
    return 20.0 * math.log10(255.0 / math.sqrt(mse))


def patch_coherence(patch: np.ndarray) -> tuple[float, float, float]:
    """(s1, s2, R) for one patch's stacked central-difference gradients."""
    gy, gx = np.gradient(np.asarray(patch, dtype=float))
    G = np.stack([gx.ravel(), gy.ravel()], axis=1)
    s = np.linalg.svd(G, compute_uv=False)
    s1, s2 = float(s[0]), float(s[1])
    R = (s1 - s2) / (s1 + s2) if s1 + s2 > 0 else 0.0
    return s1, s2, R


def q_metric(image, patch_size: int = 8, anisotropy_threshold: float = 0.5) -> SharpnessScore:
    """Mean of ``s1 * R`` over non-overlapping patches whose coherence R exceeds the threshold."""
    img = to_luma(image)
    h, w = img.shape
    if h < patch_size or w < patch_size:
        raise ImageTooSmall(f"{w}x{h} image is smaller than a {patch_size}px patch")
    scores = []
    for y in range(0, h - patch_size + 1, patch_size):
        for x in range(0, w - patch_size + 1, patch_size):
            s1, _, R = patch_coherence(img[y:y + patch_size, x:x + patch_size])
            if R > anisotropy_threshold:
                scores.append(s1 * R)
    q = math.fsum(scores) / len(scores) if scores else 0.0
    return SharpnessScore(q, patch_size, anisotropy_threshold)


def delta_q(reference, test, patch_size: int = 8, anisotropy_threshold: float = 0.5) -> float:
    q_ref = q_metric(reference, patch_size, anisotropy_threshold).q
    q_hat = q_metric(test, patch_size, anisotropy_threshold).q
    return abs(q_ref - q_hat)
