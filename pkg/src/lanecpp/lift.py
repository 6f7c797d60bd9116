"""Camera-to-BEV feature lifting over ground-surface hypotheses.

Image cells cast pinhole rays into the ego frame (x lateral, y forward,
z up); each ray is intersected with a small set of candidate ground planes
(pitch-only rotations through the origin). The resulting frustum point
cloud carries the cell's feature vector, the intersection height and the
cell's depth-distribution weight, and is splatted into a metric BEV grid
by per-cell weighted averaging, so the accumulated height channel is a
surface height estimate.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
from scipy.interpolate import LinearNDInterpolator, interp1d
from scipy.spatial import QhullError

from .errors import InvalidConfigError, InvalidInputError

MAX_DEPTH = 200.0

# Pitch-angle sets (degrees) for the supported hypothesis counts.
HYPOTHESIS_ANGLE_SETS = {
    1: (0.0,),
    3: (-2.0, 0.0, 2.0),
    5: (-2.0, -1.0, 0.0, 1.0, 2.0),
    15: (-5.0, -2.0, -1.7, -1.3, -1.0, -0.7, -0.3, 0.0,
         0.3, 0.7, 1.0, 1.3, 1.7, 2.0, 5.0),
    27: (-10.0, -8.5, -7.0, -5.8, -4.5, -3.3, -2.0,
         -1.7, -1.4, -1.0, -0.8, -0.6, -0.3, 0.0,
         0.3, 0.6, 0.8, 1.0, 1.4, 1.7, 2.0,
         3.3, 4.5, 5.8, 7.0, 8.5, 10.0),
}


@dataclass(frozen=True)
class CameraModel:
    """Pinhole camera at (0, 0, height) in the ego frame, optical axis along
    +y, pitched downward by `pitch` radians. Intrinsics are in full-image
    pixel units of `image_size` = (H_img, W_img)."""

    fx: float
    fy: float
    cx: float
    cy: float
    height: float
    pitch: float = 0.0
    image_size: Tuple[int, int] = (360, 480)

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise InvalidConfigError("focal lengths must be positive")

    def rays(self, u_px, v_px):
        """Ego-frame ray directions (not normalized) through pixel coords."""
        xn = (np.asarray(u_px, dtype=np.float64) - self.cx) / self.fx
        yn = (np.asarray(v_px, dtype=np.float64) - self.cy) / self.fy
        cp, sp = np.cos(self.pitch), np.sin(self.pitch)
        # Camera frame (right, down, forward) -> ego (x, y, z) with pitch.
        dx = xn
        dy = cp - yn * sp
        dz = -sp - yn * cp
        return np.stack(np.broadcast_arrays(dx, dy, dz), axis=-1)


@dataclass(frozen=True)
class SurfaceHypothesisSet:
    """Candidate ground planes z = y * tan(angle), one per pitch angle."""

    pitch_angles_deg: Tuple[float, ...]

    def __post_init__(self):
        angles = tuple(float(a) for a in self.pitch_angles_deg)
        if 0.0 not in angles:
            raise InvalidConfigError("hypothesis set must include the flat plane")
        if list(angles) != sorted(angles):
            raise InvalidConfigError("pitch angles must be sorted")
        object.__setattr__(self, "pitch_angles_deg", angles)

    def __len__(self):
        return len(self.pitch_angles_deg)


def hypothesis_planes(n: int) -> SurfaceHypothesisSet:
    if n not in HYPOTHESIS_ANGLE_SETS:
        raise InvalidConfigError(
            f"unsupported hypothesis count {n}; choose from "
            f"{sorted(HYPOTHESIS_ANGLE_SETS)}"
        )
    return SurfaceHypothesisSet(HYPOTHESIS_ANGLE_SETS[n])


def _intersect(origin_z, dirs, tan_angle, max_depth=MAX_DEPTH):
    """Ray-plane intersection with z = y*tan(angle) for an array of ray
    directions; returns (points, hit_mask)."""
    dy, dz = dirs[..., 1], dirs[..., 2]
    denom = dy * tan_angle - dz
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(np.abs(denom) > 1e-12, origin_z / denom, -1.0)
    pts = s[..., None] * dirs
    pts[..., 2] += origin_z
    y = pts[..., 1]
    hit = (s > 0) & (y > 0) & (y <= max_depth)
    return pts, hit


def ray_plane_intersect(cam: CameraModel, pixel, plane_angle_deg: float,
                        max_depth: float = MAX_DEPTH) -> Optional[np.ndarray]:
    """Intersection of the ray through `pixel` (u, v) with the hypothesis
    plane, in the ego frame; None when the ray misses (parallel, behind the
    camera, or beyond max_depth)."""
    u, v = pixel
    dirs = cam.rays(np.array([u]), np.array([v]))
    pts, hit = _intersect(cam.height, dirs, np.tan(np.deg2rad(plane_angle_deg)),
                          max_depth)
    return pts[0] if hit[0] else None


@dataclass
class FrustumCloud:
    """Flat point cloud: positions, per-point features, weights and the
    source (u, v, s) cell of each point."""

    xyz: np.ndarray      # (N, 3)
    feats: np.ndarray    # (N, C)
    weights: np.ndarray  # (N,)
    source: np.ndarray   # (N, 3) int: column, row, hypothesis

    def __len__(self):
        return self.xyz.shape[0]


def lift_features(
    featmap: np.ndarray,
    depth_dist: np.ndarray,
    cam: CameraModel,
    planes: SurfaceHypothesisSet,
    max_depth: float = MAX_DEPTH,
) -> FrustumCloud:
    """Lift an (H, W, C) feature map into 3D using an (H, W, S) depth
    distribution over the surface hypotheses.

    Every cell contributes one point per hit hypothesis, weighted by the
    depth distribution; when a ray misses some hypotheses its remaining
    weights are renormalized, and rays that hit nothing (or whose surviving
    weight is zero) contribute no points.
    """
    featmap = np.asarray(featmap, dtype=np.float64)
    depth_dist = np.asarray(depth_dist, dtype=np.float64)
    if featmap.ndim != 3 or depth_dist.ndim != 3:
        raise InvalidInputError("featmap must be (H, W, C), depth_dist (H, W, S)")
    h, w, _ = featmap.shape
    if depth_dist.shape[:2] != (h, w):
        raise InvalidInputError("featmap and depth_dist grids disagree")
    if depth_dist.shape[2] != len(planes):
        raise InvalidInputError(
            f"depth distribution has {depth_dist.shape[2]} channels for "
            f"{len(planes)} hypotheses"
        )
    sums = depth_dist.sum(axis=2)
    if np.max(np.abs(sums - 1.0)) > 1e-6:
        raise InvalidInputError("depth distribution rows must sum to 1")

    h_img, w_img = cam.image_size
    us = (np.arange(w) + 0.5) * (w_img / w)
    vs = (np.arange(h) + 0.5) * (h_img / h)
    uu, vv = np.meshgrid(us, vs)  # (H, W)
    dirs = cam.rays(uu, vv)

    n_hyp = len(planes)
    pts = np.empty((h, w, n_hyp, 3))
    hits = np.empty((h, w, n_hyp), dtype=bool)
    for s, ang in enumerate(planes.pitch_angles_deg):
        pts[:, :, s, :], hits[:, :, s] = _intersect(
            cam.height, dirs, np.tan(np.deg2rad(ang)), max_depth
        )

    weights = np.where(hits, depth_dist, 0.0)
    ray_sum = weights.sum(axis=2, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        weights = np.where(ray_sum > 0.0, weights / ray_sum, 0.0)

    keep = hits & (weights > 0.0)
    vi, ui, si = np.nonzero(keep)
    return FrustumCloud(
        xyz=pts[vi, ui, si],
        feats=featmap[vi, ui],
        weights=weights[vi, ui, si],
        source=np.stack([ui, vi, si], axis=1),
    )


@dataclass(frozen=True)
class BevGridConfig:
    """Metric top-view grid: nx lateral cells over x_range, ny longitudinal
    cells over y_range."""

    x_range: Tuple[float, float] = (-10.0, 10.0)
    y_range: Tuple[float, float] = (3.0, 103.0)
    nx: int = 26
    ny: int = 16

    @property
    def cell_size(self) -> Tuple[float, float]:
        return (
            (self.x_range[1] - self.x_range[0]) / self.nx,
            (self.y_range[1] - self.y_range[0]) / self.ny,
        )

    def cell_centers(self):
        dx, dy = self.cell_size
        xs = self.x_range[0] + dx * (np.arange(self.nx) + 0.5)
        ys = self.y_range[0] + dy * (np.arange(self.ny) + 0.5)
        return xs, ys

    def cell_index(self, xy: np.ndarray):
        """(iu, iv, inside) for an (N, 2) array of planar positions."""
        dx, dy = self.cell_size
        iu = np.floor((xy[:, 0] - self.x_range[0]) / dx).astype(int)
        iv = np.floor((xy[:, 1] - self.y_range[0]) / dy).astype(int)
        inside = (iu >= 0) & (iu < self.nx) & (iv >= 0) & (iv < self.ny)
        return iu, iv, inside


@dataclass
class BevGrid:
    cfg: BevGridConfig
    feats: np.ndarray       # (nx, ny, C)
    z: np.ndarray           # (nx, ny)
    weight_sum: np.ndarray  # (nx, ny)
    valid: np.ndarray       # (nx, ny) bool


def splat_to_bev(cloud: FrustumCloud, cfg: BevGridConfig,
                 n_channels: Optional[int] = None) -> BevGrid:
    """Weighted mean of features and height per cell; cells that receive no
    weight are marked invalid."""
    c = cloud.feats.shape[1] if len(cloud) else (n_channels or 0)
    feats = np.zeros((cfg.nx, cfg.ny, c))
    z = np.zeros((cfg.nx, cfg.ny))
    wsum = np.zeros((cfg.nx, cfg.ny))
    if len(cloud):
        iu, iv, inside = cfg.cell_index(cloud.xyz[:, :2])
        iu, iv = iu[inside], iv[inside]
        w = cloud.weights[inside]
        np.add.at(wsum, (iu, iv), w)
        np.add.at(z, (iu, iv), w * cloud.xyz[inside, 2])
        np.add.at(feats, (iu, iv), w[:, None] * cloud.feats[inside])
    valid = wsum > 0.0
    div = np.where(valid, wsum, 1.0)
    z = np.where(valid, z / div, 0.0)
    feats = feats / div[:, :, None]
    return BevGrid(cfg, feats, z, wsum, valid)


def surface_gt_from_lanes(lanes, cfg: BevGridConfig,
                          band: float = 0.5) -> Tuple[np.ndarray, np.ndarray]:
    """Reference surface height per BEV cell by linear interpolation of lane
    points over their planar convex hull; cells outside the hull are masked
    out. Collinear point sets fall back to interpolation along the line
    within a `band`-meter corridor.

    `lanes` is a sequence of (N_i, 3) point arrays.
    """
    pts = np.concatenate([np.asarray(l, dtype=np.float64) for l in lanes], axis=0)
    if pts.shape[0] < 2:
        raise InvalidInputError("surface ground truth needs at least 2 points")
    xs, ys = cfg.cell_centers()
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    try:
        interp = LinearNDInterpolator(pts[:, :2], pts[:, 2])
        zi = interp(np.stack([gx.ravel(), gy.ravel()], axis=1)).reshape(cfg.nx, cfg.ny)
        mask = ~np.isnan(zi)
        return np.where(mask, zi, 0.0), mask
    except QhullError:
        return _collinear_band_surface(pts, gx, gy, band)


def _collinear_band_surface(pts, gx, gy, band):
    origin = pts[:, :2].mean(axis=0)
    centered = pts[:, :2] - origin
    # Dominant direction of the degenerate point set.
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    direction = vt[0]
    s_pts = centered @ direction
    order = np.argsort(s_pts)
    s_sorted, z_sorted = s_pts[order], pts[order, 2]
    cells = np.stack([gx.ravel() - origin[0], gy.ravel() - origin[1]], axis=1)
    s_cell = cells @ direction
    perp = np.abs(cells @ np.array([-direction[1], direction[0]]))
    inside = (perp <= band) & (s_cell >= s_sorted[0]) & (s_cell <= s_sorted[-1])
    z_line = interp1d(s_sorted, z_sorted, assume_sorted=True,
                      bounds_error=False, fill_value=(z_sorted[0], z_sorted[-1]))
    zi = np.where(inside, z_line(s_cell), 0.0).reshape(gx.shape)
    return zi, inside.reshape(gx.shape)


def surface_loss(bev: BevGrid, gt_z: np.ndarray, mask: np.ndarray) -> float:
    """Mean absolute height error over cells that are both masked-in and
    valid, normalized by the full cell count nx*ny."""
    gt_z = np.asarray(gt_z, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if gt_z.shape != bev.z.shape or mask.shape != bev.z.shape:
        raise InvalidInputError(
            f"shape mismatch: bev {bev.z.shape}, gt {gt_z.shape}, mask {mask.shape}"
        )
    use = mask & bev.valid
    return float(np.sum(np.abs(bev.z - gt_z)[use]) / (bev.cfg.nx * bev.cfg.ny))
