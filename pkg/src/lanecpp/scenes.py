"""Synthetic ground-truth scenes.

Lanes are constant-width lateral offsets of a polynomial centerline,
projected onto a parametric surface z = a*y + b*y^2 + c*x, with optional
per-lane occlusion intervals (points flagged invisible but kept), Gaussian
noise, and merge/split topologies where the outermost lane converges into
its neighbor (giving the wide pair-distance spread that the prior
indicator is designed to reject).
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import InvalidConfigError
from .lift import CameraModel

CATEGORIES = ("white-solid", "white-dashed", "yellow-solid", "road-edge")

DEFAULT_CAMERA = CameraModel(
    fx=500.0, fy=500.0, cx=240.0, cy=180.0, height=1.5, pitch=0.0,
    image_size=(360, 480),
)


def category_index(name: str) -> int:
    try:
        return CATEGORIES.index(name)
    except ValueError:
        raise InvalidConfigError(
            f"unknown category {name!r}; known: {CATEGORIES}"
        ) from None


@dataclass
class GtLane:
    """Ordered 3D polyline with per-point visibility flags and a category."""

    points: np.ndarray      # (N, 3), sorted by y
    visibility: np.ndarray  # (N,) 0/1
    category: str = CATEGORIES[0]

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        self.visibility = np.asarray(self.visibility, dtype=np.int8)
        if self.points.ndim != 2 or self.points.shape[1] != 3:
            raise InvalidConfigError("lane points must be (N, 3)")
        if self.visibility.shape != (self.points.shape[0],):
            raise InvalidConfigError("visibility flags must match point count")

    @property
    def category_idx(self) -> int:
        return category_index(self.category)

    def visible_points(self) -> np.ndarray:
        return self.points[self.visibility > 0]


@dataclass(frozen=True)
class SceneSpec:
    n_lanes: int = 3
    lane_width: float = 3.5
    # x(y) = c0 + c1*(y - y0) + c2*(y - y0)^2 along the centerline
    centerline: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    # z(x, y) = a*y + b*y^2 + c*x
    surface: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    # (lane index, y_start, y_end) triples; points inside are invisible
    occlusions: Tuple[Tuple[int, float, float], ...] = ()
    noise_sigma: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    topology: str = "parallel"  # parallel | merge | split
    merge_y: float = 60.0
    categories: Tuple[str, ...] = ()
    n_points: int = 20
    y_range: Tuple[float, float] = (3.0, 103.0)
    seed: int = 0

    def __post_init__(self):
        if self.n_lanes < 1:
            raise InvalidConfigError("need at least one lane")
        if self.lane_width <= 0:
            raise InvalidConfigError("lane width must be positive")
        if self.topology not in ("parallel", "merge", "split"):
            raise InvalidConfigError(f"unknown topology {self.topology!r}")
        if self.n_points < 2:
            raise InvalidConfigError("need at least two points per lane")
        for cat in self.categories:
            category_index(cat)


@dataclass
class SceneGroundTruth:
    lanes: List[GtLane]
    camera: CameraModel = DEFAULT_CAMERA
    surface: Tuple[float, float, float] = (0.0, 0.0, 0.0)

    def lane_points(self) -> List[np.ndarray]:
        return [lane.points for lane in self.lanes]


def _surface_z(coeffs, x, y):
    a, b, c = coeffs
    return a * y + b * y * y + c * x


def gen_scene(spec: SceneSpec) -> SceneGroundTruth:
    """Deterministic scene synthesis from a spec (same spec, same scene)."""
    rng = np.random.default_rng(spec.seed)
    y0, y1 = spec.y_range
    y = np.linspace(y0, y1, spec.n_points)
    c0, c1, c2 = spec.centerline
    dy = y - y0
    x_c = c0 + c1 * dy + c2 * dy * dy
    slope = c1 + 2.0 * c2 * dy
    inv_norm = 1.0 / np.sqrt(1.0 + slope * slope)
    # Unit normal of the centerline in the x-y plane, pointing +x-ward.
    n_x = inv_norm
    n_y = -slope * inv_norm

    offsets = (np.arange(spec.n_lanes) - (spec.n_lanes - 1) / 2.0) * spec.lane_width

    lanes = []
    for k in range(spec.n_lanes):
        off = np.full(spec.n_points, offsets[k])
        if spec.topology in ("merge", "split") and spec.n_lanes >= 2 and k == spec.n_lanes - 1:
            target = offsets[k - 1]
            if spec.topology == "merge":
                blend = np.clip((y - y0) / max(spec.merge_y - y0, 1e-9), 0.0, 1.0)
            else:
                blend = 1.0 - np.clip(
                    (y - spec.merge_y) / max(y1 - spec.merge_y, 1e-9), 0.0, 1.0
                )
            off = offsets[k] + (target - offsets[k]) * blend
        px = x_c + off * n_x
        py = y + off * n_y
        pz = _surface_z(spec.surface, px, py)
        pts = np.stack([px, py, pz], axis=1)
        if any(s > 0 for s in spec.noise_sigma):
            pts = pts + rng.normal(size=pts.shape) * np.asarray(spec.noise_sigma)
        vis = np.ones(spec.n_points, dtype=np.int8)
        for lane_idx, occ_lo, occ_hi in spec.occlusions:
            if lane_idx == k:
                vis[(y >= occ_lo) & (y <= occ_hi)] = 0
        cat = (
            spec.categories[k % len(spec.categories)]
            if spec.categories
            else CATEGORIES[k % len(CATEGORIES)]
        )
        lanes.append(GtLane(pts, vis, cat))
    return SceneGroundTruth(lanes=lanes, camera=DEFAULT_CAMERA, surface=spec.surface)
