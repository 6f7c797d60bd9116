"""Lane-set evaluation: matching on a uniform depth grid, F1, and
near/far-range geometric errors.

Predicted and ground-truth lanes are resampled by linear interpolation at
uniform y positions; lanes are paired one-to-one by minimum mean pointwise
(x, z) distance over the jointly covered grid. A pair counts as a true
positive when at least the coverage fraction of its joint points lies
within the distance threshold. Geometric errors are pooled over the true
positives' joint points, split at the near/far boundary.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from itertools import permutations
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import InvalidInputError

EXHAUSTIVE_LIMIT = 6


@dataclass(frozen=True)
class EvalConfig:
    y_min: float = 0.0
    y_max: float = 100.0
    y_step: float = 1.0
    dist_threshold: float = 1.5     # m
    coverage_fraction: float = 0.75
    near_range: Tuple[float, float] = (0.0, 40.0)   # [lo, hi)
    far_range: Tuple[float, float] = (40.0, 100.0)  # [lo, hi]

    def y_grid(self) -> np.ndarray:
        n = int(round((self.y_max - self.y_min) / self.y_step)) + 1
        return self.y_min + self.y_step * np.arange(n)


@dataclass
class EvalResult:
    f1: float
    precision: float
    recall: float
    category_accuracy: float
    x_near: float
    x_far: float
    z_near: float
    z_far: float
    n_tp: int = 0
    n_pred: int = 0
    n_gt: int = 0

    def as_row(self) -> List[float]:
        return [self.f1, self.precision, self.recall, self.category_accuracy,
                self.x_near, self.x_far, self.z_near, self.z_far]


@dataclass
class EvalLane:
    """Polyline input to the evaluator; visibility flags select the points
    that define the lane's covered span."""

    points: np.ndarray
    visibility: Optional[np.ndarray] = None
    category: Optional[str] = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.visibility is None:
            self.visibility = np.ones(self.points.shape[0], dtype=np.int8)
        else:
            self.visibility = np.asarray(self.visibility, dtype=np.int8)


def sample_at_y(points: np.ndarray, y_grid: np.ndarray,
                visibility: Optional[np.ndarray] = None):
    """(x, z, covered) at each grid depth by linear interpolation over the
    (visible) points; covered is False outside the lane's y span."""
    pts = np.asarray(points, dtype=np.float64)
    if visibility is not None:
        pts = pts[np.asarray(visibility) > 0]
    if pts.shape[0] < 2:
        raise InvalidInputError("need at least two (visible) points to sample")
    order = np.argsort(pts[:, 1], kind="stable")
    pts = pts[order]
    y = pts[:, 1]
    covered = (y_grid >= y[0]) & (y_grid <= y[-1])
    x = np.interp(y_grid, y, pts[:, 0])
    z = np.interp(y_grid, y, pts[:, 2])
    return x, z, covered


def _pair_cost(sa, sb) -> Tuple[float, np.ndarray, np.ndarray]:
    """(mean distance, joint coverage mask, per-point distance) of two
    sampled lanes; cost is inf without joint coverage."""
    xa, za, ca = sa
    xb, zb, cb = sb
    joint = ca & cb
    if not np.any(joint):
        return np.inf, joint, np.zeros(0)
    d = np.hypot(xa - xb, za - zb)
    return float(d[joint].mean()), joint, d


def greedy_pairing(costs: np.ndarray) -> List[Tuple[int, int]]:
    """Ascending-cost greedy one-to-one pairing over finite entries."""
    order = np.argsort(costs, axis=None, kind="stable")
    used_a = set()
    used_b = set()
    pairs = []
    for flat in order:
        i, j = divmod(int(flat), costs.shape[1])
        if not np.isfinite(costs[i, j]) or i in used_a or j in used_b:
            continue
        pairs.append((i, j))
        used_a.add(i)
        used_b.add(j)
    return sorted(pairs)


def exhaustive_pairing(costs: np.ndarray) -> List[Tuple[int, int]]:
    """Optimal one-to-one pairing by enumeration: maximize the number of
    finite-cost pairs, then minimize the total cost."""
    n_a, n_b = costs.shape
    best: Tuple[int, float, List[Tuple[int, int]]] = (0, 0.0, [])
    small, large = (n_a, n_b) if n_a <= n_b else (n_b, n_a)
    for perm in permutations(range(large), small):
        pairs = []
        total = 0.0
        for s, l in enumerate(perm):
            i, j = (s, l) if n_a <= n_b else (l, s)
            if np.isfinite(costs[i, j]):
                pairs.append((i, j))
                total += costs[i, j]
        key = (len(pairs), -total)
        if key > (best[0], -best[1]):
            best = (len(pairs), total, sorted(pairs))
    return best[2]


def evaluate(pred_lanes: Sequence[EvalLane], gt_lanes: Sequence[EvalLane],
             cfg: EvalConfig = EvalConfig()) -> EvalResult:
    """Match predictions to ground truth and compute F1, category accuracy
    and near/far x/z errors.

    An empty prediction set against an empty ground truth counts as a
    perfect result; exhaustive optimal pairing is used for small scenes,
    greedy pairing beyond that.
    """
    n_pred, n_gt = len(pred_lanes), len(gt_lanes)
    if n_pred == 0 and n_gt == 0:
        return EvalResult(100.0, 100.0, 100.0, 100.0, 0.0, 0.0, 0.0, 0.0,
                          n_tp=0, n_pred=0, n_gt=0)
    y_grid = cfg.y_grid()
    samples_p = [sample_at_y(l.points, y_grid, l.visibility) for l in pred_lanes]
    samples_g = [sample_at_y(l.points, y_grid, l.visibility) for l in gt_lanes]

    costs = np.full((n_pred, n_gt), np.inf)
    joints = {}
    dists = {}
    for i, sp in enumerate(samples_p):
        for j, sg in enumerate(samples_g):
            costs[i, j], joints[i, j], dists[i, j] = _pair_cost(sp, sg)

    if max(n_pred, n_gt) <= EXHAUSTIVE_LIMIT:
        pairs = exhaustive_pairing(costs)
    else:
        pairs = greedy_pairing(costs)

    tp_pairs = []
    for i, j in pairs:
        joint = joints[i, j]
        d = dists[i, j]
        if np.mean(d[joint] < cfg.dist_threshold) >= cfg.coverage_fraction:
            tp_pairs.append((i, j))

    n_tp = len(tp_pairs)
    precision = 100.0 * n_tp / n_pred if n_pred else 0.0
    recall = 100.0 * n_tp / n_gt if n_gt else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0

    x_err = {"near": [], "far": []}
    z_err = {"near": [], "far": []}
    cat_hits = []
    for i, j in tp_pairs:
        joint = joints[i, j]
        xa, za, _ = samples_p[i]
        xb, zb, _ = samples_g[j]
        for name, (lo, hi) in (("near", cfg.near_range), ("far", cfg.far_range)):
            sel = joint & (y_grid >= lo) & (
                (y_grid < hi) if name == "near" else (y_grid <= hi)
            )
            if np.any(sel):
                x_err[name].append(np.abs(xa - xb)[sel])
                z_err[name].append(np.abs(za - zb)[sel])
        if pred_lanes[i].category is not None and gt_lanes[j].category is not None:
            cat_hits.append(pred_lanes[i].category == gt_lanes[j].category)

    def pooled(chunks):
        return float(np.concatenate(chunks).mean()) if chunks else 0.0

    cat_acc = 100.0 * float(np.mean(cat_hits)) if cat_hits else 0.0
    return EvalResult(
        f1=f1,
        precision=precision,
        recall=recall,
        category_accuracy=cat_acc,
        x_near=pooled(x_err["near"]),
        x_far=pooled(x_err["far"]),
        z_near=pooled(z_err["near"]),
        z_far=pooled(z_err["far"]),
        n_tp=n_tp,
        n_pred=n_pred,
        n_gt=n_gt,
    )
