"""Training losses: visibility BCE, weighted-L1 regression, focal presence
and category classification, and their weighted combination.

All terms accept hypotheses whose parameters are plain arrays or Duals;
probabilities are clamped away from 0/1 before any log.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import autodiff as ad
from .errors import InvalidInputError
from .lanes import LaneHypothesis, project_to_proposal, realize_curve, visibility_spline
from .lift import BevGrid, surface_loss
from .priors import PriorConfig, RealizedLane, order_lanes, prior_loss, realize_lane
from .scenes import SceneGroundTruth
from .spline import curve_eval

PROB_EPS = 1e-7


@dataclass(frozen=True)
class LossWeights:
    lambda_pr: float = 20.0
    lambda_cat: float = 2.0
    lambda_reg: float = 0.5
    lambda_vis: float = 1.0
    lambda_prior: float = 1.0
    lambda_surf: float = 0.1
    gamma_f: float = 6.0
    w_reg: Tuple[float, float, float] = (2.0, 10.0, 1.0)
    n_gt_points: int = 20


@dataclass
class MatchedTarget:
    """A ground-truth lane prepared for one assigned hypothesis: point
    coordinates, visibility flags, category index, and the curve arguments
    of the points' orthogonal feet on the hypothesis' proposal."""

    gt_index: int
    points: np.ndarray      # (N, 3)
    visibility: np.ndarray  # (N,) float 0/1
    category_idx: int
    t: np.ndarray           # (N,)


def make_target(h: LaneHypothesis, gt_lane, gt_index: int = 0) -> MatchedTarget:
    pts = np.asarray(gt_lane.points, dtype=np.float64)
    vis = np.asarray(gt_lane.visibility, dtype=np.float64)
    return MatchedTarget(
        gt_index=gt_index,
        points=pts,
        visibility=vis,
        category_idx=gt_lane.category_idx,
        t=project_to_proposal(h.proposal, pts),
    )


def _clamp_prob(p):
    return ad.clip(p, PROB_EPS, 1.0 - PROB_EPS)


def visibility_loss(h: LaneHypothesis, target: MatchedTarget):
    """Mean binary cross-entropy of sigmoid(v(t_p)) against the flags; every
    ground-truth point participates, visible or not."""
    v = curve_eval(visibility_spline(h), target.t)
    p = _clamp_prob(ad.sigmoid(v))
    flags = target.visibility
    bce = -(flags * ad.log(p) + (1.0 - flags) * ad.log(1.0 - p))
    return ad.amean(bce)


def regression_loss(h: LaneHypothesis, target: MatchedTarget,
                    w_reg=(2.0, 10.0, 1.0)):
    """Visibility-masked weighted L1 between the curve at the projected
    arguments and the ground-truth points, averaged over all points."""
    f = curve_eval(realize_curve(h), target.t)
    diff = ad.absolute(f - target.points) * np.asarray(w_reg)
    per_point = ad.asum(diff, axis=-1) * target.visibility
    return ad.amean(per_point)


def _focal_term(p, gamma_f):
    # -(1-p)^gamma * log(p); p already clamped away from 0 and 1
    return -(ad.power(1.0 - p, gamma_f) * ad.log(p))


def focal_presence_loss(
    hypotheses: Sequence[LaneHypothesis],
    assignments: Sequence[Tuple[int, int]],
    gamma_f: float = 6.0,
):
    """Two-sided focal BCE over all proposals; a proposal's target presence
    is 1 exactly when it is assigned."""
    assigned = {i for i, _ in assignments}
    logits = ad.stack([h.presence_logit for h in hypotheses])
    p = _clamp_prob(ad.sigmoid(logits))
    gt = np.array([1.0 if i in assigned else 0.0 for i in range(len(hypotheses))])
    pos = _focal_term(p, gamma_f) * gt
    neg = _focal_term(1.0 - p, gamma_f) * (1.0 - gt)
    return ad.amean(pos + neg)


def focal_category_loss(
    hypotheses: Sequence[LaneHypothesis],
    assignments: Sequence[Tuple[int, int]],
    gt_categories: Sequence[int],
    gamma_f: float = 6.0,
):
    """One-sided focal term on the true-class softmax probability of each
    assigned proposal, averaged over classes and over all proposals.
    `gt_categories` maps ground-truth index to class index."""
    if not assignments:
        return 0.0
    m = len(hypotheses)
    total = 0.0
    for i, j in assignments:
        h = hypotheses[i]
        p = _clamp_prob(ad.softmax(h.category_logits))
        n_cat = ad.value(p).shape[0]
        total = total + _focal_term(p[gt_categories[j]], gamma_f) / n_cat
    return total / m


@dataclass
class TotalLossContext:
    """Fixed per-scene data reused across optimizer steps: assignments,
    prepared targets, and the constant surface term."""

    assignments: List[Tuple[int, int]]
    targets: Dict[int, MatchedTarget]          # proposal index -> target
    representatives: List[int]                 # proposal indices for priors
    surf_value: float = 0.0


def build_context(
    scene: SceneGroundTruth,
    hypotheses: Sequence[LaneHypothesis],
    assignments: Sequence[Tuple[int, int]],
    costs: Optional[np.ndarray] = None,
    bev: Optional[BevGrid] = None,
    surface_gt: Optional[Tuple[np.ndarray, np.ndarray]] = None,
) -> TotalLossContext:
    targets = {
        i: make_target(hypotheses[i], scene.lanes[j], j) for i, j in assignments
    }
    # One representative hypothesis per ground-truth lane for the priors:
    # the assigned proposal with the lowest matching cost.
    reps: Dict[int, int] = {}
    for i, j in assignments:
        if j not in reps:
            reps[j] = i
        elif costs is not None and costs[i, j] < costs[reps[j], j]:
            reps[j] = i
    surf_value = 0.0
    if bev is not None and surface_gt is not None:
        surf_value = surface_loss(bev, *surface_gt)
    return TotalLossContext(
        assignments=list(assignments),
        targets=targets,
        representatives=sorted(reps.values()),
        surf_value=surf_value,
    )


def total_loss(
    hypotheses: Sequence[LaneHypothesis],
    ctx: TotalLossContext,
    weights: LossWeights = LossWeights(),
    prior_cfg: PriorConfig = PriorConfig(),
):
    """Weighted sum of all terms plus a per-term breakdown (plain floats).

    Regression and visibility average per-line losses over the full proposal
    count with assigned lines contributing; priors run on one realized
    representative lane per ground-truth line, ordered left to right.
    """
    m = len(hypotheses)
    reg = 0.0
    vis = 0.0
    for i, _ in ctx.assignments:
        target = ctx.targets[i]
        reg = reg + regression_loss(hypotheses[i], target, weights.w_reg)
        vis = vis + visibility_loss(hypotheses[i], target)
    reg = reg / m
    vis = vis / m

    pr = focal_presence_loss(hypotheses, ctx.assignments, weights.gamma_f)
    cat = focal_category_loss(
        hypotheses, ctx.assignments, _gt_categories(ctx), weights.gamma_f
    )

    prior = 0.0
    if weights.lambda_prior != 0.0 and ctx.representatives:
        lanes = [realize_lane(hypotheses[i]) for i in ctx.representatives]
        lanes = [lanes[k] for k in order_lanes(lanes)]
        prior = prior_loss(lanes, prior_cfg)

    total = (
        weights.lambda_pr * pr
        + weights.lambda_cat * cat
        + weights.lambda_reg * reg
        + weights.lambda_vis * vis
        + weights.lambda_prior * prior
        + weights.lambda_surf * ctx.surf_value
    )
    breakdown = {
        "presence": float(ad.value(pr)),
        "category": float(ad.value(cat)),
        "regression": float(ad.value(reg)),
        "visibility": float(ad.value(vis)),
        "prior": float(ad.value(prior)),
        "surface": float(ctx.surf_value),
        "total": float(ad.value(total)),
    }
    return total, breakdown


def _gt_categories(ctx: TotalLossContext) -> Dict[int, int]:
    return {t.gt_index: t.category_idx for t in ctx.targets.values()}
