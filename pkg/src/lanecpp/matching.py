"""Proposal-to-ground-truth assignment.

Cost is a convex combination of a normalized unilateral chamfer distance
(mean distance of ground-truth points to the sampled proposal, scaled by a
normalization distance and clamped into [0, 1]) and a cosine-distance
orientation cost between the proposal direction and the ground-truth chord.
All proposals under the threshold are assigned to a ground-truth line, but
a proposal serves at most one line (lowest cost wins, ties broken by the
lower line index).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from .errors import InvalidInputError
from .lanes import LaneProposal


@dataclass(frozen=True)
class MatchConfig:
    lambda_ucd: float = 0.5
    lambda_cosd: float = 0.5
    l_thr: float = 0.4
    d_max: float = 10.0          # m, chamfer normalization scale
    n_proposal_samples: int = 100


def _proposal_samples(proposal: LaneProposal, n: int) -> np.ndarray:
    a = proposal.base_control_points[0]
    b = proposal.base_control_points[-1]
    frac = np.linspace(0.0, 1.0, n)[:, None]
    return a[None, :] + frac * (b - a)[None, :]


def ucd(proposal: LaneProposal, gt_points, cfg: MatchConfig = MatchConfig()) -> float:
    """Unilateral chamfer distance in [0, 1]: mean distance from ground-truth
    points to the nearest sampled proposal point, over d_max, clamped."""
    gt = np.asarray(gt_points, dtype=np.float64)
    if gt.size == 0:
        raise InvalidInputError("ucd needs at least one ground-truth point")
    samples = _proposal_samples(proposal, cfg.n_proposal_samples)
    d = np.linalg.norm(gt[:, None, :] - samples[None, :, :], axis=2)
    return float(min(d.min(axis=1).mean() / cfg.d_max, 1.0))


def cosd(proposal: LaneProposal, gt_points) -> float:
    """Orientation cost in [0, 1]: (1 - cos angle)/2 between the proposal
    direction and the ground-truth chord (last point minus first)."""
    gt = np.asarray(gt_points, dtype=np.float64)
    if gt.shape[0] < 2:
        raise InvalidInputError("cosd needs at least two ground-truth points")
    chord = gt[-1] - gt[0]
    n = np.linalg.norm(chord)
    if n < 1e-9:
        raise InvalidInputError("degenerate ground-truth chord")
    cos = float(proposal.direction() @ (chord / n))
    return 0.5 * (1.0 - cos)


def match_cost(proposal: LaneProposal, gt_points, cfg: MatchConfig) -> float:
    return cfg.lambda_ucd * ucd(proposal, gt_points, cfg) + cfg.lambda_cosd * cosd(
        proposal, gt_points
    )


def cost_matrix(
    proposals: Sequence[LaneProposal], gt_lanes: Sequence, cfg: MatchConfig
) -> np.ndarray:
    m = np.empty((len(proposals), len(gt_lanes)))
    for i, p in enumerate(proposals):
        for j, gt in enumerate(gt_lanes):
            m[i, j] = match_cost(p, gt, cfg)
    return m


def assign(
    proposals: Sequence[LaneProposal],
    gt_lanes: Sequence,
    cfg: MatchConfig = MatchConfig(),
) -> List[Tuple[int, int]]:
    """(proposal index, ground-truth index) pairs: every proposal whose cost
    to some line is under the threshold is assigned to its cheapest such
    line. Lines with no proposal under the threshold stay unmatched."""
    if len(proposals) == 0 or len(gt_lanes) == 0:
        return []
    costs = cost_matrix(proposals, gt_lanes, cfg)
    pairs = []
    for i in range(costs.shape[0]):
        under = np.nonzero(costs[i] < cfg.l_thr)[0]
        if under.size == 0:
            continue
        best = under[np.argmin(costs[i, under])]
        pairs.append((i, int(best)))
    return pairs
