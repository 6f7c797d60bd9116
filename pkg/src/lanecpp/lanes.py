"""Straight line proposals and the constrained lane parametrization.

A proposal is a fixed straight segment in the x-y plane; a hypothesis
deflects the proposal's control points along the proposal's planar normal
(lateral, one parameter per control point) and along +z (vertical), which
keeps two degrees of freedom per control point and makes the deflection
orthogonal to the proposal at every point. Visibility is a scalar spline
over the same knots whose sigmoid gives the per-point visibility
probability.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Any, List, Optional, Tuple

import numpy as np

from . import autodiff as ad
from .basis import basis_matrix_nocache, make_clamped_knots
from .errors import InvalidConfigError
from .spline import BSplineCurve, curve_eval

BEV_X_RANGE = (-10.0, 10.0)
BEV_Y_RANGE = (3.0, 103.0)
DEFAULT_N_CTRL = 10


@dataclass(frozen=True)
class LaneProposal:
    """Straight segment at z=0 with K evenly spaced base control points.

    n_xy is the unit in-plane normal of the segment (deflection direction
    for the lateral parameters); the vertical deflection direction is +z
    scaled by n_z.
    """

    base_control_points: np.ndarray  # (K, 3)
    n_xy: np.ndarray  # (2,)
    n_z: float = 1.0
    degree: int = 3

    def __post_init__(self):
        bcp = np.asarray(self.base_control_points, dtype=np.float64)
        n_xy = np.asarray(self.n_xy, dtype=np.float64)
        if bcp.ndim != 2 or bcp.shape[1] != 3:
            raise InvalidConfigError("base control points must be (K, 3)")
        if bcp.shape[0] < self.degree + 1:
            raise InvalidConfigError("too few control points for the degree")
        if abs(np.linalg.norm(n_xy) - 1.0) > 1e-9:
            raise InvalidConfigError("n_xy must be a unit vector")
        seg = bcp[-1, :2] - bcp[0, :2]
        if abs(float(seg @ n_xy)) > 1e-6 * np.linalg.norm(seg):
            raise InvalidConfigError("n_xy must be perpendicular to the segment")
        object.__setattr__(self, "base_control_points", bcp)
        object.__setattr__(self, "n_xy", n_xy)

    @property
    def n_ctrl(self) -> int:
        return self.base_control_points.shape[0]

    @property
    def knots(self) -> np.ndarray:
        return make_clamped_knots(self.n_ctrl, self.degree)

    def direction(self) -> np.ndarray:
        """Unit direction of the segment in 3D (z component is zero)."""
        d = self.base_control_points[-1] - self.base_control_points[0]
        return d / np.linalg.norm(d)

    def length(self) -> float:
        return float(
            np.linalg.norm(self.base_control_points[-1] - self.base_control_points[0])
        )


@dataclass(frozen=True)
class ProposalSetConfig:
    """Grid of lateral anchor offsets x yaw angles; each line is anchored at
    the corridor's mid depth and clipped to the BEV box, which keeps every
    combination representable as a nondegenerate segment."""

    x_starts: Tuple[float, ...] = tuple(np.linspace(-10.0, 10.0, 16))
    angles_deg: Tuple[float, ...] = (-30.0, -10.0, 10.0, 30.0)
    y_range: Tuple[float, float] = BEV_Y_RANGE
    x_range: Tuple[float, float] = BEV_X_RANGE
    n_ctrl: int = DEFAULT_N_CTRL
    degree: int = 3

    @property
    def n_proposals(self) -> int:
        return len(self.x_starts) * len(self.angles_deg)


def _clip_line_to_box(anchor, direction, x_range, y_range):
    """Intersect the parametric line anchor + s*direction with the box,
    returning (s_min, s_max) or None when the overlap is degenerate."""
    s_lo, s_hi = -np.inf, np.inf
    for axis, (lo, hi) in ((0, x_range), (1, y_range)):
        d = direction[axis]
        a = anchor[axis]
        if abs(d) < 1e-12:
            if not lo <= a <= hi:
                return None
            continue
        s0, s1 = (lo - a) / d, (hi - a) / d
        s_lo = max(s_lo, min(s0, s1))
        s_hi = min(s_hi, max(s0, s1))
    if not np.isfinite(s_lo) or not np.isfinite(s_hi) or s_hi - s_lo < 1e-9:
        return None
    return s_lo, s_hi


def make_proposal_set(cfg: ProposalSetConfig) -> List[LaneProposal]:
    if cfg.n_proposals == 0:
        raise InvalidConfigError("proposal set config is empty")
    y_mid = 0.5 * (cfg.y_range[0] + cfg.y_range[1])
    proposals = []
    for x0 in cfg.x_starts:
        for ang in cfg.angles_deg:
            rad = np.deg2rad(ang)
            direction = np.array([np.sin(rad), np.cos(rad)])
            anchor = np.array([x0, y_mid])
            clip = _clip_line_to_box(anchor, direction, cfg.x_range, cfg.y_range)
            if clip is None:
                raise InvalidConfigError(
                    f"proposal (x={x0}, angle={ang}) has no overlap with the BEV box"
                )
            s_lo, s_hi = clip
            start = anchor + s_lo * direction
            end = anchor + s_hi * direction
            frac = np.linspace(0.0, 1.0, cfg.n_ctrl)[:, None]
            pts = start[None, :] + frac * (end - start)[None, :]
            bcp = np.concatenate([pts, np.zeros((cfg.n_ctrl, 1))], axis=1)
            # Right-hand normal: (dy, -dx) so a +y segment deflects along +x.
            n_xy = np.array([direction[1], -direction[0]])
            proposals.append(
                LaneProposal(bcp, n_xy, n_z=1.0, degree=cfg.degree)
            )
    return proposals


@dataclass
class LaneHypothesis:
    """Per-proposal parameter bundle: lateral/vertical deflections, visibility
    spline coefficients, presence logit and category logits. Parameters may
    be Duals during optimization."""

    proposal: LaneProposal
    alpha: Any  # (K,)
    beta: Any  # (K,)
    gamma: Any  # (K,)
    presence_logit: Any = 0.0
    category_logits: Any = None

    @classmethod
    def zeros(cls, proposal: LaneProposal, n_categories: int = 4) -> "LaneHypothesis":
        k = proposal.n_ctrl
        return cls(
            proposal,
            np.zeros(k),
            np.zeros(k),
            np.zeros(k),
            0.0,
            np.zeros(n_categories),
        )


def realize_curve(h: LaneHypothesis) -> BSplineCurve:
    """Control points = base + n_xy * alpha (laterally) + z_hat * n_z * beta."""
    prop = h.proposal
    k = prop.n_ctrl
    for name, arr in (("alpha", h.alpha), ("beta", h.beta)):
        if ad.value(arr).shape != (k,):
            raise InvalidConfigError(
                f"{name} must have {k} entries, got {ad.value(arr).shape}"
            )
    base = prop.base_control_points
    cp = ad.stack(
        [
            h.alpha * prop.n_xy[0] + base[:, 0],
            h.alpha * prop.n_xy[1] + base[:, 1],
            h.beta * prop.n_z + base[:, 2],
        ],
        axis=-1,
    )
    return BSplineCurve(prop.degree, cp, prop.knots)


def visibility_spline(h: LaneHypothesis) -> BSplineCurve:
    if ad.value(h.gamma).shape != (h.proposal.n_ctrl,):
        raise InvalidConfigError("gamma must match the proposal's control count")
    return BSplineCurve(h.proposal.degree, h.gamma, h.proposal.knots)


def visibility_prob(h: LaneHypothesis, t):
    """sigmoid(v(t)) for scalar or array t."""
    return ad.sigmoid(curve_eval(visibility_spline(h), t))


def _arc_fraction_spline_coeffs(n_ctrl: int) -> np.ndarray:
    # Spline with these coefficients maps t to the fractional position of
    # the proposal point along its segment (monotone, endpoints 0 and 1).
    return np.linspace(0.0, 1.0, n_ctrl)


def _invert_monotone_spline(knots, degree, coeffs, targets, iters: int = 52):
    """Bisection solve of sum_k coeffs_k B_k(t) = target for each target."""
    targets = np.asarray(targets, dtype=np.float64)
    lo = np.zeros_like(targets)
    hi = np.ones_like(targets)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        val = basis_matrix_nocache(knots, degree, mid) @ coeffs
        below = val < targets
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    return 0.5 * (lo + hi)


def project_to_proposal(proposal: LaneProposal, q) -> np.ndarray:
    """Curve argument(s) of the orthogonal foot point of q on the proposal.

    The foot point is found on the straight segment and mapped back to the
    curve argument at which the proposal's spline passes through it, so a
    hypothesis that deflects the proposal purely along its normals
    reproduces q exactly at the returned argument. Clamped to [0, 1].
    """
    q = np.asarray(q, dtype=np.float64)
    scalar = q.ndim == 1
    pts = np.atleast_2d(q)
    a = proposal.base_control_points[0]
    u = proposal.direction()
    length = proposal.length()
    frac = np.clip(((pts - a) @ u) / length, 0.0, 1.0)
    coeffs = _arc_fraction_spline_coeffs(proposal.n_ctrl)
    t = _invert_monotone_spline(proposal.knots, proposal.degree, coeffs, frac)
    return float(t[0]) if scalar else t


def visible_intervals(
    h: LaneHypothesis, n_samples: int = 200, tol: float = 1e-9
) -> List[Tuple[float, float]]:
    """Sub-intervals of [0, 1] where sigmoid(v(t)) > 0.5."""
    return positive_intervals(visibility_spline(h), n_samples=n_samples, tol=tol)


def positive_intervals(
    scalar_curve: BSplineCurve, n_samples: int = 200, tol: float = 1e-9
) -> List[Tuple[float, float]]:
    """Sub-intervals of [0, 1] where a scalar spline is positive.

    Sign changes between sample points are refined by bisection until the
    spline value is within tol of zero or the bracket collapses.
    """
    vis = scalar_curve
    if ad.is_dual(vis.control_points):
        vis = BSplineCurve(vis.degree, vis.control_points.val, vis.knots)
    ts = np.linspace(0.0, 1.0, n_samples)
    v = np.asarray(curve_eval(vis, ts))

    def refine(t_lo, t_hi, v_lo, v_hi):
        for _ in range(80):
            t_mid = 0.5 * (t_lo + t_hi)
            v_mid = float(curve_eval(vis, t_mid))
            if abs(v_mid) < tol or t_hi - t_lo < 1e-14:
                return t_mid
            if (v_lo > 0) == (v_mid > 0):
                t_lo, v_lo = t_mid, v_mid
            else:
                t_hi, v_hi = t_mid, v_mid
        return 0.5 * (t_lo + t_hi)

    intervals = []
    open_start: Optional[float] = None
    if v[0] > 0:
        open_start = 0.0
    for i in range(1, n_samples):
        if (v[i - 1] > 0) == (v[i] > 0):
            continue
        t_cross = refine(ts[i - 1], ts[i], v[i - 1], v[i])
        if v[i] > 0:
            open_start = t_cross
        elif open_start is not None:
            intervals.append((open_start, t_cross))
            open_start = None
    if open_start is not None:
        intervals.append((open_start, 1.0))
    return intervals
