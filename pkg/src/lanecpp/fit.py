"""Gradient-based fitting of lane hypotheses to a synthetic scene.

The optimizer stands in for network training: hypothesis parameters of
assigned proposals (deflections, visibility coefficients, category logits)
plus the presence logits of every proposal form one flat vector that is
updated with Adam. Gradients are exact forward-mode derivatives; because
the loss separates into per-hypothesis terms plus a prior term that couples
only the representative lanes, the fitting loop differentiates each block
with its own small dual seed instead of one giant seed (same values, same
gradient, far fewer dual dimensions per pass).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import autodiff as ad
from .basis import basis_matrix
from .errors import DivergenceError, InvalidConfigError, NumericalError
from .lanes import LaneHypothesis, LaneProposal, ProposalSetConfig, make_proposal_set
from .losses import (
    PROB_EPS,
    LossWeights,
    TotalLossContext,
    build_context,
    focal_category_loss,
    regression_loss,
    total_loss,
    visibility_loss,
)
from .matching import MatchConfig, assign, cost_matrix
from .priors import PriorConfig, RealizedLane, order_lanes, prior_loss, realize_lane
from .scenes import CATEGORIES, SceneGroundTruth

log = logging.getLogger(__name__)

DIVERGENCE_LIMIT = 1e6


@dataclass(frozen=True)
class FitConfig:
    learning_rate: float = 2e-4
    steps: int = 2000
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    priors_enabled: Tuple[str, ...] = ("par", "sm", "curv")
    n_categories: int = len(CATEGORIES)
    proposal_cfg: ProposalSetConfig = field(default_factory=ProposalSetConfig)
    match_cfg: MatchConfig = field(default_factory=MatchConfig)
    prior_cfg: PriorConfig = field(default_factory=PriorConfig)
    weights: LossWeights = field(default_factory=LossWeights)
    grad_check_coords: int = 8

    def __post_init__(self):
        if self.steps < 1:
            raise InvalidConfigError("steps must be >= 1")
        unknown = set(self.priors_enabled) - {"par", "sm", "curv"}
        if unknown:
            raise InvalidConfigError(f"unknown priors: {sorted(unknown)}")

    def effective_prior_cfg(self) -> PriorConfig:
        on = self.priors_enabled
        return replace(
            self.prior_cfg,
            lambda_par=self.prior_cfg.lambda_par if "par" in on else 0.0,
            lambda_sm=self.prior_cfg.lambda_sm if "sm" in on else 0.0,
            lambda_curv=self.prior_cfg.lambda_curv if "curv" in on else 0.0,
        )


@dataclass
class FitReport:
    history: List[Dict[str, float]]
    hypotheses: List[LaneHypothesis]
    assignments: List[Tuple[int, int]]
    representatives: List[int]
    grad_check_max_rel_err: float
    monotone_50: bool

    @property
    def final_breakdown(self) -> Dict[str, float]:
        return self.history[-1]


# -- generic gradient tools ----------------------------------------------------

def value_and_grad(loss_fn: Callable, params: np.ndarray) -> Tuple[float, np.ndarray]:
    """Value and exact gradient of a scalar closure by seeding the full
    parameter vector with dual identity."""
    params = np.asarray(params, dtype=np.float64)
    out = loss_fn(ad.seed(params))
    if not ad.is_dual(out):
        val = float(ad.value(out))
        if not np.isfinite(val):
            raise NumericalError("loss", val)
        return val, np.zeros_like(params)
    val = float(out.val)
    if not np.isfinite(val):
        raise NumericalError("loss", val)
    return val, np.array(out.eps, copy=True)


def gradient(loss_fn: Callable, params: np.ndarray) -> np.ndarray:
    return value_and_grad(loss_fn, params)[1]


def fd_gradient(loss_fn: Callable, params: np.ndarray, step: float = 1e-6,
                coords: Optional[Sequence[int]] = None) -> np.ndarray:
    """Central finite differences of a value-only closure, optionally
    restricted to a coordinate subset (other entries nan)."""
    params = np.asarray(params, dtype=np.float64)
    idx = range(params.size) if coords is None else coords
    g = np.full(params.size, np.nan)
    for i in idx:
        hi = params.copy()
        lo = params.copy()
        hi[i] += step
        lo[i] -= step
        g[i] = (float(ad.value(loss_fn(hi))) - float(ad.value(loss_fn(lo)))) / (2 * step)
    return g


def grad_rel_err(g_ad: np.ndarray, g_fd: np.ndarray, floor: float = 1e-3) -> float:
    """Worst-case floored relative error between two gradients; the floor
    keeps finite-difference roundoff on near-zero entries out of the ratio."""
    mask = np.isfinite(g_fd)
    if not np.any(mask):
        return 0.0
    num = np.abs(g_ad[mask] - g_fd[mask])
    den = np.maximum(np.maximum(np.abs(g_ad[mask]), np.abs(g_fd[mask])), floor)
    return float(np.max(num / den))


# -- parameter layout ----------------------------------------------------------

class ParamLayout:
    """Slices of the flat parameter vector: per assigned proposal the
    (alpha, beta, gamma, category) blocks, then presence logits for every
    proposal."""

    def __init__(self, proposals: Sequence[LaneProposal],
                 assigned: Sequence[int], n_categories: int):
        self.proposals = list(proposals)
        self.assigned = list(assigned)
        self.n_categories = n_categories
        self.slices: Dict[int, Dict[str, slice]] = {}
        pos = 0
        for i in self.assigned:
            k = proposals[i].n_ctrl
            blocks = {}
            for name, width in (("alpha", k), ("beta", k), ("gamma", k),
                                ("category", n_categories)):
                blocks[name] = slice(pos, pos + width)
                pos += width
            self.slices[i] = blocks
        self.presence = slice(pos, pos + len(proposals))
        self.size = pos + len(proposals)

    def init_params(self) -> np.ndarray:
        return np.zeros(self.size)

    def hypothesis(self, params, i: int) -> LaneHypothesis:
        prop = self.proposals[i]
        presence = params[self.presence][i]
        if i in self.slices:
            b = self.slices[i]
            return LaneHypothesis(
                prop,
                params[b["alpha"]],
                params[b["beta"]],
                params[b["gamma"]],
                presence,
                params[b["category"]],
            )
        k = prop.n_ctrl
        return LaneHypothesis(
            prop, np.zeros(k), np.zeros(k), np.zeros(k), presence,
            np.zeros(self.n_categories),
        )

    def build_hypotheses(self, params) -> List[LaneHypothesis]:
        return [self.hypothesis(params, i) for i in range(len(self.proposals))]


class AdamState:
    def __init__(self, n: int, cfg: FitConfig):
        self.m = np.zeros(n)
        self.v = np.zeros(n)
        self.t = 0
        self.cfg = cfg

    def step(self, params: np.ndarray, g: np.ndarray) -> np.ndarray:
        c = self.cfg
        self.t += 1
        self.m = c.beta1 * self.m + (1 - c.beta1) * g
        self.v = c.beta2 * self.v + (1 - c.beta2) * g * g
        m_hat = self.m / (1 - c.beta1 ** self.t)
        v_hat = self.v / (1 - c.beta2 ** self.t)
        return params - c.learning_rate * m_hat / (np.sqrt(v_hat) + c.adam_eps)


# -- scene objective -----------------------------------------------------------

def _batched_basis_apply(bases: np.ndarray, x):
    """Per-row basis application: bases (n, N, K) against control data
    (n, K) or (n, K, 3), dual-aware."""
    if ad.is_dual(x):
        if x.val.ndim == 2:
            v = np.einsum("abk,ak->ab", bases, x.val)
            e = np.einsum("abk,akp->abp", bases, x.eps)
        else:
            v = np.einsum("abk,akc->abc", bases, x.val)
            e = np.einsum("abk,akcp->abcp", bases, x.eps)
        return ad.Dual(v, e)
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        return np.einsum("abk,ak->ab", bases, x)
    return np.einsum("abk,akc->abc", bases, x)


class SceneObjective:
    """Total loss over a fixed assignment, with a block-structured gradient.

    ``closure`` is the spec of the objective (works with plain or dual
    parameter vectors); ``value_and_grad_blocked`` computes the identical
    gradient via one small dual pass per separable block.
    """

    def __init__(self, layout: ParamLayout, ctx: TotalLossContext,
                 weights: LossWeights, prior_cfg: PriorConfig):
        self.layout = layout
        self.ctx = ctx
        self.weights = weights
        self.prior_cfg = prior_cfg
        self.gt_categories = {
            t.gt_index: t.category_idx for t in ctx.targets.values()
        }
        self._geo = self._prepare_geometry_batch()

    def closure(self, params):
        hyps = self.layout.build_hypotheses(params)
        total, _ = total_loss(hyps, self.ctx, self.weights, self.prior_cfg)
        return total

    def closure_with_breakdown(self, params):
        hyps = self.layout.build_hypotheses(params)
        return total_loss(hyps, self.ctx, self.weights, self.prior_cfg)

    def _block_hypothesis(self, params, i: int, traced: Dict[str, ad.Dual]):
        base = self.layout.hypothesis(params, i)
        return LaneHypothesis(
            base.proposal,
            traced.get("alpha", base.alpha),
            traced.get("beta", base.beta),
            traced.get("gamma", base.gamma),
            base.presence_logit,
            traced.get("category", base.category_logits),
        )

    def _prepare_geometry_batch(self) -> Optional[Dict[str, np.ndarray]]:
        """Stack the fixed per-assignment data (basis matrices at the
        projected arguments, targets, block index rows) so all assigned
        hypotheses go through one vectorized dual pass. Requires the
        targets to share the point count and the proposals the knot
        configuration; returns None otherwise (loop fallback)."""
        if not self.ctx.assignments:
            return None
        layout = self.layout
        props = [layout.proposals[i] for i, _ in self.ctx.assignments]
        targets = [self.ctx.targets[i] for i, _ in self.ctx.assignments]
        k = props[0].n_ctrl
        deg = props[0].degree
        n_pts = targets[0].points.shape[0]
        if any(p.n_ctrl != k or p.degree != deg for p in props):
            return None
        if any(t.points.shape[0] != n_pts for t in targets):
            return None
        knots = props[0].knots
        bases = np.stack([basis_matrix(knots, deg, t.t) for t in targets])
        block_rows = []
        for i, _ in self.ctx.assignments:
            b = layout.slices[i]
            block_rows.append(np.concatenate([
                np.arange(b[name].start, b[name].stop)
                for name in ("alpha", "beta", "gamma", "category")
            ]))
        return {
            "bases": bases,                                        # (n, N, K)
            "points": np.stack([t.points for t in targets]),       # (n, N, 3)
            "vis": np.stack([t.visibility for t in targets]),      # (n, N)
            "cats": np.array([t.category_idx for t in targets]),
            "blocks": np.stack(block_rows),                        # (n, 3K+C)
            "base_cp": np.stack([p.base_control_points for p in props]),
            "n_xy": np.stack([p.n_xy for p in props]),
            "n_z": np.array([p.n_z for p in props]),
            "k": k,
        }

    def _geometry_pass(self, params, grad_out):
        """Batched regression/visibility/category over assigned hypotheses.
        Returns the per-term sums (already divided by the proposal count)."""
        w = self.weights
        m = len(self.layout.proposals)
        g = self._geo
        n = g["blocks"].shape[0]
        k = g["k"]
        block_vals = params[g["blocks"]]                       # (n, B)
        width = g["blocks"].shape[1]
        eye = np.broadcast_to(np.eye(width), (n, width, width))
        seed = ad.Dual(block_vals, eye)
        alpha, beta = seed[:, 0:k], seed[:, k:2 * k]
        gamma, cat = seed[:, 2 * k:3 * k], seed[:, 3 * k:]

        # Realize all curves: (n, K, 3) control points.
        cp = ad.stack([
            alpha * g["n_xy"][:, 0:1] + g["base_cp"][:, :, 0],
            alpha * g["n_xy"][:, 1:2] + g["base_cp"][:, :, 1],
            beta * g["n_z"][:, None] + g["base_cp"][:, :, 2],
        ], axis=-1)
        f = _batched_basis_apply(g["bases"], cp)               # (n, N, 3)
        diff = ad.asum(ad.absolute(f - g["points"]) * np.asarray(w.w_reg), axis=-1)
        reg_per = ad.amean(diff * g["vis"], axis=1)            # (n,)

        v = _batched_basis_apply(g["bases"], gamma)            # (n, N)
        p = ad.clip(ad.sigmoid(v), PROB_EPS, 1.0 - PROB_EPS)
        bce = -(g["vis"] * ad.log(p) + (1.0 - g["vis"]) * ad.log(1.0 - p))
        vis_per = ad.amean(bce, axis=1)                        # (n,)

        pc = ad.clip(ad.softmax(cat, axis=-1), PROB_EPS, 1.0 - PROB_EPS)
        p_true = pc[np.arange(n), g["cats"]]
        n_cat = pc.val.shape[-1]
        cat_per = -(ad.power(1.0 - p_true, w.gamma_f) * ad.log(p_true)) / n_cat

        term = (w.lambda_reg * reg_per + w.lambda_vis * vis_per
                + w.lambda_cat * cat_per) / m
        np.add.at(grad_out, g["blocks"], term.eps)
        return (
            float(reg_per.val.sum() / m),
            float(vis_per.val.sum() / m),
            float(cat_per.val.sum() / m),
        )

    def _geometry_pass_loop(self, params, grad_out):
        """Fallback: one small dual pass per assigned hypothesis."""
        w = self.weights
        layout = self.layout
        m = len(layout.proposals)
        reg_v = vis_v = cat_v = 0.0
        for i, j in self.ctx.assignments:
            b = layout.slices[i]
            k = layout.proposals[i].n_ctrl
            block_idx = np.concatenate([
                np.arange(b[name].start, b[name].stop)
                for name in ("alpha", "beta", "gamma", "category")
            ])
            seed = ad.seed(params[block_idx])
            traced = {
                "alpha": seed[0:k],
                "beta": seed[k:2 * k],
                "gamma": seed[2 * k:3 * k],
                "category": seed[3 * k:],
            }
            hyp = self._block_hypothesis(params, i, traced)
            target = self.ctx.targets[i]
            reg = regression_loss(hyp, target, w.w_reg)
            vis = visibility_loss(hyp, target)
            cat = focal_category_loss([hyp], [(0, j)], self.gt_categories, w.gamma_f)
            term = (w.lambda_reg * reg + w.lambda_vis * vis
                    + w.lambda_cat * cat) / m
            if ad.is_dual(term):
                grad_out[block_idx] += term.eps
            reg_v += float(ad.value(reg)) / m
            vis_v += float(ad.value(vis)) / m
            cat_v += float(ad.value(cat)) / m
        return reg_v, vis_v, cat_v

    def value_and_grad_blocked(self, params: np.ndarray):
        """(total, breakdown, gradient); gradients come from one dual pass
        per separable block and match the full-seed gradient exactly."""
        params = np.asarray(params, dtype=np.float64)
        layout = self.layout
        w = self.weights
        m = len(layout.proposals)
        grad_out = np.zeros(layout.size)

        if self._geo is not None:
            reg_v, vis_v, cat_v = self._geometry_pass(params, grad_out)
        elif self.ctx.assignments:
            reg_v, vis_v, cat_v = self._geometry_pass_loop(params, grad_out)
        else:
            reg_v = vis_v = cat_v = 0.0

        # Presence logits (couples all proposals, one small pass).
        seed_pr = ad.seed(params[layout.presence])
        p = ad.clip(ad.sigmoid(seed_pr), PROB_EPS, 1.0 - PROB_EPS)
        assigned = {i for i, _ in self.ctx.assignments}
        gt = np.array([1.0 if i in assigned else 0.0 for i in range(m)])
        pos = -(ad.power(1.0 - p, w.gamma_f) * ad.log(p)) * gt
        neg = -(ad.power(p, w.gamma_f) * ad.log(1.0 - p)) * (1.0 - gt)
        pr_term = ad.amean(pos + neg)
        pr_v = float(pr_term.val)
        grad_out[layout.presence] += w.lambda_pr * pr_term.eps

        # Prior term couples the representative lanes' geometry.
        prior_v = 0.0
        if w.lambda_prior != 0.0 and self.ctx.representatives:
            reps = self.ctx.representatives
            idx_parts = []
            for i in reps:
                b = layout.slices[i]
                idx_parts.append(np.arange(b["alpha"].start, b["beta"].stop))
            prior_idx = np.concatenate(idx_parts)
            seed_prior = ad.seed(params[prior_idx])
            lanes: List[RealizedLane] = []
            pos_i = 0
            for i in reps:
                k = layout.proposals[i].n_ctrl
                traced = {
                    "alpha": seed_prior[pos_i:pos_i + k],
                    "beta": seed_prior[pos_i + k:pos_i + 2 * k],
                }
                pos_i += 2 * k
                lanes.append(realize_lane(self._block_hypothesis(params, i, traced)))
            lanes = [lanes[r] for r in order_lanes(lanes)]
            prior_term = prior_loss(lanes, self.prior_cfg)
            prior_v = float(ad.value(prior_term))
            if ad.is_dual(prior_term):
                grad_out[prior_idx] += w.lambda_prior * prior_term.eps

        total = (w.lambda_pr * pr_v + w.lambda_cat * cat_v + w.lambda_reg * reg_v
                 + w.lambda_vis * vis_v + w.lambda_prior * prior_v
                 + w.lambda_surf * self.ctx.surf_value)
        breakdown = {
            "presence": pr_v,
            "category": cat_v,
            "regression": reg_v,
            "visibility": vis_v,
            "prior": prior_v,
            "surface": self.ctx.surf_value,
            "total": total,
        }
        return total, breakdown, grad_out


# -- fitting -------------------------------------------------------------------

def prepare_objective(
    scene: SceneGroundTruth, cfg: FitConfig
) -> Tuple[SceneObjective, List[Tuple[int, int]]]:
    if not scene.lanes:
        raise InvalidConfigError("scene has no ground-truth lanes")
    proposals = make_proposal_set(cfg.proposal_cfg)
    gt_points = [lane.points for lane in scene.lanes]
    costs = cost_matrix(proposals, gt_points, cfg.match_cfg)
    assignments = assign(proposals, gt_points, cfg.match_cfg)
    layout = ParamLayout(proposals, [i for i, _ in assignments], cfg.n_categories)
    hyps0 = layout.build_hypotheses(layout.init_params())
    ctx = build_context(scene, hyps0, assignments, costs=costs)
    objective = SceneObjective(layout, ctx, cfg.weights, cfg.effective_prior_cfg())
    return objective, assignments


def fit_scene(scene: SceneGroundTruth, cfg: FitConfig = FitConfig()) -> FitReport:
    """Assign proposals once, then run Adam on the assigned hypotheses.

    Raises DivergenceError when the total exceeds the divergence limit and
    NumericalError when any term goes non-finite. The report carries the
    per-step loss breakdown, the fitted hypotheses and a finite-difference
    spot check of the gradient at the final parameters.
    """
    objective, assignments = prepare_objective(scene, cfg)
    layout = objective.layout

    params = layout.init_params()
    adam = AdamState(layout.size, cfg)
    history: List[Dict[str, float]] = []
    for step_idx in range(cfg.steps):
        total, breakdown, g = objective.value_and_grad_blocked(params)
        for term, term_value in breakdown.items():
            if not np.isfinite(term_value):
                raise NumericalError(term, term_value)
        if total > DIVERGENCE_LIMIT:
            raise DivergenceError(step_idx, total)
        history.append(breakdown)
        params = adam.step(params, g)

    monotone = _check_windowed_descent(history)
    if not monotone:
        log.warning("fit loss increased over some 50-step window")

    rng = np.random.default_rng(cfg.seed)
    n_coords = min(cfg.grad_check_coords, layout.size)
    coords = rng.choice(layout.size, size=n_coords, replace=False)
    _, _, g_ad = objective.value_and_grad_blocked(params)
    g_fd = fd_gradient(objective.closure, params, coords=coords)
    rel = grad_rel_err(g_ad, g_fd)

    return FitReport(
        history=history,
        hypotheses=layout.build_hypotheses(params),
        assignments=assignments,
        representatives=objective.ctx.representatives,
        grad_check_max_rel_err=rel,
        monotone_50=monotone,
    )


def _check_windowed_descent(history: List[Dict[str, float]], window: int = 50) -> bool:
    totals = np.array([h["total"] for h in history])
    if totals.size <= window:
        return True
    return bool(np.all(totals[window:] <= totals[:-window] + 1e-9))
