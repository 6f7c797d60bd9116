"""Physical prior losses on realized lane curves.

Three soft regularizers express what road geometry usually looks like:

* parallelism  — tangents at normal point pairs of neighboring lines agree,
* smoothness   — surface normals spanned with the left and right neighbor agree,
* curvature    — planar curvature and slope change stay below fixed limits
                 (a hinge: below the limit the term is a constant floor).

Point pairs are found by sampling the neighbor curve densely and picking the
sample closest to the normal plane of the source point (smallest absolute
orthogonal distance). A pair of lines only participates when the pairs look
like actual lateral neighbors: orthogonal distances under ``od_thr`` and the
standard deviation of pair distances under ``sigma_thr`` (large deviation
indicates merging/splitting geometry where parallelism must not be forced).

Gate decisions are made on plain values; the loss terms themselves propagate
dual-number gradients. ``prior_loss`` shares per-lane precomputations across
all terms, which keeps per-step evaluation in optimization loops cheap.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import autodiff as ad
from .basis import basis_matrix
from .errors import DegenerateGeometryError, InvalidConfigError
from .lanes import LaneHypothesis, positive_intervals, realize_curve, visibility_spline
from .spline import BSplineCurve, curve_eval, derivative_curve, unit_tangent

EPS_SPEED = 1e-9


@dataclass(frozen=True)
class PriorConfig:
    od_thr: float = 1.0          # m, max |orthogonal distance| for a valid pair
    sigma_thr: float = 2.0       # m, max std of pair distances for a parallel pair
    kappa_xy: float = 5.0        # 1/m, planar curvature floor
    kappa_z: float = 0.1         # 1/m, slope-change floor
    n_samples_par: int = 20      # points sampled on the source line
    n_samples_curv: int = 100    # points sampled for the curvature term
    n_samples_pair: int = 200    # candidate points on the neighbor line
    lambda_par: float = 10.0
    lambda_sm: float = 0.01
    lambda_curv: float = 1.0
    gate_by_visibility: bool = False
    eps_pair: float = 1e-9       # m, below this the pair is degenerate

    def __post_init__(self):
        for name in ("od_thr", "sigma_thr", "kappa_xy", "kappa_z"):
            if getattr(self, name) <= 0:
                raise InvalidConfigError(f"{name} must be > 0")


@dataclass(frozen=True)
class NormalPair:
    """Pairing of a point on line i with the neighbor-line point closest to
    its normal plane. od is the signed plane distance of the selected point,
    dist the euclidean distance between the pair points."""

    t_p: float
    t_p_star: float
    od: float
    dist: float


@dataclass(frozen=True)
class RealizedLane:
    """A realized geometry curve plus its (optional) visibility spline."""

    curve: BSplineCurve
    visibility: Optional[BSplineCurve] = None

    def visible_intervals(self) -> List[Tuple[float, float]]:
        if self.visibility is None:
            return [(0.0, 1.0)]
        return positive_intervals(self.visibility)


def realize_lane(h: LaneHypothesis) -> RealizedLane:
    return RealizedLane(realize_curve(h), visibility_spline(h))


def _value_curve(curve: BSplineCurve) -> BSplineCurve:
    cp = curve.control_points
    if ad.is_dual(cp):
        return BSplineCurve(curve.degree, cp.val, curve.knots)
    return curve


class _LanePack:
    """Shared per-lane geometry for one prior evaluation: plain-value arrays
    for pairing/gating plus the pieces needed to evaluate dual positions and
    tangents at grid points on demand."""

    def __init__(self, lane: RealizedLane, cfg: PriorConfig):
        self.lane = lane
        curve = lane.curve
        self.cp = curve.control_points
        self.dcurve = derivative_curve(curve)
        dcp = self.dcurve.control_points
        self.cp_v = ad.value(self.cp)
        self.dcp_v = ad.value(dcp)
        self.dcp = dcp

        self.par_ts = np.linspace(0.0, 1.0, cfg.n_samples_par)
        self.pair_ts = np.linspace(0.0, 1.0, cfg.n_samples_pair)
        self.b_par = basis_matrix(curve.knots, curve.degree, self.par_ts)
        self.b_pair = basis_matrix(curve.knots, curve.degree, self.pair_ts)
        self.bd_par = basis_matrix(self.dcurve.knots, self.dcurve.degree, self.par_ts)
        self.bd_pair = basis_matrix(self.dcurve.knots, self.dcurve.degree, self.pair_ts)

        self.f_par_v = self.b_par @ self.cp_v
        self.f_pair_v = self.b_pair @ self.cp_v
        vel = self.bd_par @ self.dcp_v
        speed = np.linalg.norm(vel, axis=1)
        if speed.min() <= EPS_SPEED:
            raise DegenerateGeometryError("tangent undefined on prior sample grid")
        self.tan_par_v = vel / speed[:, None]

    def f_par(self, idx):
        """Dual-aware curve points at par-grid indices."""
        return ad.apply_basis(self.b_par[idx], self.cp)

    def f_pair(self, idx):
        return ad.apply_basis(self.b_pair[idx], self.cp)

    def tan_par(self, idx):
        vel = ad.apply_basis(self.bd_par[idx], self.dcp)
        return vel / ad.norm(vel, axis=-1, keepdims=True)

    def tan_pair(self, idx):
        vel = ad.apply_basis(self.bd_pair[idx], self.dcp)
        return vel / ad.norm(vel, axis=-1, keepdims=True)


def _pair_packs(pack_i: _LanePack, pack_j: _LanePack):
    """For each par-grid point on lane i, the pair-grid index on lane j
    minimizing the absolute normal-plane distance; plus signed od and the
    euclidean pair distance."""
    rel = pack_j.f_pair_v[None, :, :] - pack_i.f_par_v[:, None, :]
    od_all = np.einsum("nc,nmc->nm", pack_i.tan_par_v, rel)
    sel = np.argmin(np.abs(od_all), axis=1)
    rows = np.arange(len(sel))
    od = od_all[rows, sel]
    dist = np.linalg.norm(pack_j.f_pair_v[sel] - pack_i.f_par_v, axis=1)
    return sel, od, dist


def normal_pair(
    curve_i: BSplineCurve, t_p: float, curve_j: BSplineCurve, samples: int
) -> NormalPair:
    """Normal point pair for a single source argument; the neighbor curve is
    sampled uniformly with `samples` candidates."""
    vi, vj = _value_curve(curve_i), _value_curve(curve_j)
    grid = np.linspace(0.0, 1.0, samples)
    f_i = curve_eval(vi, t_p)
    tan_i = unit_tangent(vi, t_p)
    f_j = curve_eval(vj, grid)
    od_all = (f_j - f_i) @ tan_i
    sel = int(np.argmin(np.abs(od_all)))
    return NormalPair(
        float(t_p),
        float(grid[sel]),
        float(od_all[sel]),
        float(np.linalg.norm(f_j[sel] - f_i)),
    )


def _in_intervals(ts: np.ndarray, intervals) -> np.ndarray:
    ok = np.zeros(ts.shape, dtype=bool)
    for lo, hi in intervals:
        ok |= (ts >= lo) & (ts <= hi)
    return ok


def _point_gates(pack_i, pack_j, t_star, od, cfg: PriorConfig) -> np.ndarray:
    gates = np.abs(od) < cfg.od_thr
    if cfg.gate_by_visibility:
        gates &= _in_intervals(pack_i.par_ts, pack_i.lane.visible_intervals())
        gates &= _in_intervals(t_star, pack_j.lane.visible_intervals())
    return gates


def _pair_gate(dist: np.ndarray, gates: np.ndarray, cfg: PriorConfig) -> bool:
    if not np.any(gates):
        return False
    return float(np.std(dist[gates])) < cfg.sigma_thr


def _parallelism(pack_i: _LanePack, pack_j: _LanePack, cfg: PriorConfig):
    sel, od, dist = _pair_packs(pack_i, pack_j)
    gates = _point_gates(pack_i, pack_j, pack_i.pair_ts[sel], od, cfg)
    if not _pair_gate(dist, gates, cfg):
        return 0.0
    tan_i = pack_i.tan_par(np.nonzero(gates)[0])
    tan_j = pack_j.tan_pair(sel[gates])
    cos_dist = 1.0 - ad.dot(tan_i, tan_j, axis=-1)
    return ad.asum(cos_dist) / cfg.n_samples_par


def parallelism_loss(lane_i: RealizedLane, lane_j: RealizedLane, cfg: PriorConfig):
    """Mean gated cosine distance of unit tangents at normal point pairs,
    normalized by the number of sampled points. Returns 0 when the
    indicator disables every pair."""
    return _parallelism(_LanePack(lane_i, cfg), _LanePack(lane_j, cfg), cfg)


def _unit_normal(tan, conn):
    conn = conn / ad.norm(conn, axis=-1, keepdims=True)
    n = ad.cross3(tan, conn)
    # Renormalize: discrete pairing leaves the connection slightly
    # non-orthogonal to the tangent, which would shrink the cross product.
    return n / ad.norm(n, axis=-1, keepdims=True)


def surface_normal(
    lane_i: RealizedLane,
    lane_h: RealizedLane,
    t_p: float,
    side: str,
    samples: int = 200,
):
    """Unit surface normal at t_p spanned by the tangent of lane i and the
    connection to its normal pair point on lane h; for the right neighbor
    the cross product's sign is flipped so normals point upward."""
    if side not in ("left", "right"):
        raise InvalidConfigError(f"side must be 'left' or 'right', got {side!r}")
    pair = normal_pair(_value_curve(lane_i.curve), t_p, _value_curve(lane_h.curve),
                       samples)
    if pair.dist <= 1e-9:
        raise DegenerateGeometryError("coincident pair points, normal undefined")
    tan = unit_tangent(lane_i.curve, t_p)
    conn = curve_eval(lane_h.curve, pair.t_p_star) - curve_eval(lane_i.curve, t_p)
    n = _unit_normal(tan, conn)
    return n if side == "left" else -n


def _smoothness(pack_h: _LanePack, pack_i: _LanePack, pack_j: _LanePack,
                cfg: PriorConfig):
    sel_h, od_h, dist_h = _pair_packs(pack_i, pack_h)
    sel_j, od_j, dist_j = _pair_packs(pack_i, pack_j)
    gates_h = _point_gates(pack_i, pack_h, pack_i.pair_ts[sel_h], od_h, cfg)
    gates_j = _point_gates(pack_i, pack_j, pack_i.pair_ts[sel_j], od_j, cfg)
    gates = gates_h & gates_j & (dist_h > cfg.eps_pair) & (dist_j > cfg.eps_pair)
    if not np.any(gates):
        return 0.0
    if not _pair_gate(dist_h, gates_h, cfg) or not _pair_gate(dist_j, gates_j, cfg):
        return 0.0
    rows = np.nonzero(gates)[0]
    tan = pack_i.tan_par(rows)
    f_i = pack_i.f_par(rows)
    n_left = _unit_normal(tan, pack_h.f_pair(sel_h[gates]) - f_i)
    n_right = -_unit_normal(tan, pack_j.f_pair(sel_j[gates]) - f_i)
    cos_dist = 1.0 - ad.dot(n_left, n_right, axis=-1)
    return ad.asum(cos_dist) / cfg.n_samples_par


def smoothness_loss(
    lane_h: RealizedLane,
    lane_i: RealizedLane,
    lane_j: RealizedLane,
    cfg: PriorConfig,
):
    """Mean gated cosine distance between the surface normals spanned with
    the left neighbor h and the right neighbor j of the center lane i."""
    return _smoothness(
        _LanePack(lane_h, cfg), _LanePack(lane_i, cfg), _LanePack(lane_j, cfg), cfg
    )


def curvature_loss(lane: RealizedLane, cfg: PriorConfig):
    """Hinged curvature penalty: tangent differences at consecutive samples
    divided by the arc step, split into a planar magnitude and a vertical
    rate, each floored at its limit."""
    if cfg.n_samples_curv < 2:
        raise InvalidConfigError("curvature loss needs at least 2 samples")
    ts = np.linspace(0.0, 1.0, cfg.n_samples_curv)
    tan = unit_tangent(lane.curve, ts)
    pos = curve_eval(lane.curve, ts)
    step = ad.norm(pos[1:] - pos[:-1], axis=-1, keepdims=True)
    if float(np.min(ad.value(step))) <= 0.0:
        raise DegenerateGeometryError("zero arc step in curvature sampling")
    t_rate = (tan[1:] - tan[:-1]) / step
    rate_xy = ad.norm(t_rate[:, :2], axis=-1)
    rate_z = ad.absolute(t_rate[:, 2])
    terms = ad.maximum(rate_xy, cfg.kappa_xy) + ad.maximum(rate_z, cfg.kappa_z)
    return ad.amean(terms)


def _first_visible_t(lane: RealizedLane, ts: np.ndarray) -> float:
    """Coarse start of the visible range (no bisection refinement; this is
    only used to pick a shared ordering depth)."""
    if lane.visibility is None:
        return 0.0
    vis = _value_curve(lane.visibility)
    v = np.asarray(curve_eval(vis, ts))
    above = np.nonzero(v > 0.0)[0]
    return float(ts[above[0]]) if above.size else 0.0


def order_lanes(lanes: Sequence[RealizedLane]) -> List[int]:
    """Left-to-right ordering by lateral position at the largest of the
    lanes' first visible depths (so every lane is defined there)."""
    if not lanes:
        return []
    ts = np.linspace(0.0, 1.0, 64)
    pts = [np.asarray(curve_eval(_value_curve(lane.curve), ts)) for lane in lanes]
    y_ref = max(
        p[np.searchsorted(ts, _first_visible_t(lane, ts)), 1]
        for lane, p in zip(lanes, pts)
    )
    xs = [p[int(np.argmin(np.abs(p[:, 1] - y_ref))), 0] for p in pts]
    return sorted(range(len(lanes)), key=lambda i: xs[i])


def prior_loss(lanes: Sequence[RealizedLane], cfg: PriorConfig):
    """Weighted sum of the three priors over a neighbor-ordered lane list:
    curvature per lane, parallelism per adjacent pair (counted from both
    sides), smoothness per lane that has both neighbors."""
    total = 0.0
    n = len(lanes)
    packs = [_LanePack(lane, cfg) for lane in lanes] if n else []
    for i, lane in enumerate(lanes):
        if cfg.lambda_curv != 0.0:
            total = total + cfg.lambda_curv * curvature_loss(lane, cfg)
        if cfg.lambda_par != 0.0:
            for j in (i - 1, i + 1):
                if 0 <= j < n:
                    total = total + cfg.lambda_par * _parallelism(
                        packs[i], packs[j], cfg
                    )
        if cfg.lambda_sm != 0.0 and 0 < i < n - 1:
            total = total + cfg.lambda_sm * _smoothness(
                packs[i - 1], packs[i], packs[i + 1], cfg
            )
    return total
