"""Clamped B-spline curves with analytic derivatives.

Control points are (K, 3) arrays for space curves or (K,) arrays for scalar
splines, and may be :class:`~lanecpp.autodiff.Dual` so that gradient
information flows through curve evaluation.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Any

import numpy as np

from . import autodiff as ad
from .basis import basis_matrix, make_clamped_knots
from .errors import DegenerateGeometryError, InvalidConfigError

DEFAULT_DEGREE = 3
EPS_NORM = 1e-9


@dataclass(frozen=True)
class BSplineCurve:
    """Clamped B-spline over t in [0, 1].

    Invariants: K >= degree + 1 control points; the knot vector has
    K + degree + 1 nondecreasing entries with degree+1-fold end knots, so
    f(0) and f(1) coincide with the first and last control point.
    """

    degree: int
    control_points: Any  # (K, ...) ndarray or Dual
    knots: np.ndarray

    def __post_init__(self):
        cp = self.control_points
        if not ad.is_dual(cp):
            object.__setattr__(
                self, "control_points", np.asarray(cp, dtype=np.float64)
            )
        k = self.n_ctrl
        if k < self.degree + 1:
            raise InvalidConfigError(
                f"{k} control points cannot support degree {self.degree}"
            )
        knots = np.asarray(self.knots, dtype=np.float64)
        if knots.shape != (k + self.degree + 1,):
            raise InvalidConfigError(
                f"knot vector must have K+d+1={k + self.degree + 1} entries, "
                f"got {knots.shape}"
            )
        if np.any(np.diff(knots) < 0):
            raise InvalidConfigError("knot vector must be nondecreasing")
        object.__setattr__(self, "knots", knots)

    @property
    def n_ctrl(self) -> int:
        return self.control_points.shape[0]


def make_curve(control_points, degree: int = DEFAULT_DEGREE) -> BSplineCurve:
    """Curve over a clamped uniform knot vector derived from K and degree."""
    n_ctrl = len(control_points) if not ad.is_dual(control_points) else control_points.shape[0]
    return BSplineCurve(degree, control_points, make_clamped_knots(n_ctrl, degree))


def _as_t_array(t):
    ts = np.atleast_1d(np.asarray(t, dtype=np.float64))
    return ts, np.ndim(t) == 0


def curve_eval(curve: BSplineCurve, t):
    """f(t) = sum_k c_k B_k(t); accepts a scalar or an array of arguments."""
    ts, scalar = _as_t_array(t)
    basis = basis_matrix(curve.knots, curve.degree, ts)
    out = ad.apply_basis(basis, curve.control_points)
    return out[0] if scalar else out


def derivative_curve(curve: BSplineCurve, order: int = 1) -> BSplineCurve:
    """Derivative as a spline of degree d-order via the standard hodograph
    construction: Q_k = d (c_{k+1} - c_k) / (u_{k+d+1} - u_{k+1})."""
    if order < 1:
        raise InvalidConfigError(f"derivative order must be >= 1, got {order}")
    if order > curve.degree:
        raise InvalidConfigError(
            f"derivative order {order} exceeds curve degree {curve.degree}"
        )
    d = curve.degree
    cp = curve.control_points
    knots = curve.knots
    k = curve.n_ctrl
    span = knots[d + 1: k + d] - knots[1:k]
    diff = cp[1:] - cp[:-1]
    scale = (d / span).reshape((-1,) + (1,) * (np.ndim(ad.value(diff)) - 1))
    dcurve = BSplineCurve(d - 1, diff * scale, knots[1:-1])
    return dcurve if order == 1 else derivative_curve(dcurve, order - 1)


def curve_derivative(curve: BSplineCurve, t, order: int = 1):
    """Analytic derivative d^order f / dt^order at t."""
    return curve_eval(derivative_curve(curve, order), t)


def unit_tangent(curve: BSplineCurve, t, eps_norm: float = EPS_NORM):
    """f'(t) / ||f'(t)||; raises if the derivative is numerically zero."""
    vel = curve_derivative(curve, t, order=1)
    speed = ad.norm(vel, axis=-1, keepdims=True)
    min_speed = float(np.min(ad.value(speed)))
    if min_speed <= eps_norm:
        raise DegenerateGeometryError(
            f"tangent undefined: derivative norm {min_speed:.3e} <= {eps_norm:.1e}"
        )
    return vel / speed
