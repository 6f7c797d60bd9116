"""Knot vectors and B-spline basis evaluation.

The basis matrix is the innermost kernel of the package: curve evaluation,
tangents, losses and the fitting loop all reduce to (basis @ control_points)
products. A compiled extension is used when available; set ``LANECPP_PURE=1``
to force the numpy fallback. Results for repeated (knots, ts) pairs are
memoized, which makes per-step re-evaluation in optimization loops cheap.
"""
import os
from functools import lru_cache

import numpy as np

from . import _basis_py
from .errors import DomainError, InvalidConfigError

if os.environ.get("LANECPP_PURE"):
    _impl = _basis_py
    USING_EXTENSION = False
else:
    try:
        from . import _kernels as _impl  # type: ignore[no-redef]

        USING_EXTENSION = True
    except ImportError:
        _impl = _basis_py
        USING_EXTENSION = False

# Snap tolerance for arguments that overshoot [0, 1] by float rounding.
_EDGE_TOL = 1e-12


@lru_cache(maxsize=64)
def make_clamped_knots(n_ctrl: int, degree: int) -> np.ndarray:
    """Clamped uniform knot vector of length n_ctrl + degree + 1 on [0, 1].

    First and last degree+1 entries are pinned to 0 and 1 so the curve
    interpolates its end control points; interior knots are uniform. The
    returned array is shared (read-only).
    """
    if degree < 1:
        raise InvalidConfigError(f"degree must be >= 1, got {degree}")
    if n_ctrl < degree + 1:
        raise InvalidConfigError(
            f"need at least degree+1={degree + 1} control points, got {n_ctrl}"
        )
    interior = np.arange(1, n_ctrl - degree) / (n_ctrl - degree)
    knots = np.concatenate([np.zeros(degree + 1), interior, np.ones(degree + 1)])
    knots.setflags(write=False)
    return knots


def _check_domain(ts: np.ndarray) -> np.ndarray:
    if ts.size == 0:
        return ts
    lo = float(ts.min())
    hi = float(ts.max())
    if lo < -_EDGE_TOL or hi > 1.0 + _EDGE_TOL:
        raise DomainError(f"curve argument outside [0, 1]: range [{lo}, {hi}]")
    if lo < 0.0 or hi > 1.0:
        ts = np.clip(ts, 0.0, 1.0)
    return ts


@lru_cache(maxsize=512)
def _cached_matrix(knots_bytes: bytes, degree: int, ts_bytes: bytes) -> np.ndarray:
    knots = np.frombuffer(knots_bytes, dtype=np.float64)
    ts = np.frombuffer(ts_bytes, dtype=np.float64)
    out = _impl.basis_matrix(knots, degree, ts)
    out.setflags(write=False)
    return out


def basis_matrix(knots, degree: int, ts) -> np.ndarray:
    """Matrix B of shape (len(ts), K) with B[i, k] = B_k(ts[i]).

    Raises DomainError if any argument falls outside [0, 1]. The returned
    array is read-only (results are shared through a cache).
    """
    knots = np.ascontiguousarray(knots, dtype=np.float64)
    ts = _check_domain(np.ascontiguousarray(ts, dtype=np.float64))
    return _cached_matrix(knots.tobytes(), degree, ts.tobytes())


def basis_matrix_nocache(knots, degree: int, ts) -> np.ndarray:
    """Uncached variant for throwaway argument arrays (e.g. bisection)."""
    knots = np.ascontiguousarray(knots, dtype=np.float64)
    ts = _check_domain(np.ascontiguousarray(ts, dtype=np.float64))
    return _impl.basis_matrix(knots, degree, ts)


def basis_eval(knots, k: int, degree: int, t: float) -> float:
    """Single basis-function value B_k(t) (k is a 0-based index)."""
    row = basis_matrix(knots, degree, np.array([t]))
    n_ctrl = len(knots) - degree - 1
    if not 0 <= k < n_ctrl:
        raise InvalidConfigError(f"basis index {k} out of range [0, {n_ctrl})")
    return float(row[0, k])
