"""Pure-numpy fallback for the compiled basis kernels.

Same contract as ``_kernels.basis_matrix``: dense (n_t, n_ctrl) matrix of
basis values, computed here with the layered two-term recursion vectorized
over all parameter values at once.
"""
import numpy as np


def basis_matrix(knots, degree, ts):
    knots = np.asarray(knots, dtype=np.float64)
    ts = np.asarray(ts, dtype=np.float64)
    n_knots = knots.shape[0]
    n_ctrl = n_knots - degree - 1

    u = ts[:, None]
    # Degree-0 layer: indicator of the half-open knot interval.
    level = ((knots[:-1] <= u) & (u < knots[1:])).astype(np.float64)
    at_end = ts >= knots[n_ctrl]
    if np.any(at_end):
        widths = np.diff(knots)
        last = int(np.max(np.nonzero(widths > 0.0)[0]))
        level[at_end, :] = 0.0
        level[at_end, last] = 1.0

    for d in range(1, degree + 1):
        den1 = knots[d:n_knots - 1] - knots[: n_knots - 1 - d]
        den2 = knots[d + 1:] - knots[1: n_knots - d]
        safe1 = np.where(den1 > 0.0, den1, 1.0)
        safe2 = np.where(den2 > 0.0, den2, 1.0)
        w1 = np.where(den1 > 0.0, (u - knots[: n_knots - 1 - d]) / safe1, 0.0)
        w2 = np.where(den2 > 0.0, (knots[d + 1:] - u) / safe2, 0.0)
        level = w1 * level[:, :-1] + w2 * level[:, 1:]

    return np.ascontiguousarray(level[:, :n_ctrl])
