# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled B-spline basis kernels.

Hot path for basis evaluation: fills a dense (n_t, n_ctrl) matrix of
basis values using the span-local triangle recursion, which touches only
the degree+1 functions that can be nonzero at each parameter value.
"""
import numpy as np


def basis_matrix(const double[::1] knots, int degree, const double[::1] ts):
    """Dense basis matrix B with B[i, k] = value of basis k at ts[i].

    Assumes a clamped knot vector whose domain is [knots[degree], knots[n_ctrl]].
    Parameter values must already be inside the domain.
    """
    cdef Py_ssize_t n_knots = knots.shape[0]
    cdef Py_ssize_t n_ctrl = n_knots - degree - 1
    cdef Py_ssize_t n_t = ts.shape[0]

    out_arr = np.zeros((n_t, n_ctrl), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    work_arr = np.empty(3 * (degree + 1), dtype=np.float64)
    cdef double[::1] work = work_arr

    cdef double* nbuf = &work[0]
    cdef double* left = &work[degree + 1]
    cdef double* right = &work[2 * (degree + 1)]

    cdef Py_ssize_t i, span, lo, hi, mid
    cdef int j, r
    cdef double u, saved, temp, domain_end

    domain_end = knots[n_ctrl]

    for i in range(n_t):
        u = ts[i]

        # Span search: largest index with knots[span] <= u < knots[span+1];
        # the domain end collapses into the final nonvanishing span.
        if u >= domain_end:
            span = n_ctrl - 1
            while knots[span] >= knots[span + 1]:
                span -= 1
        else:
            lo = degree
            hi = n_ctrl
            while hi - lo > 1:
                mid = (lo + hi) // 2
                if u < knots[mid]:
                    hi = mid
                else:
                    lo = mid
            span = lo

        nbuf[0] = 1.0
        for j in range(1, degree + 1):
            left[j] = u - knots[span + 1 - j]
            right[j] = knots[span + j] - u
            saved = 0.0
            for r in range(j):
                temp = nbuf[r] / (right[r + 1] + left[j - r])
                nbuf[r] = saved + right[r + 1] * temp
                saved = left[j - r] * temp
            nbuf[j] = saved

        for r in range(degree + 1):
            out[i, span - degree + r] = nbuf[r]

    return out_arr
