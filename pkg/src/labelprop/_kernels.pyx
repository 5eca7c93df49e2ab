# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
# distutils: language = c++
"""Compiled radius search and label propagation.

Mirrors ``_kernels_py`` function for function; see that module for the
argument conventions.
"""

import numpy as np

from libc.math cimport floor, ceil, sqrt, exp, log
from libc.stdlib cimport malloc, free
from libc.string cimport memset
from libcpp.vector cimport vector

ctypedef long long i64

cdef double EPS = 1e-9
cdef double LN2 = log(2.0)


cdef inline Py_ssize_t lower_bound(const i64[::1] a, i64 v) noexcept nogil:
    cdef Py_ssize_t lo = 0, hi = a.shape[0], mid
    while lo < hi:
        mid = (lo + hi) >> 1
        if a[mid] < v:
            lo = mid + 1
        else:
            hi = mid
    return lo


cdef inline Py_ssize_t upper_bound(const i64[::1] a, i64 v) noexcept nogil:
    cdef Py_ssize_t lo = 0, hi = a.shape[0], mid
    while lo < hi:
        mid = (lo + hi) >> 1
        if a[mid] <= v:
            lo = mid + 1
        else:
            hi = mid
    return lo


cdef inline double gap(double c0, double w, double q, double eps) noexcept nogil:
    cdef double e = c0 - q
    cdef double f = q - (c0 + w)
    if f > e:
        e = f
    e -= eps
    return e if e > 0.0 else 0.0


cdef inline bint column_range(const i64[::1] lin, const i64[::1] kmin, const i64[::1] dims,
                              double vs, double r2, double eps,
                              double qx, double qy, double qz, i64 kx, i64 ky,
                              Py_ssize_t* lo, Py_ssize_t* hi) noexcept nogil:
    """Slice of sorted points in column (kx, ky) whose cells meet the query sphere."""
    cdef double ex, ey, dxy2, dz
    cdef i64 kz_lo, kz_hi, base
    if kx < kmin[0] or kx >= kmin[0] + dims[0] or ky < kmin[1] or ky >= kmin[1] + dims[1]:
        return False
    ex = gap(kx * vs, vs, qx, eps)
    ey = gap(ky * vs, vs, qy, eps)
    dxy2 = ex * ex + ey * ey
    if dxy2 > r2:
        return False
    dz = sqrt(r2 - dxy2)
    kz_lo = <i64>floor((qz - dz - eps) / vs)
    kz_hi = <i64>floor((qz + dz + eps) / vs)
    if kz_lo < kmin[2]:
        kz_lo = kmin[2]
    if kz_hi > kmin[2] + dims[2] - 1:
        kz_hi = kmin[2] + dims[2] - 1
    if kz_lo > kz_hi:
        return False
    base = ((kx - kmin[0]) * dims[1] + (ky - kmin[1])) * dims[2] - kmin[2]
    lo[0] = lower_bound(lin, base + kz_lo)
    hi[0] = upper_bound(lin, base + kz_hi)
    return hi[0] > lo[0]


def radius_query(const double[:, ::1] pts, const i64[::1] lin, const i64[::1] kmin, const i64[::1] dims,
                 double vs, const double[:, ::1] queries, double radius):
    cdef Py_ssize_t m = queries.shape[0], q, j, lo = 0, hi = 0
    cdef double r2 = radius * radius, eps = EPS * vs, qx, qy, qz, ddx, ddy, ddz, d2
    cdef i64 reach = <i64>ceil(radius / vs) + 1, dx, dy, qkx, qky
    cdef vector[i64] idx
    cdef vector[double] dist
    offsets = np.zeros(m + 1, dtype=np.int64)
    cdef i64[::1] off = offsets
    with nogil:
        for q in range(m):
            qx = queries[q, 0]
            qy = queries[q, 1]
            qz = queries[q, 2]
            qkx = <i64>floor(qx / vs)
            qky = <i64>floor(qy / vs)
            if pts.shape[0] > 0:
                for dx in range(-reach, reach + 1):
                    for dy in range(-reach, reach + 1):
                        if not column_range(lin, kmin, dims, vs, r2, eps, qx, qy, qz,
                                            qkx + dx, qky + dy, &lo, &hi):
                            continue
                        for j in range(lo, hi):
                            ddx = pts[j, 0] - qx
                            ddy = pts[j, 1] - qy
                            ddz = pts[j, 2] - qz
                            d2 = ddx * ddx + ddy * ddy + ddz * ddz
                            if d2 <= r2:
                                idx.push_back(j)
                                dist.push_back(d2)
            off[q + 1] = <i64>idx.size()
    n = idx.size()
    out_idx = np.empty(n, dtype=np.int64)
    out_d2 = np.empty(n, dtype=np.float64)
    cdef i64[::1] oi = out_idx
    cdef double[::1] od = out_d2
    for j in range(<Py_ssize_t>n):
        oi[j] = idx[j]
        od[j] = dist[j]
    return offsets, out_idx, out_d2


def propagate(const double[:, ::1] pts, const i64[::1] lin, const i64[::1] kmin, const i64[::1] dims,
              double vs, const int[::1] labels, const double[::1] conf,
              const double[:, ::1] queries, double d_prop, double cutoff, int num_labels, int num_dynamic):
    cdef Py_ssize_t m = queries.shape[0], q, j, lo = 0, hi = 0
    cdef double r2 = d_prop * d_prop, eps = EPS * vs, qx, qy, qz, ddx, ddy, ddz, d2, g, w, top
    cdef i64 reach = <i64>ceil(d_prop / vs) + 1, dx, dy, qkx, qky
    cdef int lab, best, l
    out_labels_arr = np.full(m, -1, dtype=np.int32)
    out_conf_arr = np.zeros(m, dtype=np.float64)
    out_score_arr = np.zeros(m, dtype=np.float64)
    cdef int[::1] out_labels = out_labels_arr
    cdef double[::1] out_conf = out_conf_arr
    cdef double[::1] out_score = out_score_arr
    if pts.shape[0] == 0 or m == 0:
        return out_labels_arr, out_conf_arr, out_score_arr
    cdef double* score = <double*>malloc(2 * num_labels * sizeof(double))
    cdef double* gsum = score + num_labels
    if score == NULL:
        raise MemoryError()
    try:
        with nogil:
            for q in range(m):
                memset(score, 0, 2 * num_labels * sizeof(double))
                qx = queries[q, 0]
                qy = queries[q, 1]
                qz = queries[q, 2]
                qkx = <i64>floor(qx / vs)
                qky = <i64>floor(qy / vs)
                for dx in range(-reach, reach + 1):
                    for dy in range(-reach, reach + 1):
                        if not column_range(lin, kmin, dims, vs, r2, eps, qx, qy, qz,
                                            qkx + dx, qky + dy, &lo, &hi):
                            continue
                        for j in range(lo, hi):
                            lab = labels[j]
                            if lab < 0:
                                continue
                            ddx = pts[j, 0] - qx
                            ddy = pts[j, 1] - qy
                            ddz = pts[j, 2] - qz
                            d2 = ddx * ddx + ddy * ddy + ddz * ddz
                            if d2 > r2:
                                continue
                            g = exp(-(d2 / r2) * LN2)
                            w = g * conf[j]
                            if w > cutoff:
                                score[lab] += w
                                gsum[lab] += g
                best = 0
                top = score[0]
                for l in range(1, num_labels):
                    if score[l] > top:
                        top = score[l]
                        best = l
                if top > 0.0 and best >= num_dynamic:
                    out_labels[q] = best
                    out_conf[q] = top / gsum[best]
                    out_score[q] = top
    finally:
        free(score)
    return out_labels_arr, out_conf_arr, out_score_arr
