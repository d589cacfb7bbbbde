# cython: language_level=3
"""Compiled hot loops: section areas, weighted PAVA, ICM curvature, L1 sweep.

Signatures mirror ``sizeunfold._fallback`` exactly; ``sizeunfold.kernels``
picks one of the two at import time.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport fabs
from libc.stdlib cimport malloc, free

cnp.import_array()


def section_areas(const double[:, ::1] verts,
                  const cnp.int64_t[::1] he_from,
                  const cnp.int64_t[::1] he_to,
                  const cnp.int64_t[::1] face_ptr,
                  const double[:, ::1] normals,
                  const double[::1] offsets):
    """Areas of ``K ∩ {x : <x, n_k> = s_k}`` for a batch of planes.

    Half-edges are grouped by face (``face_ptr`` delimits each face) and
    every face is traversed counter-clockwise seen from outside. On each cut
    face the plane enters through one half-edge and leaves through another;
    the oriented segment between them is one edge of the section polygon, so
    the area is half the sum of ``det(a, b, n)`` over cut faces.
    """
    cdef Py_ssize_t nv = verts.shape[0]
    cdef Py_ssize_t nf = face_ptr.shape[0] - 1
    cdef Py_ssize_t m = normals.shape[0]
    cdef Py_ssize_t k, v, f, h, hd, hu
    cdef double nx, ny, nz, s, total, t
    cdef double ax, ay, az, bx, by, bz, d0, d1
    cdef cnp.int64_t u, w
    out = np.zeros(m, dtype=np.float64)
    cdef double[::1] res = out
    cdef double* d = <double*> malloc(nv * sizeof(double))
    if d == NULL:
        raise MemoryError()
    try:
        with nogil:
            for k in range(m):
                nx = normals[k, 0]
                ny = normals[k, 1]
                nz = normals[k, 2]
                s = offsets[k]
                for v in range(nv):
                    d[v] = verts[v, 0] * nx + verts[v, 1] * ny + verts[v, 2] * nz - s
                total = 0.0
                for f in range(nf):
                    hd = -1
                    hu = -1
                    for h in range(face_ptr[f], face_ptr[f + 1]):
                        d0 = d[he_from[h]]
                        d1 = d[he_to[h]]
                        if d0 >= 0.0 and d1 < 0.0:
                            hd = h
                        elif d0 < 0.0 and d1 >= 0.0:
                            hu = h
                    if hd < 0 or hu < 0:
                        continue
                    u = he_from[hd]
                    w = he_to[hd]
                    t = d[u] / (d[u] - d[w])
                    ax = verts[u, 0] + t * (verts[w, 0] - verts[u, 0])
                    ay = verts[u, 1] + t * (verts[w, 1] - verts[u, 1])
                    az = verts[u, 2] + t * (verts[w, 2] - verts[u, 2])
                    u = he_from[hu]
                    w = he_to[hu]
                    t = d[u] / (d[u] - d[w])
                    bx = verts[u, 0] + t * (verts[w, 0] - verts[u, 0])
                    by = verts[u, 1] + t * (verts[w, 1] - verts[u, 1])
                    bz = verts[u, 2] + t * (verts[w, 2] - verts[u, 2])
                    total += (ay * bz - az * by) * nx + (az * bx - ax * bz) * ny + (ax * by - ay * bx) * nz
                total *= 0.5
                res[k] = total if total > 0.0 else 0.0
    finally:
        free(d)
    return out


def pava(const double[::1] y, const double[::1] w):
    """Weighted least-squares nondecreasing fit by pool-adjacent-violators."""
    cdef Py_ssize_t n = y.shape[0]
    cdef Py_ssize_t i, j, nb = 0
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] res = out
    if n == 0:
        return out
    cdef double* level = <double*> malloc(n * sizeof(double))
    cdef double* weight = <double*> malloc(n * sizeof(double))
    cdef Py_ssize_t* size = <Py_ssize_t*> malloc(n * sizeof(Py_ssize_t))
    if level == NULL or weight == NULL or size == NULL:
        free(level); free(weight); free(size)
        raise MemoryError()
    cdef double wsum
    with nogil:
        for i in range(n):
            level[nb] = y[i]
            weight[nb] = w[i]
            size[nb] = 1
            nb += 1
            while nb > 1 and level[nb - 2] > level[nb - 1]:
                wsum = weight[nb - 2] + weight[nb - 1]
                level[nb - 2] = (weight[nb - 2] * level[nb - 2] + weight[nb - 1] * level[nb - 1]) / wsum
                weight[nb - 2] = wsum
                size[nb - 2] += size[nb - 1]
                nb -= 1
        i = 0
        for j in range(nb):
            while size[j] > 0:
                res[i] = level[j]
                i += 1
                size[j] -= 1
    free(level); free(weight); free(size)
    return out


def diff_sq_rmatvec(const double[:, ::1] a, const double[::1] w, double[::1] out):
    """Accumulate ``out[j] += sum_i w_i (a_ij - a_i,j+1)^2`` (``a_i,m = 0``)."""
    cdef Py_ssize_t r = a.shape[0]
    cdef Py_ssize_t m = a.shape[1]
    cdef Py_ssize_t i, j
    cdef double wi, d
    with nogil:
        for i in range(r):
            wi = w[i]
            for j in range(m - 1):
                d = a[i, j] - a[i, j + 1]
                out[j] += wi * d * d
            out[m - 1] += wi * a[i, m - 1] * a[i, m - 1]


def suffix_l1_sweep(const double[::1] widths,
                    const cnp.int64_t[::1] origin,
                    const double[::1] step,
                    const double[::1] inv_mass,
                    double[::1] total):
    """Accumulate the L1 distance of every atom suffix over sorted jumps.

    ``origin[r]`` names the jump at the left end of interval ``r`` (atom index,
    or ``m`` for an observation) and ``step`` its height. On each interval
    ``total[k] += widths[r] * |S_k * inv_mass[k] - E|`` with ``S_k`` the summed
    levels of atoms ``k..m-1`` and ``E`` the empirical level.
    """
    cdef Py_ssize_t m = total.shape[0]
    cdef Py_ssize_t nr = widths.shape[0]
    cdef Py_ssize_t r, k
    cdef cnp.int64_t o
    cdef double wd, e, acc
    cdef double* level = <double*> malloc((m + 1) * sizeof(double))
    if level == NULL:
        raise MemoryError()
    with nogil:
        for k in range(m + 1):
            level[k] = 0.0
        for r in range(nr):
            o = origin[r]
            level[o] += step[o]
            wd = widths[r]
            if wd == 0.0:
                continue
            e = level[m]
            acc = 0.0
            for k in range(m - 1, -1, -1):
                acc += level[k]
                total[k] += wd * fabs(acc * inv_mass[k] - e)
    free(level)
