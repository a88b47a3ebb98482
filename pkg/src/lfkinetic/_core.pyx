# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled numerical core.

Mirrors _core_np.py exactly: same clamp/locate order, same interpolation
nesting, same control-scan semantics, no reassociation.  The build flags
(-ffp-contract=off, no -ffast-math) keep results bit-compatible with the
numpy fallback except where a different summation grouping is documented
(the phi accumulator sums sequentially, numpy pairwise).
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport INFINITY, fabs

cnp.import_array()

BACKEND_NAME = "compiled"


cdef inline double _kern1(int code, double param, double x, double y) noexcept nogil:
    if code == 0:
        return 0.0
    elif code == 1:
        return param
    elif code == 2:
        return 1.0 if fabs(x - y) <= param else 0.0
    else:
        return param * (1.0 - x * x)


cdef inline double _clamp(double c, double lo, double hi) noexcept nogil:
    if c < lo:
        return lo
    if c > hi:
        return hi
    return c


cdef inline Py_ssize_t _locate1(double c, double lo, double hi, double h,
                                Py_ssize_t n, double* f_out) noexcept nogil:
    cdef double cc = _clamp(c, lo, hi)
    cdef double t = (cc - lo) / h
    cdef Py_ssize_t i = <Py_ssize_t>t
    if i > n - 2:
        i = n - 2
    f_out[0] = t - <double>i
    return i


cdef inline double _tree16(const double* vf, Py_ssize_t n,
                           Py_ssize_t i1, double wx1a, double wx1b,
                           Py_ssize_t i2, double wx2a, double wx2b,
                           Py_ssize_t j1, double wy1a, double wy1b,
                           Py_ssize_t j2, double wy2a, double wy2b) noexcept nogil:
    cdef Py_ssize_t nn = n * n
    cdef Py_ssize_t nnn = nn * n
    cdef Py_ssize_t base = ((i1 * n + i2) * n + j1) * n + j2
    cdef double x00, x01, x10, x11
    x00 = (wx1a * (wx2a * vf[base] + wx2b * vf[base + nn])
           + wx1b * (wx2a * vf[base + nnn] + wx2b * vf[base + nnn + nn]))
    x01 = (wx1a * (wx2a * vf[base + 1] + wx2b * vf[base + nn + 1])
           + wx1b * (wx2a * vf[base + nnn + 1] + wx2b * vf[base + nnn + nn + 1]))
    x10 = (wx1a * (wx2a * vf[base + n] + wx2b * vf[base + nn + n])
           + wx1b * (wx2a * vf[base + nnn + n] + wx2b * vf[base + nnn + nn + n]))
    x11 = (wx1a * (wx2a * vf[base + n + 1] + wx2b * vf[base + nn + n + 1])
           + wx1b * (wx2a * vf[base + nnn + n + 1] + wx2b * vf[base + nnn + nn + n + 1]))
    return wy1a * (wy2a * x00 + wy2b * x01) + wy1b * (wy2a * x10 + wy2b * x11)


def interp_batch(cnp.ndarray[double, ndim=4] v, double lo, double hi,
                 double h, Py_ssize_t n, cnp.ndarray[double, ndim=2] pts):
    cdef cnp.ndarray[double, ndim=1] out = np.empty(pts.shape[0])
    cdef const double* vf = <const double*>cnp.PyArray_DATA(v)
    cdef Py_ssize_t m = pts.shape[0], k, i1, i2, j1, j2
    cdef double f1, f2, f3, f4
    for k in range(m):
        i1 = _locate1(pts[k, 0], lo, hi, h, n, &f1)
        i2 = _locate1(pts[k, 1], lo, hi, h, n, &f2)
        j1 = _locate1(pts[k, 2], lo, hi, h, n, &f3)
        j2 = _locate1(pts[k, 3], lo, hi, h, n, &f4)
        out[k] = _tree16(vf, n, i1, 1.0 - f1, f1, i2, 1.0 - f2, f2,
                         j1, 1.0 - f3, f3, j2, 1.0 - f4, f4)
    return out


cdef inline double _stage1(double x1, double x2, double y1, double y2,
                           double u, double a_f, double a_l, double gamma,
                           double x_ref) noexcept nogil:
    cdef double dx1 = x1 - x_ref
    cdef double dx2 = x2 - x_ref
    cdef double dy1 = y1 - x_ref
    cdef double dy2 = y2 - x_ref
    cdef double haf = a_f * 0.5
    cdef double hal = a_l * 0.5
    return (haf * (dx1 * dx1 + dx2 * dx2) + hal * (dy1 * dy1 + dy2 * dy2)
            + gamma * (u * u))


cdef struct ScanPre:
    # per-(y1, y2) precomputation shared across the control scan
    double y1d
    double y2d


cdef inline void _y_drift(double y1, double y2, int kll, double pll,
                          double halfdt, ScanPre* pre) noexcept nogil:
    cdef double r12 = _kern1(kll, pll, y1, y2)
    cdef double r21 = _kern1(kll, pll, y2, y1)
    pre.y1d = y1 + halfdt * (r12 * (y2 - y1))
    pre.y2d = y2 + halfdt * (r21 * (y1 - y2))


cdef inline void _u_tables(ScanPre* pre, double dt, double gamma,
                           double lo, double hi, double h, Py_ssize_t n,
                           const double* u_scan, Py_ssize_t nu,
                           Py_ssize_t* j1b, double* w1a, double* w1b,
                           Py_ssize_t* j2b, double* w2a, double* w2b,
                           double* pen,
                           Py_ssize_t* j1lo, Py_ssize_t* j1hi,
                           Py_ssize_t* j2lo, Py_ssize_t* j2hi) noexcept nogil:
    cdef Py_ssize_t k, j
    cdef double u, f
    j1lo[0] = n
    j1hi[0] = 0
    j2lo[0] = n
    j2hi[0] = 0
    for k in range(nu):
        u = u_scan[k]
        j = _locate1(pre.y1d + dt * u, lo, hi, h, n, &f)
        j1b[k] = j
        w1a[k] = 1.0 - f
        w1b[k] = f
        if j < j1lo[0]:
            j1lo[0] = j
        if j > j1hi[0]:
            j1hi[0] = j
        j = _locate1(pre.y2d + dt * u, lo, hi, h, n, &f)
        j2b[k] = j
        w2a[k] = 1.0 - f
        w2b[k] = f
        if j < j2lo[0]:
            j2lo[0] = j
        if j > j2hi[0]:
            j2hi[0] = j
        pen[k] = dt * (gamma * (u * u))


cdef inline void _xblock(const double* vf, Py_ssize_t n,
                         Py_ssize_t i1, double wx1a, double wx1b,
                         Py_ssize_t i2, double wx2a, double wx2b,
                         Py_ssize_t j1lo, Py_ssize_t s1,
                         Py_ssize_t j2lo, Py_ssize_t s2,
                         double* xb) noexcept nogil:
    # xb[a * s2 + b] = x-collapsed value at leader corner (j1lo+a, j2lo+b);
    # identical arithmetic to the x-stage of _tree16
    cdef Py_ssize_t nn = n * n
    cdef Py_ssize_t nnn = nn * n
    cdef Py_ssize_t a, b, base
    cdef const double* row
    for a in range(s1):
        base = ((i1 * n + i2) * n + (j1lo + a)) * n + j2lo
        row = vf + base
        for b in range(s2):
            xb[a * s2 + b] = (wx1a * (wx2a * row[b] + wx2b * row[nn + b])
                              + wx1b * (wx2a * row[nnn + b]
                                        + wx2b * row[nnn + nn + b]))


cdef inline Py_ssize_t _scan_best(const double* xb, Py_ssize_t s2,
                                  Py_ssize_t j1lo, Py_ssize_t j2lo,
                                  const Py_ssize_t* j1b, const double* w1a,
                                  const double* w1b, const Py_ssize_t* j2b,
                                  const double* w2a, const double* w2b,
                                  const double* pen, Py_ssize_t nu,
                                  double beta, double* best_i_out) noexcept nogil:
    cdef double bq = INFINITY
    cdef double bi = 0.0
    cdef Py_ssize_t bk = 0
    cdef Py_ssize_t k, a, b
    cdef double ival, q
    for k in range(nu):
        a = j1b[k] - j1lo
        b = j2b[k] - j2lo
        ival = (w1a[k] * (w2a[k] * xb[a * s2 + b] + w2b[k] * xb[a * s2 + b + 1])
                + w1b[k] * (w2a[k] * xb[(a + 1) * s2 + b]
                            + w2b[k] * xb[(a + 1) * s2 + b + 1]))
        q = beta * ival + pen[k]
        if q < bq:
            bq = q
            bi = ival
            bk = k
    best_i_out[0] = bi
    return bk


def bellman_sweep(cnp.ndarray[double, ndim=4] v, double lo, double hi,
                  double h, Py_ssize_t n,
                  int kff, double pff, int kfl, double pfl, int kll, double pll,
                  double a_f, double a_l, double gamma, double x_ref,
                  double dt, double beta, cnp.ndarray[double, ndim=1] u_scan):
    cdef Py_ssize_t nu = u_scan.shape[0]
    cdef cnp.ndarray[double, ndim=4] v_new = np.empty((n, n, n, n))
    cdef cnp.ndarray[int, ndim=1] k_out = np.empty(n * n * n * n, dtype=np.intc)
    cdef const double* vf = <const double*>cnp.PyArray_DATA(v)
    cdef double* vo = <double*>cnp.PyArray_DATA(v_new)
    cdef int* ko = <int*>cnp.PyArray_DATA(k_out)
    cdef const double* us = <const double*>cnp.PyArray_DATA(u_scan)

    cdef cnp.ndarray[Py_ssize_t, ndim=1] j1b_a = np.empty(nu, dtype=np.intp)
    cdef cnp.ndarray[Py_ssize_t, ndim=1] j2b_a = np.empty(nu, dtype=np.intp)
    cdef cnp.ndarray[double, ndim=1] w1a_a = np.empty(nu)
    cdef cnp.ndarray[double, ndim=1] w1b_a = np.empty(nu)
    cdef cnp.ndarray[double, ndim=1] w2a_a = np.empty(nu)
    cdef cnp.ndarray[double, ndim=1] w2b_a = np.empty(nu)
    cdef cnp.ndarray[double, ndim=1] pen_a = np.empty(nu)
    cdef cnp.ndarray[double, ndim=1] xb_a = np.empty(n * n)
    cdef Py_ssize_t* j1b = <Py_ssize_t*>cnp.PyArray_DATA(j1b_a)
    cdef Py_ssize_t* j2b = <Py_ssize_t*>cnp.PyArray_DATA(j2b_a)
    cdef double* w1a = <double*>cnp.PyArray_DATA(w1a_a)
    cdef double* w1b = <double*>cnp.PyArray_DATA(w1b_a)
    cdef double* w2a = <double*>cnp.PyArray_DATA(w2a_a)
    cdef double* w2b = <double*>cnp.PyArray_DATA(w2b_a)
    cdef double* pen = <double*>cnp.PyArray_DATA(pen_a)
    cdef double* xb = <double*>cnp.PyArray_DATA(xb_a)

    cdef ScanPre pre
    cdef Py_ssize_t jy1, jy2, a1, a2, bk
    cdef Py_ssize_t j1lo, j1hi, j2lo, j2hi, s1, s2, i1, i2
    cdef double y1, y2, x1, x2, halfdt = dt * 0.5
    cdef double p12, s11v, s12v, p21, s21v, s22v, vx1, vx2, x1p, x2p
    cdef double f1, f2, bi, bu, ell

    with nogil:
        for jy1 in range(n):
            y1 = lo + h * <double>jy1
            for jy2 in range(n):
                y2 = lo + h * <double>jy2
                _y_drift(y1, y2, kll, pll, halfdt, &pre)
                _u_tables(&pre, dt, gamma, lo, hi, h, n, us, nu,
                          j1b, w1a, w1b, j2b, w2a, w2b, pen,
                          &j1lo, &j1hi, &j2lo, &j2hi)
                s1 = j1hi - j1lo + 2
                s2 = j2hi - j2lo + 2
                for a1 in range(n):
                    x1 = lo + h * <double>a1
                    for a2 in range(n):
                        x2 = lo + h * <double>a2
                        p12 = _kern1(kff, pff, x1, x2)
                        s11v = _kern1(kfl, pfl, x1, y1)
                        s12v = _kern1(kfl, pfl, x1, y2)
                        vx1 = p12 * (x2 - x1) + s11v * (y1 - x1) + s12v * (y2 - x1)
                        x1p = x1 + halfdt * vx1
                        p21 = _kern1(kff, pff, x2, x1)
                        s21v = _kern1(kfl, pfl, x2, y1)
                        s22v = _kern1(kfl, pfl, x2, y2)
                        vx2 = p21 * (x1 - x2) + s21v * (y1 - x2) + s22v * (y2 - x2)
                        x2p = x2 + halfdt * vx2
                        i1 = _locate1(x1p, lo, hi, h, n, &f1)
                        i2 = _locate1(x2p, lo, hi, h, n, &f2)
                        _xblock(vf, n, i1, 1.0 - f1, f1, i2, 1.0 - f2, f2,
                                j1lo, s1, j2lo, s2, xb)
                        bk = _scan_best(xb, s2, j1lo, j2lo, j1b, w1a, w1b,
                                        j2b, w2a, w2b, pen, nu, beta, &bi)
                        bu = us[bk]
                        ell = _stage1(x1, x2, y1, y2, bu, a_f, a_l, gamma, x_ref)
                        vo[((a1 * n + a2) * n + jy1) * n + jy2] = beta * bi + dt * ell
                        ko[((a1 * n + a2) * n + jy1) * n + jy2] = <int>bk
    return v_new, k_out


def bellman_batch(cnp.ndarray[double, ndim=4] v, double lo, double hi,
                  double h, Py_ssize_t n,
                  int kff, double pff, int kfl, double pfl, int kll, double pll,
                  double a_f, double a_l, double gamma, double x_ref,
                  double dt, double beta, cnp.ndarray[double, ndim=1] u_scan,
                  cnp.ndarray[double, ndim=2] pts):
    cdef Py_ssize_t nu = u_scan.shape[0]
    cdef Py_ssize_t m = pts.shape[0]
    cdef cnp.ndarray[double, ndim=1] vals = np.empty(m)
    cdef cnp.ndarray[double, ndim=1] uout = np.empty(m)
    cdef const double* vf = <const double*>cnp.PyArray_DATA(v)
    cdef const double* us = <const double*>cnp.PyArray_DATA(u_scan)

    cdef cnp.ndarray[Py_ssize_t, ndim=1] j1b_a = np.empty(nu, dtype=np.intp)
    cdef cnp.ndarray[Py_ssize_t, ndim=1] j2b_a = np.empty(nu, dtype=np.intp)
    cdef cnp.ndarray[double, ndim=1] w1a_a = np.empty(nu)
    cdef cnp.ndarray[double, ndim=1] w1b_a = np.empty(nu)
    cdef cnp.ndarray[double, ndim=1] w2a_a = np.empty(nu)
    cdef cnp.ndarray[double, ndim=1] w2b_a = np.empty(nu)
    cdef cnp.ndarray[double, ndim=1] pen_a = np.empty(nu)
    cdef cnp.ndarray[double, ndim=1] xb_a = np.empty(n * n)
    cdef Py_ssize_t* j1b = <Py_ssize_t*>cnp.PyArray_DATA(j1b_a)
    cdef Py_ssize_t* j2b = <Py_ssize_t*>cnp.PyArray_DATA(j2b_a)
    cdef double* w1a = <double*>cnp.PyArray_DATA(w1a_a)
    cdef double* w1b = <double*>cnp.PyArray_DATA(w1b_a)
    cdef double* w2a = <double*>cnp.PyArray_DATA(w2a_a)
    cdef double* w2b = <double*>cnp.PyArray_DATA(w2b_a)
    cdef double* pen = <double*>cnp.PyArray_DATA(pen_a)
    cdef double* xb = <double*>cnp.PyArray_DATA(xb_a)

    cdef ScanPre pre
    cdef Py_ssize_t k, bk, j1lo, j1hi, j2lo, j2hi, s1, s2, i1, i2
    cdef double x1, x2, y1, y2, halfdt = dt * 0.5
    cdef double p12, s11v, s12v, p21, s21v, s22v, vx1, vx2, x1p, x2p
    cdef double f1, f2, bi, bu, ell

    with nogil:
        for k in range(m):
            x1 = _clamp(pts[k, 0], lo, hi)
            x2 = _clamp(pts[k, 1], lo, hi)
            y1 = _clamp(pts[k, 2], lo, hi)
            y2 = _clamp(pts[k, 3], lo, hi)
            _y_drift(y1, y2, kll, pll, halfdt, &pre)
            _u_tables(&pre, dt, gamma, lo, hi, h, n, us, nu,
                      j1b, w1a, w1b, j2b, w2a, w2b, pen,
                      &j1lo, &j1hi, &j2lo, &j2hi)
            s1 = j1hi - j1lo + 2
            s2 = j2hi - j2lo + 2
            p12 = _kern1(kff, pff, x1, x2)
            s11v = _kern1(kfl, pfl, x1, y1)
            s12v = _kern1(kfl, pfl, x1, y2)
            vx1 = p12 * (x2 - x1) + s11v * (y1 - x1) + s12v * (y2 - x1)
            x1p = x1 + halfdt * vx1
            p21 = _kern1(kff, pff, x2, x1)
            s21v = _kern1(kfl, pfl, x2, y1)
            s22v = _kern1(kfl, pfl, x2, y2)
            vx2 = p21 * (x1 - x2) + s21v * (y1 - x2) + s22v * (y2 - x2)
            x2p = x2 + halfdt * vx2
            i1 = _locate1(x1p, lo, hi, h, n, &f1)
            i2 = _locate1(x2p, lo, hi, h, n, &f2)
            _xblock(vf, n, i1, 1.0 - f1, f1, i2, 1.0 - f2, f2,
                    j1lo, s1, j2lo, s2, xb)
            bk = _scan_best(xb, s2, j1lo, j2lo, j1b, w1a, w1b,
                            j2b, w2a, w2b, pen, nu, beta, &bi)
            bu = us[bk]
            ell = _stage1(x1, x2, y1, y2, bu, a_f, a_l, gamma, x_ref)
            vals[k] = beta * bi + dt * ell
            uout[k] = bu
    return vals, uout


def policy_prep(double lo, double hi, double h, Py_ssize_t n,
                int kff, double pff, int kfl, double pfl, int kll, double pll,
                double a_f, double a_l, double gamma, double x_ref,
                double dt, cnp.ndarray[double, ndim=1] u_node):
    cdef Py_ssize_t n_nodes = n * n * n * n
    cdef cnp.ndarray[cnp.int32_t, ndim=2] idx = np.empty((n_nodes, 16), dtype=np.int32)
    cdef cnp.ndarray[double, ndim=2] w = np.empty((n_nodes, 16))
    cdef cnp.ndarray[double, ndim=1] ell = np.empty(n_nodes)
    cdef cnp.int32_t* ip = <cnp.int32_t*>cnp.PyArray_DATA(idx)
    cdef double* wp = <double*>cnp.PyArray_DATA(w)
    cdef double* ep = <double*>cnp.PyArray_DATA(ell)
    cdef const double* up = <const double*>cnp.PyArray_DATA(u_node)

    cdef Py_ssize_t a1, a2, jy1, jy2, node, col, c1, c2, c3, c4
    cdef Py_ssize_t i1, i2, j1, j2, b1, b2, b3, b4
    cdef double x1, x2, y1, y2, u, halfdt = dt * 0.5
    cdef double p12, s11v, s12v, p21, s21v, s22v, r12, r21
    cdef double x1p, x2p, y1p, y2p, f1, f2, f3, f4
    cdef double wax[2]
    cdef double wbx[2]
    cdef double way[2]
    cdef double wby[2]
    cdef double wx, wy

    with nogil:
        node = 0
        for a1 in range(n):
            x1 = lo + h * <double>a1
            for a2 in range(n):
                x2 = lo + h * <double>a2
                for jy1 in range(n):
                    y1 = lo + h * <double>jy1
                    for jy2 in range(n):
                        y2 = lo + h * <double>jy2
                        u = up[node]
                        p12 = _kern1(kff, pff, x1, x2)
                        s11v = _kern1(kfl, pfl, x1, y1)
                        s12v = _kern1(kfl, pfl, x1, y2)
                        x1p = x1 + halfdt * (p12 * (x2 - x1) + s11v * (y1 - x1)
                                             + s12v * (y2 - x1))
                        p21 = _kern1(kff, pff, x2, x1)
                        s21v = _kern1(kfl, pfl, x2, y1)
                        s22v = _kern1(kfl, pfl, x2, y2)
                        x2p = x2 + halfdt * (p21 * (x1 - x2) + s21v * (y1 - x2)
                                             + s22v * (y2 - x2))
                        r12 = _kern1(kll, pll, y1, y2)
                        y1p = (y1 + halfdt * (r12 * (y2 - y1))) + dt * u
                        r21 = _kern1(kll, pll, y2, y1)
                        y2p = (y2 + halfdt * (r21 * (y1 - y2))) + dt * u
                        i1 = _locate1(x1p, lo, hi, h, n, &f1)
                        i2 = _locate1(x2p, lo, hi, h, n, &f2)
                        j1 = _locate1(y1p, lo, hi, h, n, &f3)
                        j2 = _locate1(y2p, lo, hi, h, n, &f4)
                        wax[0] = 1.0 - f1
                        wax[1] = f1
                        wbx[0] = 1.0 - f2
                        wbx[1] = f2
                        way[0] = 1.0 - f3
                        way[1] = f3
                        wby[0] = 1.0 - f4
                        wby[1] = f4
                        col = 0
                        for c1 in range(2):
                            b1 = i1 + c1
                            for c2 in range(2):
                                b2 = i2 + c2
                                wx = wax[c1] * wbx[c2]
                                for c3 in range(2):
                                    b3 = j1 + c3
                                    for c4 in range(2):
                                        b4 = j2 + c4
                                        wy = way[c3] * wby[c4]
                                        ip[node * 16 + col] = <cnp.int32_t>(
                                            ((b1 * n + b2) * n + b3) * n + b4)
                                        wp[node * 16 + col] = wx * wy
                                        col += 1
                        ep[node] = _stage1(x1, x2, y1, y2, u, a_f, a_l,
                                           gamma, x_ref)
                        node += 1
    return idx, w, ell


def phi_grid(cnp.ndarray[double, ndim=4] v, double lo, double hi,
             double h, Py_ssize_t n,
             int kff, double pff, int kfl, double pfl, int kll, double pll,
             double gamma, double dt, double beta,
             cnp.ndarray[double, ndim=1] u_scan,
             cnp.ndarray[double, ndim=1] xs,
             cnp.ndarray[double, ndim=1] yi,
             cnp.ndarray[double, ndim=1] yr):
    cdef Py_ssize_t nu = u_scan.shape[0]
    cdef Py_ssize_t sig = xs.shape[0]
    cdef Py_ssize_t mc = yi.shape[0]
    cdef cnp.ndarray[double, ndim=1] out = np.empty(mc)
    cdef const double* vf = <const double*>cnp.PyArray_DATA(v)
    cdef const double* us = <const double*>cnp.PyArray_DATA(u_scan)

    cdef cnp.ndarray[double, ndim=1] xs_cl = np.empty(sig)
    cdef cnp.ndarray[Py_ssize_t, ndim=1] j1b_a = np.empty(nu, dtype=np.intp)
    cdef cnp.ndarray[Py_ssize_t, ndim=1] j2b_a = np.empty(nu, dtype=np.intp)
    cdef cnp.ndarray[double, ndim=1] w1a_a = np.empty(nu)
    cdef cnp.ndarray[double, ndim=1] w1b_a = np.empty(nu)
    cdef cnp.ndarray[double, ndim=1] w2a_a = np.empty(nu)
    cdef cnp.ndarray[double, ndim=1] w2b_a = np.empty(nu)
    cdef cnp.ndarray[double, ndim=1] pen_a = np.empty(nu)
    cdef cnp.ndarray[double, ndim=1] xb_a = np.empty(n * n)
    cdef double* xcl = <double*>cnp.PyArray_DATA(xs_cl)
    cdef Py_ssize_t* j1b = <Py_ssize_t*>cnp.PyArray_DATA(j1b_a)
    cdef Py_ssize_t* j2b = <Py_ssize_t*>cnp.PyArray_DATA(j2b_a)
    cdef double* w1a = <double*>cnp.PyArray_DATA(w1a_a)
    cdef double* w1b = <double*>cnp.PyArray_DATA(w1b_a)
    cdef double* w2a = <double*>cnp.PyArray_DATA(w2a_a)
    cdef double* w2b = <double*>cnp.PyArray_DATA(w2b_a)
    cdef double* pen = <double*>cnp.PyArray_DATA(pen_a)
    cdef double* xb = <double*>cnp.PyArray_DATA(xb_a)

    cdef ScanPre pre
    cdef Py_ssize_t j, a, b, bk, j1lo, j1hi, j2lo, j2hi, s1, s2, i1, i2
    cdef double y1, y2, x1, x2, halfdt = dt * 0.5
    cdef double p12, s11v, s12v, p21, s21v, s22v, vx1, vx2, x1p, x2p
    cdef double f1, f2, bi, acc

    with nogil:
        for a in range(sig):
            xcl[a] = _clamp(xs[a], lo, hi)
        for j in range(mc):
            y1 = _clamp(yi[j], lo, hi)
            y2 = _clamp(yr[j], lo, hi)
            _y_drift(y1, y2, kll, pll, halfdt, &pre)
            _u_tables(&pre, dt, gamma, lo, hi, h, n, us, nu,
                      j1b, w1a, w1b, j2b, w2a, w2b, pen,
                      &j1lo, &j1hi, &j2lo, &j2hi)
            s1 = j1hi - j1lo + 2
            s2 = j2hi - j2lo + 2
            acc = 0.0
            for a in range(sig):
                x1 = xcl[a]
                s11v = _kern1(kfl, pfl, x1, y1)
                s12v = _kern1(kfl, pfl, x1, y2)
                for b in range(sig):
                    x2 = xcl[b]
                    p12 = _kern1(kff, pff, x1, x2)
                    vx1 = p12 * (x2 - x1) + s11v * (y1 - x1) + s12v * (y2 - x1)
                    x1p = x1 + halfdt * vx1
                    p21 = _kern1(kff, pff, x2, x1)
                    s21v = _kern1(kfl, pfl, x2, y1)
                    s22v = _kern1(kfl, pfl, x2, y2)
                    vx2 = p21 * (x1 - x2) + s21v * (y1 - x2) + s22v * (y2 - x2)
                    x2p = x2 + halfdt * vx2
                    i1 = _locate1(x1p, lo, hi, h, n, &f1)
                    i2 = _locate1(x2p, lo, hi, h, n, &f2)
                    _xblock(vf, n, i1, 1.0 - f1, f1, i2, 1.0 - f2, f2,
                            j1lo, s1, j2lo, s2, xb)
                    bk = _scan_best(xb, s2, j1lo, j2lo, j1b, w1a, w1b,
                                    j2b, w2a, w2b, pen, nu, beta, &bi)
                    acc += us[bk]
            out[j] = acc / <double>(sig * sig)
    return out


def apply_partial_shuffle(cnp.ndarray[cnp.int64_t, ndim=1] idx,
                          cnp.ndarray[cnp.int64_t, ndim=1] draws):
    cdef Py_ssize_t t, j
    cdef cnp.int64_t tmp
    for t in range(draws.shape[0]):
        j = <Py_ssize_t>draws[t]
        tmp = idx[t]
        idx[t] = idx[j]
        idx[j] = tmp
