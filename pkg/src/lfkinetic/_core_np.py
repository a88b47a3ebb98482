"""Pure numpy implementation of the numerical core.

The compiled extension (_core) mirrors every function here with the same
floating point expression trees: no reassociation, no fused multiply-add,
identical clamp/locate/interpolation order.  Keep the two in sync; parity
is enforced by tests.

Conventions shared by both backends:

* value grids are C-contiguous float64 arrays of shape (n, n, n, n) over
  axes (x1, x2, y1, y2), node k of every axis at lo + h * k;
* query coordinates are clamped into [lo, hi] before locating;
* four-linear interpolation nests as
      lerp_y1( lerp_y2( lerp_x1( lerp_x2( V ) ) ) )
  with each lerp computed as  wa * a + wb * b,  wa = 1 - f, wb = f;
* control scans visit ``u_scan`` in order (increasing |u|, negative
  first on magnitude ties) and keep the first strict minimum of
      q = beta * I(u) + dt * gamma * u^2
  (state terms of the stage cost do not depend on u and are left out of
  the scan); reported values are rebuilt as beta * I(u*) + dt * l(s, u*).
"""

from __future__ import annotations

import numpy as np

BACKEND_NAME = "numpy"


def _kern(code: int, param: float, x, y):
    if code == 0:
        return np.zeros_like(x)
    if code == 1:
        return np.full_like(x, param)
    if code == 2:
        return np.where(np.abs(x - y) <= param, 1.0, 0.0)
    if code == 3:
        return param * (1.0 - x * x)
    raise ValueError(f"bad kernel code {code}")


def _locate(c, lo, hi, h, n):
    """Clamp c into [lo, hi] and split into cell index and fraction."""
    cc = np.minimum(np.maximum(c, lo), hi)
    t = (cc - lo) / h
    i = t.astype(np.int64)
    i = np.minimum(i, n - 2)
    f = t - i
    return cc, i, f


def _gather(vflat, n, i1, i2, j1, j2):
    return vflat[((i1 * n + i2) * n + j1) * n + j2]


def _interp_tree(vflat, n, i1, wx1a, wx1b, i2, wx2a, wx2b, j1, wy1a, wy1b,
                 j2, wy2a, wy2b):
    i1b = i1 + 1
    i2b = i2 + 1
    j1b = j1 + 1
    j2b = j2 + 1
    x00 = (wx1a * (wx2a * _gather(vflat, n, i1, i2, j1, j2)
                   + wx2b * _gather(vflat, n, i1, i2b, j1, j2))
           + wx1b * (wx2a * _gather(vflat, n, i1b, i2, j1, j2)
                     + wx2b * _gather(vflat, n, i1b, i2b, j1, j2)))
    x01 = (wx1a * (wx2a * _gather(vflat, n, i1, i2, j1, j2b)
                   + wx2b * _gather(vflat, n, i1, i2b, j1, j2b))
           + wx1b * (wx2a * _gather(vflat, n, i1b, i2, j1, j2b)
                     + wx2b * _gather(vflat, n, i1b, i2b, j1, j2b)))
    x10 = (wx1a * (wx2a * _gather(vflat, n, i1, i2, j1b, j2)
                   + wx2b * _gather(vflat, n, i1, i2b, j1b, j2))
           + wx1b * (wx2a * _gather(vflat, n, i1b, i2, j1b, j2)
                     + wx2b * _gather(vflat, n, i1b, i2b, j1b, j2)))
    x11 = (wx1a * (wx2a * _gather(vflat, n, i1, i2, j1b, j2b)
                   + wx2b * _gather(vflat, n, i1, i2b, j1b, j2b))
           + wx1b * (wx2a * _gather(vflat, n, i1b, i2, j1b, j2b)
                     + wx2b * _gather(vflat, n, i1b, i2b, j1b, j2b)))
    return wy1a * (wy2a * x00 + wy2b * x01) + wy1b * (wy2a * x10 + wy2b * x11)


def interp_batch(v, lo, hi, h, n, pts):
    """Four-linear interpolation of v at pts (m, 4); clamps into the box."""
    vflat = np.ascontiguousarray(v).reshape(-1)
    pts = np.asarray(pts, dtype=np.float64)
    _, i1, f1 = _locate(pts[:, 0], lo, hi, h, n)
    _, i2, f2 = _locate(pts[:, 1], lo, hi, h, n)
    _, j1, f3 = _locate(pts[:, 2], lo, hi, h, n)
    _, j2, f4 = _locate(pts[:, 3], lo, hi, h, n)
    return _interp_tree(vflat, n, i1, 1.0 - f1, f1, i2, 1.0 - f2, f2,
                        j1, 1.0 - f3, f3, j2, 1.0 - f4, f4)


def _eval_scan(vflat, lo, hi, h, n, kff, pff, kfl, pfl, kll, pll,
               gamma, dt, beta, u_scan, x1, x2, y1, y2):
    """Scan the control grid at states (x1, x2, y1, y2) (equal-shape arrays).

    Returns (best_I, best_u, best_scan_idx): the interpolated value at the
    post-state of the winning control, the winning control value, and its
    index into u_scan.
    """
    halfdt = dt * 0.5

    p12 = _kern(kff, pff, x1, x2)
    s11 = _kern(kfl, pfl, x1, y1)
    s12 = _kern(kfl, pfl, x1, y2)
    vx1 = p12 * (x2 - x1) + s11 * (y1 - x1) + s12 * (y2 - x1)
    x1p = x1 + halfdt * vx1

    p21 = _kern(kff, pff, x2, x1)
    s21 = _kern(kfl, pfl, x2, y1)
    s22 = _kern(kfl, pfl, x2, y2)
    vx2 = p21 * (x1 - x2) + s21 * (y1 - x2) + s22 * (y2 - x2)
    x2p = x2 + halfdt * vx2

    r12 = _kern(kll, pll, y1, y2)
    y1d = y1 + halfdt * (r12 * (y2 - y1))
    r21 = _kern(kll, pll, y2, y1)
    y2d = y2 + halfdt * (r21 * (y1 - y2))

    _, i1, f1 = _locate(x1p, lo, hi, h, n)
    _, i2, f2 = _locate(x2p, lo, hi, h, n)
    wx1a = 1.0 - f1
    wx2a = 1.0 - f2

    best_q = np.full(x1.shape, np.inf)
    best_i = np.zeros(x1.shape)
    best_u = np.zeros(x1.shape)
    best_k = np.zeros(x1.shape, dtype=np.int64)
    for k in range(u_scan.shape[0]):
        u = u_scan[k]
        y1p = y1d + dt * u
        y2p = y2d + dt * u
        _, j1, f3 = _locate(y1p, lo, hi, h, n)
        _, j2, f4 = _locate(y2p, lo, hi, h, n)
        ival = _interp_tree(vflat, n, i1, wx1a, f1, i2, wx2a, f2,
                            j1, 1.0 - f3, f3, j2, 1.0 - f4, f4)
        pen = dt * (gamma * (u * u))
        q = beta * ival + pen
        better = q < best_q
        best_q = np.where(better, q, best_q)
        best_i = np.where(better, ival, best_i)
        best_u = np.where(better, u, best_u)
        best_k = np.where(better, k, best_k)
    return best_i, best_u, best_k


def _stage_cost(x1, x2, y1, y2, u, a_f, a_l, gamma, x_ref):
    dx1 = x1 - x_ref
    dx2 = x2 - x_ref
    dy1 = y1 - x_ref
    dy2 = y2 - x_ref
    haf = a_f * 0.5
    hal = a_l * 0.5
    return (haf * (dx1 * dx1 + dx2 * dx2) + hal * (dy1 * dy1 + dy2 * dy2)
            + gamma * (u * u))


def bellman_batch(v, lo, hi, h, n, kff, pff, kfl, pfl, kll, pll,
                  a_f, a_l, gamma, x_ref, dt, beta, u_scan, pts):
    """One-step lookahead at arbitrary states: values and argmin controls.

    States are clamped into the grid box before evaluation.  Returns
    (values, controls) with values = beta * I(u*) + dt * l(s, u*).
    """
    vflat = np.ascontiguousarray(v).reshape(-1)
    pts = np.asarray(pts, dtype=np.float64)
    x1 = np.minimum(np.maximum(pts[:, 0], lo), hi)
    x2 = np.minimum(np.maximum(pts[:, 1], lo), hi)
    y1 = np.minimum(np.maximum(pts[:, 2], lo), hi)
    y2 = np.minimum(np.maximum(pts[:, 3], lo), hi)
    best_i, best_u, _ = _eval_scan(vflat, lo, hi, h, n, kff, pff, kfl, pfl,
                                   kll, pll, gamma, dt, beta, u_scan,
                                   x1, x2, y1, y2)
    ell = _stage_cost(x1, x2, y1, y2, best_u, a_f, a_l, gamma, x_ref)
    vals = beta * best_i + dt * ell
    return vals, best_u


def _node_coords(lo, h, n):
    axis = lo + h * np.arange(n, dtype=np.float64)
    x1 = np.repeat(axis, n * n * n)
    x2 = np.tile(np.repeat(axis, n * n), n)
    y1 = np.tile(np.repeat(axis, n), n * n)
    y2 = np.tile(axis, n * n * n)
    return x1, x2, y1, y2


def bellman_sweep(v, lo, hi, h, n, kff, pff, kfl, pfl, kll, pll,
                  a_f, a_l, gamma, x_ref, dt, beta, u_scan):
    """Full Jacobi sweep of the minimization operator over all grid nodes.

    Returns (v_new, scan_idx): the updated value array (same shape as v)
    and the winning u_scan index per node as int32.
    """
    vflat = np.ascontiguousarray(v).reshape(-1)
    x1, x2, y1, y2 = _node_coords(lo, h, n)
    best_i, best_u, best_k = _eval_scan(vflat, lo, hi, h, n, kff, pff,
                                        kfl, pfl, kll, pll, gamma, dt, beta,
                                        u_scan, x1, x2, y1, y2)
    ell = _stage_cost(x1, x2, y1, y2, best_u, a_f, a_l, gamma, x_ref)
    v_new = beta * best_i + dt * ell
    return v_new.reshape(n, n, n, n), best_k.astype(np.int32)


def policy_prep(lo, hi, h, n, kff, pff, kfl, pfl, kll, pll,
                a_f, a_l, gamma, x_ref, dt, u_node):
    """Interpolation stencil rows for a frozen control per node.

    For every grid node with its assigned control u, returns the 16 flat
    corner indices and weights of the post-state interpolation plus the
    stage cost, i.e. the ingredients of the linear fixed-point equation
    V = dt * ell + beta * P V.  Weight products here are plain flat
    products (the linear solve is tolerance based, not bit-audited).
    """
    x1, x2, y1, y2 = _node_coords(lo, h, n)
    u = np.asarray(u_node, dtype=np.float64)
    halfdt = dt * 0.5

    p12 = _kern(kff, pff, x1, x2)
    s11 = _kern(kfl, pfl, x1, y1)
    s12 = _kern(kfl, pfl, x1, y2)
    x1p = x1 + halfdt * (p12 * (x2 - x1) + s11 * (y1 - x1) + s12 * (y2 - x1))
    p21 = _kern(kff, pff, x2, x1)
    s21 = _kern(kfl, pfl, x2, y1)
    s22 = _kern(kfl, pfl, x2, y2)
    x2p = x2 + halfdt * (p21 * (x1 - x2) + s21 * (y1 - x2) + s22 * (y2 - x2))
    r12 = _kern(kll, pll, y1, y2)
    y1p = (y1 + halfdt * (r12 * (y2 - y1))) + dt * u
    r21 = _kern(kll, pll, y2, y1)
    y2p = (y2 + halfdt * (r21 * (y1 - y2))) + dt * u

    _, i1, f1 = _locate(x1p, lo, hi, h, n)
    _, i2, f2 = _locate(x2p, lo, hi, h, n)
    _, j1, f3 = _locate(y1p, lo, hi, h, n)
    _, j2, f4 = _locate(y2p, lo, hi, h, n)

    n_nodes = x1.shape[0]
    idx = np.empty((n_nodes, 16), dtype=np.int32)
    w = np.empty((n_nodes, 16))
    wax = (1.0 - f1, f1)
    wbx = (1.0 - f2, f2)
    way = (1.0 - f3, f3)
    wby = (1.0 - f4, f4)
    col = 0
    for c1 in (0, 1):
        a1 = i1 + c1
        for c2 in (0, 1):
            a2 = i2 + c2
            wx = wax[c1] * wbx[c2]
            for c3 in (0, 1):
                a3 = j1 + c3
                for c4 in (0, 1):
                    a4 = j2 + c4
                    wy = way[c3] * wby[c4]
                    idx[:, col] = ((a1 * n + a2) * n + a3) * n + a4
                    w[:, col] = wx * wy
                    col += 1
    ell = _stage_cost(x1, x2, y1, y2, u, a_f, a_l, gamma, x_ref)
    return idx, w, ell


def phi_grid(v, lo, hi, h, n, kff, pff, kfl, pfl, kll, pll,
             gamma, dt, beta, u_scan, xs, yi, yr):
    """Per-collision control averages against a shared follower sample.

    For each collision (yi[j], yr[j]) the feedback control is evaluated at
    every ordered follower pair (xs[a], xs[b]) and averaged.  Returns one
    phi value per collision.
    """
    vflat = np.ascontiguousarray(v).reshape(-1)
    xs = np.asarray(xs, dtype=np.float64)
    sig = xs.shape[0]
    xh = np.repeat(xs, sig)
    xk = np.tile(xs, sig)
    x1 = np.minimum(np.maximum(xh, lo), hi)
    x2 = np.minimum(np.maximum(xk, lo), hi)
    out = np.empty(yi.shape[0])
    for j in range(yi.shape[0]):
        y1 = np.full(sig * sig, min(max(yi[j], lo), hi))
        y2 = np.full(sig * sig, min(max(yr[j], lo), hi))
        _, best_u, _ = _eval_scan(vflat, lo, hi, h, n, kff, pff, kfl, pfl,
                                  kll, pll, gamma, dt, beta, u_scan,
                                  x1, x2, y1, y2)
        out[j] = np.sum(best_u) / (sig * sig)
    return out


def apply_partial_shuffle(idx, draws):
    """In-place partial shuffle: swap idx[t] with idx[draws[t]] for each t.

    draws[t] must lie in [t, len(idx)); with uniform draws this realizes a
    uniform choice of the first len(draws) elements without repetition.
    """
    for t in range(draws.shape[0]):
        j = draws[t]
        tmp = idx[t]
        idx[t] = idx[j]
        idx[j] = tmp
