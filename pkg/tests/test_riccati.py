"""Closed-form gain: fixed point, symmetry, and an ARE cross-check."""

import numpy as np
import pytest
from scipy.linalg import solve_discrete_are

from lfkinetic import (
    CostParams,
    KernelSpec,
    KernelTriple,
    NoStabilizingSolution,
    ValidationError,
    feedback,
    riccati_gain,
)

CONST = KernelTriple(
    ff=KernelSpec("constant", 1.0),
    fl=KernelSpec("constant", 1.0),
    ll=KernelSpec("constant", 1.0),
)
COST = CostParams(a_f=1.0, a_l=1.0, gamma=1.0, lam=1.0, x_ref=-0.5, dt=0.02)


def _system_matrices(kernels, cost):
    p = kernels.ff.param if kernels.ff.kind == "constant" else 0.0
    s = kernels.fl.param if kernels.fl.kind == "constant" else 0.0
    r = kernels.ll.param if kernels.ll.kind == "constant" else 0.0
    dt = cost.dt
    half = 0.5 * dt
    a = np.eye(4)
    a[0] += [-half * (p + 2 * s), half * p, half * s, half * s]
    a[1] += [half * p, -half * (p + 2 * s), half * s, half * s]
    a[2] += [0.0, 0.0, -half * r, half * r]
    a[3] += [0.0, 0.0, half * r, -half * r]
    b = np.array([0.0, 0.0, dt, dt])
    q = dt * np.diag([cost.a_f / 2, cost.a_f / 2, cost.a_l / 2, cost.a_l / 2])
    return a, b, q, dt * cost.gamma


def test_fixed_point_matches_scipy_are():
    # absorbing the discount into sqrt(beta)-scaled matrices turns the
    # recursion's fixed point into a standard discrete-time ARE
    gain = riccati_gain(CONST, COST, -1.0, 1.0)
    a, b, q, r = _system_matrices(CONST, COST)
    rb = np.sqrt(COST.beta)
    x_are = solve_discrete_are(rb * a, (rb * b).reshape(4, 1), q, [[r]])
    assert np.max(np.abs(gain.x_mat - x_are)) < 1e-10

    denom = r + COST.beta * float(b @ x_are @ b)
    k_row = (COST.beta / denom) * (b @ x_are @ a)
    assert np.max(np.abs(gain.g_vec + k_row)) < 1e-10


def test_fixed_point_residual():
    gain = riccati_gain(CONST, COST, -1.0, 1.0)
    a, b, q, r = _system_matrices(CONST, COST)
    x = gain.x_mat
    xb = x @ b
    denom = r + COST.beta * float(b @ xb)
    ka = (COST.beta / denom) * np.outer(xb, xb)
    resid = q + COST.beta * (a.T @ (x - ka) @ a) - x
    assert np.max(np.abs(resid)) < 1e-11


def test_gain_respects_population_symmetry():
    gain = riccati_gain(CONST, COST, -1.0, 1.0)
    # followers are interchangeable, leaders are interchangeable
    assert gain.g_vec[0] == pytest.approx(gain.g_vec[1], abs=1e-12)
    assert gain.g_vec[2] == pytest.approx(gain.g_vec[3], abs=1e-12)
    assert gain.g_off == 0.0
    sym = np.max(np.abs(gain.x_mat - gain.x_mat.T))
    assert sym < 1e-12


def test_feedback_direction_and_clamping():
    gain = riccati_gain(CONST, COST, -1.0, 1.0)
    assert gain.evaluate(0.5, 0.5, 0.9, 0.9) < 0.0
    assert gain.evaluate(-0.9, -0.9, -1.0, -1.0) > 0.0
    # reference consensus costs nothing, so the control vanishes there
    assert gain.evaluate(-0.5, -0.5, -0.5, -0.5) == pytest.approx(0.0, abs=1e-12)
    # far states saturate at the box
    wide = riccati_gain(CONST, COST, -0.3, 0.3)
    assert wide.evaluate(1.0, 1.0, 1.0, 1.0) == -0.3
    assert wide.evaluate(-1.0, -1.0, -1.0, -1.0) == 0.3


def test_vectorized_evaluate_matches_scalar(rng):
    gain = riccati_gain(CONST, COST, -1.0, 1.0)
    pts = rng.uniform(-1, 1, size=(30, 4))
    batch = gain(pts[:, 0], pts[:, 1], pts[:, 2], pts[:, 3])
    single = [gain(*p) for p in pts]
    assert np.array_equal(batch, np.asarray(single))


def test_zero_kernels_give_pure_regulation_gain():
    zero = KernelTriple(
        ff=KernelSpec("zero"), fl=KernelSpec("zero"), ll=KernelSpec("zero"))
    gain = riccati_gain(zero, COST, -1.0, 1.0)
    # decoupled followers are uncontrollable, so their entries drop out
    assert gain.g_vec[0] == pytest.approx(0.0, abs=1e-12)
    assert gain.g_vec[1] == pytest.approx(0.0, abs=1e-12)
    assert gain.g_vec[2] < 0.0
    # the follower value block is a plain discounted geometric sum
    expect = 0.5 * COST.a_f * COST.dt / (1.0 - COST.beta)
    assert gain.x_mat[0, 0] == pytest.approx(expect, rel=1e-10)
    assert gain.x_mat[0, 1] == pytest.approx(0.0, abs=1e-12)


def test_nonconstant_kernels_rejected():
    bc = KernelTriple(
        ff=KernelSpec("bounded_confidence", 0.3),
        fl=KernelSpec("constant", 1.0),
        ll=KernelSpec("constant", 1.0),
    )
    with pytest.raises(ValidationError):
        riccati_gain(bc, COST, -1.0, 1.0)


def test_repulsive_uncontrollable_mode_diverges():
    # strongly repulsive followers blow up a mode the control cannot reach
    rep = KernelTriple(
        ff=KernelSpec("constant", -10.0),
        fl=KernelSpec("zero"),
        ll=KernelSpec("constant", 1.0),
    )
    with pytest.raises(NoStabilizingSolution):
        riccati_gain(rep, COST, -1.0, 1.0)


def test_iteration_cap_raises():
    with pytest.raises(NoStabilizingSolution):
        riccati_gain(CONST, COST, -1.0, 1.0, tol=1e-16, max_iter=5)


def test_agrees_with_grid_synthesis_inland(small_test1_grid):
    # coarse cross-check away from the control box boundary; the tight
    # comparison at production resolution lives in the acceptance suite
    gain = riccati_gain(CONST, COST, -1.0, 1.0)
    for s in [(-0.5, -0.5, -0.25, -0.25), (-0.25, -0.75, -0.5, -0.5)]:
        u_grid = feedback(small_test1_grid, s)
        u_lin = float(gain(*s))
        assert abs(u_grid - u_lin) < 0.5
