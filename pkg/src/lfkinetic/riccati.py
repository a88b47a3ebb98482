"""Exact feedback gain for the linear (constant-kernel) reduced problem.

With constant interaction kernels the reduced dynamics are affine around
the reference consensus, so the discounted quadratic problem has a
closed-form solution: a fixed point of the discrete-time Riccati
recursion with the discount absorbed into the system matrices.  The
resulting linear gain, clamped to the control box, serves both as a fast
control source and as an independent check of the grid synthesis.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .control_problem import CostParams
from .errors import NoStabilizingSolution, ValidationError
from .kernels import KernelSpec, KernelTriple

__all__ = ["RiccatiGain", "riccati_gain"]


def _constant_value(spec: KernelSpec) -> float:
    if spec.kind == "constant":
        return spec.param
    if spec.kind == "zero":
        return 0.0
    raise ValidationError(
        "the closed-form gain requires constant (or zero) kernels; "
        f"got {spec.kind!r}"
    )


@dataclass(frozen=True)
class RiccatiGain:
    """Clamped linear feedback u(s) = clip(g_vec . (s - x_ref), bounds).

    The affine offset is identically zero by the symmetry of the problem
    around the reference consensus; it is kept as a field for clarity.
    """

    g_vec: np.ndarray        # (4,)
    g_off: float
    x_ref: float
    u_min: float
    u_max: float
    x_mat: np.ndarray        # (4, 4) quadratic value form, V(z) = z' X z
    iterations: int

    def evaluate(self, x1, x2, y1, y2):
        g = self.g_vec
        u = (g[0] * (np.asarray(x1) - self.x_ref)
             + g[1] * (np.asarray(x2) - self.x_ref)
             + g[2] * (np.asarray(y1) - self.x_ref)
             + g[3] * (np.asarray(y2) - self.x_ref)
             + self.g_off)
        return np.clip(u, self.u_min, self.u_max)

    __call__ = evaluate


def riccati_gain(kernels: KernelTriple, cost: CostParams,
                 u_min: float, u_max: float,
                 tol: float = 1e-12, max_iter: int = 200000) -> RiccatiGain:
    """Iterate the discounted Riccati recursion to its fixed point.

    Raises NoStabilizingSolution if the recursion diverges or fails to
    reach tol within max_iter steps.
    """
    p = _constant_value(kernels.ff)
    s = _constant_value(kernels.fl)
    r = _constant_value(kernels.ll)
    dt = cost.dt
    beta = cost.beta
    gamma = cost.gamma

    half = 0.5 * dt
    a = np.eye(4)
    a[0, 0] -= half * (p + 2.0 * s)
    a[0, 1] += half * p
    a[0, 2] += half * s
    a[0, 3] += half * s
    a[1, 1] -= half * (p + 2.0 * s)
    a[1, 0] += half * p
    a[1, 2] += half * s
    a[1, 3] += half * s
    a[2, 2] -= half * r
    a[2, 3] += half * r
    a[3, 3] -= half * r
    a[3, 2] += half * r
    b = np.array([0.0, 0.0, dt, dt])

    q = np.diag([0.5 * cost.a_f, 0.5 * cost.a_f, 0.5 * cost.a_l, 0.5 * cost.a_l])
    q_step = dt * q
    r_step = dt * gamma

    x = np.zeros((4, 4))
    it = 0
    for it in range(1, max_iter + 1):
        xb = x @ b                      # (4,)
        denom = r_step + beta * float(b @ xb)
        ka = (beta / denom) * np.outer(xb, xb)   # X B (1/den) B' X
        x_new = q_step + beta * (a.T @ (x - ka) @ a)
        delta = float(np.max(np.abs(x_new - x)))
        x = x_new
        if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > 1e12:
            raise NoStabilizingSolution(
                "Riccati recursion diverged; no stabilizing solution")
        if delta < tol:
            break
    else:
        raise NoStabilizingSolution(
            f"Riccati recursion did not reach tol={tol:.1e} "
            f"in {max_iter} iterations")

    xb = x @ b
    denom = r_step + beta * float(b @ xb)
    k_row = (beta / denom) * (b @ x @ a)
    return RiccatiGain(
        g_vec=-k_row, g_off=0.0, x_ref=cost.x_ref,
        u_min=u_min, u_max=u_max, x_mat=x, iterations=it,
    )
