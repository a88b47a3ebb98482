"""Offline synthesis of the feedback control on a four dimensional grid.

The value function of the discounted reduced problem is approximated on a
uniform grid over the phase box; one synthesis step moves the state with
the reduced dynamics, interpolates the previous value there, and adds the
discounted stage cost.  Both a plain fixed-point iteration and a policy
iteration with a sparse linear policy-evaluation solve are provided.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .backend import core
from .control_problem import ControlGrid, CostParams
from .errors import NonConvergenceWarning, ValidationError
from .kernels import KernelTriple

__all__ = [
    "Mesh",
    "ValueGrid",
    "interpolate_value",
    "bellman_update",
    "value_iteration",
    "policy_iteration",
    "feedback",
    "feedback_batch",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Mesh:
    """Uniform grid geometry shared by all four state axes."""

    lo: float
    hi: float
    n: int

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ValidationError("mesh bounds must satisfy lo < hi")
        if self.n < 2:
            raise ValidationError("mesh needs at least 2 nodes per axis")

    @property
    def h(self) -> float:
        return (self.hi - self.lo) / (self.n - 1)

    @property
    def axis(self) -> np.ndarray:
        return self.lo + self.h * np.arange(self.n, dtype=np.float64)

    def record(self) -> dict:
        return {"lo": self.lo, "hi": self.hi, "n": self.n}

    @staticmethod
    def from_record(rec: dict) -> "Mesh":
        return Mesh(float(rec["lo"]), float(rec["hi"]), int(rec["n"]))


@dataclass
class ValueGrid:
    """Converged (or flagged) value function with its synthesis context."""

    mesh: Mesh
    values: np.ndarray
    kernels: KernelTriple
    cost: CostParams
    controls: ControlGrid
    residual: float
    iterations: int
    converged: bool
    method: str
    residual_history: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        v = np.ascontiguousarray(self.values, dtype=np.float64)
        if v.shape != (self.mesh.n,) * 4:
            raise ValidationError("value array shape does not match mesh")
        if not np.all(np.isfinite(v)):
            raise ValidationError("value grid contains non-finite entries")
        self.values = v


def _flat_args(mesh: Mesh, kernels: KernelTriple, cost: CostParams):
    return (
        mesh.lo, mesh.hi, mesh.h, mesh.n,
        kernels.ff.code, kernels.ff.param,
        kernels.fl.code, kernels.fl.param,
        kernels.ll.code, kernels.ll.param,
        cost.a_f, cost.a_l, cost.gamma, cost.x_ref,
        cost.dt, cost.beta,
    )


def _as_points(s) -> np.ndarray:
    pts = np.atleast_2d(np.asarray(s, dtype=np.float64))
    if pts.shape[1] != 4:
        raise ValidationError("states must have 4 components")
    return np.ascontiguousarray(pts)


def interpolate_value(values: np.ndarray, mesh: Mesh, s) -> float:
    """Four-linear interpolation at state s, clamped into the mesh box."""
    v = np.ascontiguousarray(values, dtype=np.float64)
    out = core.interp_batch(v, mesh.lo, mesh.hi, mesh.h, mesh.n, _as_points(s))
    return float(out[0])


def bellman_update(values: np.ndarray, mesh: Mesh, s, controls: ControlGrid,
                   cost: CostParams, kernels: KernelTriple):
    """One-step minimization at state s; returns (value, best control)."""
    v = np.ascontiguousarray(values, dtype=np.float64)
    u_scan = np.ascontiguousarray(controls.scan_values)
    vals, us = core.bellman_batch(v, *_flat_args(mesh, kernels, cost),
                                  u_scan, _as_points(s))
    return float(vals[0]), float(us[0])


def _sweep(v, mesh, controls, cost, kernels, u_scan):
    return core.bellman_sweep(v, *_flat_args(mesh, kernels, cost), u_scan)


def value_iteration(mesh: Mesh, controls: ControlGrid, cost: CostParams,
                    kernels: KernelTriple, v0: np.ndarray | None = None,
                    tol: float = 1e-6, max_iter: int = 20000) -> ValueGrid:
    """Fixed-point iteration of the minimization sweep from v0 (default 0).

    Stops when the sup-norm update falls below tol; if max_iter is hit
    first the partially converged grid is returned with converged=False
    and a NonConvergenceWarning is emitted.
    """
    v = (np.zeros((mesh.n,) * 4) if v0 is None
         else np.ascontiguousarray(v0, dtype=np.float64).copy())
    u_scan = np.ascontiguousarray(controls.scan_values)
    history = []
    converged = False
    for _ in range(max_iter):
        v_new, _ = _sweep(v, mesh, controls, cost, kernels, u_scan)
        r = float(np.max(np.abs(v_new - v)))
        history.append(r)
        v = v_new
        if r < tol:
            converged = True
            break
    if not converged:
        warnings.warn(
            f"value iteration stopped at residual {history[-1]:.3e} "
            f"after {len(history)} sweeps (tol {tol:.1e})",
            NonConvergenceWarning,
        )
    return ValueGrid(
        mesh=mesh, values=v, kernels=kernels, cost=cost, controls=controls,
        residual=history[-1], iterations=len(history), converged=converged,
        method="value_iter", residual_history=np.array(history),
    )


def _policy_eval(idx, w, ell, beta, dt, x0, atol, maxiter=4000):
    """Solve V = dt*ell + beta * P V for the frozen policy stencil."""
    n_nodes = ell.shape[0]
    data = np.empty((n_nodes, 17))
    data[:, :16] = -beta * w
    data[:, 16] = 1.0
    cols = np.empty((n_nodes, 17), dtype=np.int32)
    cols[:, :16] = idx
    cols[:, 16] = np.arange(n_nodes, dtype=np.int32)
    indptr = np.arange(n_nodes + 1, dtype=np.int64) * 17
    a_mat = sp.csr_matrix((data.ravel(), cols.ravel(), indptr),
                          shape=(n_nodes, n_nodes))
    b = dt * ell
    x, info = spla.bicgstab(a_mat, b, x0=x0, rtol=0.0, atol=atol,
                            maxiter=maxiter)
    if info != 0:
        log.debug("bicgstab fell back to gmres (info=%d)", info)
        x, info = spla.gmres(a_mat, b, x0=x, rtol=0.0, atol=atol,
                             restart=50, maxiter=200)
        if info != 0:
            log.warning("policy evaluation solve stopped early (info=%d)", info)
    return x


def policy_iteration(mesh: Mesh, controls: ControlGrid, cost: CostParams,
                     kernels: KernelTriple, v0: np.ndarray | None = None,
                     tol: float = 1e-6, max_iter: int = 60) -> ValueGrid:
    """Alternating policy evaluation / improvement from v0 (default 0).

    Policy evaluation solves the frozen-policy linear fixed point with a
    Krylov method, warm-started from the current value; each improvement
    is one minimization sweep.  The reported residual is the sup-norm
    change of the improvement sweep, the same quantity value_iteration
    controls, so the two methods converge to the same fixed point.
    """
    v = (np.zeros((mesh.n,) * 4) if v0 is None
         else np.ascontiguousarray(v0, dtype=np.float64).copy())
    u_scan = np.ascontiguousarray(controls.scan_values)
    beta = cost.beta
    dt = cost.dt
    prep_args = (mesh.lo, mesh.hi, mesh.h, mesh.n,
                 kernels.ff.code, kernels.ff.param,
                 kernels.fl.code, kernels.fl.param,
                 kernels.ll.code, kernels.ll.param,
                 cost.a_f, cost.a_l, cost.gamma, cost.x_ref, cost.dt)

    v_new, kidx = _sweep(v, mesh, controls, cost, kernels, u_scan)
    r = float(np.max(np.abs(v_new - v)))
    v = v_new
    history = [r]
    converged = r < tol
    while not converged and len(history) < max_iter:
        u_node = np.ascontiguousarray(u_scan[kidx])
        idx, w, ell = core.policy_prep(*prep_args, u_node)
        atol = max(1e-10, 1e-3 * r * (1.0 - beta) * np.sqrt(ell.shape[0]))
        v_eval = _policy_eval(idx, w, ell, beta, dt, v.reshape(-1), atol)
        del idx, w, ell
        v_eval = v_eval.reshape(v.shape)
        v_new, kidx = _sweep(v_eval, mesh, controls, cost, kernels, u_scan)
        r = float(np.max(np.abs(v_new - v_eval)))
        v = v_new
        history.append(r)
        converged = r < tol
    if not converged:
        warnings.warn(
            f"policy iteration stopped at residual {history[-1]:.3e} "
            f"after {len(history)} improvements (tol {tol:.1e})",
            NonConvergenceWarning,
        )
    return ValueGrid(
        mesh=mesh, values=v, kernels=kernels, cost=cost, controls=controls,
        residual=history[-1], iterations=len(history), converged=converged,
        method="policy_iter", residual_history=np.array(history),
    )


def feedback_batch(grid: ValueGrid, pts) -> np.ndarray:
    """Argmin controls of the one-step lookahead at the given states."""
    u_scan = np.ascontiguousarray(grid.controls.scan_values)
    _, us = core.bellman_batch(grid.values,
                               *_flat_args(grid.mesh, grid.kernels, grid.cost),
                               u_scan, _as_points(pts))
    return us


def feedback(grid: ValueGrid, s) -> float:
    """Feedback control at a single state (clamped into the grid box)."""
    return float(feedback_batch(grid, s)[0])
