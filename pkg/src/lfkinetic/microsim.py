"""Deterministic microscopic simulation of the two-population dynamics.

Forward Euler for N followers and M leaders with mean-type pairwise
interactions.  Complexity is O((N + M)^2) per step, so this is meant for
small ensembles: validation against the reduced problem, cost rollouts,
and mean-field sanity checks.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .errors import EmptyFollowerSet, PersistFailure, ValidationError
from .kernels import KernelTriple, eval_kernel

__all__ = ["micro_step", "simulate_micro", "MicroResult", "write_trajectory_csv"]


def micro_step(x, y, u: float, dt: float, kernels: KernelTriple):
    """One explicit Euler step; returns new (x, y) arrays.

    Followers average their alignment over all followers and all leaders
    (self terms included, they contribute zero velocity).  Leaders average
    over leaders and additionally drift with the common control u.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = x.shape[0]
    m = y.shape[0]
    if n == 0:
        raise EmptyFollowerSet("micro_step requires at least one follower")

    pmat = eval_kernel(kernels.ff, x[:, None], x[None, :])
    sum_p = (pmat * (x[None, :] - x[:, None])).sum(axis=1)
    vel_f = (1.0 / n) * sum_p
    if m > 0:
        smat = eval_kernel(kernels.fl, x[:, None], y[None, :])
        sum_s = (smat * (y[None, :] - x[:, None])).sum(axis=1)
        vel_f = (1.0 / n) * sum_p + (1.0 / m) * sum_s
    x_new = x + dt * vel_f

    if m > 0:
        rmat = eval_kernel(kernels.ll, y[:, None], y[None, :])
        sum_r = (rmat * (y[None, :] - y[:, None])).sum(axis=1)
        vel_l = (1.0 / m) * sum_r + u
        y_new = y + dt * vel_l
    else:
        y_new = y.copy()
    return x_new, y_new


@dataclass
class MicroResult:
    xs: np.ndarray       # (n_steps + 1, N)
    ys: np.ndarray       # (n_steps + 1, M)
    us: np.ndarray       # (n_steps,)
    cost: float
    dt: float


def _control_value(control, x, y, eval_mode, rng):
    if control is None:
        return 0.0
    fn = control.evaluate if hasattr(control, "evaluate") else control
    n = x.shape[0]
    m = y.shape[0]
    if n == 2 and m == 2:
        # reduced-size ensemble: evaluate on the state itself
        return float(fn(x[0], x[1], y[0], y[1]))
    if eval_mode == "mean":
        mx = float(np.mean(x))
        my = float(np.mean(y))
        return float(fn(mx, mx, my, my))
    if eval_mode != "sample":
        raise ValidationError(f"unknown eval_mode {eval_mode!r}")
    if rng is None:
        raise ValidationError("sample-mode control evaluation needs an rng")
    fi = rng.integers(0, n, size=2)
    li = rng.integers(0, m, size=2)
    return float(fn(x[fi[0]], x[fi[1]], y[li[0]], y[li[1]]))


def simulate_micro(x0, y0, control, dt: float, n_steps: int,
                   kernels: KernelTriple, cost_params=None,
                   rng=None, eval_mode: str = "sample") -> MicroResult:
    """Integrate the ensemble for n_steps and accumulate discounted cost.

    control may be None (uncontrolled), an object with an
    ``evaluate(x1, x2, y1, y2)`` method, or a plain callable with that
    signature.  For ensembles larger than two-on-two the control argument
    is formed per step either from random follower/leader samples
    (eval_mode="sample", consumes rng) or from population means
    (eval_mode="mean").

    The accumulated cost uses the discrete discount beta = exp(-lam*dt)
    per step and the per-population mean square deviations from x_ref;
    it requires cost_params.
    """
    x = np.asarray(x0, dtype=np.float64).copy()
    y = np.asarray(y0, dtype=np.float64).copy()
    if x.shape[0] == 0:
        raise EmptyFollowerSet("simulate_micro requires at least one follower")
    if control is not None and y.shape[0] == 0:
        raise ValidationError("control requires a nonempty leader set")

    xs = np.empty((n_steps + 1, x.shape[0]))
    ys = np.empty((n_steps + 1, y.shape[0]))
    us = np.zeros(n_steps)
    xs[0] = x
    ys[0] = y

    total = 0.0
    weight = 1.0
    beta = math.exp(-cost_params.lam * dt) if cost_params is not None else 1.0
    for k in range(n_steps):
        u = _control_value(control, x, y, eval_mode, rng)
        us[k] = u
        if cost_params is not None:
            p = cost_params
            df = x - p.x_ref
            stage = p.a_f * float(np.mean(df * df))
            if y.shape[0] > 0:
                dl = y - p.x_ref
                stage = stage + p.a_l * float(np.mean(dl * dl))
            stage = stage + p.gamma * (u * u)
            total += weight * dt * stage
            weight *= beta
        x, y = micro_step(x, y, u, dt, kernels)
        xs[k + 1] = x
        ys[k + 1] = y
    return MicroResult(xs=xs, ys=ys, us=us, cost=total, dt=dt)


def write_trajectory_csv(path, result: MicroResult) -> None:
    """Long-format trajectory file: t, agent_kind, agent_index, state, u_applied.

    u_applied is the control acting on the agent over [t, t + dt): zero for
    followers and for the final snapshot row.
    """
    n_times = result.xs.shape[0]
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "agent_kind", "agent_index", "state", "u_applied"])
            for k in range(n_times):
                t = k * result.dt
                u = result.us[k] if k < result.us.shape[0] else 0.0
                for i in range(result.xs.shape[1]):
                    w.writerow([repr(t), "F", i, repr(float(result.xs[k, i])), repr(0.0)])
                for j in range(result.ys.shape[1]):
                    w.writerow([repr(t), "L", j, repr(float(result.ys[k, j])), repr(float(u))])
    except OSError as exc:
        raise PersistFailure(f"could not write trajectory file {path}") from exc
