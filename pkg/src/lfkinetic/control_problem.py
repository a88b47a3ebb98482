"""Reduced two-follower / two-leader control problem.

The feedback synthesis works on a four dimensional surrogate of the full
particle system: two follower states (x1, x2), two leader states (y1, y2),
and a scalar control u entering both leader equations.  This module holds
the parameter containers, the discrete-time dynamics of that reduced
system, and its stage cost.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import microsim
from .errors import ValidationError
from .kernels import KernelTriple

__all__ = [
    "BinaryState",
    "CostParams",
    "ControlGrid",
    "binary_step",
    "running_cost",
]


class BinaryState(tuple):
    """State (x1, x2, y1, y2) of the reduced problem."""

    __slots__ = ()

    def __new__(cls, x1, x2, y1, y2):
        return super().__new__(cls, (float(x1), float(x2), float(y1), float(y2)))

    @property
    def x1(self):
        return self[0]

    @property
    def x2(self):
        return self[1]

    @property
    def y1(self):
        return self[2]

    @property
    def y2(self):
        return self[3]


@dataclass(frozen=True)
class CostParams:
    """Stage cost and discount parameters.

    The stage cost at state s = (x1, x2, y1, y2) with control u is

        l(s, u) = (a_f/2) ((x1-x_ref)^2 + (x2-x_ref)^2)
                + (a_l/2) ((y1-x_ref)^2 + (y2-x_ref)^2)
                + gamma u^2

    and one synthesis step discounts by beta = exp(-lam * dt).
    """

    a_f: float
    a_l: float
    gamma: float
    lam: float
    x_ref: float
    dt: float

    def __post_init__(self):
        if self.a_f < 0.0 or self.a_l < 0.0:
            raise ValidationError("state penalties a_f, a_l must be >= 0")
        if not self.gamma > 0.0:
            raise ValidationError("control penalty gamma must be > 0")
        if not self.lam > 0.0:
            raise ValidationError("discount rate lam must be > 0")
        if not self.dt > 0.0:
            raise ValidationError("synthesis step dt must be > 0")
        b = self.beta
        if not (0.0 < b < 1.0):
            raise ValidationError("discount factor must lie in (0, 1)")

    @property
    def beta(self) -> float:
        return math.exp(-self.lam * self.dt)

    def record(self) -> dict:
        return {
            "a_f": self.a_f,
            "a_l": self.a_l,
            "gamma": self.gamma,
            "lam": self.lam,
            "x_ref": self.x_ref,
            "dt": self.dt,
        }

    @staticmethod
    def from_record(rec: dict) -> "CostParams":
        return CostParams(
            a_f=float(rec["a_f"]),
            a_l=float(rec["a_l"]),
            gamma=float(rec["gamma"]),
            lam=float(rec["lam"]),
            x_ref=float(rec["x_ref"]),
            dt=float(rec["dt"]),
        )


def _symmetric_controls(u_max: float, n_u: int) -> np.ndarray:
    # mirror construction: exact 0 at the center, exact endpoints,
    # exactly symmetric node values
    half = np.linspace(0.0, u_max, (n_u + 1) // 2)
    return np.concatenate([-half[:0:-1], half])


@dataclass(frozen=True)
class ControlGrid:
    """Uniform control sample grid on [u_min, u_max] including 0.

    n_u must be odd so the grid has a center node; for symmetric bounds
    the center node is exactly 0.0.  ``scan_order`` visits controls by
    increasing |u| (negative first on magnitude ties), which is the
    tie-break order used by every argmin in the package.
    """

    u_min: float
    u_max: float
    n_u: int
    values: np.ndarray = field(init=False, repr=False, compare=False)
    scan_order: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not (self.n_u >= 3 and self.n_u % 2 == 1):
            raise ValidationError("n_u must be odd and >= 3")
        if not self.u_min < 0.0 < self.u_max:
            raise ValidationError("control bounds must straddle 0")
        if self.u_min == -self.u_max:
            vals = _symmetric_controls(self.u_max, self.n_u)
        else:
            vals = np.linspace(self.u_min, self.u_max, self.n_u)
            k = int(np.argmin(np.abs(vals)))
            if abs(vals[k]) > 1e-12 * (self.u_max - self.u_min):
                raise ValidationError("control grid must contain u = 0")
            vals[k] = 0.0
        vals.setflags(write=False)
        order = np.lexsort((vals, np.abs(vals)))
        order.setflags(write=False)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "scan_order", order)

    @property
    def spacing(self) -> float:
        return (self.u_max - self.u_min) / (self.n_u - 1)

    @property
    def scan_values(self) -> np.ndarray:
        return self.values[self.scan_order]

    def record(self) -> dict:
        return {"u_min": self.u_min, "u_max": self.u_max, "n_u": self.n_u}

    @staticmethod
    def from_record(rec: dict) -> "ControlGrid":
        return ControlGrid(float(rec["u_min"]), float(rec["u_max"]), int(rec["n_u"]))


def binary_step(state, u: float, dt: float, kernels: KernelTriple) -> BinaryState:
    """One explicit step of the reduced four dimensional dynamics.

    Delegates to the particle-system step with N = M = 2 so that the two
    surfaces produce bit-identical states.
    """
    x = np.array([state[0], state[1]], dtype=np.float64)
    y = np.array([state[2], state[3]], dtype=np.float64)
    xn, yn = microsim.micro_step(x, y, float(u), dt, kernels)
    return BinaryState(xn[0], xn[1], yn[0], yn[1])


def running_cost(state, u: float, p: CostParams) -> float:
    """Stage cost l(state, u); see CostParams."""
    dx1 = state[0] - p.x_ref
    dx2 = state[1] - p.x_ref
    dy1 = state[2] - p.x_ref
    dy2 = state[3] - p.x_ref
    haf = p.a_f * 0.5
    hal = p.a_l * 0.5
    return (haf * (dx1 * dx1 + dx2 * dx2) + hal * (dy1 * dy1 + dy2 * dy2)
            + p.gamma * (u * u))
