"""Reductions over particle snapshots: densities, moments, cost, oracles.

Everything here is a pure function of immutable sample arrays; the
particle engine calls in, never the other way around.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .control_problem import CostParams
from .errors import EmptySampleSet, PersistFailure, ValidationError

__all__ = [
    "DensityHistogram", "histogram", "mean_opinion",
    "CostAccumulator", "linear_moment_odes",
    "write_density_csv", "write_surface_csv", "write_series_csv",
]


@dataclass(frozen=True)
class DensityHistogram:
    """Piecewise-constant density with prescribed total mass."""

    edges: np.ndarray      # n_bins + 1
    heights: np.ndarray    # n_bins, units mass/length
    rho: float
    delta: float

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[:-1] + self.edges[1:])

    @property
    def mass(self) -> float:
        return float(np.sum(self.heights) * self.delta)


def histogram(samples, delta: float, rho: float,
              lo: float = -1.0, hi: float = 1.0) -> DensityHistogram:
    """Bin samples into a density normalized to total mass rho.

    Samples outside [lo, hi] are counted in the nearest boundary bin.
    """
    samples = np.asarray(samples, dtype=np.float64)
    if samples.size == 0:
        raise EmptySampleSet("cannot build a histogram from zero samples")
    if delta <= 0.0 or rho <= 0.0:
        raise ValidationError("histogram needs delta > 0 and rho > 0")
    width = hi - lo
    n_bins = int(round(width / delta))
    if n_bins < 1 or abs(n_bins * delta - width) > 1e-9 * max(width, 1.0):
        raise ValidationError(
            f"bin width {delta:g} does not divide the domain width {width:g}")
    clipped = np.clip(samples, lo, hi)
    counts, edges = np.histogram(clipped, bins=n_bins, range=(lo, hi))
    heights = counts * (rho / (samples.size * delta))
    return DensityHistogram(edges=edges, heights=heights, rho=rho, delta=delta)


def mean_opinion(samples) -> float:
    samples = np.asarray(samples, dtype=np.float64)
    if samples.size == 0:
        raise EmptySampleSet("mean of an empty sample set")
    return float(np.mean(samples))


class CostAccumulator:
    """Discounted running cost summed with left-endpoint weights.

    Each step contributes exp(-lam * t_n) * dt * (a_f * avg((x - x_ref)^2)
    + a_l * avg((y - x_ref)^2) + gamma * avg(u^2)), where the control
    average is over the controls actually applied during the step.
    """

    def __init__(self, cost: CostParams):
        self.cost = cost
        self.total = 0.0

    def add(self, x, y, u_sq_mean: float, t: float, dt: float) -> float:
        p = self.cost
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        stage = p.a_f * float(np.mean((x - p.x_ref) ** 2))
        if y.size:
            stage += p.a_l * float(np.mean((y - p.x_ref) ** 2))
        stage += p.gamma * float(u_sq_mean)
        inc = np.exp(-p.lam * t) * dt * stage
        self.total += inc
        return inc


def linear_moment_odes(m_f0: float, m_l0: float, rho_f: float, rho_l: float,
                       phi_bar, t_final: float, dt_ode: float):
    """Mean trajectories of the constant-kernel dynamics.

    The follower alignment conserves its own mean, so only the
    leader-mass pull enters: dm_f/dt = rho_l * (m_l - m_f), while the
    leader mean moves with the prescribed drift trace dm_l/dt =
    phi_bar(t).  rho_f is accepted for interface symmetry but drops out
    of the reduction.  Classical 4th-order Runge-Kutta with a uniform
    step; returns (times, m_f, m_l).
    """
    del rho_f
    if dt_ode <= 0.0:
        raise ValidationError("dt_ode must be positive")
    if phi_bar is None:
        phi_bar = lambda t: 0.0
    n = max(1, int(round(t_final / dt_ode)))
    h = t_final / n
    times = np.linspace(0.0, t_final, n + 1)
    m_f = np.empty(n + 1)
    m_l = np.empty(n + 1)
    m_f[0], m_l[0] = m_f0, m_l0

    def rhs(t, mf, ml):
        return rho_l * (ml - mf), float(phi_bar(t))

    for i in range(n):
        t = times[i]
        f1, l1 = rhs(t, m_f[i], m_l[i])
        f2, l2 = rhs(t + 0.5 * h, m_f[i] + 0.5 * h * f1, m_l[i] + 0.5 * h * l1)
        f3, l3 = rhs(t + 0.5 * h, m_f[i] + 0.5 * h * f2, m_l[i] + 0.5 * h * l2)
        f4, l4 = rhs(t + h, m_f[i] + h * f3, m_l[i] + h * l3)
        m_f[i + 1] = m_f[i] + (h / 6.0) * (f1 + 2.0 * f2 + 2.0 * f3 + f4)
        m_l[i + 1] = m_l[i] + (h / 6.0) * (l1 + 2.0 * l2 + 2.0 * l3 + l4)
    return times, m_f, m_l


# ---------------------------------------------------------------------------
# CSV export.  Floats are written with repr so equal runs give equal bytes.

def _write_rows(path, header, rows):
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            w.writerows(rows)
    except OSError as exc:
        raise PersistFailure(f"could not write {path}: {exc}") from exc


def write_density_csv(path, times, centers, dens_f, dens_l) -> None:
    """Long-format densities: one row per (snapshot, bin)."""
    rows = []
    for s, t in enumerate(times):
        for b, c in enumerate(centers):
            rows.append((repr(float(t)), repr(float(c)),
                         repr(float(dens_f[s][b])), repr(float(dens_l[s][b]))))
    _write_rows(path, ["t", "bin_center", "density_F", "density_L"], rows)


def write_surface_csv(path, times, ys, phi) -> None:
    """Control surface samples: one row per (snapshot, y-node)."""
    rows = []
    for s, t in enumerate(times):
        for i, y in enumerate(ys):
            rows.append((repr(float(t)), repr(float(y)), repr(float(phi[s][i]))))
    _write_rows(path, ["t", "y", "phi"], rows)


def write_series_csv(path, times, mean_f, mean_l, cost) -> None:
    rows = [
        (repr(float(t)), repr(float(mf)), repr(float(ml)), repr(float(c)))
        for t, mf, ml, c in zip(times, mean_f, mean_l, cost)
    ]
    _write_rows(path, ["t", "mean_F", "mean_L", "cost_accum"], rows)
