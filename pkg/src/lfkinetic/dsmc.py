"""Binary-collision particle engine for the two-population dynamics.

One simulation step performs a follower phase (follower-follower and
follower-leader collisions) and a leader phase (leader-leader collisions
plus the averaged feedback drift).  Collision counts come from
stochastic rounding of the exact interaction fractions, colliders are
selected without repetition by a partial shuffle, and partners are drawn
with repetition from beginning-of-step snapshots.  Updates are
one-sided: only the selected agent moves.

Determinism contract: with a fixed seed and the documented draw order a
run is bit-reproducible.  Per step the generator is consumed in this
order:

  1. one uniform for the follower-follower count,
  2. one uniform for the follower-leader count,
  3. the partial-shuffle draws selecting colliding followers,
  4. follower-follower partner indices,
  5. follower-leader partner indices,
  6. (controlled runs only) the shared feedback sample indices, then the
     pair subsample indices if the subsampled estimator is active,
  7. one uniform for the leader-leader count,
  8. the partial-shuffle draws selecting colliding leaders,
  9. leader-leader partner indices.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .backend import core
from .dp import ValueGrid, _flat_args
from .errors import EmptyFollowerSet, InfeasibleCounts, ValidationError
from .kernels import KernelSpec, KernelTriple, eval_kernel
from .riccati import RiccatiGain

__all__ = [
    "ParticleEnsemble", "ScalingParams", "StepRecord",
    "GridFeedback", "RiccatiFeedback", "CallableFeedback",
    "stochastic_round", "sample_initial", "check_cfl",
    "ff_collision", "fl_collision", "ll_collision",
    "estimate_phi", "tpbb_step",
]


@dataclass
class ParticleEnsemble:
    """Follower and leader sample positions with their total masses."""

    x: np.ndarray
    y: np.ndarray
    rho_f: float
    rho_l: float
    t: float = 0.0

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.float64)
        if self.rho_f <= 0.0 or self.rho_l < 0.0:
            raise ValidationError("masses must satisfy rho_f > 0, rho_l >= 0")
        if not (np.all(np.isfinite(self.x)) and np.all(np.isfinite(self.y))):
            raise ValidationError("sample positions must be finite")

    @property
    def n_followers(self) -> int:
        return self.x.shape[0]

    @property
    def n_leaders(self) -> int:
        return self.y.shape[0]


@dataclass(frozen=True)
class ScalingParams:
    """Interaction strength and time resolution of the particle scheme."""

    eps: float
    dt: float
    sigma_s: int = 64
    t_final: float = 0.0

    def __post_init__(self):
        if self.eps <= 0.0:
            raise ValidationError("eps must be positive")
        if self.dt <= 0.0:
            raise ValidationError("dt must be positive")
        if self.sigma_s < 1:
            raise ValidationError("sigma_s must be at least 1")


def check_cfl(sp: ScalingParams, rho_f: float, rho_l: float) -> None:
    """The follower no-collision fraction must stay nonnegative."""
    bound = sp.eps / (rho_f + rho_l)
    if sp.dt > bound * (1.0 + 1e-12):
        raise ValidationError(
            f"time step {sp.dt:g} exceeds the stability bound "
            f"eps/(rho_f+rho_l) = {bound:g}")


def stochastic_round(x: float, rng: np.random.Generator) -> int:
    """Round to floor(x) or floor(x)+1 with expectation exactly x.

    Always consumes one uniform so count draws stay aligned in the
    generator stream regardless of the fractional part.
    """
    if x < 0.0:
        raise ValidationError("stochastic_round requires a nonnegative input")
    base = int(np.floor(x))
    frac = x - base
    return base + int(rng.random() < frac)


def sample_initial(a: float, b: float, n: int, rng: np.random.Generator) -> np.ndarray:
    if not a < b:
        raise ValidationError(f"empty initial interval [{a}, {b}]")
    return rng.uniform(a, b, size=n)


# ---------------------------------------------------------------------------
# collision rules

def ff_collision(x_i, x_r, alpha: float, k_ff: KernelSpec):
    """Post-collision state of a follower against a follower partner."""
    return x_i + alpha * eval_kernel(k_ff, x_i, x_r) * (x_r - x_i)


def fl_collision(x_j, y_r, alpha: float, k_fl: KernelSpec):
    """Post-collision state of a follower against a leader partner.

    The leader sample is not modified by this interaction.
    """
    return x_j + alpha * eval_kernel(k_fl, x_j, y_r) * (y_r - x_j)


def ll_collision(y_i, y_r, alpha: float, k_ll: KernelSpec, phi):
    """Post-collision leader state: alignment plus the feedback drift."""
    return y_i + alpha * eval_kernel(k_ll, y_i, y_r) * (y_r - y_i) + 2.0 * alpha * phi


# ---------------------------------------------------------------------------
# control sources

class GridFeedback:
    """Feedback read from a synthesized value grid via one-step lookahead."""

    kind = "grid"

    def __init__(self, grid: ValueGrid):
        self.grid = grid
        m = grid.mesh
        self._args = _flat_args(m, grid.kernels, grid.cost)
        self._u_scan = grid.controls.scan_values
        self._gamma = grid.cost.gamma
        self._dt = grid.cost.dt
        self._beta = grid.cost.beta

    def evaluate(self, x1, x2, y1, y2):
        pts = np.stack([
            np.broadcast_arrays(np.asarray(x1, dtype=np.float64),
                                np.asarray(x2, dtype=np.float64),
                                np.asarray(y1, dtype=np.float64),
                                np.asarray(y2, dtype=np.float64))[i]
            for i in range(4)
        ], axis=-1).reshape(-1, 4)
        _, us = core.bellman_batch(self.grid.values, *self._args,
                                   self._u_scan, np.ascontiguousarray(pts))
        shape = np.broadcast_shapes(np.shape(x1), np.shape(x2),
                                    np.shape(y1), np.shape(y2))
        return us.reshape(shape) if shape else float(us[0])

    __call__ = evaluate

    def phi(self, xs, y_sel, y_par, pair_idx=None):
        v = self.grid.values
        lo, hi, h, n = self._args[0], self._args[1], self._args[2], self._args[3]
        codes = self._args[4:10]
        if pair_idx is None:
            return core.phi_grid(v, lo, hi, h, n, *codes,
                                 self._gamma, self._dt, self._beta,
                                 self._u_scan,
                                 np.ascontiguousarray(xs, dtype=np.float64),
                                 np.ascontiguousarray(y_sel, dtype=np.float64),
                                 np.ascontiguousarray(y_par, dtype=np.float64))
        hp, kp = pair_idx
        m = y_sel.shape[0]
        npair = hp.shape[0]
        pts = np.empty((m * npair, 4))
        pts[:, 0] = np.tile(xs[hp], m)
        pts[:, 1] = np.tile(xs[kp], m)
        pts[:, 2] = np.repeat(y_sel, npair)
        pts[:, 3] = np.repeat(y_par, npair)
        _, us = core.bellman_batch(v, *self._args, self._u_scan, pts)
        return us.reshape(m, npair).mean(axis=1)


class RiccatiFeedback:
    """Feedback from the closed-form linear gain (constant kernels only)."""

    kind = "riccati"

    def __init__(self, gain: RiccatiGain):
        self.gain = gain

    def evaluate(self, x1, x2, y1, y2):
        return self.gain.evaluate(x1, x2, y1, y2)

    __call__ = evaluate

    def phi(self, xs, y_sel, y_par, pair_idx=None):
        g = self.gain.g_vec
        xr = self.gain.x_ref
        lead = (g[2] * (np.asarray(y_sel) - xr)
                + g[3] * (np.asarray(y_par) - xr) + self.gain.g_off)
        if pair_idx is None:
            foll = (g[0] * (xs[:, None] - xr) + g[1] * (xs[None, :] - xr)).ravel()
        else:
            hp, kp = pair_idx
            foll = g[0] * (xs[hp] - xr) + g[1] * (xs[kp] - xr)
        u = np.clip(foll[None, :] + lead[:, None],
                    self.gain.u_min, self.gain.u_max)
        return u.mean(axis=1)


class CallableFeedback:
    """Adapter for an arbitrary vectorized feedback map u(x1, x2, y1, y2)."""

    kind = "callable"

    def __init__(self, fn):
        self.fn = fn

    def evaluate(self, x1, x2, y1, y2):
        return self.fn(x1, x2, y1, y2)

    __call__ = evaluate

    def phi(self, xs, y_sel, y_par, pair_idx=None):
        if pair_idx is None:
            sig = xs.shape[0]
            xh = np.repeat(xs, sig)
            xk = np.tile(xs, sig)
        else:
            hp, kp = pair_idx
            xh = xs[hp]
            xk = xs[kp]
        out = np.empty(y_sel.shape[0])
        for j in range(y_sel.shape[0]):
            u = self.fn(xh, xk, np.full_like(xh, y_sel[j]),
                        np.full_like(xh, y_par[j]))
            out[j] = float(np.mean(u))
        return out


def estimate_phi(followers: np.ndarray, y_i: float, y_r: float,
                 sigma_s: int, fb, rng: np.random.Generator) -> float:
    """Control average over a fresh follower sample for one leader pair."""
    followers = np.asarray(followers, dtype=np.float64)
    if followers.shape[0] == 0:
        raise EmptyFollowerSet("cannot sample the feedback from zero followers")
    if sigma_s < 1:
        raise ValidationError("sigma_s must be at least 1")
    idx = rng.integers(0, followers.shape[0], size=sigma_s)
    xs = followers[idx]
    out = fb.phi(xs, np.array([float(y_i)]), np.array([float(y_r)]))
    return float(out[0])


# ---------------------------------------------------------------------------
# the time loop

@dataclass
class StepRecord:
    """Per-step bookkeeping: drawn counts, applied control statistics."""

    n_ff: int
    n_fl: int
    m_ll: int
    n_fl_effective: int
    phi_mean: float = 0.0
    phi_sq_mean: float = 0.0


def _select_without_repetition(n_pool: int, n_sel: int,
                               rng: np.random.Generator) -> np.ndarray:
    """First n_sel slots of a uniform partial shuffle of range(n_pool)."""
    perm = np.arange(n_pool, dtype=np.int64)
    if n_sel > 0:
        draws = rng.integers(low=np.arange(n_sel), high=n_pool)
        core.apply_partial_shuffle(perm, np.ascontiguousarray(draws, dtype=np.int64))
    return perm


def tpbb_step(e: ParticleEnsemble, sp: ScalingParams, k: KernelTriple,
              fb, rng: np.random.Generator, *,
              phi_pairs: str = "full",
              symmetric: bool = False) -> tuple[ParticleEnsemble, StepRecord]:
    """Advance the ensemble by one collision step of length sp.dt.

    fb is a control source (GridFeedback, RiccatiFeedback,
    CallableFeedback) or None for the free dynamics.  phi_pairs selects
    the feedback-average estimator: "full" evaluates the complete double
    sum over the shared sample, "subsampled" averages sigma_s uniformly
    drawn pairs from the same sample (unbiased for the full sum).

    symmetric=True additionally writes the mirrored update to each
    collision partner; this is a comparison variant, not the reference
    scheme, and resolves conflicting writes by order (partner writes
    last).

    Counts use stochastic rounding, so at the stability boundary the
    drawn follower totals can exceed the population by the two Bernoulli
    excesses; the drawn counts are recorded as such (their means stay
    exact) and only the effective follower-leader selection is capped at
    the remaining pool.  InfeasibleCounts signals the deterministic
    violation where already the floor counts exceed a population.
    """
    if phi_pairs not in ("full", "subsampled"):
        raise ValidationError(f"unknown phi estimator {phi_pairs!r}")
    n_s = e.n_followers
    m_s = e.n_leaders
    if n_s == 0:
        raise EmptyFollowerSet("follower population is empty")
    eps = sp.eps
    dt = sp.dt

    n_ff = stochastic_round(dt * e.rho_f / eps * n_s, rng)
    n_fl = stochastic_round(dt * e.rho_l / eps * n_s, rng)
    floor_ff = int(np.floor(dt * e.rho_f / eps * n_s))
    floor_fl = int(np.floor(dt * e.rho_l / eps * n_s))
    if floor_ff + floor_fl > n_s:
        raise InfeasibleCounts(
            f"follower collision counts {floor_ff}+{floor_fl} exceed "
            f"population {n_s}; the time step violates the scaling bound")
    n_ff_eff = min(n_ff, n_s)
    n_fl_eff = min(n_fl, n_s - n_ff_eff) if m_s > 0 else 0

    perm = _select_without_repetition(n_s, n_ff_eff + n_fl_eff, rng)
    sel_ff = perm[:n_ff_eff]
    sel_fl = perm[n_ff_eff: n_ff_eff + n_fl_eff]

    x0 = e.x
    y0 = e.y
    x_new = x0.copy()

    part_ff = rng.integers(0, n_s, size=n_ff_eff)
    if n_ff_eff:
        xi = x0[sel_ff]
        xr = x0[part_ff]
        x_new[sel_ff] = ff_collision(xi, xr, eps, k.ff)
        if symmetric:
            x_new[part_ff] = ff_collision(xr, xi, eps, k.ff)

    if n_fl_eff:
        part_fl = rng.integers(0, m_s, size=n_fl_eff)
        x_new[sel_fl] = fl_collision(x0[sel_fl], y0[part_fl], eps, k.fl)

    # leader phase
    phi_mean = 0.0
    phi_sq = 0.0
    y_new = y0.copy()
    m_ll = 0
    if m_s > 0:
        pair_idx = None
        xs_shared = None
        if fb is not None:
            idx = rng.integers(0, n_s, size=sp.sigma_s)
            xs_shared = x0[idx]
            if phi_pairs == "subsampled":
                hp = rng.integers(0, sp.sigma_s, size=sp.sigma_s)
                kp = rng.integers(0, sp.sigma_s, size=sp.sigma_s)
                pair_idx = (hp, kp)

        m_ll = stochastic_round(dt * e.rho_l / eps * m_s, rng)
        if int(np.floor(dt * e.rho_l / eps * m_s)) > m_s:
            raise InfeasibleCounts(
                f"leader collision count exceeds population {m_s}")
        m_ll_eff = min(m_ll, m_s)
        lperm = _select_without_repetition(m_s, m_ll_eff, rng)
        sel_ll = lperm[:m_ll_eff]
        if m_ll_eff:
            part_ll = rng.integers(0, m_s, size=m_ll_eff)
            yi = y0[sel_ll]
            yr = y0[part_ll]
            if fb is not None:
                phi = fb.phi(xs_shared, yi, yr, pair_idx)
                phi_mean = float(np.mean(phi))
                phi_sq = float(np.mean(phi * phi))
            else:
                phi = 0.0
            y_new[sel_ll] = ll_collision(yi, yr, eps, k.ll, phi)
            if symmetric:
                if fb is not None:
                    phi_b = fb.phi(xs_shared, yr, yi, pair_idx)
                else:
                    phi_b = 0.0
                y_new[part_ll] = ll_collision(yr, yi, eps, k.ll, phi_b)

    out = ParticleEnsemble(x=x_new, y=y_new, rho_f=e.rho_f, rho_l=e.rho_l,
                           t=e.t + dt)
    rec = StepRecord(n_ff=n_ff, n_fl=n_fl, m_ll=m_ll,
                     n_fl_effective=n_fl_eff,
                     phi_mean=phi_mean, phi_sq_mean=phi_sq)
    return out, rec


@dataclass
class RunResult:
    """Everything a full run records: series, snapshots, final state."""

    times: np.ndarray
    mean_f: np.ndarray
    mean_l: np.ndarray
    cost: np.ndarray
    n_followers: np.ndarray
    n_leaders: np.ndarray
    counts_ff: np.ndarray
    counts_fl: np.ndarray
    counts_ll: np.ndarray
    counts_fl_eff: np.ndarray
    phi_mean: np.ndarray
    phi_sq_mean: np.ndarray
    snap_times: np.ndarray
    bin_centers: np.ndarray
    dens_f: np.ndarray
    dens_l: np.ndarray
    surf_y: np.ndarray
    surf_phi: np.ndarray
    final: ParticleEnsemble
    metadata: dict


def _surface_sample(fb, x, y, sp: ScalingParams, ygrid: np.ndarray,
                    n_partners: int, diag_rng: np.random.Generator) -> np.ndarray:
    """Feedback average over a y-grid against fresh follower/partner draws.

    Consumes the diagnostics stream only (follower sample indices, then
    partner indices), so snapshot frequency never perturbs the dynamics.
    """
    if fb is None or y.shape[0] == 0:
        return np.zeros(ygrid.shape[0])
    idx = diag_rng.integers(0, x.shape[0], size=sp.sigma_s)
    xs = x[idx]
    pidx = diag_rng.integers(0, y.shape[0], size=n_partners)
    partners = y[pidx]
    y_sel = np.repeat(ygrid, n_partners)
    y_par = np.tile(partners, ygrid.shape[0])
    vals = fb.phi(xs, y_sel, y_par)
    return vals.reshape(ygrid.shape[0], n_partners).mean(axis=1)


def run_tpbb(e0: ParticleEnsemble, sp: ScalingParams, k: KernelTriple, fb,
             n_steps: int, rng: np.random.Generator, *,
             cost: "CostParams | None" = None,
             snapshot_stride: "int | None" = None,
             delta_x: float = 0.025, omega: tuple = (-1.0, 1.0),
             surface_points: int = 81, surface_partners: int = 32,
             phi_pairs: str = "full", symmetric: bool = False,
             diag_rng: "np.random.Generator | None" = None) -> RunResult:
    """Iterate the collision step, recording series and stride snapshots.

    Snapshots (densities and the control surface) are taken at step 0,
    every snapshot_stride steps, and at the final step.  Mean-opinion,
    cost, and count series are recorded every step.  The diagnostics
    generator defaults to a child spawned off the main one so surface
    sampling stays off the dynamics stream.
    """
    from .diagnostics import CostAccumulator, histogram

    check_cfl(sp, e0.rho_f, e0.rho_l)
    if diag_rng is None:
        diag_rng = rng.spawn(1)[0]
    lo, hi = omega
    ygrid = np.linspace(lo, hi, surface_points)
    acc = CostAccumulator(cost) if cost is not None else None

    def snap(e):
        hf = histogram(e.x, delta_x, e.rho_f, lo, hi)
        if e.n_leaders:
            hl = histogram(e.y, delta_x, e.rho_l, lo, hi).heights
        else:
            hl = np.zeros_like(hf.heights)
        surf = _surface_sample(fb, e.x, e.y, sp, ygrid,
                               surface_partners, diag_rng)
        return hf, hl, surf

    e = e0
    times = [e.t]
    mean_f = [float(np.mean(e.x))]
    mean_l = [float(np.mean(e.y)) if e.n_leaders else np.nan]
    cost_series = [0.0]
    nf = [e.n_followers]
    nl = [e.n_leaders]
    c_ff, c_fl, c_ll, c_fl_eff = [], [], [], []
    phi_m, phi_s = [], []

    hf0, hl0, surf0 = snap(e)
    snap_times = [e.t]
    dens_f = [hf0.heights]
    dens_l = [hl0]
    surfs = [surf0]
    centers = hf0.centers

    for i in range(n_steps):
        x_pre, y_pre, t_pre = e.x, e.y, e.t
        e, rec = tpbb_step(e, sp, k, fb, rng,
                           phi_pairs=phi_pairs, symmetric=symmetric)
        if acc is not None:
            acc.add(x_pre, y_pre, rec.phi_sq_mean, t_pre, sp.dt)
        times.append(e.t)
        mean_f.append(float(np.mean(e.x)))
        mean_l.append(float(np.mean(e.y)) if e.n_leaders else np.nan)
        cost_series.append(acc.total if acc is not None else 0.0)
        nf.append(e.n_followers)
        nl.append(e.n_leaders)
        c_ff.append(rec.n_ff)
        c_fl.append(rec.n_fl)
        c_ll.append(rec.m_ll)
        c_fl_eff.append(rec.n_fl_effective)
        phi_m.append(rec.phi_mean)
        phi_s.append(rec.phi_sq_mean)

        is_last = i == n_steps - 1
        if is_last or (snapshot_stride and (i + 1) % snapshot_stride == 0):
            hf, hl, surf = snap(e)
            snap_times.append(e.t)
            dens_f.append(hf.heights)
            dens_l.append(hl)
            surfs.append(surf)

    return RunResult(
        times=np.asarray(times), mean_f=np.asarray(mean_f),
        mean_l=np.asarray(mean_l), cost=np.asarray(cost_series),
        n_followers=np.asarray(nf), n_leaders=np.asarray(nl),
        counts_ff=np.asarray(c_ff), counts_fl=np.asarray(c_fl),
        counts_ll=np.asarray(c_ll), counts_fl_eff=np.asarray(c_fl_eff),
        phi_mean=np.asarray(phi_m), phi_sq_mean=np.asarray(phi_s),
        snap_times=np.asarray(snap_times), bin_centers=centers,
        dens_f=np.asarray(dens_f), dens_l=np.asarray(dens_l),
        surf_y=ygrid, surf_phi=np.asarray(surfs),
        final=e,
        metadata={
            "phi_pairs": phi_pairs, "symmetric": symmetric,
            "sigma_s": sp.sigma_s, "eps": sp.eps, "dt": sp.dt,
            "control": getattr(fb, "kind", "none"),
        },
    )
