"""End-to-end acceptance checks, one test per shipping criterion.

These run the production problem sizes (41^4 synthesis grids, 10^4/5x10^3
particle populations), so the full set takes about half an hour on one
core.  Everything downstream of a fixed seed is deterministic; the
tolerances below are pinned, not tuned per run.
"""

import json
import time
from dataclasses import replace

import numpy as np
import pytest

from lfkinetic import (
    GridFeedback,
    KernelSpec,
    KernelTriple,
    ParticleEnsemble,
    binary_step,
    feedback,
    feedback_batch,
    interpolate_value,
    micro_step,
    policy_iteration,
    riccati_gain,
    run_tpbb,
    running_cost,
    sample_initial,
    tpbb_step,
    value_iteration,
)
from lfkinetic.cli import main
from lfkinetic.config import load_preset

pytestmark = pytest.mark.acceptance


def _sample_ensemble(cfg, rng):
    x0 = sample_initial(cfg.init_f[0], cfg.init_f[1], cfg.n_s, rng)
    y0 = sample_initial(cfg.init_l[0], cfg.init_l[1], cfg.m_s, rng)
    return ParticleEnsemble(x=x0, y=y0, rho_f=cfg.rho_f, rho_l=cfg.rho_l)


def _run_preset(cfg, fb, seed):
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    e0 = _sample_ensemble(cfg, rng)
    return run_tpbb(
        e0, cfg.scaling, cfg.kernels, fb, cfg.n_steps, rng,
        cost=cfg.cost, snapshot_stride=cfg.snapshot_stride,
        delta_x=cfg.hist_dx, omega=cfg.omega,
        surface_points=cfg.surface_points,
        surface_partners=cfg.surface_partners)


@pytest.fixture(scope="module")
def consensus_cfg():
    return load_preset("test1")


@pytest.fixture(scope="module")
def confidence_cfg():
    return load_preset("test2")


@pytest.fixture(scope="module")
def consensus_grid(consensus_cfg):
    """Full-resolution synthesis for the linear problem, timed."""
    cfg = consensus_cfg
    t0 = time.perf_counter()
    grid = policy_iteration(cfg.mesh(), cfg.controls, cfg.cost, cfg.kernels,
                            tol=cfg.dp_tol)
    elapsed = time.perf_counter() - t0
    assert grid.converged
    return grid, elapsed


@pytest.fixture(scope="module")
def consensus_runs(consensus_cfg, consensus_grid):
    """Controlled and uncontrolled full runs from the same seed."""
    cfg = consensus_cfg
    grid, _ = consensus_grid
    t0 = time.perf_counter()
    free = _run_preset(cfg, None, seed=11)
    free_seconds = time.perf_counter() - t0
    steered = _run_preset(cfg, GridFeedback(grid), seed=11)
    return free, steered, free_seconds


@pytest.fixture(scope="module")
def confidence_run(confidence_cfg):
    """Controlled full run of the bounded-confidence problem."""
    cfg = confidence_cfg
    grid = policy_iteration(cfg.mesh(), cfg.controls, cfg.cost, cfg.kernels,
                            tol=cfg.dp_tol)
    assert grid.converged
    return _run_preset(cfg, GridFeedback(grid), seed=21)


def test_01_value_iteration_contracts_at_the_discount_rate(consensus_cfg):
    """9^4 synthesis: residuals decay like beta^k and reach 1e-6 in < 1 min."""
    cfg = consensus_cfg
    mesh = replace(cfg.mesh(), n=9)
    t0 = time.perf_counter()
    grid = value_iteration(mesh, cfg.controls, cfg.cost, cfg.kernels,
                           tol=1e-6)
    elapsed = time.perf_counter() - t0
    assert grid.converged
    assert grid.residual < 1e-6
    hist = np.asarray(grid.residual_history)
    beta = cfg.cost.beta
    for k in range(1, 31):
        assert hist[k] <= beta ** k * hist[0] * 1.05
    assert elapsed < 60.0


def test_02_grid_feedback_matches_closed_form_gain(consensus_cfg,
                                                   consensus_grid):
    """41^4 grid vs exact linear gain: within max(2*du, 5*h) inland."""
    cfg = consensus_cfg
    grid, synth_seconds = consensus_grid
    gain = riccati_gain(cfg.kernels, cfg.cost,
                        cfg.controls.u_min, cfg.controls.u_max)
    t0 = time.perf_counter()
    rng = np.random.default_rng(1002)
    pts = []
    while len(pts) < 100:
        s = rng.uniform(-0.99, 0.99, size=4)
        if abs(float(gain(*s))) <= 0.95:   # strictly inside the control box
            pts.append(s)
    pts = np.asarray(pts)
    u_grid = feedback_batch(grid, pts)
    u_lin = gain(pts[:, 0], pts[:, 1], pts[:, 2], pts[:, 3])
    du = cfg.controls.spacing
    h = grid.mesh.h
    tol = max(2.0 * du, 5.0 * h)
    assert np.max(np.abs(u_grid - u_lin)) <= tol
    assert synth_seconds + (time.perf_counter() - t0) < 900.0


def test_03_rollout_reproduces_the_value_function(consensus_cfg,
                                                  consensus_grid):
    """Discounted rollout under the synthesized feedback matches V to 5%."""
    cfg = consensus_cfg
    grid, _ = consensus_grid
    cost = cfg.cost
    beta, dt = cost.beta, cost.dt
    n = int(np.ceil(np.log(1e-6) / np.log(beta)))
    rng = np.random.default_rng(1003)
    axis = grid.mesh.axis
    nodes = axis[rng.integers(0, axis.shape[0], size=(50, 4))]
    worst = 0.0
    for s0 in nodes:
        s = tuple(s0)
        total, w = 0.0, 1.0
        for _ in range(n):
            u = feedback(grid, s)
            total += w * dt * running_cost(s, u, cost)
            w *= beta
            s = tuple(np.clip(binary_step(s, u, dt, cfg.kernels),
                              grid.mesh.lo, grid.mesh.hi))
        v = interpolate_value(grid.values, grid.mesh, s0)
        err = abs(total - v) / max(abs(v), 0.02)   # 5% of v or 1e-3 absolute
        worst = max(worst, err)
    assert worst <= 0.05


def test_04_full_run_conserves_particle_populations(confidence_cfg,
                                                    confidence_run):
    """Sample counts and masses are exactly invariant over every step."""
    cfg = confidence_cfg
    res = confidence_run
    assert res.n_followers.shape == (cfg.n_steps + 1,)
    assert np.all(res.n_followers == cfg.n_s)
    assert np.all(res.n_leaders == cfg.m_s)
    assert res.final.rho_f == cfg.rho_f
    assert res.final.rho_l == cfg.rho_l


def test_05_collision_counts_match_interaction_rates():
    """Count means over 500 steps sit within 3 sigma of the exact rates."""
    cfg = load_preset("test1")
    rng = np.random.default_rng(1005)
    e = _sample_ensemble(cfg, rng)
    n_ff, n_fl, m_ll = [], [], []
    for _ in range(500):
        e, rec = tpbb_step(e, cfg.scaling, cfg.kernels, None, rng)
        n_ff.append(rec.n_ff)
        n_fl.append(rec.n_fl)
        m_ll.append(rec.m_ll)
    three_sigma = 3.0 * np.sqrt(2.0 / 9.0 / 500.0)
    assert abs(np.mean(n_ff) - (2.0 / 3.0) * cfg.n_s) <= three_sigma
    assert abs(np.mean(n_fl) - (1.0 / 3.0) * cfg.n_s) <= three_sigma
    assert abs(np.mean(m_ll) - (1.0 / 3.0) * cfg.m_s) <= three_sigma


def test_06_free_dynamics_follow_the_moment_oracle(consensus_cfg,
                                                   consensus_runs):
    """Uncontrolled means track the constant-kernel mean ODEs."""
    from lfkinetic import linear_moment_odes

    cfg = consensus_cfg
    free, _, free_seconds = consensus_runs
    _, m_f, _ = linear_moment_odes(
        free.mean_f[0], free.mean_l[0], cfg.rho_f, cfg.rho_l,
        None, cfg.scaling.t_final, 1e-4)
    for t_chk in (0.5, 1.0, 2.5):
        i_run = int(round(t_chk / cfg.scaling.dt))
        i_ode = int(round(t_chk / 1e-4))
        assert abs(free.mean_f[i_run] - m_f[i_ode]) < 0.03
        assert abs(free.mean_l[i_run] - free.mean_l[0]) < 0.02
    assert free_seconds < 120.0


def test_07_feedback_steers_both_populations_to_the_target(consensus_runs):
    """Controlled run ends near x_ref = -0.5; closer than the free run."""
    free, steered, _ = consensus_runs
    target = -0.5
    assert abs(steered.mean_l[-1] - target) < 0.1
    assert abs(steered.mean_f[-1] - target) < 0.15
    assert abs(steered.mean_l[-1] - target) < abs(free.mean_l[-1] - target)
    assert abs(steered.mean_f[-1] - target) < abs(free.mean_f[-1] - target)


def _clusters(heights, min_gap_bins):
    """Maximal nonzero runs, merging any separated by short empty gaps."""
    occupied = heights > 0.0
    raw = []
    start = None
    for i, occ in enumerate(occupied):
        if occ and start is None:
            start = i
        elif not occ and start is not None:
            raw.append((start, i - 1))
            start = None
    if start is not None:
        raw.append((start, len(occupied) - 1))
    merged = []
    for lo, hi in raw:
        if merged and lo - merged[-1][1] - 1 < min_gap_bins:
            merged[-1] = (merged[-1][0], hi)
        else:
            merged.append((lo, hi))
    return merged


def test_08_confidence_dynamics_cluster_and_feedback_collects_them(
        confidence_cfg, confidence_run):
    """Leaderless followers split into separated clusters; with the
    controlled leaders most follower mass gathers at x_ref = 0.25."""
    free_cfg = load_preset("test2-noleaders")
    free = _run_preset(free_cfg, None, seed=28)
    heights = free.dens_f[-1]
    gap_bins = int(round(0.3 / free_cfg.hist_dx))
    assert len(_clusters(heights, gap_bins)) >= 2

    cfg = confidence_cfg
    res = confidence_run
    centers = res.bin_centers
    near = np.abs(centers - cfg.cost.x_ref) <= 0.2
    mass_near = float(np.sum(res.dens_f[-1][near]) * cfg.hist_dx)
    assert mass_near / cfg.rho_f >= 0.6


def test_09_reduced_step_equals_the_generic_micro_step():
    """Two-on-two micro dynamics and the reduced step agree bitwise."""
    rng = np.random.default_rng(1009)
    triples = [
        KernelTriple(ff=KernelSpec("constant", 1.0),
                     fl=KernelSpec("constant", 0.5),
                     ll=KernelSpec("constant", 1.0)),
        KernelTriple(ff=KernelSpec("bounded_confidence", 0.3),
                     fl=KernelSpec("bounded_confidence", 0.8),
                     ll=KernelSpec("constant", 1.0)),
        KernelTriple(ff=KernelSpec("parabolic", 1.0),
                     fl=KernelSpec("parabolic", -1.0),
                     ll=KernelSpec("parabolic", 1.0)),
    ]
    for i in range(10_000):
        k = triples[i % 3]
        s = rng.uniform(-1, 1, size=4)
        u = rng.uniform(-1, 1)
        xb, yb = micro_step(s[:2], s[2:], u, 0.02, k)
        assert binary_step(tuple(s), u, 0.02, k) == (xb[0], xb[1], yb[0], yb[1])


def test_10_seeded_runs_export_identical_bytes(tmp_path):
    """Two CLI runs with one seed produce byte-identical CSV outputs."""
    outs = [tmp_path / "first", tmp_path / "second"]
    for out in outs:
        code = main(["run", "--preset", "test2-noleaders", "--seed", "4242",
                     "--out", str(out), "--cache-dir", str(tmp_path / "cache"),
                     "--quiet"])
        assert code == 0
    for name in ["density.csv", "surface.csv", "series.csv", "counts.csv",
                 "config.ini"]:
        assert ((outs[0] / name).read_bytes()
                == (outs[1] / name).read_bytes()), name
    meta = json.loads((outs[0] / "metadata.json").read_text())
    assert meta["status"] == "complete"
    assert meta["workers"] == 1
