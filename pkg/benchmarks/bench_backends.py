"""Compare the compiled extension against the numpy fallback.

Times the three hot paths (value sweep, batch lookahead, feedback
averaging) on production-sized inputs and prints a small table.  Run as

    python3 benchmarks/bench_backends.py [--mesh 41] [--repeat 3]
"""

import argparse
import time

import numpy as np

from lfkinetic import _core_np
from lfkinetic.config import load_preset
from lfkinetic.control_problem import ControlGrid

try:
    from lfkinetic import _core
except ImportError:
    _core = None


def _flat(cfg, n):
    mesh_lo, mesh_hi = cfg.omega
    h = (mesh_hi - mesh_lo) / (n - 1)
    k = cfg.kernels
    c = cfg.cost
    return (mesh_lo, mesh_hi, h, n,
            k.ff.code, k.ff.param, k.fl.code, k.fl.param,
            k.ll.code, k.ll.param,
            c.a_f, c.a_l, c.gamma, c.x_ref, c.dt, c.beta)


def _time(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--mesh", type=int, default=41)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--collisions", type=int, default=64,
                    help="leader pairs per phi evaluation")
    args = ap.parse_args()

    cfg = load_preset("test2")
    n = args.mesh
    flat = _flat(cfg, n)
    u_scan = ControlGrid(-1.0, 1.0, 41).scan_values
    rng = np.random.default_rng(0)
    v = rng.uniform(0.0, 3.0, size=(n,) * 4)
    pts = rng.uniform(-1, 1, size=(4096, 4))
    xs = rng.uniform(-1, 1, size=cfg.scaling.sigma_s)
    yi = rng.uniform(-1, 1, size=args.collisions)
    yr = rng.uniform(-1, 1, size=args.collisions)

    cases = [
        ("bellman_sweep", lambda m: m.bellman_sweep(v, *flat, u_scan)),
        ("bellman_batch (4096 pts)",
         lambda m: m.bellman_batch(v, *flat, u_scan, pts)),
        (f"phi_grid ({args.collisions} collisions, sigma={xs.shape[0]})",
         lambda m: m.phi_grid(v, *flat[:10], cfg.cost.gamma, cfg.cost.dt,
                              cfg.cost.beta, u_scan, xs, yi, yr)),
    ]

    print(f"mesh {n}^4, control grid {u_scan.shape[0]}, best of {args.repeat}")
    header = f"{'kernel':<38} {'numpy':>10} {'compiled':>10} {'speedup':>8}"
    print(header)
    print("-" * len(header))
    for name, call in cases:
        t_np = _time(lambda: call(_core_np), args.repeat)
        if _core is not None:
            t_c = _time(lambda: call(_core), args.repeat)
            print(f"{name:<38} {t_np * 1e3:9.1f}ms {t_c * 1e3:9.1f}ms "
                  f"{t_np / t_c:7.1f}x")
        else:
            print(f"{name:<38} {t_np * 1e3:9.1f}ms {'n/a':>10} {'':>8}")


if __name__ == "__main__":
    main()
