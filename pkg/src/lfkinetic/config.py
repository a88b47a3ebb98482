"""Run configuration: presets, INI file round-trip, validation, digests.

A RunConfig carries everything a full experiment needs.  The file format
is flat INI (one section per field group) so configs are hand-editable
and diffable; floats are serialized with repr so a load/save/load cycle
is the identity.
"""

from __future__ import annotations

import configparser
import hashlib
import json
from dataclasses import dataclass, field, replace

from .control_problem import ControlGrid, CostParams
from .dp import Mesh
from .dsmc import ScalingParams, check_cfl
from .errors import ValidationError
from .kernels import KernelSpec, KernelTriple

__all__ = [
    "RunConfig", "PRESETS", "load_preset", "load_config", "save_config",
    "dp_digest",
]

# the single parameter each kernel kind carries in flattened records
_PARAM_KEY = {"constant": "c", "bounded_confidence": "r", "parabolic": "s"}

_CONTROLS = ("none", "grid", "riccati")
_DP_METHODS = ("value_iter", "policy_iter", "riccati")
_PHI_PAIRS = ("full", "subsampled")


@dataclass(frozen=True)
class RunConfig:
    name: str
    kernels: KernelTriple
    cost: CostParams
    scaling: ScalingParams
    rho_f: float
    rho_l: float
    n_s: int
    m_s: int
    init_f: tuple
    init_l: tuple
    omega: tuple = (-1.0, 1.0)
    mesh_n: int = 41
    controls: ControlGrid = field(default_factory=lambda: ControlGrid(-1.0, 1.0, 41))
    dp_method: str = "policy_iter"
    dp_tol: float = 1e-6
    dp_max_iter: int = 20000
    control: str = "grid"
    seed: int = 0
    out_dir: str = "runs"
    snapshot_stride: int = 25
    hist_dx: float = 0.025
    surface_points: int = 81
    surface_partners: int = 32
    phi_pairs: str = "full"
    symmetric: bool = False

    @property
    def n_steps(self) -> int:
        return int(round(self.scaling.t_final / self.scaling.dt))

    def validate(self) -> None:
        if self.control not in _CONTROLS:
            raise ValidationError(f"control must be one of {_CONTROLS}")
        if self.dp_method not in _DP_METHODS:
            raise ValidationError(f"dp_method must be one of {_DP_METHODS}")
        if self.phi_pairs not in _PHI_PAIRS:
            raise ValidationError(f"phi_pairs must be one of {_PHI_PAIRS}")
        if self.control == "grid" and self.dp_method == "riccati":
            raise ValidationError(
                "grid feedback needs a grid synthesis method "
                "(value_iter or policy_iter)")
        if self.control == "riccati" or self.dp_method == "riccati":
            for tag, spec in (("ff", self.kernels.ff), ("fl", self.kernels.fl),
                              ("ll", self.kernels.ll)):
                if spec.kind not in ("constant", "zero"):
                    raise ValidationError(
                        f"kernels.{tag}: the closed-form gain requires "
                        f"constant kernels, got {spec.kind!r}")
        check_cfl(self.scaling, self.rho_f, self.rho_l)
        n_exact = self.scaling.t_final / self.scaling.dt
        if abs(n_exact - round(n_exact)) > 1e-9:
            raise ValidationError(
                f"t_final/dt = {n_exact:g} is not an integer step count")
        if self.n_s < 1:
            raise ValidationError("n_s must be at least 1")
        if self.m_s < 0:
            raise ValidationError("m_s must be nonnegative")
        for tag, (a, b) in (("init_f", self.init_f), ("init_l", self.init_l)):
            if not a < b:
                raise ValidationError(f"{tag}: empty interval [{a}, {b}]")
        if not self.omega[0] < self.omega[1]:
            raise ValidationError("omega bounds must be increasing")
        if self.mesh_n < 2:
            raise ValidationError("mesh_n must be at least 2")
        if self.snapshot_stride < 1:
            raise ValidationError("snapshot_stride must be at least 1")
        if self.hist_dx <= 0.0:
            raise ValidationError("hist_dx must be positive")
        if self.surface_points < 2 or self.surface_partners < 1:
            raise ValidationError("surface sampling sizes are too small")

    def mesh(self) -> Mesh:
        return Mesh(lo=self.omega[0], hi=self.omega[1], n=self.mesh_n)


def dp_digest(cfg: RunConfig) -> str:
    """Hash of every field the synthesized value grid depends on."""
    payload = {
        "mesh": cfg.mesh().record(),
        "kernels": cfg.kernels.record(),
        "cost": cfg.cost.record(),
        "controls": cfg.controls.record(),
        "method": cfg.dp_method,
        "tol": cfg.dp_tol,
        "max_iter": cfg.dp_max_iter,
    }
    blob = json.dumps(payload, sort_keys=True).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


# ---------------------------------------------------------------------------
# presets

_SHARED = dict(
    rho_f=1.0, rho_l=0.5,
    n_s=10_000, m_s=5_000,
    omega=(-1.0, 1.0), mesh_n=41,
    hist_dx=0.025,
)

_EPS = 0.01
_DT_SIM = (2.0 / 3.0) * 1e-2
_DT_DP = 2.0 * _EPS


def _preset_test1() -> RunConfig:
    return RunConfig(
        name="test1",
        kernels=KernelTriple(ff=KernelSpec.constant(1.0),
                             fl=KernelSpec.constant(1.0),
                             ll=KernelSpec.constant(1.0)),
        cost=CostParams(a_f=1.0, a_l=1.0, gamma=1.0, lam=1.0,
                        x_ref=-0.5, dt=_DT_DP),
        scaling=ScalingParams(eps=_EPS, dt=_DT_SIM, sigma_s=64, t_final=2.5),
        init_f=(-1.0, 1.0), init_l=(0.15, 0.85),
        snapshot_stride=25,
        **_SHARED,
    )


def _preset_test2() -> RunConfig:
    return RunConfig(
        name="test2",
        kernels=KernelTriple(ff=KernelSpec.bounded_confidence(0.3),
                             fl=KernelSpec.bounded_confidence(0.8),
                             ll=KernelSpec.constant(1.0)),
        cost=CostParams(a_f=10.0, a_l=0.1, gamma=0.05, lam=0.1,
                        x_ref=0.25, dt=_DT_DP),
        scaling=ScalingParams(eps=_EPS, dt=_DT_SIM, sigma_s=64, t_final=10.0),
        init_f=(-0.9, 1.3), init_l=(0.0, 0.5),
        snapshot_stride=100,
        **_SHARED,
    )


def _preset_test2_noleaders() -> RunConfig:
    base = _preset_test2()
    return replace(
        base, name="test2-noleaders",
        kernels=replace(base.kernels, fl=KernelSpec.zero()),
        control="none",
    )


def _preset_test3(variant: str) -> RunConfig:
    if variant == "a":
        ff, fl = KernelSpec.parabolic(1.0), KernelSpec.parabolic(-1.0)
    else:
        ff, fl = KernelSpec.parabolic(-1.0), KernelSpec.parabolic(1.0)
    return RunConfig(
        name=f"test3{variant}",
        kernels=KernelTriple(ff=ff, fl=fl, ll=KernelSpec.parabolic(1.0)),
        cost=CostParams(a_f=1.0, a_l=0.01, gamma=1.0, lam=0.5,
                        x_ref=0.0, dt=_DT_DP),
        scaling=ScalingParams(eps=_EPS, dt=_DT_SIM, sigma_s=64, t_final=3.5),
        init_f=(0.05, 0.55), init_l=(-0.45, 0.05),
        snapshot_stride=35,
        **_SHARED,
    )


PRESETS = {
    "test1": _preset_test1,
    "test2": _preset_test2,
    "test2-noleaders": _preset_test2_noleaders,
    "test3a": lambda: _preset_test3("a"),
    "test3b": lambda: _preset_test3("b"),
}


def load_preset(name: str) -> RunConfig:
    try:
        maker = PRESETS[name]
    except KeyError:
        raise ValidationError(
            f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    cfg = maker()
    cfg.validate()
    return cfg


# paper-reported sampling sizes, applied by the --paper-scale flag
PAPER_SCALE = {
    "n_s": 1_000_000, "m_s": 500_000,
    "sigma_s": {"test1": 200_000, "test2": 200_000, "test2-noleaders": 200_000,
                "test3a": 500_000, "test3b": 500_000},
}


def apply_paper_scale(cfg: RunConfig) -> RunConfig:
    sigma = PAPER_SCALE["sigma_s"].get(cfg.name, 200_000)
    return replace(
        cfg,
        n_s=PAPER_SCALE["n_s"], m_s=PAPER_SCALE["m_s"],
        scaling=replace(cfg.scaling, sigma_s=sigma),
        phi_pairs="subsampled",
    )


# ---------------------------------------------------------------------------
# INI round-trip

def _kernel_to_section(spec: KernelSpec, prefix: str, sec: dict) -> None:
    sec[f"{prefix}_kind"] = spec.kind
    key = _PARAM_KEY.get(spec.kind)
    if key is not None:
        sec[f"{prefix}_{key}"] = repr(spec.param)


def _kernel_from_section(sec, prefix: str) -> KernelSpec:
    kind = sec.get(f"{prefix}_kind")
    if kind is None:
        raise ValidationError(f"kernels: missing {prefix}_kind")
    if kind == "zero":
        return KernelSpec.zero()
    key = _PARAM_KEY.get(kind)
    if key is None:
        raise ValidationError(f"kernels.{prefix}: unknown kind {kind!r}")
    raw = sec.get(f"{prefix}_{key}")
    if raw is None:
        raise ValidationError(f"kernels.{prefix}: missing parameter {key!r}")
    return KernelSpec(kind, float(raw))


def save_config(cfg: RunConfig, path) -> None:
    cp = configparser.ConfigParser()
    cp["run"] = {
        "name": cfg.name,
        "seed": str(cfg.seed),
        "control": cfg.control,
    }
    ker: dict = {}
    for prefix, spec in (("ff", cfg.kernels.ff), ("fl", cfg.kernels.fl),
                         ("ll", cfg.kernels.ll)):
        _kernel_to_section(spec, prefix, ker)
    cp["kernels"] = ker
    cp["cost"] = {
        "a_f": repr(cfg.cost.a_f), "a_l": repr(cfg.cost.a_l),
        "gamma": repr(cfg.cost.gamma), "lam": repr(cfg.cost.lam),
        "x_ref": repr(cfg.cost.x_ref), "dt": repr(cfg.cost.dt),
    }
    cp["scaling"] = {
        "eps": repr(cfg.scaling.eps), "dt": repr(cfg.scaling.dt),
        "sigma_s": str(cfg.scaling.sigma_s),
        "t_final": repr(cfg.scaling.t_final),
    }
    cp["populations"] = {
        "rho_f": repr(cfg.rho_f), "rho_l": repr(cfg.rho_l),
        "n_s": str(cfg.n_s), "m_s": str(cfg.m_s),
        "init_f_lo": repr(cfg.init_f[0]), "init_f_hi": repr(cfg.init_f[1]),
        "init_l_lo": repr(cfg.init_l[0]), "init_l_hi": repr(cfg.init_l[1]),
    }
    cp["dp"] = {
        "omega_lo": repr(cfg.omega[0]), "omega_hi": repr(cfg.omega[1]),
        "mesh_n": str(cfg.mesh_n),
        "u_min": repr(cfg.controls.u_min), "u_max": repr(cfg.controls.u_max),
        "n_u": str(cfg.controls.n_u),
        "method": cfg.dp_method, "tol": repr(cfg.dp_tol),
        "max_iter": str(cfg.dp_max_iter),
    }
    cp["output"] = {
        "dir": cfg.out_dir,
        "snapshot_stride": str(cfg.snapshot_stride),
        "hist_dx": repr(cfg.hist_dx),
        "surface_points": str(cfg.surface_points),
        "surface_partners": str(cfg.surface_partners),
        "phi_pairs": cfg.phi_pairs,
        "symmetric": "true" if cfg.symmetric else "false",
    }
    with open(path, "w") as fh:
        cp.write(fh)


def load_config(path) -> RunConfig:
    cp = configparser.ConfigParser()
    read = cp.read(path)
    if not read:
        raise ValidationError(f"config file {path} not found or unreadable")
    try:
        run = cp["run"]
        ker = cp["kernels"]
        cost = cp["cost"]
        sca = cp["scaling"]
        pop = cp["populations"]
        dp = cp["dp"]
        out = cp["output"]
        cfg = RunConfig(
            name=run.get("name", "custom"),
            seed=int(run.get("seed", "0")),
            control=run.get("control", "grid"),
            kernels=KernelTriple(
                ff=_kernel_from_section(ker, "ff"),
                fl=_kernel_from_section(ker, "fl"),
                ll=_kernel_from_section(ker, "ll"),
            ),
            cost=CostParams(
                a_f=float(cost["a_f"]), a_l=float(cost["a_l"]),
                gamma=float(cost["gamma"]), lam=float(cost["lam"]),
                x_ref=float(cost["x_ref"]), dt=float(cost["dt"]),
            ),
            scaling=ScalingParams(
                eps=float(sca["eps"]), dt=float(sca["dt"]),
                sigma_s=int(sca["sigma_s"]), t_final=float(sca["t_final"]),
            ),
            rho_f=float(pop["rho_f"]), rho_l=float(pop["rho_l"]),
            n_s=int(pop["n_s"]), m_s=int(pop["m_s"]),
            init_f=(float(pop["init_f_lo"]), float(pop["init_f_hi"])),
            init_l=(float(pop["init_l_lo"]), float(pop["init_l_hi"])),
            omega=(float(dp["omega_lo"]), float(dp["omega_hi"])),
            mesh_n=int(dp["mesh_n"]),
            controls=ControlGrid(float(dp["u_min"]), float(dp["u_max"]),
                                 int(dp["n_u"])),
            dp_method=dp.get("method", "policy_iter"),
            dp_tol=float(dp.get("tol", "1e-6")),
            dp_max_iter=int(dp.get("max_iter", "20000")),
            out_dir=out.get("dir", "runs"),
            snapshot_stride=int(out.get("snapshot_stride", "25")),
            hist_dx=float(out.get("hist_dx", "0.025")),
            surface_points=int(out.get("surface_points", "81")),
            surface_partners=int(out.get("surface_partners", "32")),
            phi_pairs=out.get("phi_pairs", "full"),
            symmetric=out.getboolean("symmetric", fallback=False),
        )
    except (KeyError, ValueError) as exc:
        raise ValidationError(f"malformed config {path}: {exc}") from exc
    cfg.validate()
    return cfg
