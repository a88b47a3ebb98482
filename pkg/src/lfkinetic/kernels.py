"""Pairwise interaction kernels for the two-population dynamics.

A kernel K(x, y) weights the attraction (or repulsion) that an agent at
state x feels toward a partner at state y.  All kernels used here are
either constant, a symmetric confidence indicator, or a polynomial factor
that depends on the evaluating agent's own state only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

__all__ = [
    "KernelSpec",
    "KernelTriple",
    "eval_kernel",
    "interaction_velocity",
]

# numeric codes consumed by the compiled/vectorized backends
KIND_ZERO = 0
KIND_CONSTANT = 1
KIND_BOUNDED_CONFIDENCE = 2
KIND_PARABOLIC = 3

_KIND_NAMES = {
    "zero": KIND_ZERO,
    "constant": KIND_CONSTANT,
    "bounded_confidence": KIND_BOUNDED_CONFIDENCE,
    "parabolic": KIND_PARABOLIC,
}


@dataclass(frozen=True)
class KernelSpec:
    """Tagged kernel description.

    kind        one of "zero", "constant", "bounded_confidence", "parabolic"
    param       c for constant, radius r for bounded_confidence, strength s
                for parabolic; ignored for zero
    """

    kind: str
    param: float = 0.0

    def __post_init__(self):
        if self.kind not in _KIND_NAMES:
            raise ValidationError(f"unknown kernel kind {self.kind!r}")
        if self.kind == "bounded_confidence" and not self.param > 0.0:
            raise ValidationError("bounded_confidence radius must be > 0")

    @staticmethod
    def zero() -> "KernelSpec":
        return KernelSpec("zero")

    @staticmethod
    def constant(c: float) -> "KernelSpec":
        return KernelSpec("constant", float(c))

    @staticmethod
    def bounded_confidence(r: float) -> "KernelSpec":
        return KernelSpec("bounded_confidence", float(r))

    @staticmethod
    def parabolic(s: float) -> "KernelSpec":
        return KernelSpec("parabolic", float(s))

    @property
    def code(self) -> int:
        return _KIND_NAMES[self.kind]

    def record(self) -> dict:
        """Flat tagged record, e.g. {"kind": "constant", "c": 1.0}."""
        rec = {"kind": self.kind}
        if self.kind == "constant":
            rec["c"] = self.param
        elif self.kind == "bounded_confidence":
            rec["r"] = self.param
        elif self.kind == "parabolic":
            rec["s"] = self.param
        return rec

    @staticmethod
    def from_record(rec: dict) -> "KernelSpec":
        kind = rec.get("kind")
        if kind == "zero":
            return KernelSpec.zero()
        if kind == "constant":
            return KernelSpec.constant(rec["c"])
        if kind == "bounded_confidence":
            return KernelSpec.bounded_confidence(rec["r"])
        if kind == "parabolic":
            return KernelSpec.parabolic(rec["s"])
        raise ValidationError(f"unknown kernel kind {kind!r}")


def eval_kernel(spec: KernelSpec, x, y):
    """Evaluate K(x, y) elementwise; x and y broadcast together.

    The bounded-confidence kernel returns exactly 0.0 or 1.0.  The
    parabolic kernel s * (1 - x^2) depends on the first argument only.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if spec.kind == "zero":
        return np.zeros(np.broadcast(x, y).shape, dtype=np.float64)
    if spec.kind == "constant":
        return np.full(np.broadcast(x, y).shape, spec.param, dtype=np.float64)
    if spec.kind == "bounded_confidence":
        return np.where(np.abs(x - y) <= spec.param, 1.0, 0.0)
    # parabolic
    out = spec.param * (1.0 - x * x)
    return np.broadcast_to(np.asarray(out, dtype=np.float64),
                           np.broadcast(x, y).shape).copy()


def interaction_velocity(spec: KernelSpec, x, y):
    """K(x, y) * (y - x), the alignment velocity contribution of partner y."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    return eval_kernel(spec, x, y) * (y - x)


@dataclass(frozen=True)
class KernelTriple:
    """The three kernels of a two-population model.

    ff  follower-follower, fl  follower-leader, ll  leader-leader.
    """

    ff: KernelSpec
    fl: KernelSpec
    ll: KernelSpec

    def record(self) -> dict:
        return {"ff": self.ff.record(), "fl": self.fl.record(), "ll": self.ll.record()}

    @staticmethod
    def from_record(rec: dict) -> "KernelTriple":
        return KernelTriple(
            ff=KernelSpec.from_record(rec["ff"]),
            fl=KernelSpec.from_record(rec["fl"]),
            ll=KernelSpec.from_record(rec["ll"]),
        )

    def codes(self) -> np.ndarray:
        """(code, param) pairs for (ff, fl, ll) as a (3, 2) float array."""
        return np.array(
            [
                [self.ff.code, self.ff.param],
                [self.fl.code, self.fl.param],
                [self.ll.code, self.ll.param],
            ],
            dtype=np.float64,
        )
