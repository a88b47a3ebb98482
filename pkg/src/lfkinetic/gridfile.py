"""On-disk format for synthesized value grids.

Layout: an 8-byte magic, two little-endian u32 words (format version and
header length), a UTF-8 JSON header carrying every parameter the grid
was synthesized under, then the raw float64 values in C order.  The
header is self-describing so a cached grid can be checked against the
run configuration that wants to use it.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .control_problem import ControlGrid, CostParams
from .dp import Mesh, ValueGrid
from .errors import PersistFailure, ValidationError
from .kernels import KernelTriple

__all__ = ["save_grid", "load_grid", "check_grid_matches"]

MAGIC = b"VGRID4D\0"
VERSION = 1


def _header_dict(grid: ValueGrid) -> dict:
    return {
        "mesh": grid.mesh.record(),
        "cost": grid.cost.record(),
        "controls": grid.controls.record(),
        "kernels": grid.kernels.record(),
        "residual": grid.residual,
        "iterations": grid.iterations,
        "converged": grid.converged,
        "method": grid.method,
    }


def save_grid(grid: ValueGrid, path) -> None:
    header = json.dumps(_header_dict(grid), sort_keys=True).encode("utf-8")
    payload = np.ascontiguousarray(grid.values, dtype=np.float64)
    try:
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<II", VERSION, len(header)))
            fh.write(header)
            fh.write(payload.astype("<f8", copy=False).tobytes(order="C"))
    except OSError as exc:
        raise PersistFailure(f"could not write value grid to {path}: {exc}") from exc


def load_grid(path) -> ValueGrid:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise PersistFailure(f"could not read value grid from {path}: {exc}") from exc

    if len(blob) < len(MAGIC) + 8 or blob[: len(MAGIC)] != MAGIC:
        raise ValidationError(f"{path}: not a value grid file (bad magic)")
    version, header_len = struct.unpack_from("<II", blob, len(MAGIC))
    if version != VERSION:
        raise ValidationError(
            f"{path}: unsupported grid format version {version}")
    off = len(MAGIC) + 8
    if off + header_len > len(blob):
        raise ValidationError(f"{path}: truncated header")
    try:
        header = json.loads(blob[off: off + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ValidationError(f"{path}: corrupt grid header: {exc}") from exc
    off += header_len

    mesh = Mesh.from_record(header["mesh"])
    n4 = mesh.n ** 4
    expect = n4 * 8
    if len(blob) - off != expect:
        raise ValidationError(
            f"{path}: value payload is {len(blob) - off} bytes, "
            f"expected {expect}")
    values = np.frombuffer(blob[off:], dtype="<f8").astype(
        np.float64, copy=True).reshape((mesh.n,) * 4)

    return ValueGrid(
        mesh=mesh,
        values=values,
        kernels=KernelTriple.from_record(header["kernels"]),
        cost=CostParams.from_record(header["cost"]),
        controls=ControlGrid.from_record(header["controls"]),
        residual=float(header["residual"]),
        iterations=int(header["iterations"]),
        converged=bool(header["converged"]),
        method=str(header.get("method", "")),
    )


def check_grid_matches(grid: ValueGrid, *, mesh: Mesh, cost: CostParams,
                       controls: ControlGrid, kernels: KernelTriple) -> None:
    """Raise ValidationError if the grid was built for other parameters."""
    mismatches = []
    if grid.mesh.record() != mesh.record():
        mismatches.append("mesh")
    if grid.cost.record() != cost.record():
        mismatches.append("cost")
    if grid.controls.record() != controls.record():
        mismatches.append("controls")
    if grid.kernels.record() != kernels.record():
        mismatches.append("kernels")
    if mismatches:
        raise ValidationError(
            "cached value grid does not match the requested configuration "
            f"(differs in: {', '.join(mismatches)})")
