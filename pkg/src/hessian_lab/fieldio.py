"""Flat binary serialization of grid fields.

Layout: header of little-endian 64-bit values (dim, then per-axis sizes,
then per-axis periods), followed by row-major float64 point data. Scalar
fields carry one value per point; symmetric tensor fields carry the full
n x n block per point. The reader knows which kind it expects and
validates the byte count.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .grid import PeriodicGrid, ScalarField, SymTensorField

__all__ = [
    "write_scalar_field",
    "read_scalar_field",
    "write_sym_tensor_field",
    "read_sym_tensor_field",
    "save_solution_pair",
    "load_solution_pair",
]

_I8 = np.dtype("<i8")
_F8 = np.dtype("<f8")


def _write(path, grid: PeriodicGrid, data: np.ndarray) -> None:
    with open(path, "wb") as fh:
        np.asarray([grid.dim], dtype=_I8).tofile(fh)
        np.asarray(grid.sizes, dtype=_I8).tofile(fh)
        np.asarray(grid.periods, dtype=_F8).tofile(fh)
        np.ascontiguousarray(data, dtype=_F8).tofile(fh)


def _read_header(fh):
    dim = int(np.fromfile(fh, dtype=_I8, count=1)[0])
    sizes = tuple(int(s) for s in np.fromfile(fh, dtype=_I8, count=dim))
    periods = tuple(float(p) for p in np.fromfile(fh, dtype=_F8, count=dim))
    return dim, sizes, periods


def write_scalar_field(path, field: ScalarField) -> None:
    _write(path, field.grid, field.values)


def read_scalar_field(path, stencil_order=4) -> ScalarField:
    with open(path, "rb") as fh:
        dim, sizes, periods = _read_header(fh)
        data = np.fromfile(fh, dtype=_F8)
    expected = int(np.prod(sizes))
    if data.size != expected:
        raise ValueError(
            f"{path}: expected {expected} scalar values, found {data.size}"
        )
    grid = PeriodicGrid(dim, sizes, periods, stencil_order)
    return ScalarField(grid, data.reshape(sizes))


def write_sym_tensor_field(path, field: SymTensorField) -> None:
    _write(path, field.grid, field.values)


def read_sym_tensor_field(path, stencil_order=4) -> SymTensorField:
    with open(path, "rb") as fh:
        dim, sizes, periods = _read_header(fh)
        data = np.fromfile(fh, dtype=_F8)
    expected = int(np.prod(sizes)) * dim * dim
    if data.size != expected:
        raise ValueError(
            f"{path}: expected {expected} tensor values, found {data.size}"
        )
    grid = PeriodicGrid(dim, sizes, periods, stencil_order)
    return SymTensorField(grid, data.reshape(sizes + (dim, dim)))


def save_solution_pair(prefix, pair, tolerances: dict) -> None:
    """Potential in the field format plus a JSON sidecar with the constant."""
    prefix = Path(prefix)
    write_scalar_field(prefix.with_suffix(".field"), pair.phi)
    grid = pair.phi.grid
    sidecar = {
        "b": pair.b,
        "tolerances": tolerances,
        "grid": {
            "dim": grid.dim,
            "sizes": list(grid.sizes),
            "periods": list(grid.periods),
            "stencil_order": grid.stencil_order,
        },
        "residual_inf": pair.residual_inf,
    }
    prefix.with_suffix(".json").write_text(
        json.dumps(sidecar, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )


def load_solution_pair(prefix):
    from .solver import SolutionPair

    prefix = Path(prefix)
    sidecar = json.loads(prefix.with_suffix(".json").read_text(encoding="utf-8"))
    phi = read_scalar_field(
        prefix.with_suffix(".field"),
        stencil_order=sidecar["grid"].get("stencil_order", 4),
    )
    return SolutionPair(
        phi=phi, b=float(sidecar["b"]), residual_inf=sidecar.get("residual_inf", np.nan)
    )
