"""Run configuration: a single YAML file of key tables.

Sections: ``geometry`` (grid), ``metric`` (entry expressions or identity),
``operator`` (family, quotient index, shift), ``problem`` (background
tensor and right side), ``solver`` (tolerances), ``experiment`` (kind and
parameters) and ``output``. Configurations round-trip losslessly through
``to_dict``/``from_dict``.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np
import yaml

from .expressions import ExpressionError, evaluate_expression
from .fieldio import read_scalar_field
from .grid import GeometryError, MetricField, PeriodicGrid, ScalarField, SymTensorField
from .operators import OperatorSpec
from .solver import SolveOptions

__all__ = ["ConfigError", "RunConfig", "load_config"]

_ENTRY_KEYS = {2: ("11", "12", "22"), 3: ("11", "12", "13", "22", "23", "33")}


class ConfigError(ValueError):
    def __init__(self, message: str, field_path: str = ""):
        super().__init__(f"{field_path}: {message}" if field_path else message)
        self.field_path = field_path


@dataclass
class RunConfig:
    geometry: dict
    metric: dict
    operator: dict
    problem: dict
    solver: dict = dc_field(default_factory=dict)
    experiment: dict = dc_field(default_factory=dict)
    output: dict = dc_field(default_factory=dict)
    seed: int = 0

    # -- round trip -------------------------------------------------------

    def to_dict(self) -> dict:
        return copy.deepcopy(
            {
                "geometry": self.geometry,
                "metric": self.metric,
                "operator": self.operator,
                "problem": self.problem,
                "solver": self.solver,
                "experiment": self.experiment,
                "output": self.output,
                "seed": self.seed,
            }
        )

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        known = {
            "geometry",
            "metric",
            "operator",
            "problem",
            "solver",
            "experiment",
            "output",
            "seed",
        }
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown top-level keys {sorted(unknown)}")
        for required in ("geometry", "metric", "operator", "problem"):
            if required not in data:
                raise ConfigError("section is required", required)
        return cls(
            geometry=copy.deepcopy(data["geometry"]),
            metric=copy.deepcopy(data["metric"]),
            operator=copy.deepcopy(data["operator"]),
            problem=copy.deepcopy(data["problem"]),
            solver=copy.deepcopy(data.get("solver", {})),
            experiment=copy.deepcopy(data.get("experiment", {})),
            output=copy.deepcopy(data.get("output", {})),
            seed=int(data.get("seed", 0)),
        )

    # -- builders ---------------------------------------------------------

    def build_grid(self) -> PeriodicGrid:
        geo = self.geometry
        try:
            return PeriodicGrid(
                int(geo["dim"]),
                tuple(geo["sizes"]),
                tuple(geo["periods"]),
                geo.get("stencil_order", 4),
            )
        except KeyError as err:
            raise ConfigError(f"missing key {err}", "geometry") from err
        except GeometryError as err:
            raise ConfigError(str(err), "geometry") from err

    def _entries(self, table: dict, grid: PeriodicGrid, path: str) -> dict:
        out = {}
        for key in _ENTRY_KEYS[grid.dim]:
            if key in table:
                try:
                    out[(int(key[0]) - 1, int(key[1]) - 1)] = evaluate_expression(
                        table[key], grid
                    )
                except ExpressionError as err:
                    raise ConfigError(str(err), f"{path}.{key}") from err
        extra = set(table) - set(_ENTRY_KEYS[grid.dim]) - {"identity"}
        if extra:
            raise ConfigError(f"unknown entries {sorted(extra)}", path)
        return out

    def build_metric(self, grid: PeriodicGrid) -> MetricField:
        if self.metric.get("identity"):
            return MetricField.identity(grid)
        entries = self._entries(self.metric, grid, "metric")
        if not entries:
            raise ConfigError("no metric entries given", "metric")
        vals = np.zeros(grid.sizes + (grid.dim, grid.dim))
        for (i, j), arr in entries.items():
            vals[..., i, j] = arr
            vals[..., j, i] = arr
        try:
            return MetricField(grid, vals)
        except GeometryError as err:
            raise ConfigError(str(err), "metric") from err

    def build_operator(self) -> OperatorSpec:
        op = self.operator
        try:
            return OperatorSpec(
                family=op["family"],
                dim=int(self.geometry["dim"]),
                k=int(op.get("k", 0)),
                sigma=float(op.get("sigma", 1.0)),
            )
        except (KeyError, ValueError) as err:
            raise ConfigError(str(err), "operator") from err

    def build_chi(self, grid: PeriodicGrid, g: MetricField) -> SymTensorField:
        chi_cfg = self.problem.get("chi")
        if chi_cfg is None:
            raise ConfigError("problem.chi is required", "problem.chi")
        if "proportional_to_g" in chi_cfg:
            return SymTensorField.from_metric_multiple(
                g, float(chi_cfg["proportional_to_g"])
            )
        entries = self._entries(chi_cfg, grid, "problem.chi")
        if not entries:
            raise ConfigError("no background entries given", "problem.chi")
        vals = np.zeros(grid.sizes + (grid.dim, grid.dim))
        for (i, j), arr in entries.items():
            vals[..., i, j] = arr
            vals[..., j, i] = arr
        return SymTensorField(grid, vals)

    def build_rhs(self, grid: PeriodicGrid, base: Path | None = None) -> ScalarField:
        rhs_cfg = self.problem.get("rhs")
        if rhs_cfg is None:
            raise ConfigError("problem.rhs is required", "problem.rhs")
        if "field_file" in rhs_cfg:
            path = Path(rhs_cfg["field_file"])
            if base is not None and not path.is_absolute():
                path = base / path
            if not path.exists():
                raise ConfigError(f"field file {path} not found", "problem.rhs")
            fld = read_scalar_field(path, stencil_order=grid.stencil_order)
            if fld.grid.sizes != grid.sizes or fld.grid.periods != grid.periods:
                raise ConfigError(
                    "field file grid does not match the declared geometry",
                    "problem.rhs",
                )
            return ScalarField(grid, fld.values)
        if "expr" in rhs_cfg:
            try:
                return ScalarField(grid, evaluate_expression(rhs_cfg["expr"], grid))
            except ExpressionError as err:
                raise ConfigError(str(err), "problem.rhs") from err
        raise ConfigError("rhs needs 'expr' or 'field_file'", "problem.rhs")

    def build_solve_options(self) -> SolveOptions:
        try:
            return SolveOptions(**self.solver)
        except (TypeError, ValueError) as err:
            raise ConfigError(str(err), "solver") from err


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} not found")
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as err:
        raise ConfigError(f"cannot parse config: {err}") from None
    if not isinstance(data, dict):
        raise ConfigError("config root must be a mapping")
    return RunConfig.from_dict(data)
