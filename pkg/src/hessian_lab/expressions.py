"""Closed-form field expressions for run configurations.

An expression is a nested mapping restricted to trigonometric polynomial
tables plus pointwise exp/abs/max combinators and a scalar factor:

    const: 1.0
    terms: [[0.25, "sin", [1, 0]], [0.1, "cos", [1, 1]]]
    exp_of: {...}      # e^(sub-expression)
    abs_of: {...}
    max_of: [{...}, {...}]
    plus: [{...}, ...]
    scale: 2.0

All present contributions are summed, then multiplied by `scale`. A trig
term is ``coef * fn(2 pi sum_d k_d x_d / L_d)`` with integer wave numbers.
"""

from __future__ import annotations

import numbers

import numpy as np

from .grid import PeriodicGrid

__all__ = ["ExpressionError", "evaluate_expression"]

_ALLOWED = {"const", "terms", "exp_of", "abs_of", "max_of", "plus", "scale"}


class ExpressionError(ValueError):
    pass


def _trig_terms(terms, grid: PeriodicGrid, mesh):
    out = np.zeros(grid.sizes)
    for item in terms:
        if len(item) != 3:
            raise ExpressionError(f"trig term must be [coef, fn, kvec]: {item!r}")
        coef, fn, kvec = item
        if fn not in ("sin", "cos"):
            raise ExpressionError(f"trig function must be sin or cos, got {fn!r}")
        if len(kvec) != grid.dim:
            raise ExpressionError(
                f"wave vector {kvec!r} has wrong length for dim {grid.dim}"
            )
        phase = sum(
            2.0 * np.pi * int(k) * m / L
            for k, m, L in zip(kvec, mesh, grid.periods)
        )
        out += float(coef) * (np.sin(phase) if fn == "sin" else np.cos(phase))
    return out


def evaluate_expression(expr, grid: PeriodicGrid, _mesh=None) -> np.ndarray:
    """Evaluate an expression table to point values on the grid."""
    mesh = grid.mesh() if _mesh is None else _mesh
    if isinstance(expr, numbers.Number):
        return np.full(grid.sizes, float(expr))
    if not isinstance(expr, dict):
        raise ExpressionError(f"expression must be a number or mapping: {expr!r}")
    unknown = set(expr) - _ALLOWED
    if unknown:
        raise ExpressionError(f"unknown expression keys {sorted(unknown)}")
    total = np.zeros(grid.sizes)
    if "const" in expr:
        total += float(expr["const"])
    if "terms" in expr:
        total += _trig_terms(expr["terms"], grid, mesh)
    if "exp_of" in expr:
        total += np.exp(evaluate_expression(expr["exp_of"], grid, mesh))
    if "abs_of" in expr:
        total += np.abs(evaluate_expression(expr["abs_of"], grid, mesh))
    if "max_of" in expr:
        parts = expr["max_of"]
        if not isinstance(parts, list) or len(parts) < 2:
            raise ExpressionError("max_of needs a list of at least two expressions")
        acc = evaluate_expression(parts[0], grid, mesh)
        for part in parts[1:]:
            acc = np.maximum(acc, evaluate_expression(part, grid, mesh))
        total += acc
    if "plus" in expr:
        for part in expr["plus"]:
            total += evaluate_expression(part, grid, mesh)
    if "scale" in expr:
        total *= float(expr["scale"])
    return total
