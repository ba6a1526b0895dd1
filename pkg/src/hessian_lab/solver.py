"""Damped Newton solver for the pair equation along a continuity path.

The unknown is a mean-zero potential plus one scalar: the linearized
operator annihilates constants, and the extra column from the constant
multiplier closes the bordered system. The sup-normalized potential is
recovered by a final shift, which leaves the equation invariant.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .grid import (
    ChristoffelField,
    GeometryError,
    MetricField,
    PeriodicGrid,
    ScalarField,
    SymTensorField,
    christoffels,
    covariant_hessian,
    deriv1_matrix,
    deriv2_matrix,
)
from .operators import ConeViolationError, OperatorSpec, operator_fields

__all__ = [
    "SolverError",
    "ProblemSpec",
    "SolveOptions",
    "SolutionPair",
    "PathStep",
    "residual",
    "solve_fixed_path_point",
    "solve_pair",
]


class SolverError(RuntimeError):
    def __init__(self, message: str, residual_history=None, path_log=None):
        super().__init__(message)
        self.residual_history = residual_history or []
        self.path_log = path_log or []


@dataclass
class ProblemSpec:
    """Operator, background tensor, metric and strictly positive right side."""

    operator: OperatorSpec
    chi: SymTensorField
    g: MetricField
    rhs: ScalarField
    gamma: ChristoffelField = None

    def __post_init__(self):
        grid = self.grid
        if self.g.grid != grid or self.rhs.grid != grid:
            raise GeometryError("problem fields live on different grids")
        if not np.all(self.rhs.values > 0):
            bad = tuple(
                int(i)
                for i in np.unravel_index(int(np.argmin(self.rhs.values)), grid.sizes)
            )
            raise GeometryError(f"right side not strictly positive at {bad}")
        if self.gamma is None:
            self.gamma = christoffels(self.g)
        # standing assumption: chi - sigma g stays in the cone everywhere
        sigma = self.operator.sigma
        shifted = SymTensorField(grid, self.chi.values - sigma * self.g.values)
        operator_fields(self.operator, shifted, self.g)
        self._background = operator_fields(self.operator, self.chi, self.g)[0]

    @property
    def grid(self) -> PeriodicGrid:
        return self.chi.grid

    @property
    def background_value(self) -> np.ndarray:
        """F(chi) on the grid; the anchor right side of the continuity path."""
        return self._background


@dataclass(frozen=True)
class SolveOptions:
    continuity_steps: int = 4
    newton_tol: float = 1e-10
    max_newton_iters: int = 40
    damping_floor: float = 2.0**-20
    linear_tol: float = 1e-12
    path_bound_slack: float = 1e-6
    max_path_substeps: int = 2**10

    def __post_init__(self):
        if self.continuity_steps < 1:
            raise ValueError("continuity_steps must be >= 1")
        for name in ("newton_tol", "damping_floor", "linear_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


@dataclass
class SolutionPair:
    phi: ScalarField
    b: float
    residual_inf: float = np.nan
    newton_iters: int = 0

    def __post_init__(self):
        if abs(self.phi.values.max()) > 1e-14:
            raise ValueError("solution potential must have sup = 0")


@dataclass(frozen=True)
class PathStep:
    t: float
    b: float
    newton_iters: int
    residual: float


def residual(prob: ProblemSpec, phi: ScalarField, b: float) -> ScalarField:
    """Pointwise F(chi + hess(phi)) - e^b * rhs."""
    vals, _, _ = _residual_parts(prob, phi.values, b, prob.rhs.values)
    return ScalarField(prob.grid, vals)


def _residual_parts(prob: ProblemSpec, phi_vals: np.ndarray, b: float, rhs_vals):
    phi = ScalarField(prob.grid, phi_vals)
    hess = covariant_hessian(phi, prob.g, prob.gamma)
    total = SymTensorField(prob.grid, prob.chi.values + hess.values)
    values, deriv, lam = operator_fields(prob.operator, total, prob.g)
    return values - np.exp(b) * rhs_vals, deriv, lam


def _scale_rows(mat: sp.csr_matrix, w: np.ndarray) -> sp.csr_matrix:
    out = mat.copy()
    out.data *= np.repeat(w, np.diff(mat.indptr))
    return out


def _assemble_jacobian(
    prob: ProblemSpec, deriv: np.ndarray, b: float, rhs_vals: np.ndarray
) -> sp.csc_matrix:
    grid = prob.grid
    n = grid.dim
    npts = grid.npoints
    blocks = None
    for i in range(n):
        w = deriv[..., i, i].ravel()
        term = _scale_rows(deriv2_matrix(grid, i, i), w)
        blocks = term if blocks is None else blocks + term
        for j in range(i + 1, n):
            w = 2.0 * deriv[..., i, j].ravel()
            blocks = blocks + _scale_rows(deriv2_matrix(grid, i, j), w)
    drift = -np.einsum("...ij,...kij->...k", deriv, prob.gamma.gamma)
    for k in range(n):
        blocks = blocks + _scale_rows(deriv1_matrix(grid, k), drift[..., k].ravel())
    col = (-np.exp(b) * rhs_vals).reshape(npts, 1)
    # gauge row: pin one point instead of the mean; the Newton step only
    # differs by a constant, which the caller re-centers away, and a sparse
    # row keeps the LU ordering cheap.
    row = sp.csr_matrix(
        (np.array([1.0]), (np.array([0]), np.array([0]))), shape=(1, npts)
    )
    return sp.bmat([[blocks, sp.csr_matrix(col)], [row, None]], format="csc")


def _newton(
    prob: ProblemSpec,
    rhs_vals: np.ndarray,
    phi0: np.ndarray,
    b0: float,
    opts: SolveOptions,
):
    grid = prob.grid
    phi = phi0 - phi0.mean()
    b = float(b0)
    res, deriv, _ = _residual_parts(prob, phi, b, rhs_vals)
    history = [float(np.abs(res).max())]
    for it in range(opts.max_newton_iters):
        rnorm = history[-1]
        if rnorm <= opts.newton_tol:
            return phi, b, it, history
        jac = _assemble_jacobian(prob, deriv, b, rhs_vals)
        rhs_vec = np.concatenate([-res.ravel(), [0.0]])
        sol = spla.spsolve(jac, rhs_vec)
        # normwise backward error of the inner solve
        jac_norm = float(np.abs(jac).sum(axis=1).max())
        lin_res = np.abs(jac @ sol - rhs_vec).max() / (
            jac_norm * np.abs(sol).max() + np.abs(rhs_vec).max() + 1e-300
        )
        if lin_res > opts.linear_tol:
            raise SolverError(
                f"inner linear solve stalled (backward error {lin_res:.3e})",
                residual_history=history,
            )
        dphi = sol[:-1].reshape(grid.sizes)
        db = float(sol[-1])
        step = 1.0
        while True:
            trial_phi = phi + step * dphi
            trial_phi = trial_phi - trial_phi.mean()
            trial_b = b + step * db
            try:
                trial_res, trial_deriv, _ = _residual_parts(
                    prob, trial_phi, trial_b, rhs_vals
                )
                ok = float(np.abs(trial_res).max()) < rnorm
            except ConeViolationError:
                ok = False
            if ok:
                phi, b, res, deriv = trial_phi, trial_b, trial_res, trial_deriv
                history.append(float(np.abs(res).max()))
                break
            step *= 0.5
            if step < opts.damping_floor:
                raise SolverError(
                    "Newton stagnated at the damping floor",
                    residual_history=history,
                )
    if history[-1] <= opts.newton_tol:
        return phi, b, opts.max_newton_iters, history
    raise SolverError(
        f"Newton did not converge in {opts.max_newton_iters} iterations "
        f"(residual {history[-1]:.3e})",
        residual_history=history,
    )


def _blended_rhs(prob: ProblemSpec, t: float) -> np.ndarray:
    log_target = np.log(prob.rhs.values)
    log_anchor = np.log(prob.background_value)
    return np.exp(t * log_target + (1.0 - t) * log_anchor)


def solve_fixed_path_point(
    prob: ProblemSpec,
    t: float,
    warm_start: Optional[SolutionPair] = None,
    opts: Optional[SolveOptions] = None,
) -> SolutionPair:
    """Newton solve at one path parameter, warm-started when available."""
    opts = opts or SolveOptions()
    grid = prob.grid
    if warm_start is None:
        phi0 = np.zeros(grid.sizes)
        b0 = 0.0
    else:
        phi0 = warm_start.phi.values
        b0 = warm_start.b
    rhs_vals = _blended_rhs(prob, t)
    phi, b, iters, history = _newton(prob, rhs_vals, phi0, b0, opts)
    phi_sup0 = phi - phi.max()
    return SolutionPair(
        phi=ScalarField(grid, phi_sup0),
        b=b,
        residual_inf=history[-1],
        newton_iters=iters,
    )


def solve_pair(
    prob: ProblemSpec, opts: Optional[SolveOptions] = None
) -> tuple:
    """March the continuity path 0 -> 1 and return (pair, path_log).

    Steps that fail are bisected; the total number of extra substeps is
    capped. Each accepted step checks the maximum-principle upper bound on
    the path constant.
    """
    opts = opts or SolveOptions()
    grid = prob.grid
    log_gap = np.log(prob.background_value) - np.log(prob.rhs.values)
    b_cap = max(float(log_gap.max()), 0.0) + opts.path_bound_slack

    pair = SolutionPair(
        phi=ScalarField(grid, np.zeros(grid.sizes)), b=0.0, residual_inf=0.0
    )
    path_log: List[PathStep] = [PathStep(0.0, 0.0, 0, 0.0)]

    targets = list(np.linspace(0.0, 1.0, opts.continuity_steps + 1)[1:])
    t_done = 0.0
    extra = 0
    while targets:
        t_next = targets[0]
        try:
            pair = solve_fixed_path_point(prob, t_next, warm_start=pair, opts=opts)
        except SolverError as err:
            extra += 1
            if extra > opts.max_path_substeps or t_next - t_done < 2.0**-20:
                raise SolverError(
                    f"path stalled near t = {t_next:.6f} after {extra} substeps",
                    residual_history=err.residual_history,
                    path_log=path_log,
                ) from err
            targets.insert(0, 0.5 * (t_done + t_next))
            continue
        targets.pop(0)
        t_done = t_next
        path_log.append(
            PathStep(t_next, pair.b, pair.newton_iters, pair.residual_inf)
        )
        if pair.b > b_cap:
            raise SolverError(
                f"path constant b = {pair.b:.6e} exceeds the maximum-principle "
                f"cap {b_cap:.6e} at t = {t_next:.4f}",
                path_log=path_log,
            )
    return pair, path_log
