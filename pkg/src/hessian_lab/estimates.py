"""Empirical verification of the uniform, stability and constant bounds.

The underlying inequalities carry existential constants, so each experiment
verifies the falsifiable shape: boundedness of normalized ratios across a
family, the exact fractional exponent, strictness of the integral upper
bound for the multiplier, and decay of the multiplier gap between
independent approximation schedules. Every admitted row comes from a
converged solve; failures are recorded and excluded with a warning flag.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .grid import (
    MetricField,
    PeriodicGrid,
    ScalarField,
    SymTensorField,
    christoffels,
    lp_norm,
    metric_equivalence_constants,
)
from .abp import christoffel_operator_bound, contact_constant
from .operators import OperatorSpec, operator_fields
from .solver import ProblemSpec, SolutionPair, SolveOptions, SolverError, solve_pair
from .weak import MollifierSchedule, mollify_sequence

__all__ = [
    "EstimateViolation",
    "stability_exponent",
    "LinfReport",
    "linf_experiment",
    "StabilityReport",
    "stability_experiment",
    "BBoundsReport",
    "b_bounds_check",
    "BUniquenessReport",
    "b_uniqueness_probe",
    "EquicontinuityReport",
    "equicontinuity_probe",
]


class EstimateViolation(RuntimeError):
    """A bound that holds for every converged solve failed: solver or
    quadrature bug until proven otherwise."""


def stability_exponent(n: int, p: float, q: float) -> float:
    """The fractional power p(q-1) / (nq + p(q-1))."""
    return p * (q - 1.0) / (n * q + p * (q - 1.0))


# ---------------------------------------------------------------------------
# uniform-bound experiment
# ---------------------------------------------------------------------------


@dataclass
class LinfReport:
    rows: List[dict]
    q: float
    p: float
    slack_factor: float
    passed: bool
    baseline_ratio: float
    max_ratio: float
    warnings: List[str] = field(default_factory=list)

    @property
    def fitted_constant(self) -> float:
        """Measured constant in |phi|_inf <= C (1 + functional)."""
        return self.max_ratio


def linf_experiment(
    operator: OperatorSpec,
    chi: SymTensorField,
    g: MetricField,
    rhs_family,
    q: float,
    p: float,
    opts: Optional[SolveOptions] = None,
    slack_factor: float = 10.0,
) -> LinfReport:
    """Solve a right-side family and tabulate the sup norm against both
    uniform-bound functionals of the effective (multiplier-folded) data."""
    if not q > 1 or not p > 0:
        raise ValueError("need q > 1 and p > 0")
    opts = opts or SolveOptions()
    grid = g.grid
    n = grid.dim
    rows, warnings = [], []
    for label, rhs in rhs_family:
        row = {"label": label}
        try:
            pair, _ = solve_pair(ProblemSpec(operator, chi, g, rhs), opts)
        except SolverError as err:
            warnings.append(f"row {label!r} excluded: {err}")
            row.update({"converged": False})
            rows.append(row)
            continue
        eff = np.exp(pair.b) * rhs.values  # the equation the potential solves
        f_eff = np.log(eff)
        functional = grid.integrate(
            eff**n * (1.0 + n * np.abs(f_eff)) ** p, weight=g.sqrt_det
        )
        row.update(
            {
                "converged": True,
                "phi_inf": float(np.abs(pair.phi.values).max()),
                "b": pair.b,
                "rhs_lnq": lp_norm(ScalarField(grid, eff), n * q, g),
                "functional_p": functional,
                "residual": pair.residual_inf,
            }
        )
        row["ratio"] = row["phi_inf"] / (1.0 + functional)
        rows.append(row)
    admitted = [r for r in rows if r.get("converged")]
    if not admitted:
        raise EstimateViolation("no converged rows in the uniform-bound family")
    max_ratio = max(r["ratio"] for r in admitted)
    # rows solved by the zero potential carry no information about the bound
    nontrivial = [r for r in admitted if r["ratio"] > 1e-12]
    if not nontrivial:
        baseline = 0.0
        passed = True
    else:
        baseline = min(nontrivial, key=lambda r: r["functional_p"])["ratio"]
        passed = max_ratio <= slack_factor * baseline
    return LinfReport(
        rows=rows,
        q=q,
        p=p,
        slack_factor=slack_factor,
        passed=bool(passed),
        baseline_ratio=baseline,
        max_ratio=max_ratio,
        warnings=warnings,
    )


# ---------------------------------------------------------------------------
# stability experiment
# ---------------------------------------------------------------------------


@dataclass
class StabilityReport:
    rows: List[dict]
    exponent: float
    n: int
    p: float
    q: float
    ratio_spread: float
    passed: bool


def stability_experiment(
    operator: OperatorSpec,
    chi: SymTensorField,
    g: MetricField,
    log_rhs: ScalarField,
    perturbation: ScalarField,
    deltas,
    p: float,
    q: float,
    opts: Optional[SolveOptions] = None,
    spread_cap: float = 50.0,
) -> StabilityReport:
    """Sup-vs-fractional-norm ratios for perturbed right sides.

    Both solves fold their multiplier into the data, matching the two-sided
    normalization of the difference estimate; the degenerate branches
    (vanishing plus-part, large fractional norm) are reported as such.
    """
    opts = opts or SolveOptions()
    grid = g.grid
    n = grid.dim
    expo = stability_exponent(n, p, q)
    base_rhs = ScalarField(grid, np.exp(log_rhs.values))
    pair1, _ = solve_pair(ProblemSpec(operator, chi, g, base_rhs), opts)
    phi1 = pair1.phi
    phi1_inf = float(np.abs(phi1.values).max())
    rows = []
    for delta in deltas:
        rhs2 = ScalarField(
            grid, np.exp(log_rhs.values + delta * perturbation.values)
        )
        pair2, _ = solve_pair(ProblemSpec(operator, chi, g, rhs2), opts)
        diff = pair2.phi.values - phi1.values
        sup_diff = float(diff.max())
        # quasi-norm evaluated directly: the estimate admits any p > 0
        plus_pow = grid.integrate(np.maximum(diff, 0.0) ** p, weight=g.sqrt_det)
        plus_norm = float(plus_pow ** (1.0 / p)) if plus_pow > 0 else 0.0
        r = plus_norm**expo if plus_norm > 0 else 0.0
        row = {
            "delta": float(delta),
            "sup_diff": sup_diff,
            "plus_norm": plus_norm,
            "r": r,
            "b1": pair1.b,
            "b2": pair2.b,
            "residuals": (pair1.residual_inf, pair2.residual_inf),
        }
        if r == 0.0:
            row["branch"] = "r_zero"
            row["branch_ok"] = sup_diff <= 1e-12
        elif r >= 0.5:
            row["branch"] = "r_large"
            row["branch_ok"] = sup_diff <= 2.0 * phi1_inf * r + 1e-12
        else:
            row["branch"] = "main"
            row["ratio"] = sup_diff / r if sup_diff > 0 else 0.0
        rows.append(row)
    ratios = [r["ratio"] for r in rows if r.get("branch") == "main" and r["ratio"] > 0]
    if len(ratios) >= 2:
        spread = max(ratios) / min(ratios)
    else:
        spread = 1.0
    passed = spread <= spread_cap and all(
        row.get("branch_ok", True) for row in rows
    )
    return StabilityReport(
        rows=rows,
        exponent=expo,
        n=n,
        p=p,
        q=q,
        ratio_spread=float(spread),
        passed=bool(passed),
    )


# ---------------------------------------------------------------------------
# multiplier bounds
# ---------------------------------------------------------------------------


@dataclass
class BBoundsReport:
    upper_bound: float
    exp_b: float
    margin_factor: float
    laplacian_integral: float
    pointwise_min_margin: float
    lower_bound_constant: float
    metric_equivalence: tuple
    passed: bool


def b_bounds_check(
    operator: OperatorSpec,
    chi: SymTensorField,
    g: MetricField,
    rhs: ScalarField,
    pair: SolutionPair,
) -> BBoundsReport:
    """Strict integral upper bound on e^b plus trace-inequality diagnostics.

    The trace diagnostic is computed with exact Fourier multipliers end to
    end (including the connection coefficients), so the closed-chart
    identity (vanishing integral of the metric Laplacian) is resolved far
    below the reporting tolerance.
    """
    grid = g.grid
    n = grid.dim
    lam_chi = operator_fields(operator, chi, g)[2]
    s1_chi = lam_chi.sum(axis=1).reshape(grid.sizes)
    grad_one = float(operator.grad_at_one()[0])
    f_one = operator.value_at_one()
    vol = grid.integrate(np.ones(grid.sizes), weight=g.sqrt_det)
    upper = (
        grad_one * grid.integrate(s1_chi, weight=g.sqrt_det) + f_one * vol
    ) / grid.integrate(rhs.values, weight=g.sqrt_det)
    exp_b = float(np.exp(pair.b))
    if not exp_b < upper:
        raise EstimateViolation(
            f"integral upper bound violated: e^b = {exp_b:.6e} vs {upper:.6e}"
        )

    spectral = PeriodicGrid(grid.dim, grid.sizes, grid.periods, "spectral")
    g_s = MetricField(spectral, g.values)
    gamma_s = christoffels(g_s)
    hess = spectral.coordinate_hessian(pair.phi.values)
    grad = spectral.gradient(pair.phi.values)
    correction = np.einsum("...kij,...k->...ij", gamma_s.gamma, grad)
    laplacian = np.einsum("...ij,...ij->...", g.inv, hess - correction)
    lap_integral = grid.integrate(laplacian, weight=g.sqrt_det)

    required = (
        (np.exp(pair.b) * rhs.values - f_one) / grad_one - s1_chi + n
    )
    pointwise_margin = float((laplacian - required).min())

    eps = operator.sigma / (8.0 + christoffel_operator_bound(g, gamma_s))
    c0 = contact_constant(n)
    lower_const = c0 * eps**n / (
        exp_b**n * grid.integrate(rhs.values**n, weight=g.sqrt_det)
    )
    return BBoundsReport(
        upper_bound=float(upper),
        exp_b=exp_b,
        margin_factor=float(upper / exp_b),
        laplacian_integral=float(lap_integral),
        pointwise_min_margin=pointwise_margin,
        lower_bound_constant=float(lower_const),
        metric_equivalence=metric_equivalence_constants(g),
        passed=True,
    )


# ---------------------------------------------------------------------------
# multiplier uniqueness probe
# ---------------------------------------------------------------------------


@dataclass
class BUniquenessReport:
    rows: List[dict]
    final_gap: float
    decreasing: bool
    passed: bool


def b_uniqueness_probe(
    operator: OperatorSpec,
    chi: SymTensorField,
    g: MetricField,
    rough_rhs: ScalarField,
    schedule_a: MollifierSchedule,
    schedule_b: MollifierSchedule,
    nq: float = 4.0,
    opts: Optional[SolveOptions] = None,
    final_gap_tol: float = 1e-3,
) -> BUniquenessReport:
    """Two independent approximation schedules must agree on the multiplier."""
    opts = opts or SolveOptions()
    fields_a, _ = mollify_sequence(rough_rhs, schedule_a, g, nq)
    fields_b, _ = mollify_sequence(rough_rhs, schedule_b, g, nq)
    levels = min(len(fields_a), len(fields_b))
    rows = []
    for i in range(levels):
        pa, _ = solve_pair(ProblemSpec(operator, chi, g, fields_a[i]), opts)
        pb, _ = solve_pair(ProblemSpec(operator, chi, g, fields_b[i]), opts)
        rows.append(
            {
                "level": i + 1,
                "b_a": pa.b,
                "b_b": pb.b,
                "gap": abs(pa.b - pb.b),
                "residuals": (pa.residual_inf, pb.residual_inf),
            }
        )
    gaps = [r["gap"] for r in rows]
    # increases only count above the agreement noise floor
    floor = max(1e-6, 1e-3 * final_gap_tol)
    decreasing = all(
        gaps[i + 1] <= gaps[i] * 1.1 + 1e-10
        or max(gaps[i], gaps[i + 1]) <= floor
        for i in range(len(gaps) - 1)
    )
    passed = decreasing and gaps[-1] <= final_gap_tol
    return BUniquenessReport(
        rows=rows, final_gap=gaps[-1], decreasing=decreasing, passed=bool(passed)
    )


# ---------------------------------------------------------------------------
# equicontinuity probe
# ---------------------------------------------------------------------------


@dataclass
class EquicontinuityReport:
    rows: List[dict]
    h_values: list
    envelope: list
    K_bound: float
    passed: bool


def _modulus(phi_vals: np.ndarray, g: MetricField, h_values) -> list:
    """Max |phi(x) - phi(y)| over point pairs within metric distance h,
    chart segments standing in for geodesics."""
    grid = g.grid
    n = grid.dim
    # per-axis candidate reach; a flat-metric offset longer than h along an
    # axis cannot pair within distance h on any equivalent metric window
    lo, _ = metric_equivalence_constants(g)
    reach = [
        int(np.ceil(max(h_values) / (np.sqrt(lo) * grid.spacing[d]))) + 1
        for d in range(n)
    ]
    moduli = np.zeros(len(h_values))
    for off in np.ndindex(*[2 * r + 1 for r in reach]):
        o = tuple(int(oi - r) for oi, r in zip(off, reach))
        if all(c == 0 for c in o):
            continue
        disp = np.array([oi * hh for oi, hh in zip(o, grid.spacing)])
        rolled_g = np.roll(g.values, shift=[-c for c in o], axis=tuple(range(n)))
        g_mid = 0.5 * (g.values + rolled_g)
        dist = np.sqrt(np.einsum("i,...ij,j->...", disp, g_mid, disp))
        diff = np.abs(np.roll(phi_vals, shift=[-c for c in o], axis=tuple(range(n))) - phi_vals)
        for m, h in enumerate(h_values):
            sel = dist <= h
            if np.any(sel):
                moduli[m] = max(moduli[m], float(diff[sel].max()))
    return list(moduli)


def equicontinuity_probe(
    operator: OperatorSpec,
    chi: SymTensorField,
    g: MetricField,
    rhs_family,
    K_bound: float,
    nq: float = 4.0,
    h_factors=(4, 2, 1),
    opts: Optional[SolveOptions] = None,
) -> EquicontinuityReport:
    """Moduli of continuity across a family with a common norm-ratio bound."""
    opts = opts or SolveOptions()
    grid = g.grid
    h_values = [f * max(grid.spacing) for f in h_factors]
    rows = []
    for label, rhs in rhs_family:
        ratio = lp_norm(rhs, nq, g) / lp_norm(rhs, 1.0, g)
        if not ratio < K_bound:
            raise ValueError(
                f"family member {label!r} violates the norm-ratio class: "
                f"{ratio:.4e} >= {K_bound:.4e}"
            )
        pair, _ = solve_pair(ProblemSpec(operator, chi, g, rhs), opts)
        moduli = _modulus(pair.phi.values, g, h_values)
        rows.append(
            {
                "label": label,
                "norm_ratio": float(ratio),
                "moduli": moduli,
                "b": pair.b,
                "residual": pair.residual_inf,
            }
        )
    envelope = [
        max(row["moduli"][m] for row in rows) for m in range(len(h_values))
    ]
    nested_ok = all(
        all(
            row["moduli"][m] >= row["moduli"][m + 1] - 1e-14
            for m in range(len(h_values) - 1)
        )
        for row in rows
    )
    return EquicontinuityReport(
        rows=rows,
        h_values=h_values,
        envelope=envelope,
        K_bound=float(K_bound),
        passed=bool(nested_ok),
    )
