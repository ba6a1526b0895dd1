import numpy as np
import pytest

from hessian_lab.grid import (
    GeometryError,
    MetricField,
    PeriodicGrid,
    ScalarField,
    SymTensorField,
    christoffels,
    covariant_hessian,
)
from hessian_lab.operators import OperatorSpec, eigenvalues_wrt_metric
from hessian_lab.solver import (
    ProblemSpec,
    SolutionPair,
    SolveOptions,
    SolverError,
    residual,
    solve_fixed_path_point,
    solve_pair,
)

MA2 = OperatorSpec("monge_ampere", 2, sigma=1.0)


def _constant_problem(size=16, rhs_value=2.0, dim=2):
    spec = OperatorSpec("monge_ampere", dim, sigma=1.0)
    grid = PeriodicGrid(dim, (size,) * dim, (1.0,) * dim)
    g = MetricField.identity(grid)
    chi = SymTensorField.from_metric_multiple(g, 2.0)
    rhs = ScalarField.constant(grid, rhs_value)
    return ProblemSpec(spec, chi, g, rhs), grid


def test_problem_validation():
    prob, grid = _constant_problem()
    bad_rhs = np.full(grid.sizes, 1.0)
    bad_rhs[4, 5] = 0.0
    with pytest.raises(GeometryError, match=r"\(4, 5\)"):
        ProblemSpec(prob.operator, prob.chi, prob.g, ScalarField(grid, bad_rhs))


def test_residual_trivial_and_b_shift():
    prob, grid = _constant_problem(rhs_value=2.0)
    phi0 = ScalarField(grid, np.zeros(grid.sizes))
    r0 = residual(prob, phi0, 0.0)
    assert np.abs(r0.values).max() < 1e-14  # F(2 g) = 2 = rhs
    delta = 0.37
    r1 = residual(prob, phi0, delta)
    expected = r0.values - (np.exp(delta) - 1.0) * prob.rhs.values
    assert np.abs(r1.values - expected).max() < 1e-12


def test_residual_zero_for_forward_manufactured(vm_case):
    # rhs built by discrete forward evaluation reproduces a zero residual
    data = vm_case.build(24)
    grid, g, chi = data["grid"], data["g"], data["chi"]
    gam = christoffels(g)
    phi = ScalarField(grid, data["phi_star"])
    hess = covariant_hessian(phi, g, gam)
    from hessian_lab.operators import operator_fields

    forward = operator_fields(MA2, SymTensorField(grid, chi.values + hess.values), g)[0]
    prob = ProblemSpec(MA2, chi, g, ScalarField(grid, forward), gamma=gam)
    r = residual(prob, phi, 0.0)
    assert np.abs(r.values).max() < 1e-13


def test_path_anchor_t0():
    prob, _ = _constant_problem(rhs_value=5.0)
    pair = solve_fixed_path_point(prob, 0.0)
    assert np.abs(pair.phi.values).max() <= 1e-10
    assert abs(pair.b) <= 1e-10


def test_constant_coefficient_solution():
    # rhs = kappa * f(1...1) with chi = g scaled: phi = 0, b = -ln kappa
    for kappa in (0.5, 3.0):
        prob, _ = _constant_problem(rhs_value=2.0 * kappa)
        pair, log = solve_pair(prob, SolveOptions(continuity_steps=2))
        assert np.abs(pair.phi.values).max() < 1e-9
        assert pair.b == pytest.approx(-np.log(kappa), abs=1e-9)


def test_rhs_scaling_shift_invariance(vm_solved, vm_case):
    # scaling the right side by e^s shifts the constant and nothing else
    data = vm_case.build(32)
    prob = ProblemSpec(MA2, data["chi"], data["g"], data["rhs"])
    opts = SolveOptions(continuity_steps=2)
    base, _ = solve_pair(prob, opts)
    s = 0.8
    scaled = ProblemSpec(
        MA2, data["chi"], data["g"],
        ScalarField(data["grid"], np.exp(s) * data["rhs"].values),
    )
    shifted, _ = solve_pair(scaled, opts)
    assert np.abs(shifted.phi.values - base.phi.values).max() < 1e-8
    assert shifted.b == pytest.approx(base.b - s, abs=1e-9)


def test_manufactured_solution_recovery(vm_case):
    data = vm_case.build(64)
    prob = ProblemSpec(MA2, data["chi"], data["g"], data["rhs"])
    pair, log = solve_pair(prob, SolveOptions(continuity_steps=2))
    target = data["phi_star"] - data["phi_star"].max()
    assert np.abs(pair.phi.values - target).max() < 1e-6
    assert abs(pair.b) < 1e-6
    assert all(step.newton_iters <= 8 for step in log)
    assert pair.residual_inf <= 1e-10


def test_solution_pair_invariants(vm_solved):
    pair = vm_solved["pair"]
    assert pair.phi.values.max() == 0.0
    # cone membership at every point
    from hessian_lab.operators import operator_fields

    prob = vm_solved["prob"]
    hess = covariant_hessian(pair.phi, prob.g, prob.gamma)
    total = SymTensorField(prob.grid, prob.chi.values + hess.values)
    lam = operator_fields(prob.operator, total, prob.g)[2]
    assert lam.min() > 0


def test_path_log_and_b_cap(vm_solved):
    log = vm_solved["log"]
    prob = vm_solved["prob"]
    cap = max(
        float((np.log(prob.background_value) - np.log(prob.rhs.values)).max()), 0.0
    )
    assert log[0].t == 0.0 and log[-1].t == 1.0
    for step in log:
        assert step.b <= cap + 1e-6
        assert step.residual <= 1e-10


def test_max_principle_at_argmax(vm_solved):
    # discrete Hessian at the potential's argmax is <= 0 up to stencil noise
    prob, pair = vm_solved["prob"], vm_solved["pair"]
    hess = covariant_hessian(pair.phi, prob.g, prob.gamma)
    idx = np.unravel_index(int(np.argmax(pair.phi.values)), prob.grid.sizes)
    lam = eigenvalues_wrt_metric(hess.values[idx], prob.g.values[idx]).lam
    assert lam.max() <= 1e-6


def test_grid_refinement_convergence(vm_case):
    errs = {}
    for m in (32, 64):
        data = vm_case.build(m)
        prob = ProblemSpec(MA2, data["chi"], data["g"], data["rhs"])
        pair, _ = solve_pair(prob, SolveOptions(continuity_steps=2))
        target = data["phi_star"] - data["phi_star"].max()
        errs[m] = np.abs(pair.phi.values - target).max()
    assert np.log2(errs[32] / errs[64]) > 3.5


def test_three_dimensional_constant_problem():
    prob, _ = _constant_problem(size=8, rhs_value=2.0 * 3.0, dim=3)
    # F(2 I) in 3d is 2, rhs = 6: b = -ln 3
    pair, _ = solve_pair(prob, SolveOptions(continuity_steps=2))
    assert pair.b == pytest.approx(-np.log(3.0), abs=1e-9)
    assert np.abs(pair.phi.values).max() < 1e-9


def test_variable_3d_solve():
    spec = OperatorSpec("monge_ampere", 3, sigma=1.0)
    grid = PeriodicGrid(3, (12, 12, 12), (1.0, 1.0, 1.0))
    x, y, z = grid.mesh()
    g = MetricField.from_entries(
        grid,
        {
            (0, 0): 1 + 0.2 * np.sin(2 * np.pi * x),
            (1, 1): 1 + 0.2 * np.cos(2 * np.pi * y),
            (2, 2): np.ones_like(z),
            (0, 1): 0.05 * np.sin(2 * np.pi * x) * np.sin(2 * np.pi * z),
        },
    )
    chi = SymTensorField.from_metric_multiple(g, 2.0)
    rhs = ScalarField(grid, 2.0 * np.exp(0.2 * np.sin(2 * np.pi * x) * np.cos(2 * np.pi * y)))
    prob = ProblemSpec(spec, chi, g, rhs)
    pair, log = solve_pair(prob, SolveOptions(continuity_steps=2))
    assert pair.residual_inf <= 1e-10
    assert pair.phi.values.max() == 0.0


def test_solver_stagnation_reports_history():
    # an inadmissible blended path (rhs wildly beyond the reachable range
    # on a coarse grid) must fail with the residual history attached
    spec = OperatorSpec("monge_ampere", 2, sigma=1.0)
    grid = PeriodicGrid(2, (8, 8), (1.0, 1.0))
    g = MetricField.identity(grid)
    chi = SymTensorField.from_metric_multiple(g, 2.0)
    x, _ = grid.mesh()
    rhs = ScalarField(grid, np.exp(40.0 * np.sin(2 * np.pi * x)))
    prob = ProblemSpec(spec, chi, g, rhs)
    with pytest.raises(SolverError):
        solve_pair(prob, SolveOptions(continuity_steps=1, max_newton_iters=6,
                                      max_path_substeps=4))


def test_solution_pair_requires_sup_zero():
    grid = PeriodicGrid(2, (8, 8), (1.0, 1.0))
    with pytest.raises(ValueError):
        SolutionPair(phi=ScalarField.constant(grid, 1.0), b=0.0)


def test_quotient_family_solve(vm_case):
    # the linearization is family-generic: solve the ratio operator too
    data = vm_case.build(32)
    spec = OperatorSpec("hessian_quotient", 2, k=1, sigma=1.0)
    from hessian_lab.operators import operator_fields

    background = operator_fields(spec, data["chi"], data["g"])[0]
    x, y = data["mesh"]
    rhs = ScalarField(
        data["grid"],
        background * np.exp(0.3 * np.sin(2 * np.pi * x) * np.sin(2 * np.pi * y)),
    )
    prob = ProblemSpec(spec, data["chi"], data["g"], rhs)
    pair, log = solve_pair(prob, SolveOptions(continuity_steps=2))
    assert pair.residual_inf <= 1e-10
    assert pair.phi.values.max() == 0.0
    # forward consistency of the converged pair
    r = residual(prob, pair.phi, pair.b)
    assert np.abs(r.values).max() <= 1e-10


def test_quotient_family_solve_3d():
    spec = OperatorSpec("hessian_quotient", 3, k=2, sigma=1.0)
    grid = PeriodicGrid(3, (10, 10, 10), (1.0, 1.0, 1.0))
    g = MetricField.identity(grid)
    chi = SymTensorField.from_metric_multiple(g, 2.0)
    x, _, _ = grid.mesh()
    base = spec.value(2.0 * np.ones(3))
    rhs = ScalarField(grid, base * np.exp(0.2 * np.sin(2 * np.pi * x)))
    pair, _ = solve_pair(ProblemSpec(spec, chi, g, rhs), SolveOptions(continuity_steps=2))
    assert pair.residual_inf <= 1e-10


def test_anisotropic_grid_preserves_axis_symmetry():
    # data constant along y: the solution must be constant along y too,
    # which is what the thin-axis fixtures rely on
    spec = OperatorSpec("monge_ampere", 2, sigma=1.0)
    grid = PeriodicGrid(2, (64, 8), (1.0, 1.0))
    g = MetricField.identity(grid)
    chi = SymTensorField.from_metric_multiple(g, 2.0)
    x, _ = grid.mesh()
    rhs = ScalarField(grid, 2.0 * np.exp(0.4 * np.sin(2 * np.pi * x)))
    pair, _ = solve_pair(ProblemSpec(spec, chi, g, rhs), SolveOptions(continuity_steps=2))
    spread_along_y = np.ptp(pair.phi.values, axis=1).max()
    assert spread_along_y < 1e-10
