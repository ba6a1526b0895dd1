import numpy as np
import pytest

from hessian_lab.gradient import (
    PsiSpec,
    euclidean_gradient_constant_check,
    gradient_probe,
    growth_condition_check,
    level_uniformity,
    tau_double_prime,
    tau_prime,
    tau_value,
)
from hessian_lab.grid import (
    MetricField,
    PeriodicGrid,
    ScalarField,
    SymTensorField,
)
from hessian_lab.operators import OperatorSpec
from hessian_lab.solver import ProblemSpec, SolveOptions, solve_pair
from hessian_lab.weak import MollifierSchedule, mollify_sequence

MA2 = OperatorSpec("monge_ampere", 2, sigma=1.0)


def test_tau_identities(rng):
    K = 1.7
    phi = rng.uniform(-K, 0.0, size=200)
    tp = tau_prime(phi, K)
    tpp = tau_double_prime(phi, K)
    assert np.allclose(tp, 1.0 / (3 * (2 * K - phi)), rtol=1e-14)
    assert np.allclose(tpp - 2 * tp**2, tp**2, rtol=1e-12)
    # finite differences of tau confirm the closed forms
    h = 1e-6
    fd = (tau_value(phi + h, K) - tau_value(phi - h, K)) / (2 * h)
    assert np.abs(fd - tp).max() < 1e-8


def test_gradient_probe_zero_field():
    grid = PeriodicGrid(2, (32, 32), (2.0, 2.0))
    g = MetricField.identity(grid)
    probe = gradient_probe(ScalarField.constant(grid, 0.0), g, (1.0, 1.0), 0.8)
    assert probe.max_rho_grad == 0.0
    assert probe.argmax_index is None


def test_gradient_probe_slowly_varying_field():
    # a long-wavelength slope: the weighted gradient peaks near the center
    grid = PeriodicGrid(2, (64, 64), (2.0, 2.0))
    g = MetricField.identity(grid)
    x, _ = grid.mesh()
    a = 0.3
    phi = ScalarField(grid, (a / (2 * np.pi / 2.0)) * np.sin(2 * np.pi * x / 2.0))
    probe = gradient_probe(phi, g, (1.0, 1.0), 0.9)
    # |grad| <= a, rho <= 1: the weighted maximum cannot exceed a
    assert probe.max_rho_grad <= a + 1e-12
    assert probe.max_rho_grad > 0.5 * a


def test_gradient_probe_threshold_and_pinching():
    # a sharp bump: past the threshold the smallest shifted eigenvalue
    # must dip below the pinching bound at the argmax
    grid = PeriodicGrid(2, (384, 384), (1.0, 1.0))
    g = MetricField.identity(grid)
    chi = SymTensorField.from_metric_multiple(g, 0.001)
    x, y = grid.mesh()
    w = 0.005
    r2 = (x - 0.5) ** 2 + (y - 0.5) ** 2
    phi_vals = -0.01 * np.exp(-r2 / (2 * w**2))
    phi = ScalarField(grid, phi_vals - phi_vals.max())
    probe = gradient_probe(phi, g, (0.5, 0.5), 0.45, chi)
    assert probe.threshold_exceeded
    assert probe.min_shifted_eig_at_argmax <= probe.pinch_bound + 1e-6


def test_euclidean_constant_check_examples():
    rep = euclidean_gradient_constant_check(2, [0.0], [1.0], resolution=32)
    row = rep["rows"][0]
    assert not row["rejected"]
    assert row["grad_center"] == 0.0 and row["margin"] > 0
    assert rep["pass"]


def test_euclidean_constant_check_closed_form_K():
    # K = |a| r + r^2 / 2 for the tilted paraboloid
    rep = euclidean_gradient_constant_check(2, [1.0], [1.0], resolution=64)
    row = rep["rows"][0]
    assert row["K"] == pytest.approx(1.0 * 1.0 + 0.5, rel=1e-2)
    assert row["bound"] == pytest.approx(99 * np.sqrt(2) * row["K"], rel=1e-12)
    assert row["margin"] > 0


def test_euclidean_constant_sweep_never_violates():
    slopes = [0.0, 0.1, 1.0, 5.0, 20.0, 100.0]
    radii = [0.1, 0.5, 1.0, 2.0, 10.0]
    rep = euclidean_gradient_constant_check(2, slopes, radii, resolution=48)
    assert rep["pass"] and rep["violations"] == 0
    assert 0 < rep["worst_relative_margin"] <= 1.0
    rep3 = euclidean_gradient_constant_check(3, [0.0, 1.0, 10.0], [0.5, 2.0], 24)
    assert rep3["pass"]


def test_growth_condition_cases():
    dim = 2
    zero = lambda x, t, p: np.zeros(p.shape[0])
    zerovec = lambda x, t, p: np.zeros_like(p)

    const = PsiSpec(
        "independent", dim,
        value=lambda x, t, p: np.full(p.shape[0], 2.0),
        dx=lambda x, t, p: np.tile([0.3, 0.1], (p.shape[0], 1)),
        dt=zero,
        dp=zerovec,
    )
    assert growth_condition_check(const)["pass"]

    quad = PsiSpec(
        "momentum_square", dim,
        value=lambda x, t, p: (p**2).sum(-1),
        dx=zerovec,
        dt=zero,
        dp=lambda x, t, p: 2.0 * p,
    )
    rep = growth_condition_check(quad)
    assert not rep["pass"]
    assert rep["witness"] is not None

    three_half = PsiSpec(
        "momentum_3_2", dim,
        value=lambda x, t, p: np.linalg.norm(p, axis=-1) ** 1.5,
        dx=zerovec,
        dt=zero,
        dp=lambda x, t, p: 1.5
        * np.linalg.norm(p, axis=-1, keepdims=True) ** -0.5
        * p,
    )
    assert growth_condition_check(three_half)["pass"]


def test_level_probe_uniformity_for_lipschitz_rhs():
    grid = PeriodicGrid(2, (96, 8), (1.0, 1.0))
    g = MetricField.identity(grid)
    chi = SymTensorField.from_metric_multiple(g, 2.0)
    x, _ = grid.mesh()
    rhs = ScalarField(grid, 1.0 + 0.5 * np.abs(np.sin(2 * np.pi * x)))
    fields, _ = mollify_sequence(rhs, MollifierSchedule(levels=5), g, nq=4.0)
    probes = []
    for fld in fields:
        pair, _ = solve_pair(
            ProblemSpec(MA2, chi, g, fld), SolveOptions(continuity_steps=2)
        )
        probes.append(gradient_probe(pair.phi, g, (0.5, 0.5), 0.45))
    uni = level_uniformity(probes)
    assert uni["pass"]
    assert uni["spread"] <= 2.0
