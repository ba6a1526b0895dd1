"""Interior gradient diagnostics: the log-gradient test field and the
explicit Euclidean constant.

The probe evaluates ``G = log|grad| + tau(phi) + log rho`` on a chart ball,
with ``tau(phi) = -(1/3) log(2K - phi)`` and the quadratic cutoff ``rho``.
Where the gradient vanishes, G is minus infinity and excluded from the
argmax. The closed-ball check sweeps exact convex solutions of the
constant-right-side equation against the ``99 sqrt(n) K / r`` bound.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .grid import BallDomain, MetricField, ScalarField, SymTensorField
from .operators import OperatorSpec

__all__ = [
    "tau_value",
    "tau_prime",
    "tau_double_prime",
    "GradientProbe",
    "gradient_probe",
    "euclidean_gradient_constant_check",
    "PsiSpec",
    "growth_condition_check",
    "level_uniformity",
]


def tau_value(phi, K: float):
    return -np.log(2.0 * K - phi) / 3.0


def tau_prime(phi, K: float):
    return 1.0 / (3.0 * (2.0 * K - phi))


def tau_double_prime(phi, K: float):
    return 1.0 / (3.0 * (2.0 * K - phi) ** 2)


@dataclass
class GradientProbe:
    K: float
    r: float
    center: tuple
    max_rho_grad: float
    argmax_index: Optional[tuple]
    rho_grad_at_argmax: float
    threshold: Optional[float]
    threshold_exceeded: Optional[bool]
    min_shifted_eig_at_argmax: Optional[float]
    pinch_bound: Optional[float]  # -|grad|^2 / (18 K) at the argmax


def _chart_displacement(grid, center):
    mesh = grid.mesh()
    disp = []
    for m, c, L in zip(mesh, center, grid.periods):
        d = (m - c + 0.5 * L) % L - 0.5 * L  # nearest periodic image
        disp.append(d)
    return disp


def gradient_probe(
    phi: ScalarField,
    g: MetricField,
    center: tuple,
    r: float,
    chi: Optional[SymTensorField] = None,
) -> GradientProbe:
    """Locate the max of the log-gradient test field on a chart ball.

    Purely diagnostic: reports the weighted gradient there and globally,
    and when a background tensor is supplied, the most negative shifted
    eigenvalue at the argmax together with the pinching threshold.
    """
    grid = phi.grid
    if 2.0 * r >= min(grid.periods):
        raise ValueError("probe ball must fit inside half the chart periods")
    disp = _chart_displacement(grid, center)
    r2 = sum(d**2 for d in disp)
    inside = r2 < r * r
    if not np.any(inside):
        raise ValueError("probe ball contains no grid nodes")
    K = float(np.abs(phi.values[inside]).max())
    rho = np.where(inside, 1.0 - r2 / (r * r), 0.0)
    grad = grid.gradient(phi.values)
    grad_norm = np.sqrt(np.einsum("...ij,...i,...j->...", g.inv, grad, grad))
    rho_grad = rho * grad_norm
    max_rho_grad = float(rho_grad[inside].max())
    if K <= 0.0 or max_rho_grad <= 0.0:
        return GradientProbe(
            K=K,
            r=float(r),
            center=tuple(center),
            max_rho_grad=max_rho_grad,
            argmax_index=None,
            rho_grad_at_argmax=0.0,
            threshold=None,
            threshold_exceeded=None,
            min_shifted_eig_at_argmax=None,
            pinch_bound=None,
        )
    with np.errstate(divide="ignore"):
        G = np.where(
            inside & (grad_norm > 0) & (rho > 0),
            np.log(np.maximum(grad_norm, 1e-300))
            + tau_value(phi.values, K)
            + np.log(np.maximum(rho, 1e-300)),
            -np.inf,
        )
    argmax = np.unravel_index(int(np.argmax(G)), grid.sizes)
    threshold = None
    exceeded = None
    min_eig = None
    pinch = None
    if chi is not None:
        from . import kernels
        from .operators import eigenvalues_wrt_metric
        from .grid import christoffels, covariant_hessian

        lam_chi, _ = kernels.spectra_wrt_metric(
            chi.values[inside], g.values[inside]
        )
        sup_chi = float(lam_chi.max())
        threshold = float(np.sqrt(max(18.0 * sup_chi * K, 0.0)) + 36.0 * K / r)
        exceeded = bool(rho_grad[argmax] > threshold)
        hess = covariant_hessian(phi, g, christoffels(g))
        total = chi.values[argmax] + hess.values[argmax]
        lam = eigenvalues_wrt_metric(total, g.values[argmax]).lam
        min_eig = float(lam.min())
        pinch = float(-(grad_norm[argmax] ** 2) / (18.0 * K))
    return GradientProbe(
        K=K,
        r=float(r),
        center=tuple(center),
        max_rho_grad=max_rho_grad,
        argmax_index=tuple(int(i) for i in argmax),
        rho_grad_at_argmax=float(rho_grad[argmax]),
        threshold=threshold,
        threshold_exceeded=exceeded,
        min_shifted_eig_at_argmax=min_eig,
        pinch_bound=pinch,
    )


# ---------------------------------------------------------------------------
# explicit Euclidean constant on exact convex solutions
# ---------------------------------------------------------------------------


def euclidean_gradient_constant_check(
    dim: int,
    slopes,
    radii,
    resolution: int = 64,
    forward_residual_tol: float = 1e-12,
) -> dict:
    """Sweep tilted paraboloids against the central-gradient bound.

    phi = a . x + |x|^2 / 2 solves the unit product equation exactly on any
    ball; the check verifies |D phi(0)| <= 99 sqrt(n) K / r with
    K = sup |phi| over the closed ball, and reports the worst margin.
    """
    spec = OperatorSpec("monge_ampere", dim)
    bound_const = 99.0 * np.sqrt(dim)
    worst = np.inf
    rows = []
    violations = 0
    for r in radii:
        dom = BallDomain(dim, float(r), resolution)
        mesh = dom.mesh()
        r2 = dom.radius_sq()
        ball = r2 <= r * r + 1e-12
        for a in slopes:
            vals = a * mesh[0] + 0.5 * r2
            hess = dom.hessian(vals)
            interior = dom.interior_mask()
            lam = np.linalg.eigvalsh(hess[interior])
            residual = float(
                np.abs(spec.value(np.sort(lam, axis=-1)[:, ::-1]) - 1.0).max()
            )
            if residual > forward_residual_tol:
                rows.append(
                    {"slope": a, "radius": r, "rejected": True, "residual": residual}
                )
                continue
            K = float(np.abs(vals[ball]).max())
            bound = bound_const * K / r
            margin = bound - abs(a)  # |D phi(0)| = |a|, rho(0) = 1
            worst = min(worst, margin / max(bound, 1e-300))
            if margin < 0:
                violations += 1
            rows.append(
                {
                    "slope": float(a),
                    "radius": float(r),
                    "rejected": False,
                    "K": K,
                    "bound": float(bound),
                    "grad_center": float(abs(a)),
                    "margin": float(margin),
                }
            )
    return {
        "constant": bound_const,
        "rows": rows,
        "worst_relative_margin": float(worst),
        "violations": violations,
        "pass": violations == 0,
    }


# ---------------------------------------------------------------------------
# growth certificate for gradient-dependent right sides
# ---------------------------------------------------------------------------


@dataclass
class PsiSpec:
    """Closed-form right side psi(x, t, p) with its first derivatives.

    Callables are vectorized over stacked momentum rows; `dx` plays the role
    of the horizontal differential (flat connection unless the caller folds
    the correction in).
    """

    name: str
    dim: int
    value: Callable
    dx: Callable
    dt: Callable
    dp: Callable


def growth_condition_check(
    psi: PsiSpec,
    omega_max: float = 1e6,
    n_magnitudes: int = 40,
    n_directions: int = 8,
    x: Optional[np.ndarray] = None,
    t: float = 0.0,
) -> dict:
    """Empirical sublinearity of the combined growth term against |p|^3.

    Passes iff the ratio is non-increasing and drops over the top two
    decades of sampled momentum magnitudes.
    """
    x = np.zeros(psi.dim) if x is None else np.asarray(x, float)
    rng = np.random.default_rng(7)
    dirs = rng.normal(size=(n_directions, psi.dim))
    dirs /= np.linalg.norm(dirs, axis=-1, keepdims=True)
    mags = np.logspace(0.0, np.log10(omega_max), n_magnitudes)
    lhs = np.zeros(n_magnitudes)
    for d in dirs:
        p = mags[:, None] * d[None, :]
        term = (
            np.linalg.norm(np.atleast_2d(psi.dx(x, t, p)), axis=-1)
            + np.abs(psi.dt(x, t, p)) * mags
            + np.linalg.norm(np.atleast_2d(psi.dp(x, t, p)), axis=-1) * mags**2
        )
        lhs = np.maximum(lhs, term)
    ratio = lhs / mags**3
    window = mags >= omega_max / 100.0
    win_ratio = ratio[window]
    nonincreasing = bool(np.all(np.diff(win_ratio) <= win_ratio[:-1] * 1e-9 + 1e-300))
    dropping = bool(win_ratio[-1] <= 0.75 * win_ratio[0])
    passed = nonincreasing and dropping
    witness = None
    if not passed:
        bad = int(np.argmax(ratio[window.argmax() :]) + window.argmax())
        witness = {"magnitude": float(mags[bad]), "ratio": float(ratio[bad])}
    return {
        "name": psi.name,
        "pass": passed,
        "magnitudes": mags,
        "ratio": ratio,
        "witness": witness,
    }


def level_uniformity(probes) -> dict:
    """Spread of max rho|grad| across approximation levels."""
    vals = np.array([p.max_rho_grad for p in probes], float)
    positive = vals[vals > 0]
    spread = float(positive.max() / positive.min()) if positive.size >= 2 else 1.0
    return {
        "values": list(map(float, vals)),
        "spread": spread,
        "pass": spread <= 2.0,
    }
