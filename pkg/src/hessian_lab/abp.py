"""Lower contact sets, contact-mass inequality and the recentred test field.

The contact set of a sampled function on the unit ball is found by the
exhaustive supporting-plane test (quadratic in the node count, fine at desk
scale, and unambiguous). Its mass is the masked quadrature of det D^2 v.
The dimensional constant in the mass inequality is pinned to
``unit_ball_volume(n) / 2^n``, the value delivered by the gradient-map
argument and met with equality by the quadratic well fixture.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .grid import (
    BallDomain,
    ChristoffelField,
    GeometryError,
    MetricField,
    ScalarField,
    resample_on_points,
)

__all__ = [
    "ContactSet",
    "unit_ball_volume",
    "contact_constant",
    "lower_contact_set",
    "contact_mass_check",
    "christoffel_operator_bound",
    "recentered_test_function",
    "chart_window",
]


def unit_ball_volume(n: int) -> float:
    return math.pi ** (n / 2.0) / math.gamma(n / 2.0 + 1.0)


def contact_constant(n: int) -> float:
    return unit_ball_volume(n) / 2.0**n


@dataclass
class ContactSet:
    domain: BallDomain
    mask: np.ndarray
    ma_mass: float
    epsilon: float
    gradient_bound_used: float
    det_hessian: np.ndarray  # det D^2 v on the full cube grid

    @property
    def mask_count(self) -> int:
        return int(self.mask.sum())


def _boundary_min(values: np.ndarray, domain: BallDomain) -> float:
    return float(values[domain.boundary_mask()].min())


def lower_contact_set(
    values: np.ndarray,
    domain: BallDomain,
    epsilon: float,
    plane_tol: float | None = None,
) -> ContactSet:
    """Contact points: small gradient plus a global lower supporting plane.

    Candidates are interior nodes with |Dv| < epsilon/2; each is kept iff its
    tangent plane stays below v at every node of the closed ball.
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    values = np.asarray(values, dtype=np.float64)
    if values.shape != domain.shape:
        raise ValueError(f"values shape {values.shape} != domain shape {domain.shape}")
    center_val = values[domain.center_index()]
    bmin = _boundary_min(values, domain)
    scale = 1.0 + float(np.abs(values).max())
    if center_val + epsilon > bmin + 1e-10 * scale:
        raise ValueError(
            "contact precondition failed: v(center) + epsilon = "
            f"{center_val + epsilon:.6e} exceeds boundary min {bmin:.6e}"
        )
    if plane_tol is None:
        plane_tol = 1e-10 * scale

    grad = domain.gradient(values)
    grad_norm = np.sqrt((grad**2).sum(axis=-1))
    candidates = domain.interior_mask() & (grad_norm < 0.5 * epsilon)

    pts = domain.points()
    in_ball = (domain.radius_sq() <= domain.radius**2 + 1e-12).ravel()
    ball_pts = pts[in_ball]
    ball_vals = values.ravel()[in_ball]
    cand_flat = candidates.ravel()
    ok = kernels.supporting_plane_mask(
        pts[cand_flat],
        values.ravel()[cand_flat],
        grad.reshape(-1, domain.dim)[cand_flat],
        ball_pts,
        ball_vals,
        plane_tol,
    )
    mask = np.zeros(domain.shape, dtype=bool)
    mask.ravel()[np.flatnonzero(cand_flat)[ok]] = True

    det = np.linalg.det(domain.hessian(values))
    mass = domain.integrate_masked(det, mask)
    return ContactSet(
        domain=domain,
        mask=mask,
        ma_mass=mass,
        epsilon=float(epsilon),
        gradient_bound_used=0.5 * float(epsilon),
        det_hessian=det,
    )


def contact_mass_check(
    values: np.ndarray,
    domain: BallDomain,
    epsilon: float,
    rel_slack: float = 0.05,
) -> dict:
    """Mass inequality c0 eps^n <= contact mass, with quadrature slack."""
    if abs(domain.radius - 1.0) > 1e-12:
        raise ValueError("the contact-mass inequality is stated on the unit ball")
    cs = lower_contact_set(values, domain, epsilon)
    c0 = contact_constant(domain.dim)
    target = c0 * epsilon**domain.dim
    passed = cs.ma_mass >= target * (1.0 - rel_slack)
    return {
        "epsilon": float(epsilon),
        "c0": c0,
        "c0_eps_n": target,
        "ma_mass": cs.ma_mass,
        "mask_count": cs.mask_count,
        "pass": bool(passed),
        "contact": cs,
    }


# ---------------------------------------------------------------------------
# recentred test field around the argmin of a torus potential
# ---------------------------------------------------------------------------


def christoffel_operator_bound(
    g: MetricField, gamma: ChristoffelField, directions: int = 64
) -> float:
    """Grid max of |Gamma(w)|_g over unit-g directions w, by direction sweep.

    Measures the constant bounding the first-order connection term against
    |grad| g in the contact-set comparison.
    """
    grid = g.grid
    n = grid.dim
    sg, Ug = np.linalg.eigh(g.values)
    g_inv_sqrt = Ug @ (np.swapaxes(Ug, -1, -2) / np.sqrt(sg)[..., None])
    if n == 2:
        theta = np.linspace(0.0, np.pi, directions, endpoint=False)
        dirs = np.stack([np.cos(theta), np.sin(theta)], axis=-1)
    else:
        rng = np.random.default_rng(1234)
        dirs = rng.normal(size=(directions, n))
        dirs /= np.linalg.norm(dirs, axis=-1, keepdims=True)
    bound = 0.0
    for u in dirs:
        w = np.einsum("...ij,j->...i", g_inv_sqrt, u)  # |w|_g = 1
        m = np.einsum("...kij,...k->...ij", gamma.gamma, w)
        m_flat = (g_inv_sqrt @ m @ g_inv_sqrt).reshape(-1, n, n)
        m_flat = 0.5 * (m_flat + np.swapaxes(m_flat, -1, -2))
        eigs = np.linalg.eigvalsh(m_flat)
        bound = max(bound, float(np.abs(eigs).max()))
    return bound


def chart_window(field: ScalarField, center: tuple, ball: BallDomain) -> np.ndarray:
    """Spectrally resample a torus field onto a ball grid recentred at a
    chart point; the ball must fit inside half the smallest period."""
    grid = field.grid
    if 2.0 * ball.radius >= min(grid.periods):
        raise GeometryError(
            f"ball of radius {ball.radius} does not fit inside the chart "
            f"(periods {grid.periods})"
        )
    targets = [
        c + np.asarray(ax) - bc
        for c, ax, bc in zip(center, ball.axes(), ball.center)
    ]
    return resample_on_points(field, targets)


def recentered_test_function(
    phi: ScalarField,
    g: MetricField,
    gamma: ChristoffelField,
    argmin_index: tuple | None = None,
    ball: BallDomain | None = None,
    epsilon: float | None = None,
    sigma: float = 1.0,
) -> tuple:
    """Recentred well u = phi(x0 + y) - phi(x0) + eps |y|^2 on a ball grid.

    x0 is the grid argmin of phi; eps defaults to ``sigma / (8 + C(g))``
    with C(g) the measured connection-term bound. Returns (values, info).
    """
    grid = phi.grid
    if argmin_index is None:
        argmin_index = tuple(
            int(i) for i in np.unravel_index(int(np.argmin(phi.values)), grid.sizes)
        )
    else:
        flat = np.ravel_multi_index(argmin_index, grid.sizes)
        if phi.values.ravel()[flat] > phi.values.min() + 1e-14:
            raise ValueError("argmin_index is not a grid argmin of the field")
    if ball is None:
        ball = BallDomain(grid.dim, 1.0, 128 if grid.dim == 2 else 64)
    if epsilon is None:
        c_gamma = christoffel_operator_bound(g, gamma)
        epsilon = sigma / (8.0 + c_gamma)
    center = tuple(
        idx * h for idx, h in zip(argmin_index, grid.spacing)
    )
    sampled = chart_window(phi, center, ball)
    mesh = ball.mesh()
    r2 = sum((m - bc) ** 2 for m, bc in zip(mesh, ball.center))
    u = sampled - phi.values.min() + epsilon * r2
    bmin = _boundary_min(u, ball)
    u0 = u[ball.center_index()]
    scale = 1.0 + float(np.abs(u).max())
    if u0 + epsilon > bmin + 1e-8 * scale:
        raise ValueError(
            f"recentred well fails its boundary gap: u(0) + eps = "
            f"{u0 + epsilon:.6e} > boundary min {bmin:.6e}"
        )
    info = {
        "epsilon": float(epsilon),
        "center": center,
        "argmin_index": tuple(int(i) for i in argmin_index),
        "u_center": float(u0),
        "boundary_min": float(bmin),
    }
    return u, info
