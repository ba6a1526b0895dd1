"""Flat-chart periodic grids, metric fields and discrete differential geometry.

One global periodic chart covers the torus: points sit at ``x_d = j * h_d``
with ``h_d = period_d / size_d`` and all stencils wrap modulo the axis size.
Derivatives come in three flavours selected per grid: 2nd order, 4th order
(default) central differences, or exact Fourier multipliers ("spectral").
Quadrature is the periodic midpoint rule weighted by ``sqrt(det g)``.

A Cartesian cube grid masked to a Euclidean ball (:class:`BallDomain`)
carries the contact-set and gradient-probe machinery; it is deliberately
non-periodic and uses one-sided differences near the cube edge.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

__all__ = [
    "GeometryError",
    "PeriodicGrid",
    "ScalarField",
    "SymTensorField",
    "MetricField",
    "ChristoffelField",
    "BallDomain",
    "christoffels",
    "covariant_hessian",
    "lp_norm",
    "cutoff_profile",
    "metric_equivalence_constants",
]

SPECTRAL = "spectral"
_VALID_ORDERS = (2, 4, SPECTRAL)


class GeometryError(ValueError):
    """Raised when a metric or domain violates a geometric precondition."""


# ---------------------------------------------------------------------------
# periodic grid and stencils
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PeriodicGrid:
    """Uniform periodic lattice on an n-torus chart, n in {2, 3}."""

    dim: int
    sizes: tuple
    periods: tuple
    stencil_order: object = 4

    def __post_init__(self):
        object.__setattr__(self, "sizes", tuple(int(s) for s in self.sizes))
        object.__setattr__(self, "periods", tuple(float(p) for p in self.periods))
        if self.dim not in (2, 3):
            raise GeometryError(f"dim must be 2 or 3, got {self.dim}")
        if len(self.sizes) != self.dim or len(self.periods) != self.dim:
            raise GeometryError("sizes/periods length must equal dim")
        for s in self.sizes:
            if s < 8 or s % 2 != 0:
                raise GeometryError(f"axis size {s} must be even and >= 8")
        for p in self.periods:
            if not p > 0:
                raise GeometryError(f"period {p} must be positive")
        if self.stencil_order not in _VALID_ORDERS:
            raise GeometryError(f"stencil_order must be one of {_VALID_ORDERS}")

    @property
    def spacing(self) -> tuple:
        return tuple(p / s for p, s in zip(self.periods, self.sizes))

    @property
    def npoints(self) -> int:
        return int(np.prod(self.sizes))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    def axes(self):
        return [
            np.arange(s) * h for s, h in zip(self.sizes, self.spacing)
        ]

    def mesh(self):
        return np.meshgrid(*self.axes(), indexing="ij")

    def wavenumbers(self, axis: int) -> np.ndarray:
        m = self.sizes[axis]
        return 2.0 * np.pi * np.fft.fftfreq(m, d=self.spacing[axis])

    # -- stencil applications -------------------------------------------

    def deriv1(self, values: np.ndarray, axis: int, order=None) -> np.ndarray:
        order = self.stencil_order if order is None else order
        h = self.spacing[axis]
        if order == 2:
            return (np.roll(values, -1, axis) - np.roll(values, 1, axis)) / (2 * h)
        if order == 4:
            return (
                -np.roll(values, -2, axis)
                + 8 * np.roll(values, -1, axis)
                - 8 * np.roll(values, 1, axis)
                + np.roll(values, 2, axis)
            ) / (12 * h)
        k = self.wavenumbers(axis)
        m = self.sizes[axis]
        mult = 1j * k
        mult[m // 2] = 0.0  # odd derivative of the unpaired Nyquist mode
        shape = [1] * values.ndim
        shape[axis] = m
        return np.fft.ifft(
            np.fft.fft(values, axis=axis) * mult.reshape(shape), axis=axis
        ).real

    def deriv2(self, values: np.ndarray, axis: int, order=None) -> np.ndarray:
        order = self.stencil_order if order is None else order
        h = self.spacing[axis]
        if order == 2:
            return (
                np.roll(values, -1, axis) - 2 * values + np.roll(values, 1, axis)
            ) / (h * h)
        if order == 4:
            return (
                -np.roll(values, -2, axis)
                + 16 * np.roll(values, -1, axis)
                - 30 * values
                + 16 * np.roll(values, 1, axis)
                - np.roll(values, 2, axis)
            ) / (12 * h * h)
        k = self.wavenumbers(axis)
        shape = [1] * values.ndim
        shape[axis] = self.sizes[axis]
        return np.fft.ifft(
            np.fft.fft(values, axis=axis) * (-(k**2)).reshape(shape), axis=axis
        ).real

    def gradient(self, values: np.ndarray, order=None) -> np.ndarray:
        """Stacked partials, shape (*sizes, dim)."""
        return np.stack(
            [self.deriv1(values, a, order) for a in range(self.dim)], axis=-1
        )

    def coordinate_hessian(self, values: np.ndarray, order=None) -> np.ndarray:
        """All second partials, shape (*sizes, dim, dim), exactly symmetric."""
        n = self.dim
        out = np.empty(values.shape + (n, n))
        for i in range(n):
            out[..., i, i] = self.deriv2(values, i, order)
            for j in range(i + 1, n):
                mixed = self.deriv1(self.deriv1(values, i, order), j, order)
                out[..., i, j] = mixed
                out[..., j, i] = mixed
        return out

    def integrate(self, values: np.ndarray, weight: np.ndarray | None = None) -> float:
        """Periodic midpoint rule; ``weight`` is typically sqrt(det g)."""
        if weight is None:
            return float(values.sum() * self.cell_volume)
        return float((values * weight).sum() * self.cell_volume)


# ---------------------------------------------------------------------------
# sparse difference matrices (flattened C-order), cached per grid
# ---------------------------------------------------------------------------


def _circulant_1d(m: int, h: float, order: int, second: bool) -> sp.csr_matrix:
    if order == 2:
        offs, coef = ((-1, 0, 1), (1.0, -2.0, 1.0)) if second else ((-1, 1), (-1.0, 1.0))
        scale = 1.0 / (h * h) if second else 1.0 / (2 * h)
    else:
        if second:
            offs = (-2, -1, 0, 1, 2)
            coef = (-1.0, 16.0, -30.0, 16.0, -1.0)
            scale = 1.0 / (12 * h * h)
        else:
            offs = (-2, -1, 1, 2)
            coef = (1.0, -8.0, 8.0, -1.0)
            scale = 1.0 / (12 * h)
    rows, cols, vals = [], [], []
    idx = np.arange(m)
    for off, c in zip(offs, coef):
        rows.append(idx)
        cols.append((idx + off) % m)
        vals.append(np.full(m, c * scale))
    return sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(m, m),
    )


@functools.lru_cache(maxsize=64)
def _diff_matrix(grid: PeriodicGrid, axis: int, second: bool) -> sp.csr_matrix:
    order = grid.stencil_order
    if order == SPECTRAL:
        raise GeometryError("sparse difference matrices need a finite stencil order")
    mats = []
    for a, (m, h) in enumerate(zip(grid.sizes, grid.spacing)):
        if a == axis:
            mats.append(_circulant_1d(m, h, order, second))
        else:
            mats.append(sp.identity(m, format="csr"))
    out = mats[0]
    for m in mats[1:]:
        out = sp.kron(out, m, format="csr")
    return out


def deriv1_matrix(grid: PeriodicGrid, axis: int) -> sp.csr_matrix:
    return _diff_matrix(grid, axis, False)


def deriv2_matrix(grid: PeriodicGrid, i: int, j: int) -> sp.csr_matrix:
    if i == j:
        return _diff_matrix(grid, i, True)
    return _mixed_matrix(grid, min(i, j), max(i, j))


@functools.lru_cache(maxsize=64)
def _mixed_matrix(grid: PeriodicGrid, i: int, j: int) -> sp.csr_matrix:
    # same composition order as coordinate_hessian: D_j applied after D_i
    return (deriv1_matrix(grid, j) @ deriv1_matrix(grid, i)).tocsr()


# ---------------------------------------------------------------------------
# fields
# ---------------------------------------------------------------------------


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, dtype=np.float64, copy=True)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class ScalarField:
    grid: PeriodicGrid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        vals = _freeze(self.values)
        if vals.shape != self.grid.sizes:
            raise GeometryError(
                f"scalar field shape {vals.shape} != grid sizes {self.grid.sizes}"
            )
        if not np.all(np.isfinite(vals)):
            flat = int(np.argmin(np.isfinite(vals)))
            bad = tuple(int(i) for i in np.unravel_index(flat, vals.shape))
            raise GeometryError(f"non-finite scalar value at grid index {bad}")
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_function(cls, grid: PeriodicGrid, fn) -> "ScalarField":
        return cls(grid, np.asarray(fn(*grid.mesh()), dtype=np.float64))

    @classmethod
    def constant(cls, grid: PeriodicGrid, value: float) -> "ScalarField":
        return cls(grid, np.full(grid.sizes, float(value)))

    def shifted(self, c: float) -> "ScalarField":
        return ScalarField(self.grid, self.values + c)

    def max(self) -> float:
        return float(self.values.max())

    def min(self) -> float:
        return float(self.values.min())


@dataclass(frozen=True)
class SymTensorField:
    grid: PeriodicGrid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        vals = np.array(self.values, dtype=np.float64, copy=True)
        n = self.grid.dim
        if vals.shape != self.grid.sizes + (n, n):
            raise GeometryError(
                f"tensor field shape {vals.shape} != {self.grid.sizes + (n, n)}"
            )
        if not np.array_equal(vals, np.swapaxes(vals, -1, -2)):
            raise GeometryError("tensor field storage must be exactly symmetric")
        if not np.all(np.isfinite(vals)):
            raise GeometryError("non-finite tensor entry")
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_metric_multiple(cls, g: "MetricField", factor: float) -> "SymTensorField":
        return cls(g.grid, factor * g.values)

    @classmethod
    def from_entries(cls, grid: PeriodicGrid, entries) -> "SymTensorField":
        """entries[(i, j)] for i <= j are (*sizes) arrays; mirrored below."""
        n = grid.dim
        vals = np.zeros(grid.sizes + (n, n))
        for (i, j), arr in entries.items():
            vals[..., i, j] = arr
            vals[..., j, i] = arr
        return cls(grid, vals)

    def flat(self) -> np.ndarray:
        n = self.grid.dim
        return self.values.reshape(-1, n, n)


class MetricField:
    """SPD metric samples with cached determinant and inverse."""

    def __init__(self, grid: PeriodicGrid, values: np.ndarray):
        tensor = SymTensorField(grid, values)
        self.grid = grid
        self.values = tensor.values
        eigs = np.linalg.eigvalsh(self.values)
        if not np.all(eigs[..., 0] > 0):
            bad = tuple(
                int(i)
                for i in np.unravel_index(int(np.argmin(eigs[..., 0])), self.grid.sizes)
            )
            raise GeometryError(
                f"metric not positive definite at grid index {bad} "
                f"(min eigenvalue {eigs[..., 0].min():.3e})"
            )
        self.det = np.linalg.det(self.values)
        self.inv = np.linalg.inv(self.values)
        self.sqrt_det = np.sqrt(self.det)
        for arr in (self.det, self.inv, self.sqrt_det):
            arr.flags.writeable = False

    @classmethod
    def identity(cls, grid: PeriodicGrid) -> "MetricField":
        n = grid.dim
        vals = np.zeros(grid.sizes + (n, n))
        for i in range(n):
            vals[..., i, i] = 1.0
        return cls(grid, vals)

    @classmethod
    def from_entries(cls, grid: PeriodicGrid, entries) -> "MetricField":
        return cls(grid, SymTensorField.from_entries(grid, entries).values)

    def flat(self) -> np.ndarray:
        n = self.grid.dim
        return self.values.reshape(-1, n, n)


@dataclass(frozen=True)
class ChristoffelField:
    grid: PeriodicGrid
    gamma: np.ndarray = field(repr=False)  # [..., k, i, j], symmetric in (i, j)

    def __post_init__(self):
        n = self.grid.dim
        g = np.array(self.gamma, dtype=np.float64, copy=True)
        if g.shape != self.grid.sizes + (n, n, n):
            raise GeometryError("christoffel shape mismatch")
        if not np.array_equal(g, np.swapaxes(g, -1, -2)):
            raise GeometryError("christoffel symbols must be symmetric in (i, j)")
        g.flags.writeable = False
        object.__setattr__(self, "gamma", g)


# ---------------------------------------------------------------------------
# geometric operations
# ---------------------------------------------------------------------------


def christoffels(g: MetricField) -> ChristoffelField:
    """Levi-Civita symbols from the sampled metric.

    Gamma^k_ij = 1/2 sum_l g^{kl} (d_i g_jl + d_j g_il - d_l g_ij), all
    partials taken with the grid's stencil.
    """
    grid = g.grid
    n = grid.dim
    dg = np.stack(
        [grid.deriv1(g.values, a) for a in range(n)], axis=-3
    )  # [..., a, i, j] = d_a g_ij
    # T[..., i, j, l] = d_i g_jl + d_j g_il - d_l g_ij
    t = np.empty(grid.sizes + (n, n, n))
    for i in range(n):
        for j in range(i, n):
            for l in range(n):
                val = dg[..., i, j, l] + dg[..., j, i, l] - dg[..., l, i, j]
                t[..., i, j, l] = val
                t[..., j, i, l] = val
    gamma = 0.5 * np.einsum("...kl,...ijl->...kij", g.inv, t)
    # enforce exact (i, j) storage symmetry against einsum rounding
    gamma = 0.5 * (gamma + np.swapaxes(gamma, -1, -2))
    return ChristoffelField(grid, gamma)


def covariant_hessian(
    phi: ScalarField, g: MetricField, gamma: ChristoffelField
) -> SymTensorField:
    """Hessian in the metric connection: d2_ij phi - Gamma^k_ij d_k phi."""
    grid = phi.grid
    if g.grid is not grid and g.grid != grid:
        raise GeometryError("field and metric live on different grids")
    hess = grid.coordinate_hessian(phi.values)
    grad = grid.gradient(phi.values)
    correction = np.einsum("...kij,...k->...ij", gamma.gamma, grad)
    correction = 0.5 * (correction + np.swapaxes(correction, -1, -2))
    return SymTensorField(grid, hess - correction)


def lp_norm(u: ScalarField, p: float, g: MetricField) -> float:
    """L^p norm against the metric volume form; p = inf gives the grid max."""
    if p == np.inf:
        return float(np.abs(u.values).max())
    if p < 1:
        raise ValueError(f"p must be >= 1 or inf, got {p}")
    integral = u.grid.integrate(np.abs(u.values) ** p, weight=g.sqrt_det)
    return float(integral ** (1.0 / p))


def metric_equivalence_constants(g: MetricField) -> tuple:
    """Global (min, max) eigenvalue of g against the flat chart metric."""
    eigs = np.linalg.eigvalsh(g.values)
    return float(eigs[..., 0].min()), float(eigs[..., -1].max())


# ---------------------------------------------------------------------------
# Euclidean ball domain
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BallDomain:
    """Cube grid [{c-r}, {c+r}]^n with a ball mask; node spacing 2r/resolution."""

    dim: int
    radius: float
    resolution: int
    center: tuple = None

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise GeometryError(f"ball dim must be 2 or 3, got {self.dim}")
        if not self.radius > 0:
            raise GeometryError("ball radius must be positive")
        if self.resolution < 8 or self.resolution % 2 != 0:
            raise GeometryError("ball resolution must be even and >= 8")
        center = self.center if self.center is not None else (0.0,) * self.dim
        object.__setattr__(self, "center", tuple(float(c) for c in center))
        if len(self.center) != self.dim:
            raise GeometryError("ball center length must equal dim")

    @property
    def spacing(self) -> float:
        return 2.0 * self.radius / self.resolution

    @property
    def shape(self) -> tuple:
        return (self.resolution + 1,) * self.dim

    def axes(self):
        return [
            c + np.linspace(-self.radius, self.radius, self.resolution + 1)
            for c in self.center
        ]

    def mesh(self):
        return np.meshgrid(*self.axes(), indexing="ij")

    def points(self) -> np.ndarray:
        return np.stack([m.ravel() for m in self.mesh()], axis=-1)

    def radius_sq(self) -> np.ndarray:
        mesh = self.mesh()
        return sum((m - c) ** 2 for m, c in zip(mesh, self.center))

    def interior_mask(self) -> np.ndarray:
        return self.radius_sq() < self.radius**2

    def boundary_mask(self) -> np.ndarray:
        return ~self.interior_mask()

    def center_index(self) -> tuple:
        return (self.resolution // 2,) * self.dim

    def gradient(self, values: np.ndarray) -> np.ndarray:
        return np.stack(np.gradient(values, self.spacing, edge_order=2), axis=-1)

    def hessian(self, values: np.ndarray) -> np.ndarray:
        grads = np.gradient(values, self.spacing, edge_order=2)
        n = self.dim
        out = np.empty(values.shape + (n, n))
        for i in range(n):
            gi = np.gradient(grads[i], self.spacing, edge_order=2)
            for j in range(n):
                out[..., i, j] = gi[j]
        return 0.5 * (out + np.swapaxes(out, -1, -2))

    def integrate_masked(self, values: np.ndarray, mask: np.ndarray) -> float:
        return float(values[mask].sum() * self.spacing**self.dim)


def cutoff_profile(domain: BallDomain) -> np.ndarray:
    """(1 - |x - c|^2 / r^2)^+ sampled on the cube grid, zero outside the ball."""
    return np.maximum(1.0 - domain.radius_sq() / domain.radius**2, 0.0)


# ---------------------------------------------------------------------------
# spectral resampling (torus field -> arbitrary chart points, per axis)
# ---------------------------------------------------------------------------


def resample_axis(
    values: np.ndarray, axis: int, targets: np.ndarray, period: float
) -> np.ndarray:
    """Trigonometric interpolation of periodic samples along one axis."""
    m = values.shape[axis]
    coeff = np.fft.fft(values, axis=axis)
    k = 2.0 * np.pi * np.fft.fftfreq(m, d=period / m)
    basis = np.exp(1j * np.outer(targets, k)) / m
    basis[:, m // 2] = np.cos(targets * k[m // 2]) / m  # real Nyquist mode
    moved = np.moveaxis(coeff, axis, 0)
    flat = moved.reshape(m, -1)
    out = (basis @ flat).reshape((len(targets),) + moved.shape[1:])
    return np.moveaxis(out, 0, axis).real


def resample_on_points(field: ScalarField, axes_targets) -> np.ndarray:
    """Tensor-product spectral interpolation onto a product of 1D target sets."""
    out = field.values
    for axis, targets in enumerate(axes_targets):
        out = resample_axis(out, axis, np.asarray(targets, float), field.grid.periods[axis])
    return out
