import numpy as np
import pytest
import sympy as sym

from hessian_lab.grid import MetricField, PeriodicGrid, ScalarField, SymTensorField


class VariableMetricCase:
    """Variable 2-torus metric with chi = 2 g and a manufactured potential.

    Everything the discrete code should reproduce is derived symbolically:
    Christoffel symbols, the covariant Hessian of the potential, and the
    exact right side that makes the potential solve the product-root
    equation with zero constant.
    """

    def __init__(self):
        x, y = sym.symbols("x y", real=True)
        w = 2 * sym.pi
        g11 = 1 + sym.Rational(1, 4) * sym.sin(w * x)
        g22 = 1 + sym.Rational(1, 4) * sym.cos(w * y)
        g12 = sym.Rational(1, 10) * sym.sin(w * x) * sym.sin(w * y)
        G = sym.Matrix([[g11, g12], [g12, g22]])
        phi = sym.Rational(1, 100) * (
            sym.sin(w * x) * sym.cos(w * y) + sym.cos(w * y) / 2
        )
        coords = [x, y]
        Ginv = G.inv()
        gamma = [
            [
                [
                    sum(
                        Ginv[k, l]
                        * (
                            sym.diff(G[j, l], coords[i])
                            + sym.diff(G[i, l], coords[j])
                            - sym.diff(G[i, j], coords[l])
                        )
                        for l in range(2)
                    )
                    / 2
                    for j in range(2)
                ]
                for i in range(2)
            ]
            for k in range(2)
        ]
        hess = sym.Matrix(
            2,
            2,
            lambda i, j: sym.diff(phi, coords[i], coords[j])
            - sum(gamma[k][i][j] * sym.diff(phi, coords[k]) for k in range(2)),
        )
        total = 2 * G + hess
        rhs = sym.sqrt(total.det() / G.det())

        def lam(e):
            return sym.lambdify((x, y), e, "numpy")

        self.g_entries = {(0, 0): lam(g11), (0, 1): lam(g12), (1, 1): lam(g22)}
        self.phi = lam(phi)
        self.rhs = lam(rhs)
        self.gamma = [[[lam(gamma[k][i][j]) for j in range(2)] for i in range(2)]
                      for k in range(2)]
        self.hess = [[lam(hess[i, j]) for j in range(2)] for i in range(2)]
        self.grad_phi = [lam(sym.diff(phi, c)) for c in coords]

    def build(self, size, stencil_order=4):
        grid = PeriodicGrid(2, (size, size), (1.0, 1.0), stencil_order)
        x, y = grid.mesh()
        ones = np.ones_like(x)
        g = MetricField.from_entries(
            grid,
            {
                (0, 0): self.g_entries[(0, 0)](x, y) * ones,
                (0, 1): self.g_entries[(0, 1)](x, y) * ones,
                (1, 1): self.g_entries[(1, 1)](x, y) * ones,
            },
        )
        chi = SymTensorField.from_metric_multiple(g, 2.0)
        rhs = ScalarField(grid, self.rhs(x, y) * ones)
        phi_star = self.phi(x, y) * ones
        return {
            "grid": grid,
            "g": g,
            "chi": chi,
            "rhs": rhs,
            "phi_star": phi_star,
            "mesh": (x, y),
        }


@pytest.fixture(scope="session")
def vm_case():
    return VariableMetricCase()


@pytest.fixture(scope="session")
def vm_solved(vm_case):
    """One converged solve of the manufactured problem at size 48."""
    from hessian_lab.solver import ProblemSpec, SolveOptions, solve_pair
    from hessian_lab.operators import OperatorSpec

    data = vm_case.build(48)
    spec = OperatorSpec("monge_ampere", 2, sigma=1.0)
    prob = ProblemSpec(spec, data["chi"], data["g"], data["rhs"])
    pair, log = solve_pair(prob, SolveOptions(continuity_steps=2))
    return {"spec": spec, "prob": prob, "pair": pair, "log": log, **data}


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20240901)


ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def acceptance_log():
    return ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number, name, ok, detail in sorted(ACCEPTANCE_LINES):
        status = "PASS" if ok else "FAIL"
        line = f"criterion {number} [{name}]: {status}"
        if detail:
            line += f" ({detail})"
        terminalreporter.write_line(line)
