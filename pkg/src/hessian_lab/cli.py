"""Command-line entry point: solve, verify-conditions, experiment.

Exit codes: 0 all passes, 1 validation error, 2 solver failure,
3 estimate-check failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import backend
from .abp import contact_mass_check, recentered_test_function
from .config import ConfigError, RunConfig, load_config
from .estimates import (
    EstimateViolation,
    b_bounds_check,
    b_uniqueness_probe,
    equicontinuity_probe,
    linf_experiment,
    stability_experiment,
)
from .expressions import evaluate_expression
from .fieldio import save_solution_pair
from .gradient import euclidean_gradient_constant_check, gradient_probe, level_uniformity
from .grid import BallDomain, GeometryError, ScalarField, christoffels
from .operators import ConeViolationError, check_structural_conditions
from .reports import RunReport, content_hash, write_csv, write_json
from .solver import ProblemSpec, SolverError, solve_pair
from .weak import MollifierSchedule, mollify_sequence, viscosity_spot_check, weak_solve

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_SOLVER = 2
EXIT_ESTIMATE = 3

EXPERIMENTS = (
    "linf",
    "stability",
    "b-bounds",
    "b-uniqueness",
    "equicontinuity",
    "abp",
    "gradient",
    "weak-solve",
    "viscosity",
)


def _default_modulation(dim: int) -> dict:
    k_plus = [1, 1] + [0] * (dim - 2)
    k_minus = [1, -1] + [0] * (dim - 2)
    return {"terms": [[0.5, "cos", k_minus], [-0.5, "cos", k_plus]]}


def _build_problem(cfg: RunConfig, base: Path):
    grid = cfg.build_grid()
    g = cfg.build_metric(grid)
    operator = cfg.build_operator()
    chi = cfg.build_chi(grid, g)
    rhs = cfg.build_rhs(grid, base)
    return ProblemSpec(operator, chi, g, rhs)


def _report_for(cfg: RunConfig, command: str, config_path: Path, seed: int) -> RunReport:
    return RunReport(
        command=command,
        config_echo=cfg.to_dict(),
        input_hash=content_hash(config_path.read_bytes()),
        seed=seed,
    )


def cmd_solve(cfg: RunConfig, out: Path, seed: int, config_path: Path) -> int:
    report = _report_for(cfg, "solve", config_path, seed)
    try:
        prob = _build_problem(cfg, config_path.parent)
        opts = cfg.build_solve_options()
    except (ConfigError, GeometryError, ConeViolationError) as err:
        print(f"validation error: {err}", file=sys.stderr)
        return EXIT_VALIDATION
    try:
        with report.time_block("solve"):
            pair, path_log = solve_pair(prob, opts)
    except SolverError as err:
        print(f"solver failure: {err}", file=sys.stderr)
        return EXIT_SOLVER
    csv_path = write_csv(
        out / "path_log.csv",
        ["t", "b_t", "newton_iters", "final_residual"],
        [[s.t, s.b, s.newton_iters, s.residual] for s in path_log],
    )
    save_solution_pair(out / "solution", pair, {"newton_tol": opts.newton_tol})
    report.add_artifact(csv_path)
    report.add_artifact(out / "solution.field")
    report.add_artifact(out / "solution.json")
    report.results["solve"] = {
        "b": pair.b,
        "residual_inf": pair.residual_inf,
        "phi_inf": float(np.abs(pair.phi.values).max()),
        "path_steps": len(path_log),
    }
    report.save(out)
    return EXIT_OK


def cmd_verify_conditions(cfg: RunConfig, out: Path, seed: int, config_path: Path) -> int:
    report = _report_for(cfg, "verify-conditions", config_path, seed)
    try:
        operator = cfg.build_operator()
        samples = int(cfg.experiment.get("params", {}).get("samples", 10000))
    except ConfigError as err:
        print(f"validation error: {err}", file=sys.stderr)
        return EXIT_VALIDATION
    rng = np.random.default_rng(seed)
    with report.time_block("conditions"):
        cond = check_structural_conditions(operator, samples, rng)
    rows = [
        [v.name, v.passed, v.detail, "" if v.witness is None else list(v.witness)]
        for v in cond.verdicts
    ]
    csv_path = write_csv(
        out / "conditions.csv", ["condition", "pass", "detail", "witness"], rows
    )
    report.add_artifact(csv_path)
    report.results["conditions"] = {
        "all_passed": cond.all_passed,
        "min_grad_product": cond.min_grad_product,
        "max_concavity_defect": cond.max_concavity_defect,
        "sample_count": cond.sample_count,
    }
    report.passed = cond.all_passed
    report.save(out)
    return EXIT_OK if cond.all_passed else EXIT_ESTIMATE


# ---------------------------------------------------------------------------
# experiment dispatch
# ---------------------------------------------------------------------------


def _run_linf(cfg, prob, params, out, report):
    q = float(params.get("q", 2.0))
    p = float(params.get("p", 2.0))
    scales = params.get("scales", [0.25, 0.5, 1.0, 2.0])
    if not scales:
        report.results["warning"] = "empty scale grid: nothing to do"
        return EXIT_OK, True
    grid = prob.grid
    modulation = evaluate_expression(
        params.get("modulation", _default_modulation(grid.dim)), grid
    )
    family = [
        (f"s={s:g}", ScalarField(grid, prob.rhs.values * np.exp(s * modulation)))
        for s in scales
    ]
    rep = linf_experiment(
        prob.operator, prob.chi, prob.g, family, q, p, cfg.build_solve_options()
    )
    csv_path = write_csv(
        out / "linf.csv",
        ["label", "converged", "phi_inf", "b", "rhs_lnq", "functional_p", "ratio"],
        [
            [
                r.get("label"),
                r.get("converged"),
                r.get("phi_inf"),
                r.get("b"),
                r.get("rhs_lnq"),
                r.get("functional_p"),
                r.get("ratio"),
            ]
            for r in rep.rows
        ],
    )
    report.add_artifact(csv_path)
    report.results["linf"] = {
        "pass": rep.passed,
        "q": q,
        "p": p,
        "baseline_ratio": rep.baseline_ratio,
        "max_ratio": rep.max_ratio,
        "warnings": rep.warnings,
    }
    return EXIT_OK, rep.passed


def _run_stability(cfg, prob, params, out, report):
    p = float(params.get("p", 2.0))
    q = float(params.get("q", 2.0))
    deltas = params.get("deltas", [0.2, 0.1, 0.05, 0.025])
    if not deltas:
        report.results["warning"] = "empty delta grid: nothing to do"
        return EXIT_OK, True
    grid = prob.grid
    eta = ScalarField(
        grid,
        evaluate_expression(
            params.get("perturbation", _default_modulation(grid.dim)), grid
        ),
    )
    log_rhs = ScalarField(grid, np.log(prob.rhs.values))
    rep = stability_experiment(
        prob.operator,
        prob.chi,
        prob.g,
        log_rhs,
        eta,
        deltas,
        p,
        q,
        cfg.build_solve_options(),
    )
    csv_path = write_csv(
        out / "stability.csv",
        ["delta", "sup_diff", "plus_norm", "r", "branch", "ratio"],
        [
            [r["delta"], r["sup_diff"], r["plus_norm"], r["r"], r["branch"], r.get("ratio")]
            for r in rep.rows
        ],
    )
    report.add_artifact(csv_path)
    report.results["stability"] = {
        "pass": rep.passed,
        "exponent": rep.exponent,
        "ratio_spread": rep.ratio_spread,
        "p": p,
        "q": q,
    }
    return EXIT_OK, rep.passed


def _run_b_bounds(cfg, prob, params, out, report):
    pair, _ = solve_pair(prob, cfg.build_solve_options())
    rep = b_bounds_check(prob.operator, prob.chi, prob.g, prob.rhs, pair)
    csv_path = write_csv(
        out / "b_bounds.csv",
        [
            "exp_b",
            "upper_bound",
            "margin_factor",
            "laplacian_integral",
            "pointwise_min_margin",
            "lower_bound_constant",
        ],
        [
            [
                rep.exp_b,
                rep.upper_bound,
                rep.margin_factor,
                rep.laplacian_integral,
                rep.pointwise_min_margin,
                rep.lower_bound_constant,
            ]
        ],
    )
    report.add_artifact(csv_path)
    report.results["b_bounds"] = {
        "pass": rep.passed,
        "exp_b": rep.exp_b,
        "upper_bound": rep.upper_bound,
        "metric_equivalence": list(rep.metric_equivalence),
    }
    return EXIT_OK, rep.passed


def _schedule_from(params: dict, defaults: dict) -> MollifierSchedule:
    merged = dict(defaults)
    merged.update(params or {})
    return MollifierSchedule(**merged)


def _run_b_uniqueness(cfg, prob, params, out, report):
    nq = float(params.get("nq", 2.0 * prob.grid.dim))
    sched_a = _schedule_from(params.get("schedule_a"), {"levels": 5, "taper": "sharp"})
    sched_b = _schedule_from(
        params.get("schedule_b"),
        {"levels": 5, "taper": "cosine", "cutoff_growth": 1.9, "initial_cutoff": 3},
    )
    rep = b_uniqueness_probe(
        prob.operator,
        prob.chi,
        prob.g,
        prob.rhs,
        sched_a,
        sched_b,
        nq,
        cfg.build_solve_options(),
        final_gap_tol=float(params.get("final_gap_tol", 1e-3)),
    )
    csv_path = write_csv(
        out / "b_uniqueness.csv",
        ["level", "b_a", "b_b", "gap"],
        [[r["level"], r["b_a"], r["b_b"], r["gap"]] for r in rep.rows],
    )
    report.add_artifact(csv_path)
    report.results["b_uniqueness"] = {
        "pass": rep.passed,
        "final_gap": rep.final_gap,
        "decreasing": rep.decreasing,
    }
    return EXIT_OK, rep.passed


def _run_equicontinuity(cfg, prob, params, out, report):
    family_cfg = params.get("family", [])
    if not family_cfg:
        report.results["warning"] = "empty family: nothing to do"
        return EXIT_OK, True
    grid = prob.grid
    family = [
        (f"member{i}", ScalarField(grid, evaluate_expression(expr, grid)))
        for i, expr in enumerate(family_cfg)
    ]
    rep = equicontinuity_probe(
        prob.operator,
        prob.chi,
        prob.g,
        family,
        float(params.get("K", 50.0)),
        float(params.get("nq", 2.0 * grid.dim)),
        opts=cfg.build_solve_options(),
    )
    csv_path = write_csv(
        out / "equicontinuity.csv",
        ["label", "norm_ratio", "b"] + [f"omega_h{i}" for i in range(len(rep.h_values))],
        [[r["label"], r["norm_ratio"], r["b"]] + list(r["moduli"]) for r in rep.rows],
    )
    report.add_artifact(csv_path)
    report.results["equicontinuity"] = {
        "pass": rep.passed,
        "h_values": rep.h_values,
        "envelope": rep.envelope,
    }
    return EXIT_OK, rep.passed


def _run_abp(cfg, prob, params, out, report):
    fixture = params.get("fixture", "quadratic_well")
    dim = prob.grid.dim
    resolution = int(params.get("resolution", 128 if dim == 2 else 96))
    epsilon = float(params.get("epsilon", 1.0))
    rel_slack = float(params.get("rel_slack", 0.05))
    if fixture == "quadratic_well":
        dom = BallDomain(dim, 1.0, resolution)
        v = dom.radius_sq() - 1.0
        rep = contact_mass_check(v, dom, epsilon, rel_slack=rel_slack)
    elif fixture == "from_solve":
        pair, _ = solve_pair(prob, cfg.build_solve_options())
        gamma = christoffels(prob.g)
        ball = BallDomain(dim, float(params.get("radius", 1.0)), resolution)
        u, info = recentered_test_function(
            pair.phi, prob.g, gamma, ball=ball, sigma=prob.operator.sigma
        )
        rep = contact_mass_check(u, ball, info["epsilon"], rel_slack=rel_slack)
    else:
        raise ConfigError(
            f"unknown abp fixture {fixture!r}", "experiment.params.fixture"
        )
    summary = {
        "epsilon": rep["epsilon"],
        "c0": rep["c0"],
        "ma_mass": rep["ma_mass"],
        "pass": rep["pass"],
        "mask_count": rep["mask_count"],
    }
    csv_path = write_csv(
        out / "abp.csv",
        ["epsilon", "c0", "c0_eps_n", "ma_mass", "mask_count", "pass"],
        [[rep["epsilon"], rep["c0"], rep["c0_eps_n"], rep["ma_mass"], rep["mask_count"], rep["pass"]]],
    )
    report.add_artifact(csv_path)
    report.results["abp"] = summary
    return EXIT_OK, rep["pass"]


def _run_gradient(cfg, prob, params, out, report):
    dim = prob.grid.dim
    slopes = params.get("slopes", [0.0, 0.5, 1.0, 5.0, 20.0, 100.0])
    radii = params.get("radii", [0.1, 0.5, 1.0, 2.0, 10.0])
    check = euclidean_gradient_constant_check(
        dim, slopes, radii, int(params.get("resolution", 64))
    )
    rows = [
        [r["slope"], r["radius"], r.get("K"), r.get("grad_center"), r.get("bound"), r.get("margin")]
        for r in check["rows"]
        if not r.get("rejected")
    ]
    csv_path = write_csv(
        out / "gradient_constant.csv",
        ["slope", "radius", "K", "grad_center", "bound", "margin"],
        rows,
    )
    report.add_artifact(csv_path)
    results = {
        "constant_check": {
            "pass": check["pass"],
            "worst_relative_margin": check["worst_relative_margin"],
        }
    }
    passed = check["pass"]
    if params.get("level_probe", True):
        schedule = _schedule_from(params.get("schedule"), {"levels": 4})
        nq = float(params.get("nq", 2.0 * dim))
        fields, _ = mollify_sequence(prob.rhs, schedule, prob.g, nq)
        probes = []
        r = float(params.get("probe_radius", 0.45 * min(prob.grid.periods)))
        center = tuple(0.5 * p for p in prob.grid.periods)
        probe_rows = []
        for level, fld in enumerate(fields, start=1):
            pair, _ = solve_pair(ProblemSpec(prob.operator, prob.chi, prob.g, fld),
                                 cfg.build_solve_options())
            probe = gradient_probe(pair.phi, prob.g, center, r, prob.chi)
            probes.append(probe)
            probe_rows.append(
                [level, probe.K, probe.r, probe.max_rho_grad,
                 "" if probe.argmax_index is None else str(probe.argmax_index)]
            )
        uni = level_uniformity(probes)
        probe_csv = write_csv(
            out / "gradient_probe.csv",
            ["level", "K", "r", "max_rho_grad", "G_argmax"],
            probe_rows,
        )
        report.add_artifact(probe_csv)
        results["level_probe"] = uni
        passed = passed and uni["pass"]
    report.results["gradient"] = results
    return EXIT_OK, passed


def _run_weak_solve(cfg, prob, params, out, report):
    schedule = _schedule_from(params.get("schedule"), {"levels": 6})
    nq = float(params.get("nq", 2.0 * prob.grid.dim))
    pair, cert = weak_solve(
        prob.operator,
        prob.chi,
        prob.g,
        prob.rhs,
        schedule,
        nq,
        cfg.build_solve_options(),
    )
    csv_path = write_csv(
        out / "mollification.csv",
        ["level", "cutoff", "floor", "error", "target", "min_value", "b"],
        [
            [r["level"], r["cutoff"], r["floor"], r["error"], r["target"], r["min_value"], b]
            for r, b in zip(cert.mollifier_rows, cert.b_per_level)
        ],
    )
    report.add_artifact(csv_path)
    write_json(
        out / "weak_certificate.json",
        {
            "levels": cert.levels,
            "b_per_level": cert.b_per_level,
            "cauchy_table": cert.sup_gap_table,
            "fitted_C": cert.fitted_constant,
            "decay_slope": cert.decay_slope,
            "pass": cert.passed,
        },
    )
    report.add_artifact(out / "weak_certificate.json")
    report.results["weak_solve"] = {
        "pass": cert.passed,
        "fitted_C": cert.fitted_constant,
        "decay_slope": cert.decay_slope,
        "b": pair.b,
    }
    return EXIT_OK, cert.passed


def _run_viscosity(cfg, prob, params, out, report):
    pair, _ = solve_pair(prob, cfg.build_solve_options())
    grid = prob.grid
    per_axis = int(params.get("samples_per_axis", 8))
    stride = [max(1, s // per_axis) for s in grid.sizes]
    samples = list(np.ndindex(*[min(per_axis, s) for s in grid.sizes]))
    sample_indices = [tuple(i * st for i, st in zip(s, stride)) for s in samples]
    probe_radius = float(params.get("probe_radius_cells", 3)) * max(grid.spacing)
    tol = float(params.get("tol", 1e-4))
    gamma = christoffels(prob.g)
    rep = viscosity_spot_check(
        prob.operator,
        prob.chi,
        prob.g,
        gamma,
        pair.phi,
        pair.b,
        prob.rhs,
        sample_indices,
        probe_radius,
        tol,
    )
    csv_path = write_csv(
        out / "viscosity.csv",
        ["index", "sub_pass", "sub_margin", "super_pass", "super_branch", "super_margin"],
        [
            [
                str(s["index"]),
                s["sub_pass"],
                s.get("sub_margin"),
                s["super_pass"],
                s.get("super_branch"),
                s.get("super_margin"),
            ]
            for s in rep.samples
        ],
    )
    report.add_artifact(csv_path)
    report.results["viscosity"] = {
        "pass": rep.all_passed,
        "tol": tol,
        "samples": len(rep.samples),
    }
    return EXIT_OK, rep.all_passed


_RUNNERS = {
    "linf": _run_linf,
    "stability": _run_stability,
    "b-bounds": _run_b_bounds,
    "b-uniqueness": _run_b_uniqueness,
    "equicontinuity": _run_equicontinuity,
    "abp": _run_abp,
    "gradient": _run_gradient,
    "weak-solve": _run_weak_solve,
    "viscosity": _run_viscosity,
}


def cmd_experiment(cfg: RunConfig, out: Path, seed: int, config_path: Path) -> int:
    kind = cfg.experiment.get("kind")
    if kind not in EXPERIMENTS:
        print(
            f"unknown experiment {kind!r}; valid names: {', '.join(EXPERIMENTS)}",
            file=sys.stderr,
        )
        return EXIT_VALIDATION
    report = _report_for(cfg, f"experiment:{kind}", config_path, seed)
    try:
        prob = _build_problem(cfg, config_path.parent)
        params = cfg.experiment.get("params", {})
    except (ConfigError, GeometryError, ConeViolationError) as err:
        print(f"validation error: {err}", file=sys.stderr)
        return EXIT_VALIDATION
    try:
        with report.time_block(kind):
            code, passed = _RUNNERS[kind](cfg, prob, params, out, report)
    except (ConfigError, ValueError) as err:
        print(f"validation error: {err}", file=sys.stderr)
        return EXIT_VALIDATION
    except SolverError as err:
        print(f"solver failure: {err}", file=sys.stderr)
        return EXIT_SOLVER
    except EstimateViolation as err:
        print(f"estimate check failed: {err}", file=sys.stderr)
        return EXIT_ESTIMATE
    report.passed = bool(passed)
    report.save(out)
    if "warning" in report.results:
        print(f"warning: {report.results['warning']}", file=sys.stderr)
    return code if passed else EXIT_ESTIMATE


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="hessian-lab",
        description="Numerical laboratory for concave Hessian-type pair equations",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("solve", "verify-conditions", "experiment"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True)
        p.add_argument("--out", default=None)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--threads", type=int, default=0)
    args = parser.parse_args(argv)

    try:
        cfg = load_config(args.config)
    except ConfigError as err:
        print(f"validation error: {err}", file=sys.stderr)
        return EXIT_VALIDATION
    seed = args.seed if args.seed is not None else cfg.seed
    out = Path(args.out or cfg.output.get("dir", "out"))
    out.mkdir(parents=True, exist_ok=True)
    if args.threads:
        backend.set_num_threads(args.threads)

    dispatch = {
        "solve": cmd_solve,
        "verify-conditions": cmd_verify_conditions,
        "experiment": cmd_experiment,
    }
    return dispatch[args.command](cfg, out, seed, Path(args.config))


if __name__ == "__main__":
    sys.exit(main())
