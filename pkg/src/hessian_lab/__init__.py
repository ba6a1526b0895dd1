"""Numerical laboratory for concave Hessian-type pair equations on flat-chart tori."""

from .backend import BACKEND, USE_NUMBA
from .grid import (
    BallDomain,
    ChristoffelField,
    GeometryError,
    MetricField,
    PeriodicGrid,
    ScalarField,
    SymTensorField,
    christoffels,
    covariant_hessian,
    cutoff_profile,
    lp_norm,
    metric_equivalence_constants,
)
from .operators import (
    ConeViolationError,
    OperatorSpec,
    Spectrum,
    F_deriv,
    F_eval,
    check_structural_conditions,
    cone_membership,
    eigenvalues_wrt_metric,
    f_eval,
    f_grad,
    subsolution_excess_report,
)
from .solver import (
    ProblemSpec,
    SolutionPair,
    SolveOptions,
    SolverError,
    residual,
    solve_fixed_path_point,
    solve_pair,
)
from .abp import (
    contact_constant,
    contact_mass_check,
    lower_contact_set,
    recentered_test_function,
    unit_ball_volume,
)
from .estimates import (
    EstimateViolation,
    b_bounds_check,
    b_uniqueness_probe,
    equicontinuity_probe,
    linf_experiment,
    stability_experiment,
    stability_exponent,
)
from .weak import (
    MollifierSchedule,
    mollify_sequence,
    viscosity_spot_check,
    weak_solve,
)
from .gradient import (
    PsiSpec,
    euclidean_gradient_constant_check,
    gradient_probe,
    growth_condition_check,
)

__version__ = "0.1.0"
