"""Lasso and Group Lasso error-bound toolkit: data generation, FISTA solvers,
theoretical constants and cones, restricted-eigenvalue estimation and a seeded
Monte-Carlo harness."""

__version__ = "0.1.0"

from .model import (
    DesignMatrix,
    GroundTruth,
    GroupCover,
    GroupStructure,
    NoiseModel,
    Normalization,
    RegressionProblem,
    check_assumptions,
    generate_design,
    generate_ground_truth,
    group_cover,
    make_problem,
    read_problem,
    synthesize_response,
    write_problem,
)
from .solver import FitResult, SolverConfig, fit_group_lasso, fit_lasso, kkt_residual
from .theory import (
    TheoryParams,
    bound_rhs,
    cone_membership,
    estimate_re_constant,
    lambda_group,
    lambda_lasso,
)
