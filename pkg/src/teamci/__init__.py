"""Static team problems with common observations: the coordinator reduction and its
numerical checks on finite grids."""

from .measures import (
    CaratheodoryTestFunction,
    FiniteSpace,
    Kernel,
    Measure,
    SpaceMismatch,
    default_bank,
    f_norm1,
    kernel_inf_norm,
    pairing,
    product_measure,
    product_space,
    tv_distance,
    wstar_distance,
)
from .model import (
    CapExceeded,
    CostSpec,
    ObservationChannel,
    PolicyProfile,
    TeamProblem,
    conditional_state_law,
    enumerate_deterministic_policies,
    expected_cost,
    tilde_c,
    validate,
)
from .reduction import (
    CentralizedProblem,
    LambdaGrid,
    Prescription,
    PrescriptionAction,
    ZeroMassAtom,
    build_lambda_grid,
    evaluate_L,
    evaluate_M,
    lift,
    reduce,
    solve_centralized,
)
from .solvers import SolveResult, brute_force, person_by_person, solve_common_information
from .diagnostics import (
    check_wstar_convergence,
    escaping_mass_demo,
    ic_class_check,
    lsc_probe,
    sublevel_tightness,
    tightness_check,
)
from .fileio import parse_problem, problem_to_dict, write_problem
from .instances import random_instance, toy1, toy_g

__version__ = "0.1.0"


def fixture_path(name: str):
    """Path of a shipped problem file, e.g. ``fixture_path("toy1")``."""
    from importlib.resources import files

    return files(__name__).joinpath("data", f"{name}.json")
