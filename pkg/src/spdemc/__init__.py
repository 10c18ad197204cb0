"""Monte Carlo method-of-characteristics solver for stochastic Dirichlet
problems, with a pathwise finite-difference reference solver and
artificial-boundary localization experiments."""

from .scenario import (DomainSpec, ScenarioConfig, TimeGrid, check_coercivity,
                       load_scenario, load_scenario_file, serialize_scenario,
                       signed_distance)
from .noise import NoisePlan, WienerPath, load_path
from .coefficients import (CoefficientSet, beta, builtin_family,
                           build_coefficients, build_scenario_coefficients,
                           c_bar, f_bar)
from .flow import (FlowField, integrate_flow, integrate_flow_from,
                   invert_flow, inverse_trajectory)
from .weights import (WeightPaths, concatenation_check, integrate_eta,
                      integrate_tilde, integrate_U, weight_paths)
from .representation import (CharacteristicBundle, RepresentationEstimate,
                             build_bundle, estimate_v, exit_time, payoff)
from .reference import (GridSolution, SpaceGrid, compare, fd_solve,
                        fd_solve_whole_space)

__all__ = [
    "DomainSpec", "ScenarioConfig", "TimeGrid", "check_coercivity",
    "load_scenario", "load_scenario_file", "serialize_scenario",
    "signed_distance", "NoisePlan", "WienerPath", "load_path",
    "CoefficientSet", "beta", "builtin_family", "build_coefficients",
    "build_scenario_coefficients", "c_bar", "f_bar", "FlowField",
    "integrate_flow", "integrate_flow_from", "invert_flow",
    "inverse_trajectory", "WeightPaths", "concatenation_check",
    "integrate_eta", "integrate_tilde", "integrate_U", "weight_paths",
    "CharacteristicBundle", "RepresentationEstimate", "build_bundle",
    "estimate_v", "exit_time", "payoff", "GridSolution", "SpaceGrid",
    "compare", "fd_solve", "fd_solve_whole_space",
]
