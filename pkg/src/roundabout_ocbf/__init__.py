"""Optimal control with barrier-function safety for CAVs in a roundabout."""
from .config import ScenarioConfig, parse_scenario, parse_scenario_text, serialize_scenario
from .coordination import Coordinator, CavRecord, FifoPolicy, SdfPolicy, make_policy
from .errors import (ConfigurationError, CoordinationError, DomainError, SimulationError,
                     SolverError)
from .experiments import PRESETS, export_plot_data, get_preset, run_experiment
from .ocbf import CbfConfig, control_step
from .qp import QpProblem, Row, solve_step_qp
from .simulation import audit_safety, run
from .topology import RoundaboutTopology, build_topology
from .unconstrained import beta_from_alpha, solve_unconstrained

__all__ = [
    "ScenarioConfig", "parse_scenario", "parse_scenario_text", "serialize_scenario",
    "Coordinator", "CavRecord", "FifoPolicy", "SdfPolicy", "make_policy",
    "ConfigurationError", "CoordinationError", "DomainError", "SimulationError", "SolverError",
    "PRESETS", "export_plot_data", "get_preset", "run_experiment",
    "CbfConfig", "control_step", "QpProblem", "Row", "solve_step_qp",
    "audit_safety", "run", "RoundaboutTopology", "build_topology",
    "beta_from_alpha", "solve_unconstrained",
]
