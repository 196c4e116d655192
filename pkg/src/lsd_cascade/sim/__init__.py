"""Cascading-liquidation stress simulation."""

from .cohorts import generate_cohort
from .engine import CascadeEngine, DeleverageStep, ScenarioComparison, compare_scenarios, init_scenario, run_simulation
from .scenario import (
    Cohort,
    CohortSpec,
    LiquidationOrder,
    RoundReport,
    ScenarioConfig,
    ScenarioError,
    SimPosition,
    SimulationResult,
    Termination,
    Unwind,
    UnwindMode,
    bundled_scenario_dir,
    config_checksum,
    load_scenario,
    resolve_scenario,
    rounds_csv,
    scenario_from_json,
)

__all__ = [
    "CascadeEngine",
    "Cohort",
    "CohortSpec",
    "DeleverageStep",
    "LiquidationOrder",
    "RoundReport",
    "ScenarioComparison",
    "ScenarioConfig",
    "ScenarioError",
    "SimPosition",
    "SimulationResult",
    "Termination",
    "Unwind",
    "UnwindMode",
    "bundled_scenario_dir",
    "config_checksum",
    "compare_scenarios",
    "generate_cohort",
    "init_scenario",
    "load_scenario",
    "resolve_scenario",
    "rounds_csv",
    "run_simulation",
    "scenario_from_json",
]
