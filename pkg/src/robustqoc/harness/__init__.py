"""Experiment harness: scenarios, seeded batch runs and result reports."""
from .config import SWEEP_PARAMS, ConfigError, ExperimentConfig, Sweep, load_config
from .reports import (
    EMPTY_FRONTIER,
    ParetoReport,
    PauliRow,
    paired_comparison,
    report_pareto,
    report_pauli_scan,
    write_table,
)
from .runner import (
    COLUMNS,
    ResultRow,
    RunResult,
    cross_evaluate,
    load_solution,
    read_results,
    run,
    solution_trajectory,
    verify_solution,
)
from .scenarios import (
    DEFAULT_SEEDS,
    HADAMARD,
    ISWAP,
    build_scenario,
    scenario_hadamard,
    scenario_iswap,
    spec_from_dict,
    spec_to_dict,
)

__all__ = [
    "DEFAULT_SEEDS",
    "COLUMNS",
    "EMPTY_FRONTIER",
    "HADAMARD",
    "ISWAP",
    "SWEEP_PARAMS",
    "ConfigError",
    "ExperimentConfig",
    "ParetoReport",
    "PauliRow",
    "ResultRow",
    "RunResult",
    "Sweep",
    "build_scenario",
    "cross_evaluate",
    "load_config",
    "load_solution",
    "paired_comparison",
    "read_results",
    "report_pareto",
    "report_pauli_scan",
    "run",
    "scenario_hadamard",
    "scenario_iswap",
    "solution_trajectory",
    "spec_from_dict",
    "spec_to_dict",
    "verify_solution",
    "write_table",
]
