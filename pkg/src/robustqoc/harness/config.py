"""Experiment configuration files.

A config is a JSON object::

    {
      "scenario": "hadamard",
      "spec": {"objective": "toggling", "R": 1.0},
      "sweep": {"param": "Q", "values": [0.01, 1.0]},
      "seeds": [0, 1, 2],
      "solver": {"tol_opt": 1e-6, "tol_feas": 1e-10, "max_outer": 40, "max_inner": 3000},
      "output_dir": "results/q_sweep"
    }

``sweep`` may be omitted or null.  Without ``seeds`` the scenario's
default batch is used (25 for Hadamard, 16 for iSWAP).  ``solver`` accepts any solver option.
Optional keys: ``name`` (file prefix, default the scenario), ``workers``
(process count, default 1) and ``metrics`` (``oversample``).
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from ..nlp import SolverOptions
from ..trajopt import ProblemSpec
from .scenarios import DEFAULT_SEEDS, build_scenario

__all__ = ["SWEEP_PARAMS", "ConfigError", "ExperimentConfig", "Sweep", "load_config"]

SWEEP_PARAMS = ("Q", "n_knots", "ddu_bound", "order_j")
SCENARIO_NAMES = ("hadamard", "iswap", "custom")
TOP_LEVEL = {"scenario", "spec", "sweep", "seeds", "solver", "output_dir", "name", "workers", "metrics"}

# much tighter than the solver default: direct solutions spend the dynamics
# tolerance coherently over all intervals, so at 1e-8 the rollout fidelity
# of a converged run can miss its threshold by ~3e-7
DEFAULT_SOLVER = {"tol_feas": 1e-10}


class ConfigError(ValueError):
    """Malformed config; ``field`` names the offending entry, ``line`` its JSON line when known."""

    def __init__(self, message: str, field: str = "", line: int | None = None, source: str = ""):
        self.message = message
        self.field = field
        self.line = line
        self.source = source
        where = source
        if line is not None:
            where += f":{line}"
        prefix = f"{where}: " if where else ""
        if field:
            prefix += f"field '{field}': "
        super().__init__(prefix + message)


@dataclass(frozen=True)
class Sweep:
    param: str
    values: tuple[float, ...]


@dataclass
class ExperimentConfig:
    scenario: str
    spec: dict[str, Any] = field(default_factory=dict)
    sweep: Sweep | None = None
    seeds: tuple[int, ...] = (0,)
    solver: dict[str, Any] = field(default_factory=dict)
    output_dir: str = "results"
    name: str = ""
    workers: int = 1
    metrics: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        def fail(msg, fld):
            raise ConfigError(msg, fld)

        if self.scenario not in SCENARIO_NAMES:
            fail(f"must be one of {SCENARIO_NAMES}, got {self.scenario!r}", "scenario")
        if not isinstance(self.spec, dict):
            fail("must be an object", "spec")
        if not self.seeds:
            fail("at least one seed is required", "seeds")
        for i, s in enumerate(self.seeds):
            if isinstance(s, bool) or not isinstance(s, int) or s < 0:
                fail(f"seeds must be non-negative integers, got {s!r}", f"seeds[{i}]")
        if len(set(self.seeds)) != len(self.seeds):
            fail("seeds must be distinct", "seeds")
        if self.sweep is not None:
            if self.sweep.param not in SWEEP_PARAMS:
                fail(f"must be one of {SWEEP_PARAMS}, got {self.sweep.param!r}", "sweep.param")
            if not self.sweep.values:
                fail("at least one value is required", "sweep.values")
            for i, v in enumerate(self.sweep.values):
                if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
                    fail(f"sweep values must be finite numbers, got {v!r}", f"sweep.values[{i}]")
                if self.sweep.param in ("n_knots", "order_j") and v != int(v):
                    fail(f"{self.sweep.param} values must be integers", f"sweep.values[{i}]")
        try:
            self.solver_options()
        except (TypeError, ValueError) as exc:
            fail(str(exc), "solver")
        if not isinstance(self.workers, int) or self.workers < 1:
            fail("must be a positive integer", "workers")
        if set(self.metrics) - {"oversample"}:
            fail(f"unknown keys {sorted(set(self.metrics) - {'oversample'})}", "metrics")
        try:
            self.base_spec()
        except (TypeError, ValueError, KeyError) as exc:
            fail(str(exc), "spec")

    @property
    def label(self) -> str:
        return self.name or self.scenario

    def solver_options(self) -> SolverOptions:
        return SolverOptions.from_dict({**DEFAULT_SOLVER, **self.solver})

    def base_spec(self) -> ProblemSpec:
        return build_scenario(self.scenario, self.spec)

    def sweep_values(self) -> list[float | None]:
        return list(self.sweep.values) if self.sweep is not None else [None]

    def spec_for(self, value: float | None) -> ProblemSpec:
        """The base spec with the sweep parameter set to ``value``.

        Knot sweeps keep the duration fixed, so ``dt`` is rescaled.
        """
        spec = self.base_spec()
        if value is None:
            return spec
        p = self.sweep.param
        if p == "n_knots":
            n = int(value)
            return spec.with_(n_knots=n, dt=spec.t_f / (n - 1))
        if p == "order_j":
            return spec.with_(order_j=int(value))
        return spec.with_(**{p: float(value)})

    def to_dict(self) -> dict[str, Any]:
        return {
            "scenario": self.scenario,
            "name": self.name,
            "spec": self.spec,
            "sweep": None if self.sweep is None else {"param": self.sweep.param, "values": list(self.sweep.values)},
            "seeds": list(self.seeds),
            "solver": self.solver,
            "output_dir": self.output_dir,
            "workers": self.workers,
            "metrics": self.metrics,
        }

    @classmethod
    def from_dict(cls, d: Any, source: str = "", lines: dict[str, int] | None = None) -> "ExperimentConfig":
        lines = lines or {}

        def fail(msg, fld):
            raise ConfigError(msg, fld, lines.get(fld.split(".")[0]), source)

        if not isinstance(d, dict):
            raise ConfigError("top level must be a JSON object", source=source)
        unknown = set(d) - TOP_LEVEL
        if unknown:
            fail(f"unknown key(s) {sorted(unknown)}", sorted(unknown)[0])
        if "scenario" not in d:
            raise ConfigError("missing required key", "scenario", source=source)
        sweep = d.get("sweep")
        if sweep is not None:
            if not isinstance(sweep, dict) or set(sweep) != {"param", "values"}:
                fail("must be an object with exactly 'param' and 'values'", "sweep")
            if not isinstance(sweep["values"], list):
                fail("must be a list", "sweep.values")
            sweep = Sweep(sweep["param"], tuple(sweep["values"]))
        seeds = d.get("seeds", list(DEFAULT_SEEDS.get(d["scenario"], (0,))))
        if not isinstance(seeds, list):
            fail("must be a list of integers", "seeds")
        for key, kind in (("spec", dict), ("solver", dict), ("metrics", dict), ("output_dir", str), ("name", str)):
            if key in d and not isinstance(d[key], kind):
                fail(f"must be a {'JSON object' if kind is dict else 'string'}", key)
        try:
            return cls(
                scenario=d["scenario"],
                spec=d.get("spec", {}),
                sweep=sweep,
                seeds=tuple(seeds),
                solver=d.get("solver", {}),
                output_dir=d.get("output_dir", "results"),
                name=d.get("name", ""),
                workers=d.get("workers", 1),
                metrics=d.get("metrics", {}),
            )
        except ConfigError as exc:
            top = exc.field.split(".")[0].split("[")[0]
            raise ConfigError(exc.message, exc.field, lines.get(top), source) from None


def _key_lines(text: str) -> dict[str, int]:
    """Line number of each top-level key's first occurrence (best effort)."""
    out = {}
    depth = 0
    for n, line in enumerate(text.splitlines(), 1):
        stripped = line.strip()
        if depth == 1 and stripped.startswith('"'):
            key = stripped[1:].split('"', 1)[0]
            out.setdefault(key, n)
        depth += line.count("{") + line.count("[") - line.count("}") - line.count("]")
    return out


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", source=str(path)) from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc.msg} (column {exc.colno})", line=exc.lineno, source=str(path)) from exc
    return ExperimentConfig.from_dict(data, str(path), _key_lines(text))
