"""Seeded batch runs: solve every (sweep value, seed) cell and cross-evaluate it.

Outputs in ``config.output_dir``, each prefixed with ``config.label``:

* ``<label>.csv``: one :class:`ResultRow` per cell, in sweep-then-seed order.
* ``<label>_iterates.csv``: per-iteration control maxima, only when the
  solver option ``record_iterates`` is set.
* ``<label>_run.json``: config, solver options and build description.
* ``solutions/<label>_v<i>_s<seed>.json``: controls, states (direct runs),
  the full spec and the metric block of every solved cell.
"""
from __future__ import annotations

import csv
import json
import logging
import math
import subprocess
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Any

import numpy as np

from .. import __version__
from ..dynamics import ControlTrajectory, fidelity, rollout, step_propagator
from ..metrics import (
    susceptibility_adjoint,
    susceptibility_fine,
    susceptibility_toggling,
    susceptibility_universal,
)
from ..trajopt import ProblemSpec, analyze_iterates, optimize
from .config import ConfigError, ExperimentConfig
from .scenarios import _matrix_from_json, _matrix_to_json, spec_from_dict, spec_to_dict

__all__ = [
    "COLUMNS",
    "ResultRow",
    "RunResult",
    "cross_evaluate",
    "load_solution",
    "read_results",
    "run",
    "solution_trajectory",
    "verify_solution",
]

log = logging.getLogger(__name__)

METRIC_KEYS = ("fidelity", "E_fine", "E_V", "E_T0", "E_T4", "E_U0")
ITERATE_COLUMNS = ("sweep_value", "seed", "iteration", "max_du", "max_ddu", "objective", "fidelity")


@dataclass
class ResultRow:
    scenario: str
    objective: str
    formulation: str
    seed: int
    sweep_param: str
    sweep_value: float
    status: str
    fidelity: float
    E_fine: float
    E_V: float
    E_T0: float
    E_T4: float
    E_U0: float
    max_du: float
    max_ddu: float
    iterations: int
    wall_time: float
    message: str = ""

    @property
    def solved(self) -> bool:
        return self.status not in ("error",)

    def to_csv(self) -> list[str]:
        return [_fmt(getattr(self, f.name)) for f in fields(self)]

    @classmethod
    def from_csv(cls, rec: dict[str, str]) -> "ResultRow":
        kw = {}
        for f in fields(cls):
            raw = rec[f.name]
            if f.type == "int":
                kw[f.name] = int(raw)
            elif f.type == "float":
                kw[f.name] = float(raw) if raw != "" else math.nan
            else:
                kw[f.name] = raw
        return cls(**kw)


COLUMNS = tuple(f.name for f in fields(ResultRow))


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


@dataclass
class RunResult:
    rows: list[ResultRow]
    csv_path: Path
    iterates_path: Path | None
    solution_paths: list[Path | None]


# --------------------------------------------------------------------------
# evaluation
# --------------------------------------------------------------------------


def cross_evaluate(spec: ProblemSpec, traj: ControlTrajectory, oversample: int | None = None) -> dict[str, float]:
    """Rollout fidelity and every susceptibility estimator for ``spec``'s error model."""
    sys, err = spec.system, spec.error
    U = rollout(sys, traj).knots
    out = {"fidelity": fidelity(U[-1], spec.target)}
    if err is None:
        out.update(E_fine=math.nan, E_V=math.nan, E_T0=math.nan, E_T4=math.nan)
    else:
        out["E_fine"] = susceptibility_fine(sys, traj, err, oversample)
        out["E_V"] = susceptibility_adjoint(sys, traj, err)
        out["E_T0"] = susceptibility_toggling(sys, traj, err, 0, U)
        out["E_T4"] = susceptibility_toggling(sys, traj, err, 4, U)
    out["E_U0"] = susceptibility_universal(sys, traj, 0, U)
    return {k: float(v) for k, v in out.items()}


def solution_trajectory(sol: dict[str, Any]) -> ControlTrajectory:
    c = sol["controls"]
    return ControlTrajectory(np.array(c["u"]), np.array(c["du"]), np.array(c["ddu"]), sol["dt"])


def load_solution(path: str | Path) -> dict[str, Any]:
    return json.loads(Path(path).read_text())


def verify_solution(sol: dict[str, Any]) -> dict[str, float]:
    """Re-evaluate every constraint of a saved solution from scratch.

    Returns the individual violations and their maximum ``max_violation``.
    Direct solutions are checked against their stored states (the problem
    as posed); indirect ones against a fresh rollout.
    """
    spec = spec_from_dict(sol["spec"])
    traj = solution_trajectory(sol)
    out = {"chain_residual": traj.chain_residual()}
    if sol.get("states") is not None:
        U = _matrix_from_json(sol["states"])
        P = np.array([step_propagator(spec.system, u_k, spec.dt) for u_k in traj.interval_controls])
        out["dynamics_residual"] = float(np.abs(U[1:] - P @ U[:-1]).max())
        out["initial_state_residual"] = float(np.abs(U[0] - np.eye(spec.system.dim)).max())
        U_N = U[-1]
    else:
        out["dynamics_residual"] = 0.0
        out["initial_state_residual"] = 0.0
        U_N = rollout(spec.system, traj).final
    box = 0.0
    if spec.constrain_controls:
        for name, bound in (("u", spec.u_bound), ("du", spec.du_bound), ("ddu", spec.ddu_bound)):
            if bound is not None:
                box = max(box, float(np.abs(getattr(traj, name)).max() - bound))
    out["box_violation"] = max(box, 0.0)
    fid = 0.0
    if spec.fidelity_min is not None:
        fid = max(0.0, spec.fidelity_min**2 - fidelity(U_N, spec.target) ** 2)
    out["fidelity_violation"] = fid
    out["max_violation"] = max(out.values())
    return out


# --------------------------------------------------------------------------
# batch execution
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class _Cell:
    index: int
    value: float | None
    seed: int


def _solve_cell(config: ExperimentConfig, cell: _Cell):
    """Returns ``(row, solution or None, iterate rows)``; never raises."""
    p = config.sweep.param if config.sweep else ""
    value = math.nan if cell.value is None else float(cell.value)
    row = dict(
        scenario=config.scenario,
        objective="",
        formulation="",
        seed=cell.seed,
        sweep_param=p,
        sweep_value=value,
        status="error",
        **{k: math.nan for k in METRIC_KEYS},
        max_du=math.nan,
        max_ddu=math.nan,
        iterations=0,
        wall_time=0.0,
    )
    start = time.perf_counter()
    try:
        spec = config.spec_for(cell.value)
        row.update(objective=spec.objective, formulation=spec.formulation)
        opts = config.solver_options()
        report, traj, layout = optimize(spec, cell.seed, opts)
        metrics = cross_evaluate(spec, traj, config.metrics.get("oversample"))
    except Exception as exc:  # a failed cell must not abort the batch
        log.warning("cell %s seed %d failed: %s", value, cell.seed, exc)
        row.update(message=f"{type(exc).__name__}: {exc}", wall_time=time.perf_counter() - start)
        return ResultRow(**row), None, []
    elapsed = time.perf_counter() - start
    row.update(
        status=report.status,
        message=report.message,
        iterations=report.n_inner,
        max_du=float(np.abs(traj.du).max()),
        max_ddu=float(np.abs(traj.ddu).max()),
        wall_time=elapsed,
        **metrics,
    )
    states = layout.unitaries(report.x) if layout.has_states else None
    solution = {
        "scenario": config.scenario,
        "name": config.label,
        "seed": cell.seed,
        "sweep": {"param": p, "value": cell.value},
        "status": report.status,
        "message": report.message,
        "spec": spec_to_dict(spec),
        "solver": asdict(opts),
        "n_knots": spec.n_knots,
        "dt": spec.dt,
        "controls": {"u": traj.u.tolist(), "du": traj.du.tolist(), "ddu": traj.ddu.tolist()},
        "states": None if states is None else _matrix_to_json(states),
        "metrics": metrics,
        "report": {
            "objective": report.objective,
            "max_violation": report.max_violation,
            "kkt_residual": report.kkt_residual,
            "n_outer": report.n_outer,
            "n_inner": report.n_inner,
        },
    }
    iterates = []
    if opts.record_iterates:
        series = analyze_iterates(report, layout)
        for it in range(len(series["max_du"])):
            iterates.append(
                [value, cell.seed, it]
                + [float(series[k][it]) for k in ("max_du", "max_ddu", "objective", "fidelity")]
            )
    log.info(
        "%s %s=%s seed %d: %s F=%.6f E_V=%.3e (%.1fs)",
        config.label, p or "-", cell.value, cell.seed, report.status,
        metrics["fidelity"], metrics["E_V"], elapsed,
    )
    return ResultRow(**row), solution, iterates


def _solve_cell_packed(args):
    return _solve_cell(*args)


def _build_description() -> str:
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            cwd=Path(__file__).parent,
            capture_output=True,
            text=True,
            timeout=5,
        )
        if out.returncode == 0:
            return f"{__version__} ({out.stdout.strip()})"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def _prepare_output(config: ExperimentConfig) -> Path:
    out = Path(config.output_dir)
    try:
        (out / "solutions").mkdir(parents=True, exist_ok=True)
        probe = out / ".write_test"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise ConfigError(f"output directory is not writable ({exc.strerror})", "output_dir") from exc
    return out


def run(config: ExperimentConfig) -> RunResult:
    """Solve every cell of ``config`` and write the result files."""
    out = _prepare_output(config)
    cells = [
        _Cell(i, v, s) for i, v in enumerate(config.sweep_values()) for s in config.seeds
    ]
    jobs = [(config, c) for c in cells]
    if config.workers > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(_solve_cell_packed, jobs))
    else:
        results = [_solve_cell(*job) for job in jobs]

    label = config.label
    csv_path = out / f"{label}.csv"
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COLUMNS)
        for row, _, _ in results:
            w.writerow(row.to_csv())

    iterates_path = None
    if config.solver_options().record_iterates:
        iterates_path = out / f"{label}_iterates.csv"
        with open(iterates_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(ITERATE_COLUMNS)
            for _, _, its in results:
                w.writerows([[_fmt(v) for v in r] for r in its])

    paths: list[Path | None] = []
    for cell, (_, sol, _) in zip(cells, results):
        if sol is None:
            paths.append(None)
            continue
        path = out / "solutions" / f"{label}_v{cell.index}_s{cell.seed}.json"
        path.write_text(json.dumps(sol, indent=1))
        paths.append(path)

    meta = {
        "config": config.to_dict(),
        "solver_options": asdict(config.solver_options()),
        "build": _build_description(),
        "columns": list(COLUMNS),
        "n_rows": len(results),
    }
    (out / f"{label}_run.json").write_text(json.dumps(meta, indent=1))
    return RunResult([r for r, _, _ in results], csv_path, iterates_path, paths)


def read_results(path: str | Path) -> list[ResultRow]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != COLUMNS:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        return [ResultRow.from_csv(rec) for rec in reader]
