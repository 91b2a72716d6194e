"""Summaries built from result rows and saved solutions."""
from __future__ import annotations

import csv
import math
from collections import defaultdict
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from ..dynamics import ControlSystem, ControlTrajectory
from ..metrics import pauli_susceptibility_scan
from .runner import ResultRow, solution_trajectory
from .scenarios import spec_from_dict

__all__ = [
    "EMPTY_FRONTIER",
    "FrontierPoint",
    "ParetoReport",
    "PauliRow",
    "paired_comparison",
    "report_pareto",
    "report_pauli_scan",
    "write_table",
]

EMPTY_FRONTIER = "empty-frontier"
# slack on the fidelity threshold when deciding feasibility from a CSV
FIDELITY_SLACK = 1e-8


@dataclass(frozen=True)
class FrontierPoint:
    sweep_value: float
    n_feasible: int
    n_total: int
    mean_E_V: float
    min_E_V: float


@dataclass
class ParetoReport:
    points: list[FrontierPoint]
    n_rows: int

    @property
    def empty(self) -> bool:
        return not self.points

    def table(self) -> list[dict[str, Any]]:
        if self.empty:
            return [{"status": EMPTY_FRONTIER, "n_rows": self.n_rows}]
        return [{f.name: getattr(p, f.name) for f in fields(p)} for p in self.points]


def report_pareto(rows: Sequence[ResultRow], fidelity_min: float | None = None) -> ParetoReport:
    """Mean and minimum ``E_V`` per sweep value over feasible rows.

    A row is feasible when it converged and its rollout fidelity meets
    ``fidelity_min`` (if given).  Sweep values without feasible rows are
    dropped; if nothing is feasible the report is empty.
    """
    axes = {r.sweep_param for r in rows}
    if len(axes) > 1:
        raise ValueError(f"rows mix sweep parameters {sorted(axes)}")
    groups: dict[float, list[ResultRow]] = defaultdict(list)
    for r in rows:
        groups[r.sweep_value].append(r)
    points = []
    for value in sorted(groups, key=lambda v: (math.isnan(v), v)):
        group = groups[value]
        ok = [
            r.E_V
            for r in group
            if r.status == "converged"
            and math.isfinite(r.E_V)
            and (fidelity_min is None or r.fidelity >= fidelity_min - FIDELITY_SLACK)
        ]
        if ok:
            points.append(FrontierPoint(value, len(ok), len(group), float(np.mean(ok)), float(min(ok))))
    return ParetoReport(points, len(rows))


@dataclass(frozen=True)
class PauliRow:
    label: str
    E_V: float
    targeted: bool


def report_pauli_scan(
    solution: dict[str, Any] | tuple[ControlSystem, ControlTrajectory],
    targeted: Iterable[str] | None = None,
) -> list[PauliRow]:
    """Adjoint susceptibility to every two-qubit Pauli string (15 rows).

    ``solution`` is a loaded solution file or a ``(system, trajectory)`` pair.
    Strings named in ``targeted`` (by default the solution's error channels)
    are flagged.
    """
    if isinstance(solution, dict):
        spec = spec_from_dict(solution["spec"])
        sys, traj = spec.system, solution_trajectory(solution)
        if targeted is None and spec.error is not None:
            targeted = spec.error.labels
    else:
        sys, traj = solution
    if sys.dim != 4:
        raise ValueError(f"the Pauli scan needs a two-qubit solution, got dimension {sys.dim}")
    flagged = set(targeted or ())
    return [PauliRow(p.label, float(v), p.label in flagged) for p, v in pauli_susceptibility_scan(sys, traj, 2)]


def paired_comparison(a: Sequence[ResultRow], b: Sequence[ResultRow], key: str = "E_V") -> dict[str, Any]:
    """Match rows on (sweep value, seed) and count where ``a`` has the lower ``key``.

    Only pairs where both sides converged are compared.
    """
    index = {(r.sweep_value, r.seed): r for r in b}
    pairs = []
    for r in a:
        other = index.get((r.sweep_value, r.seed))
        if other is None:
            continue
        both = r.status == "converged" and other.status == "converged"
        pairs.append(
            {
                "sweep_value": r.sweep_value,
                "seed": r.seed,
                "a": getattr(r, key),
                "b": getattr(other, key),
                "a_status": r.status,
                "b_status": other.status,
                "a_lower": bool(both and getattr(r, key) < getattr(other, key)),
                "compared": both,
            }
        )
    return {
        "key": key,
        "pairs": pairs,
        "n_compared": sum(p["compared"] for p in pairs),
        "n_a_lower": sum(p["a_lower"] for p in pairs),
    }


def write_table(records: Sequence[dict[str, Any]] | Sequence[Any], path: str | Path) -> Path:
    """Write dicts (or dataclass instances) as CSV with the first record's keys as header."""
    recs = [r if isinstance(r, dict) else {f.name: getattr(r, f.name) for f in fields(r)} for r in records]
    path = Path(path)
    with open(path, "w", newline="") as fh:
        if recs:
            w = csv.DictWriter(fh, fieldnames=list(recs[0]), lineterminator="\n")
            w.writeheader()
            w.writerows(recs)
    return path
