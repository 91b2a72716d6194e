"""Built-in gate design scenarios and JSON round-tripping of problem specs."""
from __future__ import annotations

from typing import Any

import numpy as np

from ..algebra import expm, pauli_string_matrix
from ..dynamics import ControlSystem, ErrorModel, GateTarget
from ..trajopt import ProblemSpec

__all__ = [
    "HADAMARD",
    "ISWAP",
    "ISWAP_ERROR",
    "DEFAULT_SEEDS",
    "SCALAR_FIELDS",
    "SCENARIOS",
    "build_scenario",
    "scenario_hadamard",
    "scenario_iswap",
    "spec_from_dict",
    "spec_to_dict",
]

HADAMARD = np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2)
ISWAP = expm(1j * np.pi / 4 * (pauli_string_matrix("XX") + pauli_string_matrix("YY")))
ISWAP_ERROR = {"ZI": 1.0, "IZ": 1.0, "ZZ": 1.0}

# seed batch used when a config does not list seeds
DEFAULT_SEEDS = {"hadamard": tuple(range(25)), "iswap": tuple(range(16)), "custom": (0,)}

# ProblemSpec fields that JSON configs may set directly
SCALAR_FIELDS = (
    "n_knots",
    "dt",
    "objective",
    "order_j",
    "Q",
    "R",
    "infidelity_weight",
    "fidelity_min",
    "u_bound",
    "du_bound",
    "ddu_bound",
    "formulation",
    "constrain_controls",
    "init_scale",
)


def _apply(spec: ProblemSpec, params: dict[str, Any]) -> ProblemSpec:
    params = dict(params)
    if "error" in params:
        params["error"] = _error_from_json(params["error"])
    unknown = set(params) - set(SCALAR_FIELDS) - {"error"}
    if unknown:
        raise ValueError(f"unknown spec fields: {sorted(unknown)}")
    return spec.with_(**params)


def scenario_hadamard(**params) -> ProblemSpec:
    """Single-qubit Hadamard with controls ``u_x X + u_y Y + u_z Z`` and error ``Z``.

    Defaults: 40 knots spaced 0.8 apart, fidelity at least 0.9999 and the
    adjoint objective.  Keyword arguments override any scalar spec field;
    ``error`` accepts a ``{pauli_label: weight}`` mapping.
    """
    paulis = [pauli_string_matrix(p) for p in "XYZ"]
    spec = ProblemSpec(
        system=ControlSystem(np.zeros((2, 2)), paulis, ["x", "y", "z"]),
        target=GateTarget(HADAMARD, "hadamard"),
        n_knots=40,
        dt=0.8,
        objective="adjoint",
        error=ErrorModel.from_paulis({"Z": 1.0}),
        Q=1.0,
        R=1.0,
        fidelity_min=0.9999,
    )
    return _apply(spec, params)


def scenario_iswap(**params) -> ProblemSpec:
    """Two-qubit iSWAP with local Pauli drives and a tunable ``XX + YY`` coupling.

    Seven controls: ``X, Y, Z`` on each qubit and the coupling ``g``.  The
    error model has unit-weight channels ``Z1``, ``Z2`` and ``Z1 Z2``.
    """
    labels = ["XI", "YI", "ZI", "IX", "IY", "IZ"]
    ops = [pauli_string_matrix(p) for p in labels]
    ops.append(pauli_string_matrix("XX") + pauli_string_matrix("YY"))
    spec = ProblemSpec(
        system=ControlSystem(np.zeros((4, 4)), ops, [*labels, "g"]),
        target=GateTarget(ISWAP, "iswap"),
        n_knots=40,
        dt=0.8,
        objective="adjoint",
        error=ErrorModel.from_paulis(ISWAP_ERROR),
        Q=1.0,
        R=0.01,
        fidelity_min=0.9999,
        ddu_bound=1.39,
    )
    return _apply(spec, params)


SCENARIOS = {"hadamard": scenario_hadamard, "iswap": scenario_iswap}


def build_scenario(name: str, params: dict[str, Any]) -> ProblemSpec:
    if name == "custom":
        return spec_from_dict(params)
    try:
        factory = SCENARIOS[name]
    except KeyError:
        raise ValueError(f"unknown scenario {name!r}") from None
    return factory(**params)


# --------------------------------------------------------------------------
# JSON encoding
# --------------------------------------------------------------------------


def _matrix_to_json(A: np.ndarray) -> dict[str, list]:
    A = np.asarray(A, dtype=complex)
    return {"re": A.real.tolist(), "im": A.imag.tolist()}


def _matrix_from_json(obj) -> np.ndarray:
    """A matrix given as ``{"re", "im"}`` lists, a real nested list or a Pauli label."""
    if isinstance(obj, str):
        return pauli_string_matrix(obj)
    if isinstance(obj, dict):
        return np.asarray(obj["re"], dtype=float) + 1j * np.asarray(obj.get("im", 0.0), dtype=float)
    return np.asarray(obj, dtype=complex)


def _error_to_json(err: ErrorModel | None):
    if err is None:
        return None
    if err.sequence is not None:
        return {"sequence": [_matrix_to_json(E) for E in err.sequence], "labels": err.labels}
    return {
        "channels": [
            {"label": l, "weight": w, "operator": _matrix_to_json(op)}
            for l, (op, w) in zip(err.labels, err.channels)
        ]
    }


def _error_from_json(obj) -> ErrorModel | None:
    if obj is None or isinstance(obj, ErrorModel):
        return obj
    if "channels" in obj:
        chans = obj["channels"]
        return ErrorModel(
            [(_matrix_from_json(c["operator"]), c.get("weight", 1.0)) for c in chans],
            [c.get("label", f"E{i}") for i, c in enumerate(chans)],
        )
    if "sequence" in obj:
        seq = np.array([_matrix_from_json(E) for E in obj["sequence"]])
        return ErrorModel.time_dependent(seq, *obj.get("labels", ["E(t)"])[:1])
    # shorthand {pauli_label: weight}
    return ErrorModel.from_paulis({str(k): float(v) for k, v in obj.items()})


def spec_to_dict(spec: ProblemSpec) -> dict[str, Any]:
    """Complete, JSON-ready description of a spec."""
    out = {name: getattr(spec, name) for name in SCALAR_FIELDS}
    out["system"] = {
        "drift": _matrix_to_json(spec.system.drift),
        "controls": [_matrix_to_json(H) for H in spec.system.controls],
        "labels": list(spec.system.labels),
    }
    out["target"] = {"goal": _matrix_to_json(spec.target.goal), "name": spec.target.name}
    out["error"] = _error_to_json(spec.error)
    return out


def spec_from_dict(d: dict[str, Any]) -> ProblemSpec:
    """Inverse of :func:`spec_to_dict`; operators may also be Pauli labels."""
    missing = [k for k in ("system", "target", "n_knots", "dt") if k not in d]
    if missing:
        raise ValueError(f"custom spec is missing {missing}")
    unknown = set(d) - set(SCALAR_FIELDS) - {"system", "target", "error"}
    if unknown:
        raise ValueError(f"unknown spec fields: {sorted(unknown)}")
    sysd = d["system"]
    controls = [_matrix_from_json(H) for H in sysd["controls"]]
    dim = controls[0].shape[0] if controls else _matrix_from_json(sysd["drift"]).shape[0]
    drift = _matrix_from_json(sysd["drift"]) if "drift" in sysd else np.zeros((dim, dim))
    system = ControlSystem(drift, controls, list(sysd.get("labels", [])))
    tgt = d["target"]
    target = GateTarget(_matrix_from_json(tgt["goal"]), tgt.get("name", ""))
    scalars = {k: d[k] for k in SCALAR_FIELDS if k in d}
    return ProblemSpec(system=system, target=target, error=_error_from_json(d.get("error")), **scalars)
