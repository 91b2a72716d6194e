"""Controlled closed-system dynamics under a zero-order hold.

Controls are piecewise constant on ``N - 1`` intervals of width ``dt``
between ``N`` knot points, so the gate duration is ``(N - 1) * dt``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .algebra import (
    PauliString,
    SpectralPropagator,
    dagger,
    expm,
    expm_frechet,
    is_hermitian,
    is_unitary,
    pauli_string_matrix,
)

__all__ = [
    "ControlSystem",
    "ControlTrajectory",
    "ErrorModel",
    "GateTarget",
    "UnitaryTrajectory",
    "adjoint_rollout",
    "fidelity",
    "hamiltonian_at",
    "rollout",
    "step_propagator",
]


@dataclass
class ControlSystem:
    """``H(u) = H0 + sum_j u_j H_j`` with Hermitian drift and controls."""

    drift: np.ndarray
    controls: list[np.ndarray]
    labels: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.drift = np.asarray(self.drift, dtype=complex)
        self.controls = [np.asarray(c, dtype=complex) for c in self.controls]
        d = self.drift.shape[0]
        if self.drift.shape != (d, d):
            raise ValueError("drift must be square")
        for k, op in enumerate([self.drift, *self.controls]):
            if op.shape != (d, d):
                raise ValueError(f"operator {k} has shape {op.shape}, expected {(d, d)}")
            if not is_hermitian(op, 1e-12):
                raise ValueError(f"operator {k} is not Hermitian")
        if not self.labels:
            self.labels = [f"u{j}" for j in range(len(self.controls))]
        if len(self.labels) != len(self.controls):
            raise ValueError("one label per control operator is required")
        self._stack = np.array(self.controls) if self.controls else np.zeros((0, d, d), complex)

    @property
    def dim(self) -> int:
        return self.drift.shape[0]

    @property
    def n_controls(self) -> int:
        return len(self.controls)

    @property
    def control_stack(self) -> np.ndarray:
        return self._stack

    def hamiltonians(self, u: np.ndarray) -> np.ndarray:
        """Batched ``H(u_k)`` for control rows ``u`` of shape ``(K, J)``."""
        u = np.atleast_2d(np.asarray(u, dtype=float))
        if u.shape[-1] != self.n_controls:
            raise ValueError(f"expected {self.n_controls} control values, got {u.shape[-1]}")
        return self.drift + np.einsum("kj,jab->kab", u, self._stack)


@dataclass
class ControlTrajectory:
    """Knot-point controls ``u``, velocities ``du`` and per-interval accelerations ``ddu``."""

    u: np.ndarray
    du: np.ndarray
    ddu: np.ndarray
    dt: float

    def __post_init__(self):
        self.u = np.atleast_2d(np.asarray(self.u, dtype=float))
        self.du = np.atleast_2d(np.asarray(self.du, dtype=float))
        self.ddu = np.asarray(self.ddu, dtype=float).reshape(-1, self.u.shape[1])
        self.dt = float(self.dt)
        N, J = self.u.shape
        if N < 2:
            raise ValueError("a trajectory needs at least two knot points")
        if self.du.shape != (N, J) or self.ddu.shape != (N - 1, J):
            raise ValueError("inconsistent u / du / ddu shapes")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        for name in ("u", "du", "ddu"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"{name} has non-finite entries")

    @classmethod
    def from_controls(cls, u: np.ndarray, dt: float) -> "ControlTrajectory":
        """Derive velocities and accelerations from ``u`` by forward differences."""
        u = np.atleast_2d(np.asarray(u, dtype=float))
        du = np.empty_like(u)
        du[:-1] = np.diff(u, axis=0) / dt
        du[-1] = du[-2]
        ddu = np.diff(du, axis=0) / dt
        return cls(u, du, ddu, dt)

    @property
    def n_knots(self) -> int:
        return self.u.shape[0]

    @property
    def n_controls(self) -> int:
        return self.u.shape[1]

    @property
    def t_f(self) -> float:
        return (self.n_knots - 1) * self.dt

    @property
    def interval_controls(self) -> np.ndarray:
        """Controls held on each of the ``N - 1`` intervals."""
        return self.u[:-1]

    def chain_residual(self) -> float:
        """Max violation of ``u_{k+1} = u_k + dt du_k`` and ``du_{k+1} = du_k + dt ddu_k``."""
        r1 = self.u[1:] - self.u[:-1] - self.dt * self.du[:-1]
        r2 = self.du[1:] - self.du[:-1] - self.dt * self.ddu
        return float(max(np.abs(r1).max(), np.abs(r2).max()))


@dataclass
class UnitaryTrajectory:
    knots: np.ndarray
    dt: float

    @property
    def n_knots(self) -> int:
        return self.knots.shape[0]

    @property
    def t_f(self) -> float:
        return (self.n_knots - 1) * self.dt

    @property
    def final(self) -> np.ndarray:
        return self.knots[-1]


@dataclass
class GateTarget:
    goal: np.ndarray
    name: str = ""

    def __post_init__(self):
        self.goal = np.asarray(self.goal, dtype=complex)
        if not is_unitary(self.goal, 1e-10):
            raise ValueError("target gate is not unitary")

    @property
    def dim(self) -> int:
        return self.goal.shape[0]


@dataclass
class ErrorModel:
    """Weighted error channels, or an explicit per-interval error sequence.

    Each channel is an independent quasi-static error source with strength
    ``weight``.  Susceptibilities of a multi-channel model are summed over
    channels.  ``sequence`` (shape ``(N - 1, d, d)``) replaces the channels
    with a single time-dependent error held constant on each interval.
    """

    channels: list[tuple[np.ndarray, float]] = field(default_factory=list)
    labels: list[str] = field(default_factory=list)
    sequence: np.ndarray | None = None

    def __post_init__(self):
        self.channels = [(np.asarray(op, dtype=complex), float(w)) for op, w in self.channels]
        for op, _ in self.channels:
            if not is_hermitian(op, 1e-12):
                raise ValueError("error channel operator is not Hermitian")
        if not self.labels:
            self.labels = [f"E{c}" for c in range(len(self.channels))]
        if self.sequence is not None:
            self.sequence = np.asarray(self.sequence, dtype=complex)
            if self.sequence.ndim != 3:
                raise ValueError("error sequence must have shape (K, d, d)")
            for op in self.sequence:
                if not is_hermitian(op, 1e-12):
                    raise ValueError("error sequence contains a non-Hermitian operator")
            if not self.labels:
                self.labels = ["E(t)"]
        if not self.channels and self.sequence is None:
            raise ValueError("an error model needs at least one channel or a sequence")

    @classmethod
    def static(cls, op: np.ndarray, weight: float = 1.0, label: str = "E") -> "ErrorModel":
        return cls([(op, weight)], [label])

    @classmethod
    def from_paulis(cls, weights: dict[str, float]) -> "ErrorModel":
        """Channels from Pauli labels, e.g. ``{"ZI": 1.0, "IZ": 1.0, "ZZ": 1.0}``."""
        chans = [(pauli_string_matrix(PauliString.from_label(l)), w) for l, w in weights.items()]
        return cls(chans, list(weights))

    @classmethod
    def time_dependent(cls, sequence: np.ndarray, label: str = "E(t)") -> "ErrorModel":
        return cls([], [label], sequence=sequence)

    @property
    def is_static(self) -> bool:
        return self.sequence is None

    @property
    def dim(self) -> int:
        if self.sequence is not None:
            return self.sequence.shape[-1]
        return self.channels[0][0].shape[0]

    def scaled(self, c: float) -> "ErrorModel":
        if self.sequence is not None:
            return ErrorModel.time_dependent(c * self.sequence, self.labels[0])
        return ErrorModel([(op, c * w) for op, w in self.channels], list(self.labels))

    def channel_sequences(self, n_intervals: int) -> np.ndarray:
        """Per-channel weighted operators per interval, shape ``(C, N - 1, d, d)``."""
        if self.sequence is not None:
            seq = self.sequence
            if seq.shape[0] == n_intervals + 1:
                seq = seq[:-1]
            if seq.shape[0] != n_intervals:
                raise ValueError(f"error sequence has {seq.shape[0]} entries, need {n_intervals}")
            return seq[None]
        ops = np.array([w * op for op, w in self.channels])
        return np.broadcast_to(ops[:, None], (len(ops), n_intervals) + ops.shape[1:])

    def combined_sequence(self, n_intervals: int) -> np.ndarray:
        """Sum of all weighted channels per interval, shape ``(N - 1, d, d)``."""
        return self.channel_sequences(n_intervals).sum(axis=0)


def hamiltonian_at(sys: ControlSystem, u_k: Sequence[float]) -> np.ndarray:
    u_k = np.asarray(u_k, dtype=float)
    if u_k.shape != (sys.n_controls,):
        raise ValueError(f"expected {sys.n_controls} control values, got shape {u_k.shape}")
    return sys.hamiltonians(u_k[None])[0]


def step_propagator(sys: ControlSystem, u_k: Sequence[float], dt: float) -> np.ndarray:
    if not dt > 0:
        raise ValueError("dt must be positive")
    return expm(-1j * dt * hamiltonian_at(sys, u_k))


def _propagate(props: np.ndarray) -> np.ndarray:
    n, d = props.shape[0], props.shape[-1]
    knots = np.empty((n + 1, d, d), dtype=complex)
    knots[0] = np.eye(d)
    for k in range(n):
        knots[k + 1] = props[k] @ knots[k]
    return knots


def rollout(sys: ControlSystem, traj: ControlTrajectory) -> UnitaryTrajectory:
    """Compose interval propagators from ``U_1 = I``."""
    H = sys.hamiltonians(traj.interval_controls)
    props = SpectralPropagator(H, traj.dt).propagator
    return UnitaryTrajectory(_propagate(props), traj.dt)


def fidelity(U_N: np.ndarray, target: GateTarget | np.ndarray) -> float:
    G = target.goal if isinstance(target, GateTarget) else np.asarray(target)
    if U_N.shape != G.shape:
        raise ValueError(f"dimension mismatch: {U_N.shape} vs {G.shape}")
    return float(abs(np.trace(dagger(U_N) @ G)) / G.shape[0])


def adjoint_rollout(
    sys: ControlSystem, traj: ControlTrajectory, err: ErrorModel
) -> tuple[UnitaryTrajectory, np.ndarray]:
    """Joint rollout of ``U_k`` and ``dU_k/d eps`` at ``eps = 0``.

    Each interval applies ``exp(-i dt [[H_k, 0], [E_k, H_k]])`` to the stacked
    state ``[U_k; dU_k]``; the error is the sum of all weighted channels.
    """
    n = traj.n_knots - 1
    H = sys.hamiltonians(traj.interval_controls)
    E = err.combined_sequence(n)
    P, dP = expm_frechet(-1j * traj.dt * H, -1j * traj.dt * E)
    d = sys.dim
    U = np.empty((n + 1, d, d), dtype=complex)
    dU = np.empty((n + 1, d, d), dtype=complex)
    U[0] = np.eye(d)
    dU[0] = 0.0
    for k in range(n):
        U[k + 1] = P[k] @ U[k]
        dU[k + 1] = P[k] @ dU[k] + dP[k] @ U[k]
    return UnitaryTrajectory(U, traj.dt), dU
