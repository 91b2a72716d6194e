"""Quantum gate design problems as nonlinear programs.

Two formulations share one objective::

    Q * robustness(U, u) + R * regularization(u, du, ddu) + w * (||U_N||^2 / d - F^2)

* ``direct`` keeps the unitaries ``U_1 ... U_N`` (real and imaginary parts)
  as decision variables and imposes ``U_{k+1} = exp(-i H(u_k) dt) U_k`` as
  equality constraints.
* ``indirect`` keeps only the controls and obtains ``U_k`` by rolling the
  dynamics out; gradients are accumulated backwards through the rollout.

In both, ``u``, ``du`` and ``ddu`` are variables tied by the linear chain
``u_{k+1} = u_k + dt du_k`` and ``du_{k+1} = du_k + dt ddu_k``, so derivative
bounds are plain boxes.  The fidelity threshold is imposed smoothly as
``F_min^2 - F^2 <= 0`` with ``F^2 = |Tr(U_N^dag G)|^2 / d^2``.  The
infidelity penalty reduces to ``1 - F^2`` whenever ``U_N`` is unitary.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Any

import numpy as np
import scipy.sparse

from .algebra import SpectralPropagator, dagger
from .dynamics import (
    ControlSystem,
    ControlTrajectory,
    ErrorModel,
    GateTarget,
    fidelity,
    rollout,
)
from .metrics import MAX_ORDER, adjoint_terms, toggling_terms, universal_terms
from .nlp import Constraint, NLPProblem, SolveReport, SolverOptions, solve

__all__ = [
    "OBJECTIVES",
    "ProblemSpec",
    "VariableLayout",
    "analyze_iterates",
    "build",
    "build_direct",
    "build_indirect",
    "dynamics_residual",
    "initialize",
    "optimize",
    "regularization",
]

OBJECTIVES = ("none", "toggling", "universal", "adjoint")


@dataclass
class ProblemSpec:
    system: ControlSystem
    target: GateTarget
    n_knots: int
    dt: float
    objective: str = "none"
    order_j: int = 0
    error: ErrorModel | None = None
    Q: float = 1.0
    R: float = 1.0
    infidelity_weight: float = 0.0
    fidelity_min: float | None = None
    u_bound: float | None = None
    du_bound: float | None = None
    ddu_bound: float | None = None
    formulation: str = "direct"
    constrain_controls: bool = True
    # initial amplitude when no amplitude box is set
    init_scale: float = 0.1

    def __post_init__(self):
        if self.objective not in OBJECTIVES:
            raise ValueError(f"objective must be one of {OBJECTIVES}, got {self.objective!r}")
        if self.formulation not in ("direct", "indirect"):
            raise ValueError("formulation must be 'direct' or 'indirect'")
        if self.Q < 0 or self.R < 0 or self.infidelity_weight < 0:
            raise ValueError("objective weights must be non-negative")
        if self.fidelity_min is not None and not 0 < self.fidelity_min <= 1:
            raise ValueError("fidelity_min must lie in (0, 1]")
        if self.n_knots < 2 or not self.dt > 0:
            raise ValueError("need n_knots >= 2 and dt > 0")
        if not 0 <= self.order_j <= MAX_ORDER:
            raise ValueError(f"order_j must lie in [0, {MAX_ORDER}]")
        if self.objective in ("toggling", "adjoint") and self.error is None:
            raise ValueError(f"the {self.objective} objective needs an error model")
        if self.objective == "universal" and self.error is not None and not self.error.is_static:
            raise ValueError("the universal objective only supports quasi-static errors")
        if self.system.dim != self.target.dim:
            raise ValueError("system and target dimensions differ")
        for name in ("u_bound", "du_bound", "ddu_bound"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise ValueError(f"{name} must be positive")

    @property
    def t_f(self) -> float:
        return (self.n_knots - 1) * self.dt

    def with_(self, **changes) -> "ProblemSpec":
        return replace(self, **changes)


@dataclass
class VariableLayout:
    """Flat-vector offsets of each block; ``state`` is empty for the indirect layout."""

    n_knots: int
    n_controls: int
    dim: int
    state: slice
    u: slice
    du: slice
    ddu: slice
    total: int
    spec: ProblemSpec | None = field(default=None, repr=False)

    @classmethod
    def create(cls, n_knots: int, n_controls: int, dim: int, with_states: bool, spec=None):
        N, J, d = n_knots, n_controls, dim
        ns = 2 * N * d * d if with_states else 0
        s = slice(0, ns)
        u = slice(ns, ns + N * J)
        du = slice(u.stop, u.stop + N * J)
        ddu = slice(du.stop, du.stop + (N - 1) * J)
        return cls(N, J, d, s, u, du, ddu, ddu.stop, spec)

    @property
    def has_states(self) -> bool:
        return self.state.stop > self.state.start

    def unitaries(self, x: np.ndarray) -> np.ndarray:
        a = x[self.state].reshape(self.n_knots, self.dim, self.dim, 2)
        return a[..., 0] + 1j * a[..., 1]

    def controls(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        N, J = self.n_knots, self.n_controls
        return x[self.u].reshape(N, J), x[self.du].reshape(N, J), x[self.ddu].reshape(N - 1, J)

    def trajectory(self, x: np.ndarray, dt: float) -> ControlTrajectory:
        u, du, ddu = self.controls(x)
        return ControlTrajectory(u.copy(), du.copy(), ddu.copy(), dt)

    def pack(self, traj: ControlTrajectory, unitaries: np.ndarray | None = None) -> np.ndarray:
        x = np.zeros(self.total)
        x[self.u] = traj.u.ravel()
        x[self.du] = traj.du.ravel()
        x[self.ddu] = traj.ddu.ravel()
        if self.has_states:
            if unitaries is None:
                raise ValueError("the direct layout needs unitaries")
            x[self.state] = np.stack([unitaries.real, unitaries.imag], axis=-1).ravel()
        return x

    def put_state_grad(self, grad: np.ndarray, gU: np.ndarray) -> None:
        grad[self.state] += np.stack([gU.real, gU.imag], axis=-1).ravel()

    def indices(self) -> dict[str, slice]:
        return {"state": self.state, "u": self.u, "du": self.du, "ddu": self.ddu}


# --------------------------------------------------------------------------
# objective pieces
# --------------------------------------------------------------------------


def regularization(traj_or_u, du=None, ddu=None) -> tuple[float, tuple[np.ndarray, np.ndarray, np.ndarray]]:
    """``sum ||u_k||^2 + ||du_k||^2 + ||ddu_k||^2`` and its gradient blocks."""
    if isinstance(traj_or_u, ControlTrajectory):
        u, du, ddu = traj_or_u.u, traj_or_u.du, traj_or_u.ddu
    else:
        u = traj_or_u
    value = float(np.sum(u**2) + np.sum(du**2) + np.sum(ddu**2))
    return value, (2 * u, 2 * du, 2 * ddu)


def _fidelity_sq(U_N: np.ndarray, G: np.ndarray) -> tuple[float, np.ndarray]:
    d = G.shape[0]
    z = np.vdot(U_N, G)
    return float(abs(z) ** 2 / d**2), 2 * np.conj(z) * G / d**2


def _controls_cotangent(sys: ControlSystem, gH: np.ndarray) -> np.ndarray:
    """Map Hamiltonian cotangents ``(K, d, d)`` to control gradients ``(K, J)``."""
    return np.einsum("kab,jab->kj", np.conj(gH), sys.control_stack).real


class _Model:
    """Shared per-point computations for one problem."""

    def __init__(self, spec: ProblemSpec, layout: VariableLayout):
        self.spec = spec
        self.layout = layout
        self.sys = spec.system
        self.G = spec.target.goal
        n = spec.n_knots - 1
        if spec.error is not None:
            self.E = np.ascontiguousarray(spec.error.channel_sequences(n))
        else:
            self.E = None
        self._key = None
        self._state = None

    def point(self, x: np.ndarray):
        key = x.tobytes()
        if key != self._key:
            u, du, ddu = self.layout.controls(x)
            H = self.sys.hamiltonians(u[:-1])
            prop = SpectralPropagator(H, self.spec.dt)
            if self.layout.has_states:
                U = self.layout.unitaries(x)
            else:
                U = _propagate(prop.propagator)
            self._key = key
            self._state = (u, du, ddu, H, prop, U)
        return self._state

    def metric_terms(self, U, H):
        spec = self.spec
        if spec.objective == "toggling":
            return toggling_terms(U, H, self.E, spec.order_j, spec.dt)
        if spec.objective == "universal":
            return universal_terms(U, H, spec.order_j, spec.dt)
        if spec.objective == "adjoint":
            return adjoint_terms(U, H, self.E, spec.dt)
        return 0.0, np.zeros_like(U), np.zeros_like(H)

    def objective_parts(self, x):
        """Value, gradient w.r.t. U, H-cotangent, and control-block gradients."""
        spec = self.spec
        u, du, ddu, H, prop, U = self.point(x)
        value = 0.0
        gU = np.zeros_like(U)
        gH = np.zeros_like(H)
        if spec.objective != "none" and spec.Q > 0:
            m, mU, mH = self.metric_terms(U, H)
            value += spec.Q * m
            gU += spec.Q * mU
            gH += spec.Q * mH
        r, (gu, gdu, gddu) = regularization(u, du, ddu)
        value += spec.R * r
        gu, gdu, gddu = spec.R * gu, spec.R * gdu, spec.R * gddu
        if spec.infidelity_weight > 0:
            # ||U_N||^2 / d - F^2 equals 1 - F^2 for unitary U_N and is never
            # negative, so free (direct) states cannot drive it to -inf
            f2, gf2 = _fidelity_sq(U[-1], self.G)
            d = U.shape[-1]
            value += spec.infidelity_weight * (np.vdot(U[-1], U[-1]).real / d - f2)
            gU[-1] += spec.infidelity_weight * (2 * U[-1] / d - gf2)
        return value, gU, gH, (gu, gdu, gddu)


def _propagate(props: np.ndarray) -> np.ndarray:
    n, d = props.shape[0], props.shape[-1]
    U = np.empty((n + 1, d, d), dtype=complex)
    U[0] = np.eye(d)
    for k in range(n):
        U[k + 1] = props[k] @ U[k]
    return U


def _backprop(prop: SpectralPropagator, U: np.ndarray, gU: np.ndarray, gH: np.ndarray) -> np.ndarray:
    """Fold knot gradients ``gU`` into Hamiltonian cotangents through ``U_{k+1} = P_k U_k``."""
    P = prop.propagator
    n = P.shape[0]
    lam = gU[n].copy()
    cot = np.empty_like(P)
    for k in range(n - 1, -1, -1):
        cot[k] = lam @ dagger(U[k])
        lam = gU[k] + dagger(P[k]) @ lam
    return gH + prop.derivative_adjoint(cot)


def _chain_constraint(layout: VariableLayout, dt: float) -> Constraint:
    N, J = layout.n_knots, layout.n_controls
    n = (N - 1) * J
    rows = []
    # u_{k+1} - u_k - dt du_k
    I = scipy.sparse.identity(n, format="csr")
    shift = scipy.sparse.hstack([scipy.sparse.csr_matrix((n, J)), I]) - scipy.sparse.hstack(
        [I, scipy.sparse.csr_matrix((n, J))]
    )
    head = scipy.sparse.hstack([I, scipy.sparse.csr_matrix((n, J))])
    zu = scipy.sparse.csr_matrix((n, N * J))
    zdd = scipy.sparse.csr_matrix((n, n))
    rows.append(scipy.sparse.hstack([shift, -dt * head, zdd]))
    rows.append(scipy.sparse.hstack([zu, shift, -dt * I]))
    A_ctrl = scipy.sparse.vstack(rows).tocsr()
    pad = scipy.sparse.csr_matrix((A_ctrl.shape[0], layout.u.start))
    A = scipy.sparse.hstack([pad, A_ctrl]).tocsr()
    return Constraint.linear(A, name="control_chain")


def _bounds(spec: ProblemSpec, layout: VariableLayout) -> tuple[np.ndarray, np.ndarray]:
    lo = np.full(layout.total, -np.inf)
    hi = np.full(layout.total, np.inf)
    if spec.constrain_controls:
        for name, sl in (("u_bound", layout.u), ("du_bound", layout.du), ("ddu_bound", layout.ddu)):
            b = getattr(spec, name)
            if b is not None:
                lo[sl], hi[sl] = -b, b
    if layout.has_states:
        d = layout.dim
        first = np.stack([np.eye(d), np.zeros((d, d))], axis=-1).ravel()
        s0 = layout.state.start
        lo[s0 : s0 + first.size] = first
        hi[s0 : s0 + first.size] = first
    return lo, hi


def _realify(M: np.ndarray) -> np.ndarray:
    """Real matrices acting on interleaved (re, im) pairs, batched."""
    m = M.shape[-1]
    R = np.empty(M.shape[:-2] + (2 * m, 2 * m))
    R[..., 0::2, 0::2] = M.real
    R[..., 0::2, 1::2] = -M.imag
    R[..., 1::2, 0::2] = M.imag
    R[..., 1::2, 1::2] = M.real
    return R


def _fidelity_constraint(model: _Model, direct: bool) -> Constraint:
    spec = model.spec
    fmin_sq = spec.fidelity_min**2
    layout = model.layout

    def evaluate(x):
        u, du, ddu, H, prop, U = model.point(x)
        f2, g = _fidelity_sq(U[-1], model.G)

        def vjp(w):
            out = np.zeros(layout.total)
            gU = np.zeros_like(U)
            gU[-1] = -w[0] * g
            if direct:
                layout.put_state_grad(out, gU)
            else:
                gH = _backprop(prop, U, gU, np.zeros_like(H))
                out[layout.u][: (layout.n_knots - 1) * layout.n_controls] = _controls_cotangent(
                    model.sys, gH
                ).ravel()
            return out

        return np.array([fmin_sq - f2]), vjp

    def jacobian(x):
        return scipy.sparse.csr_matrix(evaluate(x)[1](np.ones(1))[None])

    return Constraint(evaluate, 1, "fidelity", jacobian)


def _dynamics_constraint(model: _Model) -> Constraint:
    layout = model.layout
    N, d = layout.n_knots, layout.dim
    size = 2 * (N - 1) * d * d

    def evaluate(x):
        u, du, ddu, H, prop, U = model.point(x)
        P = prop.propagator
        C = U[1:] - P @ U[:-1]

        def vjp(w):
            a = w.reshape(N - 1, d, d, 2)
            W = a[..., 0] + 1j * a[..., 1]
            gU = np.zeros_like(U)
            gU[1:] += W
            gU[:-1] -= dagger(P) @ W
            out = np.zeros(layout.total)
            layout.put_state_grad(out, gU)
            cot = -prop.derivative_adjoint(W @ dagger(U[:-1]))
            gu = _controls_cotangent(model.sys, cot)
            out[layout.u][: (N - 1) * layout.n_controls] = gu.ravel()
            return out

        return np.stack([C.real, C.imag], axis=-1).ravel(), vjp

    J = layout.n_controls
    m = 2 * d * d
    n = N - 1
    rows_blk = np.arange(m)[:, None]
    cols_blk = np.arange(m)[None, :]

    def jacobian(x):
        _, _, _, H, prop, U = model.point(x)
        P = prop.propagator
        left = np.einsum("kac,bd->kabcd", P, np.eye(d)).reshape(n, d * d, d * d)
        blocks = -_realify(left)
        k = np.arange(n)[:, None, None]
        s0 = layout.state.start
        r_state = np.broadcast_to(k * m + rows_blk, blocks.shape)
        c_state = np.broadcast_to(s0 + k * m + cols_blk, blocks.shape)
        r_next = np.arange(n * m)
        c_next = s0 + m + r_next
        # d C_k / d u_kj = -(dP_k / du_kj) U_k
        dPU = np.stack([prop.derivative(np.broadcast_to(Hj, H.shape)) @ U[:-1] for Hj in model.sys.controls], axis=1)
        ctrl = -np.stack([dPU.real, dPU.imag], axis=-1).reshape(n, J, m)
        r_ctrl = np.broadcast_to(np.arange(n)[:, None, None] * m + np.arange(m)[None, None, :], ctrl.shape)
        c_ctrl = np.broadcast_to(layout.u.start + np.arange(n)[:, None, None] * J + np.arange(J)[None, :, None], ctrl.shape)
        data = np.concatenate([blocks.ravel(), np.ones(n * m), ctrl.ravel()])
        rows = np.concatenate([r_state.ravel(), r_next, r_ctrl.ravel()])
        cols = np.concatenate([c_state.ravel(), c_next, c_ctrl.ravel()])
        return scipy.sparse.csr_matrix((data, (rows, cols)), shape=(size, layout.total))

    return Constraint(evaluate, size, "dynamics", jacobian)


def _objective(model: _Model, direct: bool):
    layout = model.layout
    J = layout.n_controls
    n = layout.n_knots - 1

    def f(x):
        value, gU, gH, (gu, gdu, gddu) = model.objective_parts(x)
        grad = np.zeros(layout.total)
        if direct:
            layout.put_state_grad(grad, gU)
        else:
            _, _, _, H, prop, U = model.point(x)
            gH = _backprop(prop, U, gU, gH)
        gu = gu.copy()
        gu[:n] += _controls_cotangent(model.sys, gH)
        grad[layout.u] = gu.ravel()
        grad[layout.du] = gdu.ravel()
        grad[layout.ddu] = gddu.ravel()
        return value, grad

    return f


def _build(spec: ProblemSpec, direct: bool) -> tuple[NLPProblem, VariableLayout]:
    layout = VariableLayout.create(spec.n_knots, spec.system.n_controls, spec.system.dim, direct, spec)
    model = _Model(spec, layout)
    eq = [_chain_constraint(layout, spec.dt)]
    if direct:
        eq.insert(0, _dynamics_constraint(model))
    ineq = []
    if spec.fidelity_min is not None:
        ineq.append(_fidelity_constraint(model, direct))
    lo, hi = _bounds(spec, layout)
    diag = np.zeros(layout.total)
    diag[layout.u.start :] = 2 * spec.R
    curvature = scipy.sparse.diags(diag, format="csc")
    p = NLPProblem(layout.total, _objective(model, direct), eq, ineq, lo, hi, curvature=lambda x: curvature)
    p.model = model
    return p, layout


def build_direct(spec: ProblemSpec) -> tuple[NLPProblem, VariableLayout]:
    """Multiple-shooting program: unitaries and controls are both variables."""
    return _build(spec, True)


def build_indirect(spec: ProblemSpec) -> tuple[NLPProblem, VariableLayout]:
    """Single-shooting program: controls only, unitaries by rollout."""
    return _build(spec, False)


def build(spec: ProblemSpec) -> tuple[NLPProblem, VariableLayout]:
    return build_direct(spec) if spec.formulation == "direct" else build_indirect(spec)


def initialize(spec: ProblemSpec, seed: int, layout: VariableLayout | None = None) -> np.ndarray:
    """Seeded smooth random controls (four Fourier modes per channel).

    The amplitude is half of the amplitude box, reduced further if needed so
    that the finite-difference velocities and accelerations sit at no more
    than half of their boxes.  Unitaries come from a rollout.
    """
    layout = layout or VariableLayout.create(
        spec.n_knots, spec.system.n_controls, spec.system.dim, spec.formulation == "direct", spec
    )
    rng = np.random.default_rng(seed)
    N, J = spec.n_knots, spec.system.n_controls
    t = np.arange(N) * spec.dt / spec.t_f
    modes = np.arange(1, 5)
    a = rng.normal(size=(4, J))
    b = rng.normal(size=(4, J))
    arg = 2 * np.pi * t[:, None] * modes[None, :]
    shape = np.sin(arg) @ a + np.cos(arg) @ b
    shape /= np.abs(shape).max(axis=0, keepdims=True)
    traj = ControlTrajectory.from_controls(shape, spec.dt)
    scale = 0.5 * spec.u_bound if spec.u_bound is not None else spec.init_scale
    # boxes shape the draw even when not enforced, so constrained and
    # unconstrained runs with one seed start from the same controls
    if spec.du_bound is not None:
        scale = min(scale, 0.5 * spec.du_bound / np.abs(traj.du).max())
    if spec.ddu_bound is not None:
        scale = min(scale, 0.5 * spec.ddu_bound / np.abs(traj.ddu).max())
    traj = ControlTrajectory(scale * traj.u, scale * traj.du, scale * traj.ddu, spec.dt)
    U = rollout(spec.system, traj).knots if layout.has_states else None
    x = layout.pack(traj, U)
    lo, hi = _bounds(spec, layout)
    return np.clip(x, lo, hi)


def dynamics_residual(spec: ProblemSpec, x: np.ndarray, layout: VariableLayout) -> float:
    """Max-abs residual of ``U_{k+1} - exp(-i H_k dt) U_k``; zero for indirect layouts."""
    if not layout.has_states:
        return 0.0
    U = layout.unitaries(x)
    u, _, _ = layout.controls(x)
    P = SpectralPropagator(spec.system.hamiltonians(u[:-1]), spec.dt).propagator
    C = U[1:] - P @ U[:-1]
    return float(max(np.abs(C.real).max(), np.abs(C.imag).max()))


def final_unitary(spec: ProblemSpec, x: np.ndarray, layout: VariableLayout) -> np.ndarray:
    if layout.has_states:
        return layout.unitaries(x)[-1]
    return rollout(spec.system, layout.trajectory(x, spec.dt)).final


def optimize(
    spec: ProblemSpec, seed: int, opts: SolverOptions | None = None, x0: np.ndarray | None = None
) -> tuple[SolveReport, ControlTrajectory, VariableLayout]:
    problem, layout = build(spec)
    if x0 is None:
        x0 = initialize(spec, seed, layout)
    report = solve(problem, x0, opts)
    return report, layout.trajectory(report.x, spec.dt), layout


def analyze_iterates(report: SolveReport, layout: VariableLayout) -> dict[str, np.ndarray]:
    """Per-iterate max ``|du|``, max ``|ddu|``, objective and fidelity."""
    if not report.iterate_snapshots:
        raise ValueError("the report has no iterate snapshots; solve with record_iterates=True")
    spec = layout.spec
    max_du, max_ddu, fid = [], [], []
    for x in report.iterate_snapshots:
        _, du, ddu = layout.controls(x)
        max_du.append(np.abs(du).max())
        max_ddu.append(np.abs(ddu).max())
        if spec is not None:
            fid.append(fidelity(final_unitary(spec, x, layout), spec.target))
    out = {
        "max_du": np.array(max_du),
        "max_ddu": np.array(max_ddu),
        "objective": np.array(report.objective_history[: len(max_du)]),
    }
    if fid:
        out["fidelity"] = np.array(fid)
    return out


def spec_summary(spec: ProblemSpec) -> dict[str, Any]:
    """Scalar fields of a spec (for result metadata)."""
    return {
        "n_knots": spec.n_knots,
        "dt": spec.dt,
        "objective": spec.objective,
        "order_j": spec.order_j,
        "Q": spec.Q,
        "R": spec.R,
        "infidelity_weight": spec.infidelity_weight,
        "fidelity_min": spec.fidelity_min,
        "u_bound": spec.u_bound,
        "du_bound": spec.du_bound,
        "ddu_bound": spec.ddu_bound,
        "formulation": spec.formulation,
        "constrain_controls": spec.constrain_controls,
    }
