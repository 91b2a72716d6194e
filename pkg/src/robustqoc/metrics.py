"""First-order error susceptibility estimators.

All reported values use the dimension-normalized norm
``||A||^2 = Tr(A^dagger A) / d`` and are divided by ``t_f^2``.  Multi-channel
error models are treated as independent sources, so their susceptibility is
the sum over channels.

Besides the user-facing functions taking ``(sys, traj, err)``, this module
exposes value-and-gradient kernels (``toggling_terms`` and friends) that act
on stacks of unitaries ``U`` of shape ``(N, d, d)`` and interval Hamiltonians
``H`` of shape ``(N - 1, d, d)``.  They return the complex gradient with
respect to ``U`` (``dRe/dRe U + i dRe/dIm U``) and a cotangent ``X`` of each
``H_k`` such that ``df = Re Tr(X_k^dagger dH_k)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from math import ceil

import numpy as np

from .algebra import (
    SpectralPropagator,
    dagger,
    hs_norm_sq,
    inverse_factorial,
    kron,
    kron_sum,
    pauli_strings,
    PauliString,
    vec,
)
from .dynamics import ControlSystem, ControlTrajectory, ErrorModel, adjoint_rollout, rollout

__all__ = [
    "MAX_ORDER",
    "MetricConfig",
    "SusceptibilityReport",
    "adjoint_terms",
    "evaluate_all",
    "pauli_susceptibility_scan",
    "susceptibility_adjoint",
    "susceptibility_fine",
    "susceptibility_toggling",
    "susceptibility_universal",
    "toggling_coefficients",
    "toggling_terms",
    "universal_bound_slack",
    "universal_coefficients",
    "universal_integral_fine",
    "universal_terms",
]

MAX_ORDER = 12
FINE_GRID_POINTS = 2**10


@dataclass(frozen=True)
class MetricConfig:
    order_j: int = 0
    oversample: int | None = None

    def __post_init__(self):
        if not 0 <= self.order_j <= MAX_ORDER:
            raise ValueError(f"order_j must lie in [0, {MAX_ORDER}]")
        if self.oversample is not None and self.oversample < 1:
            raise ValueError("oversample must be a positive integer")

    def substeps(self, n_knots: int) -> int:
        if self.oversample is not None:
            return self.oversample
        return default_oversample(n_knots)


@dataclass(frozen=True)
class SusceptibilityReport:
    value: float
    estimator: str
    error_channel: str = ""


def default_oversample(n_knots: int) -> int:
    """Substeps per interval so that the refined grid has at least 2^10 steps."""
    return max(1, ceil(FINE_GRID_POINTS / (n_knots - 1)))


def _check_static(err: ErrorModel) -> None:
    if not err.is_static:
        raise ValueError("the universal susceptibility only applies to quasi-static errors")


def _interval_hamiltonians(sys: ControlSystem, traj: ControlTrajectory) -> np.ndarray:
    return sys.hamiltonians(traj.interval_controls)


# --------------------------------------------------------------------------
# series coefficients
# --------------------------------------------------------------------------


def toggling_coefficients(H: np.ndarray, E: np.ndarray, j: int, dt: float) -> np.ndarray:
    """``E^(j) = sum_{n<=j} (i dt)^n / (n+1)! ad_H^n(E)`` (batched over leading axes).

    ``dt * E^(j)`` truncates the interval integral of the toggled error
    ``int_0^dt exp(iHt) E exp(-iHt) dt``.
    """
    if j < 0:
        raise ValueError("order must be non-negative")
    H = np.asarray(H, dtype=complex)
    term = np.asarray(E, dtype=complex)
    out = term.copy()
    for n in range(1, j + 1):
        term = H @ term - term @ H
        out = out + (1j * dt) ** n * inverse_factorial(n + 1) * term
    return out


def universal_generator(H: np.ndarray) -> np.ndarray:
    """``L = -iH (+) iH^*`` generating ``U (x) U^*``."""
    H = np.asarray(H, dtype=complex)
    return kron_sum(-1j * H, 1j * np.conj(H))


def _universal_generators(H: np.ndarray) -> np.ndarray:
    d = H.shape[-1]
    eye = np.eye(d)
    return -1j * np.einsum("kij,ab->kiajb", H, eye).reshape(-1, d * d, d * d) + 1j * np.einsum(
        "ij,kab->kiajb", eye, np.conj(H)
    ).reshape(-1, d * d, d * d)


def _phi1_series(L: np.ndarray, j: int, dt: float) -> np.ndarray:
    n2 = L.shape[-1]
    power = np.broadcast_to(np.eye(n2, dtype=complex), L.shape).copy()
    out = power.copy()
    for n in range(1, j + 1):
        power = power @ L
        out = out + dt**n * inverse_factorial(n + 1) * power
    return out


def universal_coefficients(H: np.ndarray, j: int, dt: float) -> np.ndarray:
    """``I^(j) = sum_{n<=j} dt^n/(n+1)! L^n``, the truncated ``phi_1(dt L)``."""
    if j < 0:
        raise ValueError("order must be non-negative")
    return _phi1_series(universal_generator(H), j, dt)


# --------------------------------------------------------------------------
# value and gradient kernels on unitary stacks
# --------------------------------------------------------------------------


def _sandwich(U: np.ndarray, A: np.ndarray) -> np.ndarray:
    """``sum_k U_k^dagger A_k U_k`` over the first ``len(A)`` knots."""
    Uk = U[: A.shape[0]]
    return np.einsum("kji,kjl,klm->im", np.conj(Uk), A, Uk)


def _sandwich_grads(U: np.ndarray, A: np.ndarray, S: np.ndarray, scale: float):
    """Gradient of ``scale * ||sum_k U_k^dag A_k U_k||_F^2`` w.r.t. ``U_k`` and ``A_k``."""
    Uk = U[: A.shape[0]]
    Sd = dagger(S)
    gU = np.zeros_like(U)
    gU[: A.shape[0]] = 2 * scale * (A @ Uk @ Sd + dagger(A) @ Uk @ S)
    gA = 2 * scale * (Uk @ S @ dagger(Uk))
    return gU, gA


def toggling_terms(U: np.ndarray, H: np.ndarray, E_channels: np.ndarray, j: int, dt: float):
    """Order-``j`` toggling susceptibility of channel stacks ``(C, N-1, d, d)``.

    Returns ``(value, gU, gH)``.
    """
    n, d = H.shape[0], H.shape[-1]
    scale = 1.0 / ((n * dt) ** 2 * d)
    value = 0.0
    gU = np.zeros_like(U)
    gH = np.zeros_like(H)
    coeffs = [(1j * dt) ** m * inverse_factorial(m + 1) for m in range(j + 1)]
    for E in E_channels:
        F = [np.asarray(E, dtype=complex)]
        for _ in range(j):
            F.append(H @ F[-1] - F[-1] @ H)
        A = sum(c * f for c, f in zip(coeffs, F))
        S = dt * _sandwich(U, A)
        value += scale * float(np.sum(np.abs(S) ** 2))
        gUc, Y = _sandwich_grads(U, A, S, scale)
        gU += dt * gUc
        if j == 0:
            continue
        Y = dt * Y
        Z = [Y]
        for _ in range(j - 1):
            Z.append(H @ Z[-1] - Z[-1] @ H)
        Fd = [dagger(f) for f in F]
        X = np.zeros_like(H)
        # d/dH of ad_H^n(E): sum over positions of the differentiated ad
        for m in range(1, j + 1):
            cm = np.conj(coeffs[m])
            for a in range(m):
                b = m - 1 - a
                X += cm * (Z[a] @ Fd[b] - Fd[b] @ Z[a])
        gH += X
    return value, gU, gH


def universal_terms(U: np.ndarray, H: np.ndarray, j: int, dt: float):
    """Order-``j`` universal susceptibility with gradients ``(value, gU, gH)``."""
    n, d = H.shape[0], H.shape[-1]
    d2 = d * d
    scale = 1.0 / ((n * dt) ** 2 * d2)
    Uk = U[:n]
    L = _universal_generators(H)
    powers = [np.broadcast_to(np.eye(d2, dtype=complex), L.shape)]
    for _ in range(j):
        powers.append(powers[-1] @ L)
    coeffs = [dt**m * inverse_factorial(m + 1) for m in range(j + 1)]
    Ik = sum(c * p for c, p in zip(coeffs, powers))
    KU = np.einsum("kij,kab->kiajb", Uk, np.conj(Uk)).reshape(n, d2, d2)
    M = dt * np.einsum("kij,kjl->il", Ik, KU)
    value = scale * float(np.sum(np.abs(M) ** 2))

    W = (dt * dagger(Ik) @ M).reshape(n, d, d, d, d)
    gU = np.zeros_like(U)
    gU[:n] = 2 * scale * (
        np.einsum("kiajb,kab->kij", W, Uk) + np.einsum("kiajb,kij->kab", np.conj(W), Uk)
    )
    gH = np.zeros_like(H)
    if j > 0:
        Y = M @ dagger(dt * KU)
        Ld = [dagger(p) for p in powers]
        K = np.zeros_like(L)
        for m in range(1, j + 1):
            for a in range(m):
                K += coeffs[m] * (Ld[a] @ Y @ Ld[m - 1 - a])
        K = K.reshape(n, d, d, d, d)
        tr1 = np.einsum("kiaja->kij", K)
        tr2 = np.einsum("kiaib->kab", K)
        gH = 2 * scale * (1j * tr1 + 1j * np.conj(tr2))
    return value, gU, gH


def adjoint_terms(U: np.ndarray, H: np.ndarray, E_channels: np.ndarray, dt: float):
    """Exact zero-order-hold susceptibility read from a unitary stack.

    Uses ``U_N^dag dU_N = sum_k U_k^dag P_k^dag dP_k U_k``, where ``dP_k`` is
    the derivative of ``P_k = exp(-i dt (H_k + eps E_k))`` in ``eps``, so that
    ``P_k^dag dP_k = -i int_0^dt exp(i H_k s) E_k exp(-i H_k s) ds``.  On a
    rollout-consistent stack this equals the adjoint estimator exactly.
    Returns ``(value, gU, gH)``.
    """
    n, d = H.shape[0], H.shape[-1]
    scale = 1.0 / ((n * dt) ** 2 * d)
    prop = SpectralPropagator(H, dt)
    value = 0.0
    gU = np.zeros_like(U)
    gH = np.zeros_like(H)
    for E in np.asarray(E_channels, dtype=complex):
        B = -1j * prop.toggled_integral(E)
        S = _sandwich(U, B)
        value += scale * float(np.sum(np.abs(S) ** 2))
        gUc, Y = _sandwich_grads(U, B, S, scale)
        gU += gUc
        gH += prop.toggled_integral_vjp(E, 1j * Y)
    return value, gU, gH


# --------------------------------------------------------------------------
# user-facing estimators
# --------------------------------------------------------------------------


def susceptibility_toggling(
    sys: ControlSystem, traj: ControlTrajectory, err: ErrorModel, j: int = 0, unitaries=None
) -> float:
    if not 0 <= j <= MAX_ORDER:
        raise ValueError(f"order must lie in [0, {MAX_ORDER}]")
    U = rollout(sys, traj).knots if unitaries is None else unitaries
    H = _interval_hamiltonians(sys, traj)
    E = err.channel_sequences(traj.n_knots - 1)
    return toggling_terms(U, H, E, j, traj.dt)[0]


def susceptibility_universal(
    sys: ControlSystem, traj: ControlTrajectory, j: int = 0, unitaries=None
) -> float:
    if not 0 <= j <= MAX_ORDER:
        raise ValueError(f"order must lie in [0, {MAX_ORDER}]")
    U = rollout(sys, traj).knots if unitaries is None else unitaries
    H = _interval_hamiltonians(sys, traj)
    return universal_terms(U, H, j, traj.dt)[0]


def susceptibility_adjoint(sys: ControlSystem, traj: ControlTrajectory, err: ErrorModel) -> float:
    """Susceptibility from the final adjoint block ``U_N^dag dU_N / d eps``."""
    n = traj.n_knots - 1
    total = 0.0
    for E in err.channel_sequences(n):
        U, dU = adjoint_rollout(sys, traj, ErrorModel.time_dependent(E))
        total += hs_norm_sq(dagger(U.final) @ dU[-1])
    return total / traj.t_f**2


def _quadrature(substeps: int, dt: float, rule: str) -> tuple[np.ndarray, np.ndarray]:
    h = dt / substeps
    if rule == "simpson":
        nodes = np.linspace(0.0, dt, 2 * substeps + 1)
        w = np.full(2 * substeps + 1, 2.0)
        w[1::2] = 4.0
        w[0] = w[-1] = 1.0
        return nodes, w * h / 6.0
    if rule == "riemann":
        return np.arange(substeps) * h, np.full(substeps, h)
    raise ValueError(f"unknown quadrature rule {rule!r}")


def susceptibility_fine(
    sys: ControlSystem,
    traj: ControlTrajectory,
    err: ErrorModel,
    oversample: int | None = None,
    rule: str = "simpson",
) -> float:
    """Refined-grid evaluation of the susceptibility integral.

    Each interval is split into ``oversample`` substeps.  The toggled error
    ``U(t)^dag E U(t)`` is evaluated with exact propagators
    ``U(t) = exp(-i H_k tau) U_k`` at the substep nodes (and midpoints for the
    default composite Simpson rule); ``rule="riemann"`` gives the plain
    left-endpoint upsampled sum.
    """
    m = default_oversample(traj.n_knots) if oversample is None else int(oversample)
    if m < 1:
        raise ValueError("oversample must be >= 1")
    H = _interval_hamiltonians(sys, traj)
    U = rollout(sys, traj).knots
    n, d = H.shape[0], sys.dim
    nodes, weights = _quadrature(m, traj.dt, rule)
    w, V = np.linalg.eigh(H)
    omega = w[:, :, None] - w[:, None, :]
    kernel = np.exp(1j * omega[..., None] * nodes) @ weights
    total = 0.0
    for E in err.channel_sequences(n):
        Et = dagger(V) @ E @ V
        integral = V @ (kernel * Et) @ dagger(V)
        S = _sandwich(U, integral)
        total += hs_norm_sq(S)
    return total / traj.t_f**2


def universal_integral_fine(
    sys: ControlSystem, traj: ControlTrajectory, oversample: int | None = None, exact: bool = False
) -> float:
    """Refined-grid (or closed-form) value of the universal susceptibility integral."""
    H = _interval_hamiltonians(sys, traj)
    U = rollout(sys, traj).knots
    n, d = H.shape[0], sys.dim
    w, V = np.linalg.eigh(H)
    omega = w[:, :, None] - w[:, None, :]
    if exact:
        kernel = traj.dt * np.exp(-0.5j * traj.dt * omega) * np.sinc(0.5 * traj.dt * omega / np.pi)
    else:
        m = default_oversample(traj.n_knots) if oversample is None else int(oversample)
        nodes, weights = _quadrature(m, traj.dt, "simpson")
        kernel = np.exp(-1j * omega[..., None] * nodes) @ weights
    VV = np.einsum("kij,kab->kiajb", V, np.conj(V)).reshape(n, d * d, d * d)
    D = kernel.reshape(n, d * d)
    integ = (VV * D[:, None, :]) @ dagger(VV)
    KU = np.einsum("kij,kab->kiajb", U[:n], np.conj(U[:n])).reshape(n, d * d, d * d)
    M = np.einsum("kij,kjl->il", integ, KU)
    return hs_norm_sq(M) / traj.t_f**2


def universal_bound_slack(
    sys: ControlSystem, traj: ControlTrajectory, E: np.ndarray, order_j: int | None = None
) -> float:
    """``E_U_raw * ||vec E||^2 - E_raw(E)`` with unnormalized norms; never negative.

    With ``order_j`` the toggling and universal estimators of matching order
    are compared; otherwise the exact adjoint value and the closed-form
    universal integral.
    """
    d = sys.dim
    err = ErrorModel.static(E)
    if order_j is None:
        raw = d * susceptibility_adjoint(sys, traj, err)
        raw_u = d * d * universal_integral_fine(sys, traj, exact=True)
    else:
        raw = d * susceptibility_toggling(sys, traj, err, order_j)
        raw_u = d * d * susceptibility_universal(sys, traj, order_j)
    return raw_u * float(np.sum(np.abs(vec(E)) ** 2)) - raw


def pauli_susceptibility_scan(
    sys: ControlSystem, traj: ControlTrajectory, n_qubits: int
) -> list[tuple[PauliString, float]]:
    """Adjoint susceptibility of every non-identity unit-weight Pauli string."""
    if sys.dim != 2**n_qubits:
        raise ValueError(f"system dimension {sys.dim} does not match {n_qubits} qubits")
    return [
        (p, susceptibility_adjoint(sys, traj, ErrorModel.static(p.matrix(), 1.0, p.label)))
        for p in pauli_strings(n_qubits)
    ]


def evaluate_all(
    sys: ControlSystem,
    traj: ControlTrajectory,
    err: ErrorModel,
    config: MetricConfig | None = None,
    toggling_orders: tuple[int, ...] = (0, 4),
    universal_orders: tuple[int, ...] = (0,),
) -> dict[str, SusceptibilityReport]:
    """Cross-evaluate one trajectory with every estimator."""
    config = config or MetricConfig()
    label = "+".join(err.labels)
    out = {
        "fine": SusceptibilityReport(
            susceptibility_fine(sys, traj, err, config.substeps(traj.n_knots)), "fine", label
        ),
        "adjoint": SusceptibilityReport(susceptibility_adjoint(sys, traj, err), "adjoint", label),
    }
    U = rollout(sys, traj).knots
    for j in toggling_orders:
        out[f"toggling{j}"] = SusceptibilityReport(
            susceptibility_toggling(sys, traj, err, j, U), f"toggling({j})", label
        )
    if err.is_static:
        for j in universal_orders:
            out[f"universal{j}"] = SusceptibilityReport(
                susceptibility_universal(sys, traj, j, U), f"universal({j})", ""
            )
    return out
