"""Dense complex matrix kernel.

Pauli strings, Hilbert-Schmidt norms, commutators, Kronecker products and
sums, column-major vectorization, and matrix exponentials together with
their Fréchet (directional) derivatives.

Everything here works on plain ``numpy`` arrays.  Functions that take a
single matrix also accept a stack ``(..., d, d)`` where noted.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from math import factorial
from typing import Iterable

import numpy as np
import scipy.linalg

__all__ = [
    "PAULI",
    "ExpmOverflowError",
    "PauliString",
    "SpectralPropagator",
    "commutator",
    "dagger",
    "expm",
    "expm_frechet",
    "expm_frechet_adjoint",
    "hs_inner",
    "hs_norm_sq",
    "inverse_factorial",
    "is_hermitian",
    "is_unitary",
    "iterated_ad",
    "kron",
    "kron_sum",
    "pauli_string_matrix",
    "pauli_strings",
    "unvec",
    "vec",
]

MAX_SERIES_ORDER = 40

PAULI = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}


class ExpmOverflowError(ArithmeticError):
    """The matrix exponential is not representable in double precision."""


@dataclass(frozen=True)
class PauliString:
    """Tensor product of single-qubit Paulis; factor 0 acts on qubit 1."""

    factors: tuple[str, ...]
    coefficient: float = 1.0

    def __post_init__(self):
        factors = tuple(self.factors)
        if len(factors) == 0:
            raise ValueError("a Pauli string needs at least one factor")
        bad = [f for f in factors if f not in PAULI]
        if bad:
            raise ValueError(f"invalid Pauli labels {bad!r}; expected I, X, Y or Z")
        object.__setattr__(self, "factors", factors)
        object.__setattr__(self, "coefficient", float(self.coefficient))

    @classmethod
    def from_label(cls, label: str, coefficient: float = 1.0) -> "PauliString":
        return cls(tuple(label.upper()), coefficient)

    @property
    def label(self) -> str:
        return "".join(self.factors)

    @property
    def n_qubits(self) -> int:
        return len(self.factors)

    def matrix(self) -> np.ndarray:
        return pauli_string_matrix(self)


def pauli_string_matrix(s: PauliString | str) -> np.ndarray:
    if isinstance(s, str):
        s = PauliString.from_label(s)
    out = np.array([[1.0 + 0j]])
    for f in s.factors:
        out = np.kron(out, PAULI[f])
    return s.coefficient * out


def pauli_strings(n_qubits: int, include_identity: bool = False) -> list[PauliString]:
    """All Pauli strings on ``n_qubits`` in lexicographic order over I, X, Y, Z."""
    labels = [""]
    for _ in range(n_qubits):
        labels = [l + p for l in labels for p in "IXYZ"]
    out = [PauliString.from_label(l) for l in labels]
    if not include_identity:
        out = [p for p in out if set(p.factors) != {"I"}]
    return out


def dagger(A: np.ndarray) -> np.ndarray:
    return np.conj(np.swapaxes(A, -1, -2))


def hs_inner(A: np.ndarray, B: np.ndarray) -> complex | np.ndarray:
    """Unnormalized Hilbert-Schmidt inner product Tr(A^dagger B), batched."""
    return np.einsum("...ij,...ij->...", np.conj(A), B)


def hs_norm_sq(A: np.ndarray, normalized: bool = True) -> float:
    """Squared Frobenius norm ``(1/d) sum |A_ij|^2``.

    ``d`` is the row dimension of ``A`` itself, so a ``d^2 x d^2``
    superoperator is normalized by ``d^2``.  With ``normalized=False`` the
    raw ``Tr(A^dagger A)`` is returned.
    """
    A = np.asarray(A)
    raw = float(np.sum(np.abs(A) ** 2))
    if not normalized:
        return raw
    return raw / A.shape[0]


def is_hermitian(A: np.ndarray, atol: float = 1e-12) -> bool:
    return bool(np.allclose(A, dagger(A), rtol=0.0, atol=atol))


def is_unitary(U: np.ndarray, atol: float = 1e-10) -> bool:
    d = U.shape[-1]
    return bool(np.linalg.norm(dagger(U) @ U - np.eye(d)) < atol)


def _check_same_shape(A: np.ndarray, B: np.ndarray) -> None:
    if A.shape[-2:] != B.shape[-2:]:
        raise ValueError(f"dimension mismatch: {A.shape[-2:]} vs {B.shape[-2:]}")


def commutator(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    _check_same_shape(A, B)
    return A @ B - B @ A


def iterated_ad(H: np.ndarray, X: np.ndarray, n: int) -> np.ndarray:
    """``ad_H^n(X)``: ``n`` nested commutators ``[H, [H, ... [H, X]]]``."""
    if n < 0 or n > MAX_SERIES_ORDER:
        raise ValueError(f"order must lie in [0, {MAX_SERIES_ORDER}], got {n}")
    _check_same_shape(H, X)
    out = np.asarray(X, dtype=complex)
    for _ in range(n):
        out = H @ out - out @ H
    return out


def inverse_factorial(n: int) -> float:
    """``1/n!`` rounded once from the exact rational."""
    return float(Fraction(1, factorial(n)))


def kron(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    return np.kron(A, B)


def kron_sum(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """``A (+) B = A (x) I + I (x) B`` for square ``A`` and ``B``."""
    A = np.asarray(A)
    B = np.asarray(B)
    if A.ndim != 2 or A.shape[0] != A.shape[1] or B.ndim != 2 or B.shape[0] != B.shape[1]:
        raise ValueError("kron_sum needs square matrices")
    return np.kron(A, np.eye(B.shape[0])) + np.kron(np.eye(A.shape[0]), B)


def vec(A: np.ndarray) -> np.ndarray:
    """Column-major vectorization; ``vec(A X B) = (B^T (x) A) vec(X)``."""
    return np.asarray(A).reshape(-1, order="F")


def unvec(v: np.ndarray, d: int | None = None) -> np.ndarray:
    v = np.asarray(v)
    if d is None:
        d = int(round(np.sqrt(v.size)))
    if d * d != v.size:
        raise ValueError(f"cannot reshape a vector of length {v.size} into a square matrix")
    return v.reshape((d, d), order="F")


def expm(A: np.ndarray) -> np.ndarray:
    """Matrix exponential by scaling and squaring (batched over leading axes)."""
    A = np.asarray(A, dtype=complex)
    if not np.all(np.isfinite(A)):
        raise ValueError("expm input has non-finite entries")
    with np.errstate(over="ignore", invalid="ignore"):
        out = scipy.linalg.expm(A)
    if not np.all(np.isfinite(out)):
        raise ExpmOverflowError("matrix exponential overflowed")
    return out


def expm_frechet(A: np.ndarray, D: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(expm(A), L_A(D))`` from one block-triangular exponential.

    ``expm([[A, 0], [D, A]]) = [[expm(A), 0], [L_A(D), expm(A)]]``.  Works on
    stacks ``(..., d, d)``.
    """
    A = np.asarray(A, dtype=complex)
    D = np.asarray(D, dtype=complex)
    _check_same_shape(A, D)
    d = A.shape[-1]
    batch = np.broadcast_shapes(A.shape[:-2], D.shape[:-2])
    block = np.zeros(batch + (2 * d, 2 * d), dtype=complex)
    block[..., :d, :d] = A
    block[..., d:, d:] = A
    block[..., d:, :d] = D
    big = expm(block)
    return big[..., :d, :d], big[..., d:, :d]


def expm_frechet_adjoint(A: np.ndarray, G: np.ndarray) -> np.ndarray:
    """Adjoint of ``D -> L_A(D)`` under ``Re Tr(X^dagger Y)``.

    Satisfies ``Re<G, L_A(D)> = Re<L_A^*(G), D>`` with ``L_A^* = L_{A^dagger}``.
    """
    return expm_frechet(dagger(np.asarray(A, dtype=complex)), G)[1]


def _exp_divided_differences(w: np.ndarray, dt: float) -> np.ndarray:
    # first divided differences of x -> exp(-i dt x) at eigenvalue pairs, stable form
    a = w[..., :, None]
    b = w[..., None, :]
    half = 0.5 * dt * (a - b)
    return -1j * dt * np.exp(-0.5j * dt * (a + b)) * np.sinc(half / np.pi)


class SpectralPropagator:
    """``exp(-i dt H)`` for a stack of Hermitian ``H`` with exact derivatives.

    The Fréchet derivative with respect to ``H`` follows the Daleckii-Krein
    formula in the eigenbasis of ``H``.  ``derivative(D)`` is the change of
    the propagator along a Hermitian direction ``D``;
    ``derivative_adjoint(G)`` maps a complex cotangent ``G`` of the
    propagator back to a cotangent of ``H`` so that
    ``Re Tr(G^dagger derivative(D)) = Re Tr(derivative_adjoint(G)^dagger D)``.
    """

    def __init__(self, H: np.ndarray, dt: float):
        self.dt = float(dt)
        self.eigvals, self.eigvecs = np.linalg.eigh(H)
        V = self.eigvecs
        phase = np.exp(-1j * self.dt * self.eigvals)
        self.propagator = (V * phase[..., None, :]) @ dagger(V)
        self._dd = _exp_divided_differences(self.eigvals, self.dt)

    def derivative(self, D: np.ndarray) -> np.ndarray:
        V = self.eigvecs
        return V @ (self._dd * (dagger(V) @ D @ V)) @ dagger(V)

    def derivative_adjoint(self, G: np.ndarray) -> np.ndarray:
        V = self.eigvecs
        return V @ (np.conj(self._dd) * (dagger(V) @ G @ V)) @ dagger(V)

    def toggled_integral(self, E: np.ndarray) -> np.ndarray:
        """Exact ``int_0^dt exp(iHt) E exp(-iHt) dt`` in closed form."""
        V = self.eigvecs
        w = self.eigvals
        omega = w[..., :, None] - w[..., None, :]
        weights = self.dt * np.exp(0.5j * self.dt * omega) * np.sinc(0.5 * self.dt * omega / np.pi)
        return V @ (weights * (dagger(V) @ E @ V)) @ dagger(V)

    def toggled_integral_vjp(self, E: np.ndarray, G: np.ndarray) -> np.ndarray:
        """Cotangent of ``H`` for ``Re Tr(G^dagger toggled_integral(E))``.

        In the eigenbasis the integral is ``psi(l_a - l_b) E_ab`` with
        ``psi(w) = int_0^dt exp(i w s) ds``; its derivative in ``H`` needs
        first divided differences of ``psi``, evaluated from their integral
        form by Gauss-Legendre quadrature, which keeps them stable at
        (near-)degenerate eigenvalues.
        """
        V = self.eigvecs
        Vd = dagger(V)
        Et = Vd @ E @ V
        Gt = Vd @ G @ V
        psi1, psi2 = self._psi_tables
        X = np.einsum("...ab,...acb,...cb->...ac", Gt, psi1, np.conj(Et))
        X += np.einsum("...ab,...acb,...ac->...cb", Gt, psi2, np.conj(Et))
        return V @ X @ Vd

    @property
    def _psi_tables(self) -> tuple[np.ndarray, np.ndarray]:
        # conj(psi[l_a - l_b, l_c - l_b]) and conj(-psi[l_a - l_c, l_a - l_b]), indexed [a, c, b]
        if getattr(self, "_psi", None) is None:
            self._psi = _psi_tables(self.eigvals, self.dt)
        return self._psi


_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(24)


def _psi_tables(w: np.ndarray, dt: float) -> tuple[np.ndarray, np.ndarray]:
    # (psi(x) - psi(y)) / (x - y) = int_0^dt i s exp(i s (x + y) / 2) sinc(s (x - y) / 2 pi) ds;
    # the exponential factors into per-eigenvalue phases, so each table is one matmul
    d = w.shape[-1]
    s = 0.5 * dt * (_GL_NODES + 1.0)
    wq = 0.5j * dt * _GL_WEIGHTS * s
    ph = np.exp(0.5j * w[..., :, None] * s)  # (..., d, Q)
    sinc = np.sinc((w[..., :, None, None] - w[..., None, :, None]) * s / (2 * np.pi))  # (..., d, d, Q)
    A1 = wq * ph[..., :, None, :] * ph[..., None, :, :] * sinc  # [a, c, q]
    psi1 = A1.reshape(A1.shape[:-3] + (d * d, -1)) @ np.swapaxes(np.conj(ph) ** 2, -1, -2)
    B2 = np.conj(ph[..., :, None, :] * ph[..., None, :, :]) * sinc  # [c, b, q]
    A2 = wq * ph**2  # [a, q]
    psi2 = -(A2 @ np.swapaxes(B2.reshape(B2.shape[:-3] + (d * d, -1)), -1, -2))
    psi1 = psi1.reshape(w.shape[:-1] + (d, d, d))
    psi2 = psi2.reshape(w.shape[:-1] + (d, d, d))
    return np.conj(psi1), np.conj(psi2)


def stack_hermitian_check(ops: Iterable[np.ndarray], atol: float = 1e-12) -> None:
    for k, op in enumerate(ops):
        if not is_hermitian(op, atol):
            raise ValueError(f"operator {k} is not Hermitian within {atol}")
