import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from robustqoc.algebra import (
    ExpmOverflowError,
    PauliString,
    SpectralPropagator,
    commutator,
    dagger,
    expm,
    expm_frechet,
    expm_frechet_adjoint,
    hs_norm_sq,
    iterated_ad,
    kron,
    kron_sum,
    pauli_string_matrix,
    pauli_strings,
    unvec,
    vec,
)

X = pauli_string_matrix("X")
Y = pauli_string_matrix("Y")
Z = pauli_string_matrix("Z")


def rand_herm(rng, d, scale=1.0):
    A = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    return scale * (A + dagger(A)) / 2


def rand_unitary(rng, d):
    q, r = np.linalg.qr(rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d)))
    return q * (np.diag(r) / np.abs(np.diag(r)))


def taylor_expm(A, terms=30):
    out = np.eye(A.shape[0], dtype=complex)
    term = np.eye(A.shape[0], dtype=complex)
    for n in range(1, terms):
        term = term @ A / n
        out = out + term
    return out


# --- Pauli strings -----------------------------------------------------------


def test_pauli_examples():
    assert np.allclose(pauli_string_matrix(PauliString(("Z",))), np.diag([1, -1]))
    assert np.allclose(pauli_string_matrix(PauliString(("X", "X"))), np.fliplr(np.eye(4)))
    assert np.allclose(pauli_string_matrix(PauliString(("I",), 3.0)), 3 * np.eye(2))


def test_pauli_string_validation():
    with pytest.raises(ValueError):
        PauliString(())
    with pytest.raises(ValueError):
        PauliString.from_label("XQ")


def test_pauli_strings_count_and_hermiticity():
    strings = pauli_strings(2)
    assert len(strings) == 15
    assert "II" not in {p.label for p in strings}
    for p in strings:
        M = p.matrix()
        assert M.shape == (4, 4)
        assert np.allclose(M, dagger(M))


def test_qubit_ordering():
    assert np.allclose(pauli_string_matrix("ZI"), np.kron(Z, np.eye(2)))


# --- norms and commutators ------------------------------------------------------


@pytest.mark.parametrize("d", [1, 2, 3, 8])
def test_hs_norm_identity(d):
    assert hs_norm_sq(np.eye(d)) == pytest.approx(1.0)


def test_hs_norm_examples():
    assert hs_norm_sq(Z) == pytest.approx(1.0)
    assert hs_norm_sq(np.array([[0, 2], [0, 0]])) == pytest.approx(2.0)
    assert hs_norm_sq(np.array([[0, 2], [0, 0]]), normalized=False) == pytest.approx(4.0)


def test_hs_norm_unitary_invariance():
    rng = np.random.default_rng(0)
    for d in (2, 4):
        A = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
        U = rand_unitary(rng, d)
        assert abs(hs_norm_sq(U @ A @ dagger(U)) - hs_norm_sq(A)) < 1e-12 * max(1, hs_norm_sq(A))


def test_iterated_ad_examples():
    assert np.allclose(iterated_ad(Z, X, 0), X)
    assert np.allclose(iterated_ad(Z, X, 1), 2j * Y)
    assert np.allclose(iterated_ad(Z, X, 2), 4 * X)
    assert np.allclose(commutator(Z, X), 2j * Y)


def test_iterated_ad_errors():
    with pytest.raises(ValueError):
        iterated_ad(Z, np.eye(3), 1)
    with pytest.raises(ValueError):
        iterated_ad(Z, X, 1000)
    with pytest.raises(ValueError):
        commutator(Z, np.eye(3))


# --- Kronecker structure -------------------------------------------------------


def test_kron_examples():
    assert np.allclose(kron_sum(np.zeros((2, 2)), np.zeros((2, 2))), np.zeros((4, 4)))
    assert np.allclose(kron(np.eye(2), np.eye(2)), np.eye(4))
    with pytest.raises(ValueError):
        kron_sum(np.zeros((2, 3)), np.eye(2))


def test_vec_conjugation_identity():
    rng = np.random.default_rng(1)
    U = rand_unitary(rng, 2)
    E = rand_herm(rng, 2)
    assert np.allclose(vec(U @ E @ dagger(U)), np.kron(U.conj(), U) @ vec(E))
    A, B, C = (rng.normal(size=(3, 3)) for _ in range(3))
    assert np.allclose(vec(A @ B @ C), np.kron(C.T, A) @ vec(B))
    assert np.allclose(unvec(vec(A)), A)


def test_kron_sum_exponential():
    rng = np.random.default_rng(2)
    A = 1j * rand_herm(rng, 2)
    B = rng.normal(size=(3, 3))
    assert np.allclose(expm(kron_sum(A, B)), kron(expm(A), expm(B)), atol=1e-10)


# --- matrix exponential -------------------------------------------------------


def test_expm_examples():
    assert np.allclose(expm(np.zeros((3, 3))), np.eye(3))
    assert np.allclose(expm(-1j * np.pi / 2 * X), -1j * X, atol=1e-12)


def test_expm_against_taylor_series():
    rng = np.random.default_rng(3)
    for _ in range(10):
        A = -1j * rand_herm(rng, 4, 0.5)
        ref = taylor_expm(A)
        assert np.linalg.norm(expm(A) - ref) / np.linalg.norm(ref) < 1e-10


def test_expm_accuracy_for_moderate_norms():
    # series oracle in high precision via repeated squaring of a scaled Taylor sum
    rng = np.random.default_rng(4)
    for _ in range(5):
        A = -1j * rand_herm(rng, 3)
        A *= 10 / np.linalg.norm(A, 2)
        ref = np.linalg.matrix_power(taylor_expm(A / 64, 30), 64)
        assert np.linalg.norm(expm(A) - ref) / np.linalg.norm(ref) < 1e-12


def test_expm_unitarity_and_inverse():
    rng = np.random.default_rng(5)
    for _ in range(20):
        H = rand_herm(rng, 3)
        U = expm(-1j * H * 0.7)
        assert np.linalg.norm(dagger(U) @ U - np.eye(3)) < 1e-10
        A = rng.normal(size=(3, 3))
        A *= 5 / np.linalg.norm(A, 2)
        assert np.allclose(expm(A) @ expm(-A), np.eye(3), atol=1e-10)


def test_expm_errors():
    with pytest.raises(ExpmOverflowError):
        expm(np.array([[1e6, 0], [0, 0]]))
    with pytest.raises(ValueError):
        expm(np.array([[np.nan, 0], [0, 0]]))


# --- Frechet derivatives -------------------------------------------------------


def test_frechet_trivial_cases():
    rng = np.random.default_rng(6)
    A = -1j * rand_herm(rng, 2)
    E, L = expm_frechet(A, np.zeros((2, 2)))
    assert np.allclose(L, 0)
    assert np.array_equal(E, expm(np.block([[A, np.zeros((2, 2))], [np.zeros((2, 2)), A]]))[:2, :2])
    D = rng.normal(size=(2, 2))
    assert np.allclose(expm_frechet(np.zeros((2, 2)), D)[1], D)


def test_frechet_matches_finite_differences():
    rng = np.random.default_rng(7)
    h = 1e-6
    worst = 0.0
    for _ in range(100):
        A = -1j * rand_herm(rng, 2)
        D = -1j * rand_herm(rng, 2)
        _, L = expm_frechet(A, D)
        fd = (expm(A + h * D) - expm(A - h * D)) / (2 * h)
        worst = max(worst, np.linalg.norm(L - fd) / np.linalg.norm(fd))
    assert worst < 1e-6


def test_frechet_adjoint_identity():
    rng = np.random.default_rng(8)
    for d in (2, 4):
        A = -1j * rand_herm(rng, d)
        D = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
        G = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
        lhs = np.vdot(G, expm_frechet(A, D)[1]).real
        rhs = np.vdot(expm_frechet_adjoint(A, G), D).real
        assert lhs == pytest.approx(rhs, rel=1e-10)


# --- spectral propagator ----------------------------------------------------------


def test_spectral_propagator_matches_expm_and_frechet():
    rng = np.random.default_rng(9)
    H = np.array([rand_herm(rng, 3) for _ in range(4)])
    prop = SpectralPropagator(H, 0.6)
    assert np.allclose(prop.propagator, expm(-1j * 0.6 * H), atol=1e-12)
    D = np.array([rand_herm(rng, 3) for _ in range(4)])
    assert np.allclose(prop.derivative(D), expm_frechet(-1j * 0.6 * H, -1j * 0.6 * D)[1], atol=1e-12)


def test_toggled_integral_against_quadrature():
    rng = np.random.default_rng(10)
    H = rand_herm(rng, 2)
    E = rand_herm(rng, 2)
    dt = 0.9
    prop = SpectralPropagator(H[None], dt)
    s = np.linspace(0, dt, 2001)
    vals = np.array([expm(1j * H * t) @ E @ expm(-1j * H * t) for t in s])
    w = np.full(s.size, 2.0)
    w[1::2] = 4.0
    w[0] = w[-1] = 1.0
    ref = np.tensordot(w * (s[1] - s[0]) / 3, vals, axes=1)
    assert np.allclose(prop.toggled_integral(E[None])[0], ref, atol=1e-12)


@pytest.mark.parametrize("degenerate", [False, True])
def test_toggled_integral_vjp_finite_differences(degenerate):
    rng = np.random.default_rng(11)
    d = 3
    H = rand_herm(rng, d) if not degenerate else np.diag([0.4, 0.4, -0.3]).astype(complex)
    E = rand_herm(rng, d)
    G = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    dt = 0.8

    def f(Hm):
        return np.vdot(G, SpectralPropagator(Hm[None], dt).toggled_integral(E[None])[0]).real

    grad = SpectralPropagator(H[None], dt).toggled_integral_vjp(E[None], G[None])[0]
    h = 1e-6
    for _ in range(5):
        D = rand_herm(rng, d)
        fd = (f(H + h * D) - f(H - h * D)) / (2 * h)
        assert np.vdot(grad, D).real == pytest.approx(fd, rel=1e-6, abs=1e-9)


@settings(max_examples=25, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(-3, 3), st.floats(0.05, 2.0))
def test_propagator_unitary_property(a, b, c, dt):
    H = a * X + b * Y + c * Z
    U = SpectralPropagator(H[None], dt).propagator[0]
    assert np.linalg.norm(dagger(U) @ U - np.eye(2)) < 1e-10
