import math

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given
from hypothesis import strategies as st

from covfk.bundles import trivial, u1_flat
from covfk.errors import DomainError, UnsupportedCoefficientError
from covfk.fk import FirstOrderOp
from covfk.geometry import Circle, FlatTorus, Sphere2
from covfk.spectral import (
    SphereScalarTruncation,
    assemble_H,
    duhamel_quadrature,
    duhamel_reference,
    semigroup_apply,
    sphere_scalar_semigroup,
)
from covfk.trig import TrigPoly


def _block_theta_part(H, P, t):
    n = len(H)
    big = np.block([[H, np.zeros_like(H)], [P, H]])
    return -scipy.linalg.expm(-t * big)[n:, :n]


@given(st.integers(1, 12), st.floats(0.05, 3.0), st.integers(0, 2**32 - 1))
def test_duhamel_matches_block_exponential(n, t, seed):
    r = np.random.default_rng(seed)
    H = r.normal(size=(n, n)) + 1j * r.normal(size=(n, n))
    H = H @ H.conj().T / n + 0.3 * r.normal(size=(n, n))
    P = r.normal(size=(n, n)) + 1j * r.normal(size=(n, n))
    assert np.allclose(duhamel_quadrature(H, P, t), _block_theta_part(H, P, t), atol=1e-10, rtol=1e-9)


def test_duhamel_degenerate_spectrum_uses_confluent_limit():
    H = np.diag([1.0, 1.0, 2.0]).astype(complex)
    P = np.arange(9.0).reshape(3, 3)
    D = duhamel_quadrature(H, P, 0.7)
    assert D[0, 1] == pytest.approx(0.7 * math.exp(-0.7) * P[0, 1])
    assert D[0, 2] == pytest.approx((math.exp(-0.7) - math.exp(-1.4)) / 1.0 * P[0, 2])


def test_duhamel_defective_matrix_falls_back():
    H = np.array([[1.0, 1.0], [0.0, 1.0]], dtype=complex)  # Jordan block
    P = np.array([[0.5, -1.0], [2.0, 0.3]], dtype=complex)
    assert np.allclose(duhamel_quadrature(H, P, 1.3), _block_theta_part(H, P, 1.3), atol=1e-12)


def test_duhamel_reference_agrees():
    r = np.random.default_rng(1)
    H = r.normal(size=(4, 4))
    H = H @ H.T
    P = r.normal(size=(4, 4))
    assert np.allclose(duhamel_quadrature(H, P, 1.0), duhamel_reference(H, P, 1.0), atol=1e-12)


def test_duhamel_edge_cases():
    H = np.eye(2)
    assert np.all(duhamel_quadrature(H, np.ones((2, 2)), 0.0) == 0)
    with pytest.raises(DomainError):
        duhamel_quadrature(H, np.ones((3, 3)), 1.0)


@given(st.floats(0.0, 3.0))
def test_duhamel_of_identity_commuting_case(t):
    # P commuting with H: the integral is t P e^{-tH}
    H = np.diag([0.2, 1.5, 3.0])
    P = np.diag([1.0, -2.0, 0.5])
    assert np.allclose(duhamel_quadrature(H, P, t), t * P @ scipy.linalg.expm(-t * H), atol=1e-13)


# -- Fourier truncation ----------------------------------------------------------


def test_circle_constant_coefficients_are_diagonal():
    C = Circle()
    a, V, K = 0.7, 0.2 + 1j, 5
    T = assemble_H(trivial(C), FirstOrderOp.constant(C, a, V), K)
    k = np.arange(-K, K + 1)
    assert np.allclose(T.H, np.diag(k**2 / 2 + 1j * a * k + V), atol=1e-13)


def test_self_adjoint_operator_gives_hermitian_matrix():
    T = FlatTorus((2 * math.pi, 3.0))
    V = TrigPoly.cos((1, 1), T.periods, 0.8)
    A = [TrigPoly.cos((0, 1), T.periods, 0.3j), TrigPoly.constant(0.2j, T.periods)]
    from covfk.bundles import from_trig

    H = assemble_H(from_trig(T, A), FirstOrderOp.trig(T, None, V), 4).H
    assert np.allclose(H, H.conj().T, atol=1e-12)
    assert np.all(np.linalg.eigvalsh(H) > -0.8 - 1e-9)


def test_u1_bundle_spectrum():
    C = Circle()
    T = assemble_H(u1_flat(C, 0.25), FirstOrderOp.zero(C), 6)
    k = np.arange(-6, 7)
    assert np.allclose(np.sort(np.diag(T.H).real), np.sort((k + 0.25) ** 2 / 2))


def test_multiplication_and_derivative_matrices():
    C = Circle()
    T = assemble_H(trivial(C), FirstOrderOp.zero(C), 3)
    M = T.multiplication(TrigPoly.cos(1, C.periods))
    assert np.allclose(M, 0.5 * (np.eye(7, k=1) + np.eye(7, k=-1)))
    D = T.operator(FirstOrderOp.constant(C, 1.0, None))
    assert np.allclose(D, np.diag(1j * np.arange(-3, 4)))


def test_coefficients_round_trip():
    C = Circle(2.0)
    f = TrigPoly({(1,): 2.0, (-2,): 1j}, C.periods)
    T = assemble_H(trivial(C), FirstOrderOp.zero(C), 4)
    x = C.point(np.linspace(0, 12, 7).reshape(-1, 1))
    assert np.allclose(T.evaluate(T.coeffs(f), x)[:, 0], f(x.coords)[:, 0, 0])
    with pytest.raises(DomainError):
        T.coeffs(TrigPoly({(9,): 1.0}, C.periods))


def test_semigroup_apply():
    C = Circle()
    T = assemble_H(trivial(C), FirstOrderOp.zero(C), 2)
    v = np.arange(5, dtype=complex)
    assert np.array_equal(semigroup_apply(T, 0.0, v), v)
    assert np.allclose(semigroup_apply(T, 1.0, v), np.exp(-np.arange(-2, 3) ** 2 / 2) * v)
    with pytest.raises(DomainError):
        semigroup_apply(T, -1.0, v)


def test_sphere_is_not_fourier_assemblable():
    S = Sphere2()
    with pytest.raises(UnsupportedCoefficientError):
        assemble_H(trivial(S), FirstOrderOp.zero(S), 3)


def test_sphere_scalar_spectrum():
    T = SphereScalarTruncation(3, radius=2.0)
    assert len(T.eigenvalues) == 16
    assert T.eigenvalues[-1] == pytest.approx(3 * 4 / 8)
    c = np.ones(16)
    out = sphere_scalar_semigroup(3, 1.0, c, 2.0)
    assert out[0] == 1 and out[1] == pytest.approx(math.exp(-0.25))
    with pytest.raises(DomainError):
        sphere_scalar_semigroup(3, 1.0, np.ones(5))
