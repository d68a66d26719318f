"""Spectral oracle for the Dirac operator of the round sphere.

In the embedded picture (trivial C^2 bundle, Clifford multiplication
c(X) = -i sigma.(X x nu)) the Dirac operator is D = -(sigma.L + 1) / r with
L = -i x x grad the orbital angular momentum. On Y_lm (x) C^2 it acts through
ladder operators within each l-shell, and its eigenvalues are -(l+1) on
total angular momentum j = l + 1/2 and +l on j = l - 1/2.

The truncation keeps every state with j <= K - 1/2. That space is rotation
invariant, so D and the grading sigma.nu both preserve it: the truncated
spectrum is exactly +-1, ..., +-K with multiplicities 2(k+1), and the
grading anticommutes with the truncated D to round-off. Multiplication
operators are assembled by Gauss-Legendre x uniform quadrature on the
product basis l <= K and compressed onto the truncation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg
from scipy.special import sph_harm_y

from ..spectral import duhamel_quadrature
from .clifford import SIGMA, vol_factor
from .geometry import Form

FD_STEP = 1e-5


def _shell_index(l: int, m: int, s: int) -> int:
    return 2 * (l * l + l + m) + s


def _ladder_dirac(Lmax: int) -> np.ndarray:
    """-(sigma.L + 1) on the product basis l <= Lmax (radius 1)."""
    n = 2 * (Lmax + 1) ** 2
    SL = np.zeros((n, n), dtype=complex)
    for l in range(Lmax + 1):
        for m in range(-l, l + 1):
            up, dn = _shell_index(l, m, 0), _shell_index(l, m, 1)
            SL[up, up] += m
            SL[dn, dn] -= m
            if m > -l:  # (1/2) sigma_+ L_- : (m, down) -> (m-1, up)
                c = math.sqrt((l + m) * (l - m + 1))
                SL[_shell_index(l, m - 1, 0), dn] += c
            if m < l:  # (1/2) sigma_- L_+ : (m, up) -> (m+1, down)
                c = math.sqrt((l - m) * (l + m + 1))
                SL[_shell_index(l, m + 1, 1), up] += c
    return -(SL + np.eye(n))


def _quadrature(n_theta: int, n_phi: int):
    z, wz = np.polynomial.legendre.leggauss(n_theta)
    phi = np.arange(n_phi) * (2 * math.pi / n_phi)
    Z, PHI = np.meshgrid(z, phi, indexing="ij")
    theta = np.arccos(Z)
    w = (wz[:, None] * np.full(n_phi, 2 * math.pi / n_phi)).ravel()
    rho = np.sqrt(1 - Z**2)
    x = np.stack([rho * np.cos(PHI), rho * np.sin(PHI), Z], axis=-1).reshape(-1, 3)
    return x, theta.ravel(), PHI.ravel(), w


def scalar_harmonics(Lmax: int, theta, phi) -> np.ndarray:
    """Y_lm at the given angles, columns ordered (l, m), shape (n, (Lmax+1)^2)."""
    cols = []
    for l in range(Lmax + 1):
        for m in range(-l, l + 1):
            cols.append(sph_harm_y(l, m, theta, phi))
    return np.stack(cols, axis=-1)


def spinor_basis_values(Lmax: int, x: np.ndarray) -> np.ndarray:
    """Product basis Y_lm e_s at unit vectors x, shape (n, 2 (Lmax+1)^2, 2)."""
    x = np.asarray(x, dtype=float)
    x = x / np.linalg.norm(x, axis=-1, keepdims=True)
    theta = np.arccos(np.clip(x[:, 2], -1, 1))
    phi = np.arctan2(x[:, 1], x[:, 0])
    Y = scalar_harmonics(Lmax, theta, phi)
    n, nb = Y.shape
    out = np.zeros((n, 2 * nb, 2), dtype=complex)
    out[:, 0::2, 0] = Y
    out[:, 1::2, 1] = Y
    return out


def _tangent_grad(f: Callable, x: np.ndarray, h: float = FD_STEP) -> np.ndarray:
    g = np.zeros(x.shape, dtype=complex)
    for a in range(3):
        e = np.zeros(3)
        e[a] = h
        g[:, a] = (np.asarray(f(x + e), complex) - np.asarray(f(x - e), complex)) / (2 * h)
    return g


def _curl(w: Callable, x: np.ndarray, h: float = FD_STEP) -> np.ndarray:
    J = np.zeros(x.shape + (3,), dtype=complex)  # J[n, a, b] = d_b w_a
    for b in range(3):
        e = np.zeros(3)
        e[b] = h
        J[:, :, b] = (np.asarray(w(x + e), complex) - np.asarray(w(x - e), complex)) / (2 * h)
    return np.stack([J[:, 2, 1] - J[:, 1, 2], J[:, 0, 2] - J[:, 2, 0], J[:, 1, 0] - J[:, 0, 1]], axis=-1)


def _cross_sigma(a: np.ndarray, nu: np.ndarray) -> np.ndarray:
    """-i sigma.(a x nu) for complex ambient a."""
    v = np.cross(a, nu)
    return -1j * np.einsum("na,aij->nij", v, SIGMA)


@dataclass
class DiracTruncation:
    """D, the grading and helpers on the span of spinor harmonics with j <= K - 1/2."""

    K: int
    radius: float
    D: np.ndarray
    gamma: np.ndarray
    U: np.ndarray
    convention: str = "increasing"
    nodes: tuple = field(default=None, repr=False)
    _Bq: np.ndarray = field(default=None, repr=False)

    @property
    def size(self) -> int:
        return self.D.shape[0]

    @property
    def eigenvalues(self) -> np.ndarray:
        return np.sort(np.linalg.eigvalsh(self.D))

    def field_matrix(self, M: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
        """Galerkin matrix of multiplication by a 2 x 2 matrix field M(x) (x on the unit sphere)."""
        x, w = self.nodes
        vals = np.asarray(M(self.radius * x), dtype=complex)
        B = self._Bq  # (nq, nb, 2)
        full = np.einsum("q,qis,qst,qjt->ij", w, np.conj(B), vals, B, optimize=True)
        return self.U.conj().T @ full @ self.U

    def clifford(self, form: Form) -> np.ndarray:
        """Matrix of c(alpha) for a mixed form given by embedded callables."""
        r = self.radius
        k = vol_factor(self.convention)

        def M(x):
            nu = x / r
            n = len(x)
            out = np.zeros((n, 2, 2), dtype=complex)
            if form.f0 is not None:
                out += (np.asarray(form.f0(x), complex) * np.ones(n))[:, None, None] * np.eye(2)
            if form.w1 is not None:
                out += _cross_sigma(np.asarray(form.w1(x), complex), nu)
            if form.f2 is not None:
                f2 = np.asarray(form.f2(x), complex) * np.ones(n)
                out += (k * f2)[:, None, None] * (-1j * np.einsum("na,aij->nij", nu, SIGMA))
            return out

        return self.field_matrix(M)

    def exterior_d(self, form: Form) -> Form:
        """d of a form given by embedded callables (ambient central differences)."""
        f1 = None
        f2 = None
        r = self.radius
        if form.f0 is not None:
            f0 = form.f0
            f1 = lambda x: _tangent_grad(f0, x)  # noqa: E731
        if form.w1 is not None:
            w1 = form.w1
            f2 = lambda x: np.sum(_curl(w1, x) * (x / r), axis=-1)  # noqa: E731
        return Form(None, f1, f2, f"d({form.label})")

    def graded_commutator(self, form: Form) -> np.ndarray:
        """[D, c(alpha)] = D c - (-1)^k c D summed over homogeneous parts."""
        out = np.zeros_like(self.D)
        for deg in form.degrees:
            C = self.clifford(form.part(deg))
            out += self.D @ C - (-1) ** deg * C @ self.D
        return out

    def supertrace(self, A: np.ndarray) -> complex:
        return complex(np.trace(self.gamma @ A))

    def heat(self, t: float) -> np.ndarray:
        lam, V = np.linalg.eigh(self.D)
        return (V * np.exp(-t * lam**2)) @ V.conj().T


def dirac_truncation(K: int, radius: float = 1.0, convention: str = "increasing", quad: tuple | None = None) -> DiracTruncation:
    """Dense Dirac matrix on spinor harmonics with j <= K - 1/2 (eigenvalues +-1..+-K)."""
    if K < 1:
        raise ValueError("K must be >= 1")
    Lmax = K
    Dfull = _ladder_dirac(Lmax) / radius
    # J^2 separates j = l +- 1/2 inside each shell; keep j <= K - 1/2
    keep_cols = []
    for l in range(Lmax + 1):
        lo = _shell_index(l, -l, 0)
        hi = _shell_index(l, l, 1) + 1
        blk = Dfull[lo:hi, lo:hi] * radius
        lam, V = np.linalg.eigh(blk)
        for val, vec in zip(lam, V.T):
            j = (-val - 0.5) if val < 0 else (val - 0.5)  # -(l+1) <-> j=l+1/2, +l <-> j=l-1/2
            if j <= K - 0.5 + 1e-9:
                col = np.zeros(Dfull.shape[0], dtype=complex)
                col[lo:hi] = vec
                keep_cols.append(col)
    U = np.stack(keep_cols, axis=1)
    D = U.conj().T @ Dfull @ U
    D = 0.5 * (D + D.conj().T)
    nq = quad or (2 * Lmax + 12, 4 * Lmax + 24)
    x, _, _, w = _quadrature(*nq)
    Bq = spinor_basis_values(Lmax, x)
    T = DiracTruncation(K, radius, D, np.zeros_like(D), U, convention, (x, w), Bq)
    T.gamma = T.field_matrix(lambda y: np.einsum("na,aij->nij", y / radius, SIGMA))
    return T


def ft_matrix(T: DiracTruncation, alpha_p: Form | None, alpha_pp: Form | None) -> np.ndarray:
    """F(alpha) = c(d alpha') - [D, c(alpha')] - c(alpha'') from its definition."""
    out = np.zeros_like(T.D)
    if alpha_p is not None and not alpha_p.is_zero:
        out += T.clifford(T.exterior_d(alpha_p)) - T.graded_commutator(alpha_p)
    if alpha_pp is not None and not alpha_pp.is_zero:
        out -= T.clifford(alpha_pp)
    return out


def str_heat(T: DiracTruncation, t: float) -> complex:
    """Str(e^{-t D^2}) on the truncation."""
    return T.supertrace(T.heat(t))


def heat_trace(T: DiracTruncation, t: float) -> float:
    return float(np.real(np.trace(T.heat(t))))


def heat_trace_exact(t: float, radius: float = 1.0, tol: float = 1e-16) -> float:
    """Tr(e^{-t D^2}) = sum_k 4(k+1) e^{-t (k+1)^2 / r^2}."""
    total, k = 0.0, 0
    while True:
        term = 4 * (k + 1) * math.exp(-t * (k + 1) ** 2 / radius**2)
        total += term
        if term < tol * total:
            return total
        k += 1


def chern_N0_spectral(T: DiracTruncation, alpha0: Form, t: float = 1.0) -> complex:
    """Str(c(alpha0') e^{-t D^2})."""
    return T.supertrace(T.clifford(alpha0) @ T.heat(t))


def chern_N1_spectral(
    T: DiracTruncation, alpha0: Form, alpha1_p: Form | None, alpha1_pp: Form | None, t: float = 1.0
) -> complex:
    """-Str(c(alpha0') int_0^t e^{-s D^2} F(alpha1) e^{-(t-s) D^2} ds); the Chern piece is t = 1."""
    F = ft_matrix(T, alpha1_p, alpha1_pp)
    duh = duhamel_quadrature(T.D @ T.D, F, t)
    return -T.supertrace(T.clifford(alpha0) @ duh)


def anticommutation_defect(T: DiracTruncation) -> float:
    return float(np.abs(T.gamma @ T.D + T.D @ T.gamma).max())


def expm_check(T: DiracTruncation, t: float) -> float:
    return float(np.abs(T.heat(t) - scipy.linalg.expm(-t * T.D @ T.D)).max())
