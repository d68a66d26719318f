"""Deterministic reference values from spectral truncations.

On circles and flat tori an operator with trig-polynomial coefficients maps
the Fourier modes |k| <= K into modes |k| <= K + deg, so assembling on an
enlarged basis and cropping gives the exact Galerkin matrix. The basis is
e_k(x) = exp(i <k, w x>) / sqrt(vol) with w_j = 2 pi / period_j, tensored
with the standard fiber basis (fiber index fastest).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .bundles import BundleSpec
from .errors import DomainError, UnsupportedCoefficientError
from .fk import FirstOrderOp, SectionFn
from .geometry import Circle, FlatTorus, Points
from .trig import TrigPoly

CONFLUENT_TOL = 1e-10
COND_LIMIT = 1e10
PANEL_NODES = 16


def _modes(K: int, dim: int) -> np.ndarray:
    axis = range(-K, K + 1)
    return np.array(list(itertools.product(axis, repeat=dim)), dtype=np.int64).reshape(-1, dim)


@dataclass
class FourierTruncation:
    """Galerkin matrix of H = nabla^dagger nabla / 2 + Q on modes |k_j| <= K."""

    manifold: Circle | FlatTorus
    K: int
    rank: int
    H: np.ndarray
    modes: np.ndarray
    _ext: "_Extended" = field(repr=False, default=None)

    @property
    def size(self) -> int:
        return self.H.shape[0]

    def coeffs(self, psi: SectionFn | TrigPoly) -> np.ndarray:
        """Basis coefficients of a trig-polynomial section."""
        f = psi.fourier if isinstance(psi, SectionFn) else psi
        if f is None:
            raise UnsupportedCoefficientError("section has no Fourier data")
        d = self.rank
        out = np.zeros(self.size, dtype=complex)
        index = {tuple(k): i for i, k in enumerate(self.modes)}
        root = math.sqrt(self.manifold.volume)
        for q, c in f.coeffs.items():
            if q not in index:
                raise DomainError(f"mode {q} exceeds the cutoff K={self.K}")
            out[index[q] * d:(index[q] + 1) * d] += root * c.reshape(d)
        return out

    def evaluate(self, c: np.ndarray, p: Points) -> np.ndarray:
        """Section with coefficients c at the points, shape (n, d)."""
        w = 2 * np.pi / self.manifold.periods
        phase = np.exp(1j * (p.coords * w) @ self.modes.T) / math.sqrt(self.manifold.volume)
        return phase @ c.reshape(-1, self.rank)

    def multiplication(self, f: TrigPoly) -> np.ndarray:
        return self._ext.crop(self._ext.mult(f))

    def operator(self, Q: FirstOrderOp, B: BundleSpec | None = None) -> np.ndarray:
        """Matrix of the first-order operator sigma1(Q) nabla + q0 alone."""
        return self._ext.crop(self._ext.first_order(Q, self._ext.covariant(B)))

    def trace(self, A: np.ndarray) -> complex:
        return complex(np.trace(A))


class _Extended:
    """Matrices on the enlarged basis |k_j| <= K + pad."""

    def __init__(self, M, K: int, pad: int, d: int):
        self.M, self.K, self.pad, self.d = M, K, pad, d
        self.modes = _modes(K + pad, M.dim)
        self.index = {tuple(k): i for i, k in enumerate(self.modes)}
        w = 2 * np.pi / M.periods
        self.deriv = [np.kron(np.diag(1j * w[j] * self.modes[:, j]), np.eye(d)) for j in range(M.dim)]
        inner = np.all(np.abs(self.modes) <= K, axis=1)
        self.keep = np.repeat(inner, d)

    def mult(self, f: TrigPoly) -> np.ndarray:
        d, n = self.d, len(self.modes)
        out = np.zeros((n * d, n * d), dtype=complex)
        for q, c in f.coeffs.items():
            for col, k in enumerate(self.modes):
                row = self.index.get(tuple(k + np.asarray(q)))
                if row is not None:
                    out[row * d:(row + 1) * d, col * d:(col + 1) * d] += c
        return out

    def crop(self, A: np.ndarray) -> np.ndarray:
        return A[np.ix_(self.keep, self.keep)]

    def covariant(self, B: BundleSpec | None) -> list[np.ndarray]:
        nabla = [D.copy() for D in self.deriv]
        if B is None or B.is_trivial:
            return nabla
        if B.fourier is None:
            raise UnsupportedCoefficientError("connection has no trig-polynomial data")
        return [nabla[j] + self.mult(B.fourier[j]) for j in range(self.M.dim)]

    def first_order(self, Q: FirstOrderOp, nabla: list[np.ndarray]) -> np.ndarray:
        n = len(self.modes) * self.d
        out = np.zeros((n, n), dtype=complex)
        if Q.symbol is not None:
            if Q.fourier_symbol is None:
                raise UnsupportedCoefficientError("symbol has no trig-polynomial data")
            for j, S in enumerate(Q.fourier_symbol):
                out += self.mult(S) @ nabla[j]
        if Q.potential is not None:
            if Q.fourier_potential is None:
                raise UnsupportedCoefficientError("potential has no trig-polynomial data")
            out += self.mult(Q.fourier_potential)
        return out


def _degree(B: BundleSpec, Q: FirstOrderOp) -> int:
    deg = 0
    if B.fourier is not None:
        deg = max(deg, max(f.degree for f in B.fourier))
    for f in (Q.fourier_symbol or []):
        deg = max(deg, f.degree)
    if Q.fourier_potential is not None:
        deg = max(deg, Q.fourier_potential.degree)
    return deg


def assemble_H(B: BundleSpec, Q: FirstOrderOp, K: int) -> FourierTruncation:
    """Exact Galerkin matrix of nabla^dagger nabla / 2 + sigma1(Q) nabla + q0."""
    M = B.manifold
    if not isinstance(M, (Circle, FlatTorus)):
        raise UnsupportedCoefficientError("Fourier assembly needs a circle or flat torus")
    if K < 0:
        raise DomainError("cutoff K must be >= 0")
    if Q.rank != B.rank:
        raise DomainError("operator and bundle ranks differ")
    deg = _degree(B, Q)
    ext = _Extended(M, K, 2 * deg, B.rank)
    nabla = ext.covariant(B)
    lap = sum(N @ N for N in nabla)
    H = -0.5 * lap + ext.first_order(Q, nabla)
    return FourierTruncation(M, K, B.rank, ext.crop(H), _modes(K, M.dim), ext)


def semigroup_apply(T: FourierTruncation | np.ndarray, t: float, coeffs: np.ndarray) -> np.ndarray:
    """e^{-tH} applied to a coefficient vector (or matrix of columns)."""
    if t < 0:
        raise DomainError("t must be >= 0")
    H = T.H if isinstance(T, FourierTruncation) else np.asarray(T)
    coeffs = np.asarray(coeffs, dtype=complex)
    if t == 0:
        return coeffs.copy()
    return scipy.linalg.expm(-t * H) @ coeffs


def _duhamel_eig(lam: np.ndarray, V: np.ndarray, P: np.ndarray, t: float) -> np.ndarray:
    Vi = np.linalg.inv(V)
    Pt = Vi @ P @ V
    li, lj = lam[:, None], lam[None, :]
    ei, ej = np.exp(-t * li), np.exp(-t * lj)
    diff = lj - li
    close = np.abs(diff) < CONFLUENT_TOL
    safe = np.where(close, 1.0, diff)
    G = np.where(close, t * np.exp(-t * 0.5 * (li + lj)), (ei - ej) / safe)
    return V @ (G * Pt) @ Vi


def _duhamel_gauss(H: np.ndarray, P: np.ndarray, t: float) -> np.ndarray:
    """Composite Gauss-Legendre rule, panels short enough that t_panel * |H| <= 2."""
    rho = float(np.max(np.abs(np.linalg.eigvals(H)))) if H.size else 0.0
    n_pan = max(1, math.ceil(t * rho / 2.0))
    x, w = np.polynomial.legendre.leggauss(PANEL_NODES)
    edges = np.linspace(0.0, t, n_pan + 1)
    out = np.zeros_like(P, dtype=complex)
    for a, b in zip(edges[:-1], edges[1:]):
        for xk, wk in zip(x, w):
            sk = a + 0.5 * (b - a) * (xk + 1)
            out += 0.5 * (b - a) * wk * (scipy.linalg.expm(-sk * H) @ P @ scipy.linalg.expm(-(t - sk) * H))
    return out


def duhamel_quadrature(T: FourierTruncation | np.ndarray, P: np.ndarray, t: float) -> np.ndarray:
    """int_0^t e^{-sH} P e^{-(t-s)H} ds.

    In an eigenbasis of H the entry (i, j) of P is multiplied by the divided
    difference (e^{-t l_i} - e^{-t l_j}) / (l_j - l_i), with the confluent
    limit t e^{-t l} for nearly equal eigenvalues. If the eigenvector matrix
    is too ill-conditioned (defective or nearly defective H) a composite
    16-node Gauss-Legendre rule in s with dense exponentials is used
    instead, with panels of length at most 2 / |H|; its relative accuracy is
    about 1e-13.
    """
    H = T.H if isinstance(T, FourierTruncation) else np.asarray(T, dtype=complex)
    P = np.asarray(P, dtype=complex)
    if H.shape != P.shape:
        raise DomainError("H and P must have the same shape")
    if t == 0:
        return np.zeros_like(P)
    lam, V = np.linalg.eig(H)
    if np.linalg.cond(V) > COND_LIMIT:
        return _duhamel_gauss(H, P, t)
    return _duhamel_eig(lam, V, P, t)


def duhamel_reference(H: np.ndarray, P: np.ndarray, t: float, n: int = 1024) -> np.ndarray:
    """Brute-force Gauss-Legendre value (slow, for tests)."""
    lam, V = np.linalg.eig(H)
    Vi = np.linalg.inv(V)
    x, w = np.polynomial.legendre.leggauss(n)
    s = 0.5 * t * (x + 1)
    Pt = Vi @ P @ V
    out = np.zeros_like(Pt)
    for sk, wk in zip(s, w):
        out += wk * np.exp(-sk * lam)[:, None] * Pt * np.exp(-(t - sk) * lam)[None, :]
    return 0.5 * t * (V @ out @ Vi)


@dataclass
class SphereScalarTruncation:
    """Spectrum of -Delta/2 on the round sphere of radius r up to degree L."""

    L: int
    radius: float = 1.0

    @property
    def degrees(self) -> np.ndarray:
        return np.repeat(np.arange(self.L + 1), 2 * np.arange(self.L + 1) + 1)

    @property
    def eigenvalues(self) -> np.ndarray:
        l = self.degrees
        return l * (l + 1) / (2 * self.radius**2)

    @property
    def multiplicities(self) -> np.ndarray:
        return 2 * np.arange(self.L + 1) + 1

    def trace(self, t: float) -> float:
        return float(np.sum(np.exp(-t * self.eigenvalues)))


def sphere_scalar_semigroup(L: int, t: float, coeffs, radius: float = 1.0) -> np.ndarray:
    """Coefficients ordered (l, m), l = 0..L, m = -l..l, multiplied by e^{-l(l+1)t/(2r^2)}."""
    T = SphereScalarTruncation(L, radius)
    coeffs = np.asarray(coeffs, dtype=complex)
    if coeffs.shape[0] != (L + 1) ** 2:
        raise DomainError("need (L+1)^2 coefficients")
    f = np.exp(-t * T.eigenvalues)
    return coeffs * f.reshape((-1,) + (1,) * (coeffs.ndim - 1))
