"""Finite-difference Dirac operator and the identities it satisfies.

Every derivative is a central difference of step h taken in the chart of
the evaluation point, so each check below is O(h^2). On the sphere a
stencil never leaves the chart: canonical chart coordinates satisfy
|u| <= 2 and the chart is valid out to |u| = 4.
"""

from __future__ import annotations

import numpy as np

from ..geometry import Points
from .clifford import GAMMA1, GAMMA2, clifford_mult
from .geometry import ChartForm, Form, SpinorField, SpinSurface

GAMMAS = (GAMMA1, GAMMA2)


def _mv(A, v):
    return np.einsum("nij,nj->ni", A, v)


def cov_deriv(surf: SpinSurface, phi: SpinorField, p: Points, i: int, h: float) -> np.ndarray:
    """nabla_{d_i} phi at p."""
    fp = phi(surf.shifted(p, i, h))
    fm = phi(surf.shifted(p, i, -h))
    A = surf.connection(p)[:, i]
    return (fp - fm) / (2 * h) + _mv(A, phi(p))


def dirac_apply(surf: SpinSurface, phi: SpinorField, p: Points, h: float = 1e-3) -> np.ndarray:
    """D phi = sum_a c(e^a) nabla_{e_a} phi = lambda^{-1} sum_i gamma_i nabla_i phi."""
    lam = surf.lam(p)
    out = np.zeros((len(p), 2), dtype=complex)
    for i in range(2):
        out += _mv(np.broadcast_to(GAMMAS[i], (len(p), 2, 2)), cov_deriv(surf, phi, p, i, h))
    return out / lam[:, None]


def dirac_field(surf: SpinSurface, phi: SpinorField, h: float) -> SpinorField:
    return SpinorField(lambda q: dirac_apply(surf, phi, q, h))


def bochner_apply(surf: SpinSurface, phi: SpinorField, p: Points, h: float = 1e-3) -> np.ndarray:
    """nabla^dagger nabla phi = -lambda^{-2} sum_i nabla_i nabla_i phi.

    In two conformal dimensions g^{ij} Gamma^k_ij vanishes, so no first-order
    correction appears. Expanded as d_i^2 + (d_i A_i) + 2 A_i d_i + A_i^2 with
    the three-point second difference, a different stencil from the nested
    one used for D^2.
    """
    lam2 = surf.lam(p) ** 2
    f0 = phi(p)
    A = surf.connection(p)
    out = np.zeros((len(p), 2), dtype=complex)
    for i in range(2):
        pp, pm = surf.shifted(p, i, h), surf.shifted(p, i, -h)
        fp, fm = phi(pp), phi(pm)
        d1 = (fp - fm) / (2 * h)
        d2 = (fp - 2 * f0 + fm) / h**2
        dA = (surf.connection(pp)[:, i] - surf.connection(pm)[:, i]) / (2 * h)
        Ai = A[:, i]
        out += d2 + _mv(dA, f0) + 2 * _mv(Ai, d1) + _mv(Ai @ Ai, f0)
    return -out / lam2[:, None]


def lichnerowicz_check(surf: SpinSurface, phi: SpinorField, p: Points, h: float = 1e-3) -> np.ndarray:
    """|D^2 phi - (nabla^dagger nabla phi + scal/4 phi)| per point."""
    Dphi = dirac_field(surf, phi, h)
    lhs = dirac_apply(surf, Dphi, p, h)
    rhs = bochner_apply(surf, phi, p, h) + (surf.scal(p) / 4.0)[:, None] * phi(p)
    return np.linalg.norm(lhs - rhs, axis=-1)


def c_field(surf: SpinSurface, form: Form, phi: SpinorField, convention: str = "increasing") -> SpinorField:
    return SpinorField(lambda q: _mv(surf.c_form(form, q, convention), phi(q)))


def graded_commutator(
    surf: SpinSurface, form: Form, phi: SpinorField, p: Points, h: float = 1e-3, convention: str = "increasing"
) -> np.ndarray:
    """[D, c(alpha)] phi = D c(alpha) phi - (-1)^k c(alpha) D phi, summed over homogeneous parts."""
    out = np.zeros((len(p), 2), dtype=complex)
    Dphi = dirac_apply(surf, phi, p, h)
    for k in form.degrees:
        part = form.part(k)
        out += dirac_apply(surf, c_field(surf, part, phi, convention), p, h)
        out -= (-1) ** k * _mv(surf.c_form(part, p, convention), Dphi)
    return out


def commutation_rhs(
    surf: SpinSurface, form: Form, phi: SpinorField, p: Points, h: float = 1e-3, convention: str = "increasing"
) -> np.ndarray:
    """c((d + d^dagger) alpha) phi - 2 sum_a c(e_a ^| alpha) nabla_{e_a} phi."""
    lam = surf.lam(p)
    dd = surf.d(form, p, h) + surf.codifferential(form, p, h)
    out = _mv(surf.clifford(dd, p, convention), phi(p))
    cf = surf.form_chart(form, p)
    for i in range(2):
        X = np.zeros((len(p), 2))
        X[:, i] = 1.0
        cX = surf.contraction(cf, p, X)
        out -= 2.0 * _mv(cX, cov_deriv(surf, phi, p, i, h)) / (lam**2)[:, None]
    return out


def commutation_identity_check(
    surf: SpinSurface, form: Form, phi: SpinorField, p: Points, h: float = 1e-3, convention: str = "increasing"
) -> np.ndarray:
    """|[D, c(alpha)] phi - (c((d + d^dagger) alpha) phi - 2 (nabla phi) * alpha)| per point."""
    if form.is_zero:
        return np.zeros(len(p))
    lhs = graded_commutator(surf, form, phi, p, h, convention)
    rhs = commutation_rhs(surf, form, phi, p, h, convention)
    return np.linalg.norm(lhs - rhs, axis=-1)


def order_ratio(check, h: float) -> np.ndarray:
    """Discrepancy at h divided by the discrepancy at h/2 (about 4 for O(h^2))."""
    return check(h) / check(h / 2)


def plane_wave(k, u) -> SpinorField:
    """e^{i k.x} u on the flat torus."""
    k = np.asarray(k, dtype=float)
    u = np.asarray(u, dtype=complex)
    return SpinorField(lambda p: np.exp(1j * p.coords @ k)[:, None] * u[None, :])


def plane_wave_dirac(k, u, p: Points) -> np.ndarray:
    """Exact D(e^{i k.x} u) = e^{i k.x} (i sum_j k_j gamma_j) u."""
    k = np.asarray(k, dtype=float)
    M = 1j * clifford_mult(a=k)
    return np.exp(1j * p.coords @ k)[:, None] * (M @ np.asarray(u, dtype=complex))[None, :]


__all__ = [
    "ChartForm",
    "bochner_apply",
    "commutation_identity_check",
    "cov_deriv",
    "dirac_apply",
    "graded_commutator",
    "lichnerowicz_check",
]
