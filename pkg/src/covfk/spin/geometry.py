"""Spin geometry of the round 2-sphere in stereographic charts, plus a flat torus twin.

Spinors are C^2-valued in each chart, referenced to the orthonormal frame
e_a = d_a / lambda. The spin connection of the conformal metric
lambda^2 |du|^2 is

    A_i = (1/2) omega(d_i) gamma_1 gamma_2,   omega = -d_2(log lambda) du^1 + d_1(log lambda) du^2.

The sphere also carries an embedded model: the spinor bundle is the trivial
C^2 bundle with Clifford multiplication c(X) = -i sigma.(X x nu) and
connection d + c(X) / (2r). The two pictures are identified by the SU(2)
lift S_c(x) of the chart frame (e_1, e_2, nu): chart spinor = S_c(x)^{-1}
embedded spinor. Chart transition functions are built from that lift.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from ..bundles import BundleSpec
from ..errors import DomainError
from ..geometry import FlatTorus, ManifoldModel, Points, Sphere2
from .clifford import GAMMA1, GAMMA2, GAMMA12, I2, SIGMA, SIGMA_X, SIGMA_Y, clifford_mult

FD_STEP = 1e-5


def _dag(X):
    return np.conj(np.swapaxes(X, -1, -2))


# -- sphere lifts -------------------------------------------------------------


def chart_lift(chart, coords) -> np.ndarray:
    """SU(2) lift S_c of the rotation taking the north-pole frame to the chart frame.

    In chart 0, S = (I - i(-u_2 sigma_x + u_1 sigma_y)) / sqrt(1 + |u|^2); chart 1
    is chart 0 composed with the half-turn about the x axis.
    """
    u = np.atleast_2d(np.asarray(coords, dtype=float))
    s = np.sqrt(1.0 + np.sum(u * u, axis=-1))
    S = (I2 - 1j * (-u[:, 1, None, None] * SIGMA_X + u[:, 0, None, None] * SIGMA_Y)) / s[:, None, None]
    flip = (np.asarray(chart) == 1)[..., None, None]
    return np.where(flip, (-1j * SIGMA_X) @ S, S)


def embedded_clifford(x, X, radius: float = 1.0) -> np.ndarray:
    """c(X) = -i sigma.(X x nu) for ambient tangent vectors X at embedded points x."""
    nu = np.asarray(x) / radius
    a = np.cross(np.asarray(X), nu)
    return -1j * np.einsum("na,aij->nij", a, SIGMA)


def embedded_grading(x, radius: float = 1.0) -> np.ndarray:
    nu = np.asarray(x) / radius
    return np.einsum("na,aij->nij", nu, SIGMA)


def spinor_transition(S: Sphere2):
    def trans(p: Points, src, dst) -> np.ndarray:
        src = np.broadcast_to(src, (len(p),))
        dst = np.broadcast_to(dst, (len(p),))
        Ssrc = chart_lift(src, S.chart_coords(src, p.embedded))
        Sdst = chart_lift(dst, S.chart_coords(dst, p.embedded))
        return _dag(Sdst) @ Ssrc

    return trans


def spin_connection(p: Points, dlog: np.ndarray) -> np.ndarray:
    """A_i = (1/2) omega_i gamma_1 gamma_2, shape (n, 2, 2, 2)."""
    omega = np.stack([-dlog[:, 1], dlog[:, 0]], axis=1)
    return 0.5 * omega[:, :, None, None] * GAMMA12


def spinor_bundle(S: Sphere2) -> BundleSpec:
    if not isinstance(S, Sphere2):
        raise DomainError("spinor_s2 lives on Sphere2")

    def conn(p: Points) -> np.ndarray:
        return spin_connection(p, S.dlog_conformal(p))

    return BundleSpec(S, 2, conn, spinor_transition(S), "spinor_s2")


# -- forms -------------------------------------------------------------------


@dataclass
class Form:
    """Mixed-degree form f0 + alpha + f2 vol.

    On the sphere the callables take embedded points (n, 3); ``w1`` returns
    an ambient vector field whose tangential part is alpha^sharp. On the
    flat torus they take coordinates (n, 2) and ``w1`` returns the
    coordinate components of alpha. ``f2`` multiplies the Riemannian
    volume form e^1 ^ e^2.
    """

    f0: Callable | None = None
    w1: Callable | None = None
    f2: Callable | None = None
    label: str = ""

    @property
    def is_zero(self) -> bool:
        return self.f0 is None and self.w1 is None and self.f2 is None

    def part(self, degree: int) -> "Form":
        return Form(
            self.f0 if degree == 0 else None,
            self.w1 if degree == 1 else None,
            self.f2 if degree == 2 else None,
            f"{self.label}[{degree}]",
        )

    @property
    def degrees(self) -> list[int]:
        return [k for k, f in enumerate((self.f0, self.w1, self.f2)) if f is not None]


@dataclass
class ChartForm:
    """Form values at points in chart terms: f0, chart components of alpha, and f2."""

    f0: np.ndarray
    alpha: np.ndarray
    f2: np.ndarray

    def __add__(self, other: "ChartForm") -> "ChartForm":
        return ChartForm(self.f0 + other.f0, self.alpha + other.alpha, self.f2 + other.f2)


class SpinSurface:
    """Chart-level spin data shared by the sphere and the flat torus."""

    manifold: ManifoldModel

    def at(self, chart, coords) -> Points:
        raise NotImplementedError

    def position(self, p: Points) -> np.ndarray:
        raise NotImplementedError

    def lam(self, p: Points) -> np.ndarray:
        raise NotImplementedError

    def dlog(self, p: Points) -> np.ndarray:
        raise NotImplementedError

    def alpha_chart(self, w1: Callable, p: Points) -> np.ndarray:
        raise NotImplementedError

    def scal(self, p: Points) -> np.ndarray:
        return self.manifold.scalar_curvature(p)

    def connection(self, p: Points) -> np.ndarray:
        return spin_connection(p, self.dlog(p))

    def shifted(self, p: Points, i: int, h: float) -> Points:
        u = p.coords.copy()
        u[:, i] += h
        return self.at(p.chart, u)

    # -- form evaluation ---------------------------------------------------
    def form_chart(self, form: Form, p: Points) -> ChartForm:
        n = len(p)
        pos = self.position(p)
        f0 = np.zeros(n, complex) if form.f0 is None else np.asarray(form.f0(pos), complex) * np.ones(n)
        al = np.zeros((n, 2), complex) if form.w1 is None else self.alpha_chart(form.w1, p)
        f2 = np.zeros(n, complex) if form.f2 is None else np.asarray(form.f2(pos), complex) * np.ones(n)
        return ChartForm(f0, al, f2)

    def clifford(self, cf: ChartForm, p: Points, convention: str = "increasing") -> np.ndarray:
        lam = self.lam(p)
        return clifford_mult(cf.f0, cf.alpha / lam[:, None], cf.f2, convention)

    def c_form(self, form: Form, p: Points, convention: str = "increasing") -> np.ndarray:
        return self.clifford(self.form_chart(form, p), p, convention)

    def contraction(self, cf: ChartForm, p: Points, X: np.ndarray) -> np.ndarray:
        """c(X ^| alpha) for chart vectors X; the degree-0 part drops out."""
        lam = self.lam(p)
        scalar = np.sum(cf.alpha * X, axis=-1)
        a = (cf.f2 * lam)[:, None] * np.stack([-X[:, 1], X[:, 0]], axis=1)
        return clifford_mult(scalar, a)

    def symbol(self, form: Form, p: Points) -> np.ndarray:
        """S_i = 2 c(d_i ^| alpha), the chart coefficients of X -> 2 c(X ^| alpha)."""
        cf = self.form_chart(form, p)
        n = len(p)
        out = np.empty((n, 2, 2, 2), complex)
        for i in range(2):
            X = np.zeros((n, 2))
            X[:, i] = 1.0
            out[:, i] = 2.0 * self.contraction(cf, p, X)
        return out

    def _partials(self, form: Form, p: Points, h: float):
        plus = [self.form_chart(form, self.shifted(p, i, h)) for i in range(2)]
        minus = [self.form_chart(form, self.shifted(p, i, -h)) for i in range(2)]

        def d(attr, i):
            return (getattr(plus[i], attr) - getattr(minus[i], attr)) / (2 * h)

        return d

    def d(self, form: Form, p: Points, h: float = FD_STEP) -> ChartForm:
        """Exterior derivative by central differences."""
        D = self._partials(form, p, h)
        n = len(p)
        lam2 = self.lam(p) ** 2
        alpha = np.stack([D("f0", 0), D("f0", 1)], axis=1)
        al = D("alpha", 0)[:, 1] - D("alpha", 1)[:, 0]
        return ChartForm(np.zeros(n, complex), alpha, al / lam2)

    def codifferential(self, form: Form, p: Points, h: float = FD_STEP) -> ChartForm:
        """d^dagger by central differences: -div on 1-forms, -*d* on 2-forms."""
        D = self._partials(form, p, h)
        n = len(p)
        lam2 = self.lam(p) ** 2
        f0 = -(D("alpha", 0)[:, 0] + D("alpha", 1)[:, 1]) / lam2
        alpha = np.stack([D("f2", 1), -D("f2", 0)], axis=1)
        return ChartForm(f0, alpha, np.zeros(n, complex))


class SphereSpin(SpinSurface):
    def __init__(self, S: Sphere2):
        self.manifold = S

    def at(self, chart, coords) -> Points:
        S = self.manifold
        coords = np.atleast_2d(np.asarray(coords, dtype=float))
        chart = np.broadcast_to(np.asarray(chart, dtype=np.int64), (len(coords),)).copy()
        return Points(chart, coords, S.embed(chart, coords))

    def position(self, p: Points) -> np.ndarray:
        return p.embedded

    def lam(self, p: Points) -> np.ndarray:
        return self.manifold.conformal_factor(p)

    def dlog(self, p: Points) -> np.ndarray:
        return self.manifold.dlog_conformal(p)

    def alpha_chart(self, w1: Callable, p: Points) -> np.ndarray:
        w = np.asarray(w1(p.embedded), dtype=complex)
        return np.einsum("na,nai->ni", w, self.manifold.jacobian(p))

    def lift(self, p: Points) -> np.ndarray:
        return chart_lift(p.chart, p.coords)

    def transition(self, p: Points, src, dst) -> np.ndarray:
        return spinor_transition(self.manifold)(p, src, dst)


class TorusSpin(SpinSurface):
    def __init__(self, T: FlatTorus):
        if T.dim != 2:
            raise DomainError("the spin twin needs a 2-dimensional torus")
        self.manifold = T

    def at(self, chart, coords) -> Points:
        coords = np.atleast_2d(np.asarray(coords, dtype=float))
        chart = np.zeros(len(coords), dtype=np.int64)
        return Points(chart, coords)

    def position(self, p: Points) -> np.ndarray:
        return p.coords

    def lam(self, p: Points) -> np.ndarray:
        return np.ones(len(p))

    def dlog(self, p: Points) -> np.ndarray:
        return np.zeros((len(p), 2))

    def alpha_chart(self, w1: Callable, p: Points) -> np.ndarray:
        return np.asarray(w1(p.coords), dtype=complex) * np.ones((len(p), 1))

    def lift(self, p: Points) -> np.ndarray:
        return np.broadcast_to(I2, (len(p), 2, 2))


def surface(M: ManifoldModel) -> SpinSurface:
    if isinstance(M, Sphere2):
        return SphereSpin(M)
    if isinstance(M, FlatTorus):
        return TorusSpin(M)
    raise DomainError(f"no spin structure implemented on {M!r}")


# -- spinor fields ---------------------------------------------------------------


@dataclass
class SpinorField:
    """Chart-referenced spinor field: ``fn(points) -> (n, 2)``."""

    fn: Callable[[Points], np.ndarray]
    smooth: str = "C^inf"

    def __call__(self, p: Points) -> np.ndarray:
        return self.fn(p)

    @classmethod
    def from_embedded(cls, surf: SpinSurface, psi: Callable) -> "SpinorField":
        """Field given by a global C^2-valued function of the embedded point (or torus coordinates)."""

        def fn(p: Points) -> np.ndarray:
            val = np.asarray(psi(surf.position(p)), dtype=complex)
            return np.einsum("nji,nj->ni", np.conj(surf.lift(p)), val)

        return cls(fn)

    def __add__(self, other: "SpinorField") -> "SpinorField":
        return SpinorField(lambda p: self(p) + other(p))

    def scale(self, a) -> "SpinorField":
        return SpinorField(lambda p: a * self(p))


def gammas() -> np.ndarray:
    return np.stack([GAMMA1, GAMMA2])
