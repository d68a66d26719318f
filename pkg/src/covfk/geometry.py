"""Compact model geometries: circle, flat torus and round 2-sphere.

Every manifold works on batches of points. A :class:`Points` value carries
one chart id and one coordinate row per point; the sphere additionally keeps
the embedded representative in R^3, which is what the geodesic stepping
actually moves.

The sphere atlas consists of two stereographic charts. Chart 0 is centred at
the north pole, chart 1 at the south pole::

    chart 0:  x = r (2u1,  2u2, 1-|u|^2) / (1+|u|^2)
    chart 1:  x = r (2v1, -2v2, |v|^2-1) / (1+|v|^2)

so that chart 1 is chart 0 composed with the rotation by pi about the x-axis,
both charts are positively oriented, and the transition is v = 1/u in complex
notation. Paths switch chart when |u| exceeds :data:`SWITCH_RADIUS`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import faults
from .errors import ChartError, ConvergenceError, DomainError

SWITCH_RADIUS = 2.0
CHART_LIMIT = 4.0
SERIES_RTOL = 1e-14
SERIES_MAX_TERMS = 10_000


@dataclass(frozen=True)
class Points:
    """A batch of points. ``coords`` has shape (n, m)."""

    chart: np.ndarray
    coords: np.ndarray
    embedded: np.ndarray | None = None

    def __len__(self) -> int:
        return self.coords.shape[0]

    def __getitem__(self, idx) -> "Points":
        if isinstance(idx, (int, np.integer)):
            idx = slice(idx, (idx + 1) or None)
        emb = None if self.embedded is None else self.embedded[idx]
        return Points(self.chart[idx], self.coords[idx], emb)

    def repeat(self, n: int) -> "Points":
        if len(self) != 1:
            raise ValueError("repeat() expects a single point")
        emb = None if self.embedded is None else np.repeat(self.embedded, n, axis=0)
        return Points(np.repeat(self.chart, n), np.repeat(self.coords, n, axis=0), emb)

    @staticmethod
    def concat(items: list["Points"]) -> "Points":
        emb = None
        if items[0].embedded is not None:
            emb = np.concatenate([p.embedded for p in items])
        return Points(
            np.concatenate([p.chart for p in items]),
            np.concatenate([p.coords for p in items]),
            emb,
        )


@dataclass
class StepResult:
    """Everything a transport or Q-process update needs about one step.

    ``disp`` and ``mid`` refer to the chart the step started in, ``vel1`` to
    the chart the step ended in (which differs where ``switched`` is set).
    """

    points: Points
    frames: np.ndarray
    disp: np.ndarray
    mid: Points
    vel0: np.ndarray
    vel1: np.ndarray
    switched: np.ndarray


def _wrap(x, period):
    # np.mod(-tiny, L) rounds to L itself; fold that back to 0
    y = np.mod(x, period)
    return np.where(y >= period, 0.0, y)


def _wrapped_diff(d, period):
    """Representative of d modulo period in [-period/2, period/2)."""
    return np.mod(d + 0.5 * period, period) - 0.5 * period


def periodic_heat_kernel_1d(delta, t, period, method="auto"):
    """Heat kernel of d^2/(2 dx^2) on a circle of the given length.

    ``delta`` is the coordinate difference. The wrapped Gaussian converges
    fastest for small t, the Fourier series for large t.
    """
    if t <= 0:
        raise DomainError(f"heat kernel needs t > 0, got {t}")
    delta = _wrapped_diff(np.asarray(delta, dtype=float), period)
    if method == "auto":
        method = "gaussian" if t < 1.0 else "fourier"
    if method == "gaussian":
        norm = 1.0 / math.sqrt(2.0 * math.pi * t)
        total = norm * np.exp(-(delta**2) / (2.0 * t))
        for n in range(1, SERIES_MAX_TERMS):
            # both images at distance >= n*period - period/2
            far = n * period - 0.5 * period
            bound = 2.0 * norm * math.exp(-(far**2) / (2.0 * t))
            total = total + norm * (
                np.exp(-((delta + n * period) ** 2) / (2.0 * t))
                + np.exp(-((delta - n * period) ** 2) / (2.0 * t))
            )
            # an underflowed kernel value is exact to double precision already
            if bound < SERIES_RTOL * np.min(total) or bound < np.finfo(float).tiny:
                return total
        raise ConvergenceError("wrapped Gaussian did not converge", achieved_bound=bound)
    if method == "fourier":
        total = np.full_like(delta, 1.0 / period)
        for k in range(1, SERIES_MAX_TERMS):
            w = 2.0 * math.pi * k / period
            term_bound = 2.0 / period * math.exp(-0.5 * w * w * t)
            total = total + term_bound * np.cos(w * delta)
            next_w = 2.0 * math.pi * (k + 1) / period
            if 2.0 / period * math.exp(-0.5 * next_w**2 * t) < SERIES_RTOL * np.min(np.abs(total)):
                return total
        raise ConvergenceError("Fourier series did not converge", achieved_bound=term_bound)
    raise ValueError(f"unknown method {method!r}")



def _cross(a, b):
    """Cross product along axis 1 (np.cross is slow for small batches of 3-vectors)."""
    return np.stack(
        [a[:, 1] * b[:, 2] - a[:, 2] * b[:, 1], a[:, 2] * b[:, 0] - a[:, 0] * b[:, 2], a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0]],
        axis=1,
    )

class ManifoldModel:
    kind: str = ""
    dim: int = 0

    # -- construction -------------------------------------------------
    def point(self, coords, chart: int = 0) -> Points:
        coords = np.atleast_2d(np.asarray(coords, dtype=float))
        if coords.shape[1] != self.dim:
            coords = coords.reshape(-1, self.dim)
        pts = Points(np.full(len(coords), chart, dtype=np.int64), coords)
        self.check(pts)
        return pts

    def check(self, p: Points) -> None:
        if not np.all(np.isfinite(p.coords)):
            raise DomainError("non-finite chart coordinates")

    # -- metric data --------------------------------------------------
    def metric(self, p: Points) -> np.ndarray:
        self.check(p)
        return np.broadcast_to(np.eye(self.dim), (len(p), self.dim, self.dim)).copy()

    def christoffel(self, p: Points) -> np.ndarray:
        """Array Gamma[n, k, i, j] of Christoffel symbols Gamma^k_ij."""
        self.check(p)
        return np.zeros((len(p), self.dim, self.dim, self.dim))

    def scalar_curvature(self, p: Points) -> np.ndarray:
        return np.zeros(len(p))

    @property
    def volume(self) -> float:
        raise NotImplementedError

    # -- frames and stepping ------------------------------------------
    def initial_frames(self, p: Points) -> np.ndarray:
        return np.broadcast_to(np.eye(self.dim), (len(p), self.dim, self.dim)).copy()

    def chart_frames(self, p: Points, frames: np.ndarray) -> np.ndarray:
        """Frames as m x m matrices in chart coordinates of ``p``."""
        return frames


class _FlatModel(ManifoldModel):
    """Shared code for the circle and flat tori (single periodic chart)."""

    periods: np.ndarray

    def check(self, p: Points) -> None:
        super().check(p)
        if np.any(p.coords < -1e-12) or np.any(p.coords > self.periods + 1e-12):
            raise DomainError("coordinates outside the fundamental domain")

    def point(self, coords, chart: int = 0) -> Points:
        coords = np.atleast_2d(np.asarray(coords, dtype=float)).reshape(-1, self.dim)
        return super().point(_wrap(coords, self.periods), 0)

    @property
    def volume(self) -> float:
        return float(np.prod(self.periods))

    def exp(self, p: Points, v) -> Points:
        v = np.asarray(v, dtype=float).reshape(len(p), self.dim)
        return Points(p.chart.copy(), _wrap(p.coords + v, self.periods))

    def log(self, p: Points, q: Points) -> np.ndarray:
        return _wrapped_diff(q.coords - p.coords, self.periods)

    def distance(self, p: Points, q: Points) -> np.ndarray:
        return np.sqrt(np.sum(self.log(p, q) ** 2, axis=-1))

    def heat_kernel(self, x: Points, y: Points, t: float, method: str = "auto") -> np.ndarray:
        diff = y.coords - x.coords
        out = np.ones(diff.shape[0])
        for j, period in enumerate(self.periods):
            out = out * periodic_heat_kernel_1d(diff[:, j], t, period, method)
        return out

    def step(self, p: Points, frames: np.ndarray, xi: np.ndarray) -> StepResult:
        # frames stay the identity: the connection is flat and the chart is Euclidean
        new = Points(p.chart, _wrap(p.coords + xi, self.periods))
        mid = Points(p.chart, _wrap(p.coords + 0.5 * xi, self.periods))
        return StepResult(new, frames, xi, mid, xi, xi, np.zeros(len(p), dtype=bool))

    def step_to(self, p: Points, frames: np.ndarray, target: Points) -> StepResult:
        return self.step(p, frames, self.log(p, target))

    def quadrature(self, n: int | tuple = 256) -> tuple[Points, np.ndarray]:
        """Uniform product grid. Exact for trig polynomials of degree < n."""
        ns = (n,) * self.dim if np.isscalar(n) else tuple(n)
        axes = [np.arange(k) * (L / k) for k, L in zip(ns, self.periods)]
        mesh = np.meshgrid(*axes, indexing="ij")
        coords = np.stack([g.ravel() for g in mesh], axis=-1)
        w = np.full(len(coords), self.volume / len(coords))
        return Points(np.zeros(len(coords), dtype=np.int64), coords), w


class Circle(_FlatModel):
    """Circle of the given radius in the arclength coordinate s in [0, 2 pi r)."""

    kind = "circle"
    dim = 1

    def __init__(self, radius: float = 1.0):
        if not radius > 0:
            raise DomainError("radius must be positive")
        self.radius = float(radius)
        self.periods = np.array([2.0 * math.pi * self.radius])

    def __repr__(self):
        return f"Circle(radius={self.radius})"


class FlatTorus(_FlatModel):
    kind = "flat_torus"

    def __init__(self, periods=(2 * math.pi, 2 * math.pi)):
        periods = np.asarray(periods, dtype=float).ravel()
        if periods.size < 1 or np.any(periods <= 0):
            raise DomainError("periods must be positive")
        self.periods = periods
        self.dim = periods.size

    def __repr__(self):
        return f"FlatTorus(periods={tuple(self.periods)})"


# rotation by pi about the x-axis; maps chart 0 onto chart 1
_FLIP = np.array([1.0, -1.0, -1.0])


class Sphere2(ManifoldModel):
    kind = "sphere2"
    dim = 2

    def __init__(self, radius: float = 1.0):
        if not radius > 0:
            raise DomainError("radius must be positive")
        self.radius = float(radius)

    def __repr__(self):
        return f"Sphere2(radius={self.radius})"

    @property
    def volume(self) -> float:
        return 4.0 * math.pi * self.radius**2

    # -- charts ---------------------------------------------------------
    def embed(self, chart, coords) -> np.ndarray:
        r = self.radius
        u = np.asarray(coords, dtype=float)
        s = 1.0 + np.sum(u * u, axis=-1)
        x = np.stack([2 * u[..., 0], 2 * u[..., 1], 2.0 - s], axis=-1) * (r / s)[..., None]
        chart = np.asarray(chart)
        return np.where((chart == 1)[..., None], x * _FLIP, x)

    def chart_coords(self, chart, x) -> np.ndarray:
        """Stereographic coordinates of embedded points in the given chart(s)."""
        r = self.radius
        chart = np.asarray(chart)
        y = np.where((chart == 1)[..., None], x * _FLIP, x)
        with np.errstate(divide="ignore", invalid="ignore"):
            return y[..., :2] / (r + y[..., 2])[..., None]

    def jacobian(self, p: Points) -> np.ndarray:
        """d(embed)/d(coords), shape (n, 3, 2)."""
        r = self.radius
        u = p.coords
        s = 1.0 + np.sum(u * u, axis=-1)
        u1, u2 = u[:, 0], u[:, 1]
        J = np.empty((len(p), 3, 2))
        J[:, 0, 0] = 2 * r * (s - 2 * u1 * u1) / s**2
        J[:, 0, 1] = -4 * r * u1 * u2 / s**2
        J[:, 1, 0] = -4 * r * u1 * u2 / s**2
        J[:, 1, 1] = 2 * r * (s - 2 * u2 * u2) / s**2
        J[:, 2, 0] = -4 * r * u1 / s**2
        J[:, 2, 1] = -4 * r * u2 / s**2
        flip = (p.chart == 1)[:, None, None]
        return np.where(flip, J * _FLIP[None, :, None], J)

    def conformal_factor(self, p: Points) -> np.ndarray:
        """lambda with g = lambda^2 * identity in either chart."""
        return 2.0 * self.radius / (1.0 + np.sum(p.coords**2, axis=-1))

    def dlog_conformal(self, p: Points) -> np.ndarray:
        """Gradient of log(lambda) in chart coordinates, shape (n, 2)."""
        s = 1.0 + np.sum(p.coords**2, axis=-1)
        return -2.0 * p.coords / s[:, None]

    def point(self, coords, chart: int = 0) -> Points:
        coords = np.atleast_2d(np.asarray(coords, dtype=float)).reshape(-1, 2)
        ch = np.full(len(coords), chart, dtype=np.int64)
        pts = Points(ch, coords, self.embed(ch, coords))
        self.check(pts)
        return pts

    def point_from_embedded(self, x) -> Points:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        x = x * (self.radius / np.linalg.norm(x, axis=-1))[:, None]
        chart = np.where(x[:, 2] >= 0, 0, 1).astype(np.int64)
        return Points(chart, self.chart_coords(chart, x), x)

    def in_chart(self, p: Points, chart) -> Points:
        """The same points expressed in the requested chart(s)."""
        chart = np.broadcast_to(np.asarray(chart, dtype=np.int64), (len(p),)).copy()
        return Points(chart, self.chart_coords(chart, p.embedded), p.embedded)

    def canonical(self, p: Points) -> Points:
        """Switch to the other chart where |u| > SWITCH_RADIUS."""
        far = np.sum(p.coords**2, axis=-1) > SWITCH_RADIUS**2
        if not np.any(far):
            return p
        chart = np.where(far, 1 - p.chart, p.chart)
        return Points(chart, self.chart_coords(chart, p.embedded), p.embedded)

    def check(self, p: Points) -> None:
        super().check(p)
        if np.any(np.sum(p.coords**2, axis=-1) > CHART_LIMIT**2):
            raise DomainError(f"chart coordinates outside |u| <= {CHART_LIMIT}")
        if p.embedded is not None:
            if np.any(np.abs(np.linalg.norm(p.embedded, axis=-1) - self.radius) > 1e-9 * self.radius):
                raise DomainError("embedded representative off the sphere")

    # -- metric data ----------------------------------------------------
    def metric(self, p: Points) -> np.ndarray:
        self.check(p)
        lam = self.conformal_factor(p)
        return (lam**2)[:, None, None] * np.eye(2)

    def christoffel(self, p: Points) -> np.ndarray:
        # conformal metric g = exp(2 phi) delta:
        # Gamma^k_ij = d_i^k d_j phi + d_j^k d_i phi - delta_ij d_k phi
        self.check(p)
        dphi = self.dlog_conformal(p)
        eye = np.eye(2)
        G = (
            np.einsum("ki,nj->nkij", eye, dphi)
            + np.einsum("kj,ni->nkij", eye, dphi)
            - np.einsum("ij,nk->nkij", eye, dphi)
        )
        if faults.active("christoffel_sign"):
            G = -G
        return G

    def scalar_curvature(self, p: Points) -> np.ndarray:
        return np.full(len(p), 2.0 / self.radius**2)

    def tangent_to_embedded(self, p: Points, v) -> np.ndarray:
        v = np.asarray(v, dtype=float).reshape(len(p), 2)
        return np.einsum("nij,nj->ni", self.jacobian(p), v)

    def embedded_to_tangent(self, p: Points, w) -> np.ndarray:
        lam = self.conformal_factor(p)
        return np.einsum("nij,ni->nj", self.jacobian(p), w) / (lam**2)[:, None]

    # -- geodesics --------------------------------------------------------
    def _rotate(self, x, v, frac=1.0):
        """Rotate x (and return the rotation) along the great circle with velocity v."""
        r = self.radius
        speed = np.linalg.norm(v, axis=-1)
        theta = frac * speed / r
        safe = np.where(speed > 0, speed, 1.0)
        vhat = v / safe[:, None]
        axis = _cross(x, vhat) / r
        c, s = np.cos(theta), np.sin(theta)
        return axis, c, s, vhat

    @staticmethod
    def _apply_rotation(axis, c, s, w):
        """Rodrigues formula applied to w of shape (n, 3) or (n, 3, k)."""
        if w.ndim == 3:
            a = axis[:, :, None]
            c, s = c[:, None, None], s[:, None, None]
        else:
            a = axis
            c, s = c[:, None], s[:, None]
        dot = np.sum(a * w, axis=1, keepdims=True)
        return w * c + _cross(a, w) * s + a * (dot * (1 - c))

    def exp(self, p: Points, v) -> Points:
        w = self.tangent_to_embedded(p, v)
        axis, c, s, vhat = self._rotate(p.embedded, w)
        x = p.embedded * c[:, None] + self.radius * vhat * s[:, None]
        x = x * (self.radius / np.linalg.norm(x, axis=-1))[:, None]
        new = Points(p.chart.copy(), self.chart_coords(p.chart, x), x)
        return self.canonical(new)

    def log(self, p: Points, q: Points) -> np.ndarray:
        r = self.radius
        x, y = p.embedded, q.embedded
        perp = y - x * (np.sum(x * y, axis=-1) / r**2)[:, None]
        n = np.linalg.norm(perp, axis=-1)
        d = self.distance(p, q)
        safe = np.where(n > 0, n, 1.0)
        w = perp * (d / safe)[:, None]
        return self.embedded_to_tangent(p, w)

    def distance(self, p: Points, q: Points) -> np.ndarray:
        x, y = p.embedded, q.embedded
        cross = np.linalg.norm(_cross(x, y), axis=-1)
        return self.radius * np.arctan2(cross, np.sum(x * y, axis=-1))

    # -- frames -----------------------------------------------------------
    def initial_frames(self, p: Points) -> np.ndarray:
        """Embedded orthonormal frames (n, 3, 2) from the chart coordinate frame."""
        J = self.jacobian(p)
        return J / self.conformal_factor(p)[:, None, None]

    def chart_frames(self, p: Points, frames: np.ndarray) -> np.ndarray:
        lam = self.conformal_factor(p)
        return np.einsum("nij,nik->njk", self.jacobian(p), frames) / (lam**2)[:, None, None]

    def step(self, p: Points, frames: np.ndarray, xi: np.ndarray) -> StepResult:
        r = self.radius
        x = p.embedded
        w = np.einsum("nik,nk->ni", frames, xi)
        axis, c, s, vhat = self._rotate(x, w)
        x_new = x * c[:, None] + r * vhat * s[:, None]
        x_new *= (r / np.linalg.norm(x_new, axis=-1))[:, None]
        frames_new = self._apply_rotation(axis, c, s, frames)
        # half-way point for midpoint evaluations
        half_theta = 0.5 * np.linalg.norm(w, axis=-1) / r
        ch, sh = np.cos(half_theta), np.sin(half_theta)
        x_mid = x * ch[:, None] + r * vhat * sh[:, None]
        old = p.chart
        u_new_old = self.chart_coords(old, x_new)
        mid = Points(old, self.chart_coords(old, x_mid), x_mid)
        new = self.canonical(Points(old.copy(), u_new_old, x_new))
        switched = new.chart != old
        vel_emb = self._apply_rotation(axis, c, s, w)
        vel1 = self.embedded_to_tangent(new, vel_emb)
        vel0 = self.embedded_to_tangent(p, w)
        return StepResult(new, frames_new, u_new_old - p.coords, mid, vel0, vel1, switched)

    def step_to(self, p: Points, frames: np.ndarray, target: Points) -> StepResult:
        """Geodesic step from p to target, expressed through frame coordinates."""
        v = self.log(p, target)
        w = self.tangent_to_embedded(p, v)
        xi = np.einsum("nik,ni->nk", frames, w)
        return self.step(p, frames, xi)

    # -- heat kernel --------------------------------------------------------
    def _legendre_terms(self, t):
        r2 = self.radius**2
        base = 1.0 / (4.0 * math.pi * r2)
        for L in range(SERIES_MAX_TERMS):
            bound = (2 * L + 3) * base * math.exp(-(L + 1) * (L + 2) * t / (2 * r2))
            if bound < SERIES_RTOL * base:
                return L
        raise ConvergenceError(
            f"Legendre series needs more than {SERIES_MAX_TERMS} terms at t={t}",
            achieved_bound=bound,
        )

    def heat_kernel(self, x: Points, y: Points, t: float, method: str = "auto") -> np.ndarray:
        """Legendre series sum_l (2l+1)/(4 pi r^2) e^{-l(l+1)t/(2r^2)} P_l(cos(d/r)).

        Terms are added until the next term's bound falls below 1e-14 times the
        l=0 term. Where cancellation leaves a value below the round-off floor
        of the series (far from the diagonal at small t), the positive leading
        small-time asymptotic is returned instead.
        """
        if t <= 0:
            raise DomainError(f"heat kernel needs t > 0, got {t}")
        r2 = self.radius**2
        L = self._legendre_terms(t)
        z = np.clip(np.sum(x.embedded * y.embedded, axis=-1) / r2, -1.0, 1.0)
        base = 1.0 / (4.0 * math.pi * r2)
        p_prev = np.ones_like(z)
        p_cur = z
        total = base * p_prev
        abs_sum = base
        for l in range(1, L + 1):
            coef = (2 * l + 1) * base * math.exp(-l * (l + 1) * t / (2 * r2))
            total = total + coef * p_cur
            abs_sum += coef
            p_prev, p_cur = p_cur, ((2 * l + 1) * z * p_cur - l * p_prev) / (l + 1)
        floor = 256 * np.finfo(float).eps * abs_sum
        low = total < floor
        if np.any(low):
            theta = np.arccos(z[low])
            ratio = np.where(theta > 1e-8, theta / np.maximum(np.sin(theta), 1e-300), 1.0)
            ratio = np.minimum(ratio, 1e8)
            asym = (
                np.sqrt(ratio)
                * np.exp(-r2 * theta**2 / (2 * t) + t / (8 * r2))
                / (2 * math.pi * t)
            )
            total = total.copy()
            total[low] = np.minimum(asym, floor)
        return total

    def quadrature(self, n: int | tuple = (16, 32)) -> tuple[Points, np.ndarray]:
        """Gauss-Legendre in cos(polar angle) times uniform azimuth."""
        n_theta, n_phi = (n, 2 * n) if np.isscalar(n) else n
        z, wz = np.polynomial.legendre.leggauss(n_theta)
        phi = np.arange(n_phi) * (2 * math.pi / n_phi)
        Z, PHI = np.meshgrid(z, phi, indexing="ij")
        rho = np.sqrt(1 - Z**2)
        x = self.radius * np.stack([rho * np.cos(PHI), rho * np.sin(PHI), Z], axis=-1).reshape(-1, 3)
        w = (wz[:, None] * np.full(n_phi, 2 * math.pi / n_phi)[None, :]).ravel() * self.radius**2
        return self.point_from_embedded(x), w


# -- functional interface -------------------------------------------------


def metric_at(M: ManifoldModel, p: Points) -> np.ndarray:
    return M.metric(p)


def christoffel(M: ManifoldModel, p: Points) -> np.ndarray:
    return M.christoffel(p)


def exp_step(M: ManifoldModel, p: Points, v) -> Points:
    return M.exp(p, v)


def distance(M: ManifoldModel, p: Points, q: Points) -> np.ndarray:
    return M.distance(p, q)


def scalar_curvature(M: ManifoldModel, p: Points) -> np.ndarray:
    return M.scalar_curvature(p)


def heat_kernel(M: ManifoldModel, x: Points, y: Points, t: float, method: str = "auto") -> np.ndarray:
    return M.heat_kernel(x, y, t, method)


def from_config(cfg: dict) -> ManifoldModel:
    kind = cfg["kind"]
    if kind == "circle":
        return Circle(cfg.get("radius", 1.0))
    if kind == "flat_torus":
        return FlatTorus(cfg.get("periods", (2 * math.pi, 2 * math.pi)))
    if kind == "sphere2":
        return Sphere2(cfg.get("radius", 1.0))
    raise DomainError(f"unknown geometry kind {kind!r}")
