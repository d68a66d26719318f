"""Grassmann arithmetic and the Monte Carlo trace formula.

With one odd generator theta (theta^2 = 0) the perturbed semigroup
e^{-t(H + theta P)} has body e^{-tH} and theta-part

    -int_0^t e^{-sH} P e^{-(t-s)H} ds,

since only the first-order term of the perturbation series survives. The
Berezin integral reads off that theta-part. The same trick applied to the
Feynman-Kac formula turns the Q-process of V + theta P into a pair of
matrix processes whose theta component yields the Duhamel trace.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.linalg

from . import faults
from .bundles import BundleSpec, conjugate
from .errors import DomainError
from .fk import FirstOrderOp, TransportedWalk, _dagger, _identity, _needs_conj, mm
from .geometry import Points
from .mc import Estimate, McConfig, run_grid, summarize_weighted
from .paths import check_delta, default_delta
from .spectral import FourierTruncation, duhamel_quadrature


@dataclass(frozen=True)
class GrassmannMatrix:
    """a + b theta with complex matrix coefficients."""

    a: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.a, dtype=complex)
        b = np.asarray(self.b, dtype=complex)
        if a.shape != b.shape:
            raise ValueError("body and theta part must have equal shapes")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    @classmethod
    def body(cls, a) -> "GrassmannMatrix":
        a = np.asarray(a, dtype=complex)
        return cls(a, np.zeros_like(a))

    @classmethod
    def odd(cls, b) -> "GrassmannMatrix":
        b = np.asarray(b, dtype=complex)
        return cls(np.zeros_like(b), b)

    def __add__(self, other: "GrassmannMatrix") -> "GrassmannMatrix":
        return GrassmannMatrix(self.a + other.a, self.b + other.b)

    def __sub__(self, other: "GrassmannMatrix") -> "GrassmannMatrix":
        return GrassmannMatrix(self.a - other.a, self.b - other.b)

    def __matmul__(self, other: "GrassmannMatrix") -> "GrassmannMatrix":
        return grassmann_mul(self, other)

    def scale(self, c) -> "GrassmannMatrix":
        return GrassmannMatrix(c * self.a, c * self.b)


def grassmann_mul(X: GrassmannMatrix, Y: GrassmannMatrix) -> GrassmannMatrix:
    """(a + b theta)(c + d theta) = ac + (ad + bc) theta."""
    if X.a.shape[-1] != Y.a.shape[-2]:
        raise ValueError(f"dimension mismatch: {X.a.shape} @ {Y.a.shape}")
    return GrassmannMatrix(X.a @ Y.a, X.a @ Y.b + X.b @ Y.a)


def berezin_integral(X: GrassmannMatrix) -> np.ndarray:
    """The theta coefficient."""
    return X.b


def grassmann_semigroup(H: np.ndarray, P: np.ndarray, t: float) -> GrassmannMatrix:
    """e^{-t(H + theta P)} through the block exponential of [[H, 0], [P, H]].

    Acting on (a, b) the block matrix encodes a' = -Ha, b' = -Hb - Pa, which
    is exactly multiplication by H + theta P; the coupling is nilpotent so
    nothing is truncated.
    """
    H = np.asarray(H, dtype=complex)
    P = np.asarray(P, dtype=complex)
    n = H.shape[0]
    blk = np.zeros((2 * n, 2 * n), dtype=complex)
    blk[:n, :n] = H
    blk[n:, n:] = H
    blk[n:, :n] = P
    E = scipy.linalg.expm(-t * blk)
    return GrassmannMatrix(E[:n, :n], E[n:, :n])


def perturbation_identity_check(T: FourierTruncation | np.ndarray, P: np.ndarray, t: float) -> float:
    """|| Berezin e^{-t(H + theta P)} + int_0^t e^{-sH} P e^{-(t-s)H} ds ||.

    The theta-part carries the sign of the first-order term of the series,
    so the two terms cancel. The ``berezin_sign`` fault drops that sign.
    """
    H = T.H if isinstance(T, FourierTruncation) else np.asarray(T, dtype=complex)
    P = np.asarray(P, dtype=complex)
    if H.shape != P.shape:
        raise DomainError("H and P must share a cutoff")
    b = berezin_integral(grassmann_semigroup(H, P, t))
    sign = -1.0 if faults.active("berezin_sign") else 1.0
    return float(np.linalg.norm(sign * b + duhamel_quadrature(H, P, t)))


# -- Monte Carlo trace formula ----------------------------------------------


@dataclass
class ScalarPotential:
    """Potential v(x) times the identity; handled by the exact factor exp(-int v)."""

    fn: Callable[[Points], np.ndarray]
    name: str = "v"

    def __call__(self, p: Points) -> np.ndarray:
        return np.real_if_close(np.asarray(self.fn(p))).reshape(len(p))

    @classmethod
    def constant(cls, c: float) -> "ScalarPotential":
        return cls(lambda p: np.full(len(p), c), f"{c}")


def _potential_matrix(Vt, p: Points, d: int) -> np.ndarray:
    if Vt is None:
        return np.broadcast_to(np.eye(d, dtype=complex), (len(p), d, d))
    if isinstance(Vt, FirstOrderOp):
        return Vt.q0(p)
    out = np.asarray(Vt(p), dtype=complex)
    if out.ndim == 1:
        out = out[:, None, None] * np.eye(d)
    return out


def trace_functional(
    B: BundleSpec,
    V,
    P: FirstOrderOp,
    Vt,
    x: Points,
    t: float,
    dt: float,
    delta: float,
    gen: np.random.Generator,
    n: int,
    rule: str = "midpoint",
) -> tuple[np.ndarray, np.ndarray]:
    """Per-path tr(Vt(x) Q_b //^{-1}) along bridge loops at x, and the bridge weights.

    ``x`` is a single point or one start point per path.

    Q_a + theta Q_b is the Q-process of V + theta P: with M_a and M_b the
    conjugated Ito increments of V and P,

        Q_a <- Q_a - Q_a M_a,    Q_b <- Q_b - Q_b M_a - Q_a M_b.

    A :class:`ScalarPotential` V is applied exactly as exp(-sum v h) instead.
    """
    d = B.rank
    conj = _needs_conj(B)
    w = TransportedWalk(B, x, t, dt, gen, n, rule, x, delta)
    scalar = isinstance(V, ScalarPotential) or V is None
    Qa = _identity(n, d)
    Qb = np.zeros((n, d, d), dtype=complex)
    log_e = np.zeros(n)
    for s in w:
        Mb = P.increment(s.p, s.res.vel0, s.h)
        if Mb is not None and conj:
            Mb = conjugate(s.T, Mb)
        if scalar:
            if Mb is not None:
                Qb = Qb - Mb
            if V is not None:
                log_e += V(s.p) * s.h
            continue
        Ma = V.increment(s.p, s.res.vel0, s.h)
        if Ma is not None and conj:
            Ma = conjugate(s.T, Ma)
        Qb_new = Qb
        if Ma is not None:
            Qb_new = Qb_new - mm(Qb, Ma)
        if Mb is not None:
            Qb_new = Qb_new - mm(Qa, Mb)
        if Ma is not None:
            Qa = Qa - mm(Qa, Ma)
        Qb = Qb_new
    if scalar:
        Qb = Qb * np.exp(-log_e)[:, None, None]
    A = mm(Qb, _dagger(w.T))
    Vx = _potential_matrix(Vt, x, d)
    if len(Vx) == 1:
        return np.einsum("ij,nji->n", Vx[0], A), w.weight
    vals = np.einsum("nij,nji->n", Vx, A)
    return vals, w.weight


def _trace_grid(M, grid):
    if grid is None:
        return M.quadrature()
    if isinstance(grid, tuple) and len(grid) == 2 and isinstance(grid[0], Points):
        return grid
    return M.quadrature(grid)


def trace_formula_mc(
    B: BundleSpec,
    V,
    P: FirstOrderOp,
    Vt,
    t: float,
    mc: McConfig,
    grid=None,
) -> Estimate:
    """Monte Carlo value of Tr(Vt int_0^t e^{-sH} P e^{-(t-s)H} ds), H = nabla^dagger nabla/2 + V.

    Equals -int tr(Vt(x) p(t,x,x) E^{x,x}_t[Q_b(t) //(t)^{-1}]) dmu(x): the
    Berezin integral of the Feynman-Kac formula for H + theta P, which is
    minus the Duhamel term. The outer integral uses the manifold's product
    quadrature (``grid`` is its order, or a (points, weights) pair); the
    n_paths paths are split evenly over the nodes.
    """
    if not t > 0:
        raise DomainError(f"t must be positive, got {t}")
    started = time.perf_counter()
    M = B.manifold
    pts, wts = _trace_grid(M, grid)
    delta = mc.delta if mc.delta is not None else default_delta(t, mc.dt)
    check_delta(t, mc.dt, delta)
    n_grid = len(pts)
    n_per = max(2, math.ceil(mc.n_paths / n_grid))
    if P.is_zero:
        z = np.zeros(())
        return Estimate(z.astype(complex), z, n_per * n_grid, mc.dt, mc.seed, time.perf_counter() - started)

    def task(idx, rng, m):
        x = pts[idx]
        vals, wgt = trace_functional(B, V, P, Vt, x, t, mc.dt, delta, rng.generator(), len(idx), mc.transport_rule)
        return np.stack([vals, wgt.astype(complex)], axis=1)

    parts = run_grid(mc, n_grid, n_per, task)
    kern = M.heat_kernel(pts, pts, t)
    total = 0.0 + 0.0j
    var = 0.0
    ess = []
    for j, arr in enumerate(parts):
        e = summarize_weighted(arr[:, 0], arr[:, 1].real, mc)
        c = -wts[j] * kern[j]
        total += c * complex(e.mean)
        var += (c * float(e.stderr)) ** 2
        ess.append(e.extra["ess"])
    extra = {
        "grid_size": n_grid, "paths_per_node": n_per, "delta": delta,
        "ess_min": min(ess), "ess_median": float(np.median(ess)),
    }
    return Estimate(
        np.asarray(total), np.asarray(math.sqrt(var)), n_per * n_grid, mc.dt, mc.seed,
        time.perf_counter() - started, 0, extra,
    )


def trace_formula_spectral(T: FourierTruncation, P: np.ndarray, t: float, Vt: np.ndarray | None = None) -> complex:
    """Tr(Vt int_0^t e^{-sH} P e^{-(t-s)H} ds) on the truncation."""
    D = duhamel_quadrature(T, P, t)
    return complex(np.trace(D if Vt is None else Vt @ D))
