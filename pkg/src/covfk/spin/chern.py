"""F_T and the N = 0, N = 1 pieces of the equivariant Chern character on the sphere.

With H = nabla^dagger nabla / 2 + scal/8 one has e^{-2H} = e^{-D^2}, so every
quantity below is a bridge expectation at t = 2 over loops of the spinor
bundle:

    Ch_0(alpha_0) = Str(c(alpha_0') e^{-D^2})
    Ch_1(alpha_0, alpha_1) = -Str(c(alpha_0') int_0^1 e^{-sD^2} F(alpha_1) e^{-(1-s)D^2} ds)

Substituting s = u/2 turns the last integral into (1/2) int_0^2 of the
H-semigroup, so Ch_1 is -1/2 times the trace formula for V = scal/8,
P = F(alpha_1) and Vt = gamma c(alpha_0').
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from ..berezin import ScalarPotential, trace_formula_mc
from ..bundles import BundleSpec, conjugate
from ..errors import DomainError
from ..fk import FirstOrderOp, TransportedWalk, _dagger
from ..geometry import Points, Sphere2
from ..mc import Estimate, McConfig, run_grid, summarize_weighted
from ..paths import check_delta, default_delta
from .clifford import GRADING, clifford_mult
from .geometry import ChartForm, Form, SpinSurface, spinor_bundle, surface

CHERN_T = 2.0


@dataclass
class TForm:
    """alpha = alpha' + alpha'' dt with alpha', alpha'' mixed forms on the surface."""

    prime: Form
    dblprime: Form

    @classmethod
    def zero(cls) -> "TForm":
        return cls(Form(), Form())

    @property
    def is_zero(self) -> bool:
        return self.prime.is_zero and self.dblprime.is_zero


def _as_tform(a) -> TForm:
    if a is None:
        return TForm.zero()
    if isinstance(a, TForm):
        return a
    if isinstance(a, Form):
        return TForm(a, Form())
    raise TypeError(f"expected TForm or Form, got {type(a).__name__}")


def _ortho(cf: ChartForm, lam: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    return cf.f0, cf.alpha / lam[:, None], cf.f2


def _wedge(a: ChartForm, b: ChartForm, lam: np.ndarray) -> ChartForm:
    """Pointwise wedge product of mixed forms, returned in chart terms."""
    a0, a1, a2 = _ortho(a, lam)
    b0, b1, b2 = _ortho(b, lam)
    f0 = a0 * b0
    one = a0[:, None] * b1 + b0[:, None] * a1
    f2 = a0 * b2 + a2 * b0 + a1[:, 0] * b1[:, 1] - a1[:, 1] * b1[:, 0]
    return ChartForm(f0, one * lam[:, None], f2)


def build_FT(
    alphas,
    S: Sphere2 | None = None,
    surf: SpinSurface | None = None,
    convention: str = "increasing",
) -> FirstOrderOp:
    """F(alpha_1), F(alpha_0 (x) alpha_1), or zero for three or more factors.

    Single factor: sigma1(X) = 2 c(X ^| alpha') and q0 = -c(d^dagger alpha') - c(alpha'').
    Two factors: (-1)^{|alpha_0'|} (c(alpha_0' ^ alpha_1') - c(alpha_0') c(alpha_1')),
    summed over the homogeneous parts of alpha_0'.
    """
    if surf is None:
        if S is None:
            raise DomainError("need a sphere or a spin surface")
        surf = surface(S)
    M = surf.manifold
    factors = alphas if isinstance(alphas, (list, tuple)) else [alphas]
    factors = [_as_tform(a) for a in factors]
    if len(factors) >= 3 or all(a.is_zero for a in factors):
        return FirstOrderOp.zero(M, 2)
    if len(factors) == 1:
        a = factors[0]
        sym = pot = None
        if a.prime.w1 is not None or a.prime.f2 is not None:
            sym = lambda p: surf.symbol(a.prime, p)  # noqa: E731
        has_pot = a.prime.w1 is not None or a.prime.f2 is not None or not a.dblprime.is_zero

        def potential(p: Points) -> np.ndarray:
            out = np.zeros((len(p), 2, 2), dtype=complex)
            if a.prime.w1 is not None or a.prime.f2 is not None:
                out -= surf.clifford(surf.codifferential(a.prime, p), p, convention)
            if not a.dblprime.is_zero:
                out -= surf.c_form(a.dblprime, p, convention)
            return out

        if has_pot:
            pot = potential
        return FirstOrderOp(M, 2, sym, pot, name="F(alpha)")
    a0, a1 = factors

    def two(p: Points) -> np.ndarray:
        lam = surf.lam(p)
        out = np.zeros((len(p), 2, 2), dtype=complex)
        c1 = surf.c_form(a1.prime, p, convention)
        for k in a0.prime.degrees:
            part = a0.prime.part(k)
            cf0 = surf.form_chart(part, p)
            cf1 = surf.form_chart(a1.prime, p)
            w = _wedge(cf0, cf1, lam)
            out += (-1) ** k * (surf.clifford(w, p, convention) - surf.c_form(part, p, convention) @ c1)
        return out

    return FirstOrderOp(M, 2, None, two, name="F(alpha0 x alpha1)")


# -- Monte Carlo ------------------------------------------------------------------


def _setup(S: Sphere2, mc: McConfig, t: float, grid):
    if not isinstance(S, Sphere2):
        raise DomainError("the Chern estimators live on Sphere2")
    delta = mc.delta if mc.delta is not None else default_delta(t, mc.dt)
    check_delta(t, mc.dt, delta)
    pts, wts = S.quadrature(grid) if grid is not None else S.quadrature((6, 12))
    return delta, pts, wts


def _combine(parts, coef, mc, started, extra) -> Estimate:
    total, var, ess = 0.0 + 0.0j, 0.0, []
    for j, arr in enumerate(parts):
        e = summarize_weighted(arr[:, 0], arr[:, 1].real, mc)
        total += coef[j] * complex(e.mean)
        var += (abs(coef[j]) * float(e.stderr)) ** 2
        ess.append(e.extra["ess"])
    n = sum(len(a) for a in parts)
    extra = dict(extra, ess_min=min(ess), ess_median=float(np.median(ess)))
    return Estimate(np.asarray(total), np.asarray(math.sqrt(var)), n, mc.dt, mc.seed, time.perf_counter() - started, 0, extra)


def chern_N0(alpha0, S: Sphere2, mc: McConfig, t: float = CHERN_T, grid=None, convention: str = "increasing") -> Estimate:
    """int p(t,x,x) Str(c(alpha_0')(x) E^{x,x}[e^{-int scal/8} //(t)^{-1}]) dmu(x)."""
    started = time.perf_counter()
    a0 = _as_tform(alpha0).prime
    delta, pts, wts = _setup(S, mc, t, grid)
    B = spinor_bundle(S)
    surf = surface(S)
    V = ScalarPotential(lambda p: S.scalar_curvature(p) / 8.0, "scal/8")
    n_per = max(2, math.ceil(mc.n_paths / len(pts)))

    def task(idx, rng, m):
        x, n = pts[idx], len(idx)
        w = TransportedWalk(B, x, t, mc.dt, rng.generator(), n, mc.transport_rule, x, delta)
        log_e = np.zeros(n)
        for s in w:
            log_e += V(s.p) * s.h
        A = GRADING @ surf.c_form(a0, x, convention)
        vals = np.einsum("nij,nji->n", A, _dagger(w.T)) * np.exp(-log_e)
        return np.stack([vals, w.weight.astype(complex)], axis=1)

    parts = run_grid(mc, len(pts), n_per, task)
    coef = wts * S.heat_kernel(pts, pts, t)
    return _combine(parts, coef, mc, started, {"grid_size": len(pts), "delta": delta, "t": t})


def chern_N1(
    alpha0,
    alpha1,
    S: Sphere2,
    mc: McConfig,
    t: float = CHERN_T,
    grid=None,
    form: str = "ito",
    convention: str = "increasing",
) -> Estimate:
    """Ch_1 from bridge loops accumulating int //^{-1}(2 c(db ^| alpha_1') - c(alpha_1'') ds)//.

    ``form="ito"`` uses left-point increments plus the drift -c(d^dagger alpha_1') ds;
    ``form="stratonovich"`` evaluates 2 c(. ^| alpha_1') at both ends of each
    step (trapezoid) and has no drift correction.
    """
    if form not in ("ito", "stratonovich"):
        raise ValueError(f"unknown form {form!r}")
    started = time.perf_counter()
    a0 = _as_tform(alpha0).prime
    a1 = _as_tform(alpha1)
    delta, pts, wts = _setup(S, mc, t, grid)
    n_per = max(2, math.ceil(mc.n_paths / len(pts)))
    if a1.is_zero:
        z = np.zeros(())
        return Estimate(z.astype(complex), z, n_per * len(pts), mc.dt, mc.seed, time.perf_counter() - started)
    B = spinor_bundle(S)
    surf = surface(S)
    V = ScalarPotential(lambda p: S.scalar_curvature(p) / 8.0, "scal/8")
    F = build_FT(a1, surf=surf, convention=convention)
    has_sym = a1.prime.w1 is not None or a1.prime.f2 is not None

    def K(p: Points, X: np.ndarray) -> np.ndarray:
        return 2.0 * surf.contraction(surf.form_chart(a1.prime, p), p, X)

    def task(idx, rng, m):
        x, n = pts[idx], len(idx)
        w = TransportedWalk(B, x, t, mc.dt, rng.generator(), n, mc.transport_rule, x, delta)
        J = np.zeros((n, 2, 2), dtype=complex)
        log_e = np.zeros(n)
        for s in w:
            log_e += V(s.p) * s.h
            if form == "ito":
                inc = F.increment(s.p, s.res.vel0, s.h)
                J += conjugate(s.T, inc)
                continue
            if has_sym:
                J += 0.5 * conjugate(s.T, K(s.p, s.res.vel0))
                J += 0.5 * conjugate(s.T_next, K(s.res.points, s.res.vel1))
            if not a1.dblprime.is_zero:
                J -= conjugate(s.T, surf.c_form(a1.dblprime, s.p, convention)) * s.h
        A = GRADING @ surf.c_form(a0, x, convention)
        vals = np.einsum("nij,njk,nki->n", A, J, _dagger(w.T)) * np.exp(-log_e)
        return np.stack([vals, w.weight.astype(complex)], axis=1)

    parts = run_grid(mc, len(pts), n_per, task)
    coef = -0.5 * wts * S.heat_kernel(pts, pts, t)
    return _combine(parts, coef, mc, started, {"grid_size": len(pts), "delta": delta, "t": t, "form": form})


def chern_N1_via_trace(
    alpha0, alpha1, S: Sphere2, mc: McConfig, t: float = CHERN_T, grid=None, convention: str = "increasing"
) -> Estimate:
    """-1/2 times the trace formula with V = scal/8, P = F(alpha_1), Vt = gamma c(alpha_0')."""
    a0 = _as_tform(alpha0).prime
    surf = surface(S)
    F = build_FT(_as_tform(alpha1), surf=surf, convention=convention)
    V = ScalarPotential(lambda p: S.scalar_curvature(p) / 8.0, "scal/8")
    Vt = lambda p: GRADING @ surf.c_form(a0, p, convention)  # noqa: E731
    g = S.quadrature(grid) if grid is not None else S.quadrature((6, 12))
    est = trace_formula_mc(spinor_bundle(S), V, F, Vt, t, mc, grid=g)
    return Estimate(-0.5 * est.mean, 0.5 * est.stderr, est.n_paths, est.dt, est.seed, est.wall_time, 0, est.extra)
