"""Invariant suites behind ``covfk validate``.

Every suite returns a list of :class:`Check` records; a suite passes when all
of its checks do. Monte Carlo checks use small, fixed-seed runs with the
usual 3 stderr + C dt bar, so the whole ``all`` suite runs in well under a
minute. Fault switches from :mod:`covfk.faults` can be turned on around a
run to confirm that the suites notice real defects.
"""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np

from . import faults
from .berezin import GrassmannMatrix, perturbation_identity_check, trace_formula_mc, trace_formula_spectral
from .bundles import tangent_s2, transport_step, trivial, u1_flat
from .errors import ConfigError
from .fk import FirstOrderOp, SectionFn, fk_estimate, kernel_estimate, solve_q_process
from .geometry import Circle, FlatTorus, Sphere2
from .mc import McConfig
from .paths import RngConfig, sample_bm, sample_bridge
from .spectral import SphereScalarTruncation, assemble_H, duhamel_quadrature, semigroup_apply
from .trig import TrigPoly

SUITES = ("geometry", "paths", "transport", "fk", "trace", "spin")
C_DT = 2.0


@dataclass
class Check:
    name: str
    passed: bool
    value: float
    tolerance: float

    def to_json(self) -> dict:
        d = asdict(self)
        d["value"] = float(d["value"])
        d["tolerance"] = float(d["tolerance"])
        d["passed"] = bool(d["passed"])
        return d


def _le(name: str, value: float, tol: float) -> Check:
    value = float(value)
    return Check(name, bool(np.isfinite(value) and value <= tol), value, tol)


def _mc_bar(name: str, err: float, stderr: float, dt: float) -> Check:
    return _le(name, err, 3 * stderr + C_DT * dt)


# -- geometry -----------------------------------------------------------------


def _geometry() -> list[Check]:
    rng = np.random.default_rng(1)
    S = Sphere2(1.3)
    out = []
    u = rng.uniform(-1.5, 1.5, size=(50, 2))
    p = S.point(u)
    q = S.in_chart(S.in_chart(p, 1), 0)
    out.append(_le("sphere chart round trip", np.abs(q.coords - p.coords).max(), 1e-12))
    out.append(_le("sphere embedded norm", np.abs(np.linalg.norm(p.embedded, axis=1) - S.radius).max(), 1e-12))
    unit = Sphere2(1.0)
    g = unit.metric(unit.point([[0.6, 0.8]]))[0]
    out.append(_le("unit sphere metric at |u| = 1", np.abs(g - np.eye(2)).max(), 1e-12))

    # Christoffel symbols against finite differences of the metric
    h = 1e-5
    pts = S.point(rng.uniform(-1, 1, size=(10, 2)))
    G = S.christoffel(pts)
    dg = np.stack(
        [(S.metric(S.point(pts.coords + h * e)) - S.metric(S.point(pts.coords - h * e))) / (2 * h) for e in np.eye(2)],
        axis=1,
    )  # dg[n, l, i, j] = d_l g_ij
    ginv = np.linalg.inv(S.metric(pts))
    ref = 0.5 * np.einsum(
        "nkl,nlij->nkij",
        ginv,
        np.einsum("nilj->nlij", dg) + np.einsum("njli->nlij", dg) - dg,
    )
    out.append(_le("sphere Christoffel vs metric differences", np.abs(G - ref).max(), 1e-6))

    v = rng.normal(size=(50, 2)) * 0.3
    back = S.log(p, S.exp(p, v))
    out.append(_le("sphere exp/log round trip", np.abs(back - v).max(), 1e-9))

    # heat kernels: trace identity on the sphere, mass on the circle and torus
    for t in (0.5, 2.0):
        x = unit.point([[0.2, -0.1]])
        lhs = 4 * math.pi * unit.heat_kernel(x, x, t)[0]
        out.append(_le(f"sphere heat trace t={t}", abs(lhs - SphereScalarTruncation(60).trace(t)), 1e-10))
    C = Circle(1.0)
    grid, w = C.quadrature(512)
    x0 = C.point([0.3])
    out.append(_le("circle heat kernel mass", abs(np.sum(w * C.heat_kernel(x0.repeat(len(grid)), grid, 0.7)) - 1), 1e-12))
    T = FlatTorus((2 * math.pi, 3.0))
    grid, w = T.quadrature((128, 96))
    x0 = T.point([[0.3, 1.1]])
    out.append(_le("torus heat kernel mass", abs(np.sum(w * T.heat_kernel(x0.repeat(len(grid)), grid, 0.4)) - 1), 1e-12))
    return out


# -- paths ----------------------------------------------------------------------


def _paths() -> list[Check]:
    out = []
    T = FlatTorus()
    x = T.point([[0.0, 0.0]])
    a = sample_bm(T, x, 0.5, 0.05, RngConfig(3), 200)
    b = sample_bm(T, x, 0.5, 0.05, RngConfig(3), 200)
    out.append(Check("paths reproducible from the seed", bool(np.array_equal(a.coords, b.coords)), 0.0, 0.0))
    inc = a.increments.reshape(-1, 2)
    var = np.mean(inc**2) / 0.05
    se = np.std(inc**2) / 0.05 / math.sqrt(inc.size)
    out.append(_le("torus increment variance = dt", abs(var - 1), 4 * se))
    for M, x in ((Circle(), Circle().point([0.0])), (Sphere2(), Sphere2().point([[0.3, 0.2]]))):
        for t in (0.5, 2.0):
            br = sample_bridge(M, x, x, t, t / 200, t / 100, RngConfig(11), 4000)
            w = br.weight
            out.append(_le(f"bridge weight mean on {M.kind} t={t}", abs(w.mean() - 1), 3 * w.std() / math.sqrt(len(w))))
    c = a.coarsen(2)
    out.append(_le("coarsened path keeps the endpoint", np.abs(c.coords[:, -1] - a.coords[:, -1]).max(), 1e-12))
    return out


# -- transport ------------------------------------------------------------------


def octant_holonomy(S: Sphere2, n: int = 200) -> float:
    """Rotation angle of the tangent frame around the geodesic octant triangle."""
    B = tangent_s2(S)
    r = S.radius
    corners = r * np.array([[0, 0, 1.0], [1, 0, 0], [0, 1, 0], [0, 0, 1]])
    p = S.point_from_embedded(corners[:1])
    frames = S.initial_frames(p)
    T = np.eye(2, dtype=complex)[None]
    for a, b in zip(corners[:-1], corners[1:]):
        for s in np.linspace(0, math.pi / 2, n + 1)[1:]:
            target = S.point_from_embedded((math.cos(s) * a + math.sin(s) * b)[None])
            res = S.step_to(p, frames, target)
            T = transport_step(B, T, p, res)
            p, frames = res.points, res.frames
    if p.chart[0] != 0:
        T = B.transition(p, p.chart, np.array([0])) @ T
    return float(np.arctan2(T[0, 1, 0].real, T[0, 0, 0].real))


def _transport() -> list[Check]:
    out = []
    for r in (1.0, 2.0):
        S = Sphere2(r)
        ang = octant_holonomy(S)
        # enclosed area / r^2 = pi / 2 for any radius
        out.append(_le(f"tangent holonomy around octant r={r}", abs(ang - math.pi / 2), 1e-4))
    S = Sphere2()
    x = S.point([[0.1, 0.2]])
    from .bundles import parallel_transport

    path = sample_bm(S, x, 1.0, 0.01, RngConfig(5), 64)
    seq = parallel_transport(tangent_s2(S), path)
    U = seq.mats[:, -1]
    defect = np.abs(np.conj(np.swapaxes(U, -1, -2)) @ U - np.eye(2)).max()
    out.append(_le("tangent transport unitary", defect, 1e-10))
    C = Circle()
    a = 0.3
    B = u1_flat(C, a)
    p = C.point([0.0])
    frames = C.initial_frames(p)
    T = np.eye(1, dtype=complex)[None]
    for _ in range(100):
        res = C.step(p, frames, np.array([[2 * math.pi / 100]]))
        T = transport_step(B, T, p, res)
        p = res.points
    out.append(_le("u1 flat holonomy e^{-2 pi i a}", abs(T[0, 0, 0] - np.exp(-2j * math.pi * a)), 1e-12))
    return out


# -- fk ---------------------------------------------------------------------------


def _fk() -> list[Check]:
    out = []
    C = Circle()
    x = C.point([0.4])
    B = trivial(C)
    mc = McConfig(20000, 1e-2, seed=2)
    e = fk_estimate(B, FirstOrderOp.zero(C), SectionFn.constant([2.0]), x, 1.0, mc)
    out.append(Check("Q = 0, constant psi exact", bool(np.all(e.mean == 2.0) and np.all(e.stderr == 0)), 0.0, 0.0))
    a, V, k, t = 1.0, 0.5, 1, 0.5
    Q = FirstOrderOp.constant(C, a, V)
    psi = SectionFn.trig(TrigPoly({(k,): 1.0}, C.periods))
    e = fk_estimate(B, Q, psi, x, t, mc)
    exact = np.exp(-t * (k * k / 2 + 1j * k * a + V)) * np.exp(1j * k * 0.4)
    out.append(_mc_bar("circle a d + V vs Fourier", abs(e.mean[0] - exact), float(np.max(e.stderr)), mc.dt))
    N = np.array([[0, 1], [0, 0]], dtype=complex)
    B2 = trivial(C, 2)
    QN = FirstOrderOp.constant(C, None, N)
    w = np.array([1.0, 2.0])
    e = fk_estimate(B2, QN, SectionFn.constant(w), x, t, mc)
    out.append(_le("nilpotent q0: (I - tN) w", np.abs(e.mean - (np.eye(2) - t * N) @ w).max(), 1e-9 + C_DT * mc.dt))
    T = assemble_H(B2, QN, 4)
    v0 = T.coeffs(TrigPoly.constant(np.array([[1.0], [2.0]]), C.periods, (2, 1)))
    res = semigroup_apply(T, t, v0)
    out.append(_le("spectral nilpotent block", np.abs(res - (np.kron(np.eye(9), np.eye(2) - t * N)) @ v0).max(), 1e-12))
    TH = assemble_H(B, Q, 6)
    diag = np.array([k * k / 2 + 1j * k * a + V for k in range(-6, 7)])
    out.append(_le("assembled circle operator is diagonal", np.abs(TH.H - np.diag(diag)).max(), 1e-12))
    y = C.point([0.9])
    ek = kernel_estimate(B, FirstOrderOp.constant(C, None, V), x, y, t, McConfig(20000, 1e-2, seed=4))
    ref = np.exp(-V * t) * C.heat_kernel(x, y, t)[0]
    out.append(_mc_bar("kernel of H + V", abs(ek.mean[0, 0] - ref), float(ek.stderr[0, 0]), 2 * mc.dt))
    return out


# -- trace ------------------------------------------------------------------------


def _trace() -> list[Check]:
    out = []
    rng = np.random.default_rng(8)
    worst = 0.0
    for n in (2, 4, 8, 16):
        A = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
        H = A @ A.conj().T / n
        P = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
        worst = max(worst, perturbation_identity_check(H, P, 0.7) / max(1.0, np.linalg.norm(P)))
    out.append(_le("Berezin theta-part = -Duhamel", worst, 1e-9))
    X = GrassmannMatrix.odd(np.eye(2))
    out.append(_le("theta^2 = 0", np.abs((X @ X).b).max() + np.abs((X @ X).a).max(), 0.0))
    C = Circle()
    B = trivial(C)
    mc = McConfig(16384, 1e-2, seed=6, workers=1)
    zero = trace_formula_mc(B, None, FirstOrderOp.zero(C), None, 1.0, mc)
    out.append(Check("P = 0 gives 0", bool(zero.mean == 0), 0.0, 0.0))
    f = TrigPoly({(0,): 1.0, (1,): 0.5, (-1,): 0.5}, C.periods)
    P = FirstOrderOp.trig(C, None, f)
    T = assemble_H(B, FirstOrderOp.zero(C), 32)
    ref = trace_formula_spectral(T, T.multiplication(f), 1.0)
    e = trace_formula_mc(B, None, P, None, 1.0, mc, grid=32)
    delta = e.extra["delta"]
    out.append(_mc_bar("trace of Duhamel(1 + cos)", abs(complex(e.mean) - ref), float(e.stderr), mc.dt + delta))
    return out


# -- spin -------------------------------------------------------------------------


def _spin() -> list[Check]:
    from .spin.clifford import CliffordAlgebra2
    from .spin.dirac import commutation_identity_check, lichnerowicz_check, plane_wave
    from .spin.geometry import Form, SpinorField, surface
    from .spin.oracle import anticommutation_defect, dirac_truncation, heat_trace, heat_trace_exact, str_heat

    out = []
    out.append(_le("Clifford relations", CliffordAlgebra2().relations_defect(), 1e-14))
    T = dirac_truncation(4)
    out.append(_le("grading anticommutes with D", anticommutation_defect(T), 1e-10))
    ev = T.eigenvalues
    pos = np.sort(ev[ev > 0])
    expect = np.repeat(np.arange(1, 5), 2 * np.arange(1, 5))  # eigenvalue m has multiplicity 2m
    out.append(_le("Dirac eigenvalues +-(k+1)", np.abs(pos - expect).max() + abs(len(ev) - 2 * len(expect)), 1e-10))
    for t in (1.0, 2.0):
        out.append(_le(f"Str e^(-tD^2) = 0 at t={t}", abs(str_heat(T, t)), 1e-10))
    T8 = dirac_truncation(8)
    out.append(_le("Tr e^(-D^2) vs closed form", abs(heat_trace(T8, 1.0) - heat_trace_exact(1.0)), 1e-12))

    S = Sphere2()
    surf = surface(S)
    rng = np.random.default_rng(4)
    p = surf.at(np.zeros(5, dtype=np.int64), rng.uniform(-0.8, 0.8, size=(5, 2)))
    amp = rng.normal(size=(3, 2)) + 1j * rng.normal(size=(3, 2))
    phi = SpinorField.from_embedded(surf, lambda X: amp[0] + X[:, :1] * amp[1] + X[:, 2:] ** 2 * amp[2])
    r_l = lichnerowicz_check(surf, phi, p, 2e-3) / lichnerowicz_check(surf, phi, p, 1e-3)
    out.append(Check("Lichnerowicz O(h^2) on the sphere", bool(np.all((r_l > 3.5) & (r_l < 4.5))), float(np.median(r_l)), 4.0))
    form = Form(w1=lambda X: np.stack([X[:, 1] * X[:, 2], 1 + X[:, 0], X[:, 0] ** 2], axis=-1))
    r_c = commutation_identity_check(surf, form, phi, p, 2e-3) / commutation_identity_check(surf, form, phi, p, 1e-3)
    out.append(Check("commutation identity O(h^2) on the sphere", bool(np.all((r_c > 3.5) & (r_c < 4.5))), float(np.median(r_c)), 4.0))
    Tor = FlatTorus()
    ts = surface(Tor)
    q = ts.at(np.zeros(5, dtype=np.int64), rng.uniform(0, 6, size=(5, 2)))
    psi = plane_wave([1.0, 2.0], [1.0, 0.5j])
    fform = Form(w1=lambda U: np.stack([np.cos(U[:, 1]), np.sin(U[:, 0])], axis=-1))
    r_t = commutation_identity_check(ts, fform, psi, q, 2e-2) / commutation_identity_check(ts, fform, psi, q, 1e-2)
    out.append(Check("commutation identity O(h^2) on the torus", bool(np.all((r_t > 3.5) & (r_t < 4.5))), float(np.median(r_t)), 4.0))
    return out


_RUNNERS: dict[str, Callable[[], list[Check]]] = {
    "geometry": _geometry,
    "paths": _paths,
    "transport": _transport,
    "fk": _fk,
    "trace": _trace,
    "spin": _spin,
}


def run_suite(name: str, fault_names=()) -> dict:
    """Run one suite (or "all") with the given faults switched on."""
    names = SUITES if name == "all" else (name,)
    for n in names:
        if n not in _RUNNERS:
            raise ConfigError(f"unknown suite {n!r}; choose from {', '.join(SUITES + ('all',))}")
    for f in fault_names:
        faults.enable(f)
    try:
        suites = []
        for n in names:
            started = time.perf_counter()
            try:
                checks = _RUNNERS[n]()
                error = None
            except Exception as exc:  # a crash is a failed suite, not a harness error
                checks, error = [], f"{type(exc).__name__}: {exc}"
            entry = {
                "suite": n,
                "passed": error is None and all(c.passed for c in checks),
                "checks": [c.to_json() for c in checks],
                "wall_time": time.perf_counter() - started,
            }
            if error:
                entry["error"] = error
            suites.append(entry)
    finally:
        for f in fault_names:
            faults.disable(f)
    return {"suites": suites, "faults": list(fault_names), "passed": all(s["passed"] for s in suites)}


def summary_table(report: dict) -> str:
    rows = [f"{'suite':<10} {'checks':>6} {'failed':>6}  status"]
    for s in report["suites"]:
        n_fail = sum(not c["passed"] for c in s["checks"]) + (1 if "error" in s else 0)
        rows.append(f"{s['suite']:<10} {len(s['checks']):>6} {n_fail:>6}  {'PASS' if s['passed'] else 'FAIL'}")
    return "\n".join(rows)
