"""Feynman-Kac estimators for first-order perturbations of the Bochner Laplacian.

For H = nabla^dagger nabla / 2 + Q with Q = sigma1(Q) nabla + q0 the
semigroup is

    e^{-tH} Psi(x) = E[ Q(t) //(t)^{-1} Psi(b_t) ],

where the Q-process solves the Ito equation

    dQ = -Q //^{-1} (sigma1(db) + q0 dt) //,   Q(0) = I.

Everything here is discretized with left-point (Ito) coefficients and the
frame-referenced Gaussian increment of the path sampler.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .bundles import BundleSpec, TransportSequence, conjugate, contract, transport_step
from .errors import ChartError, DomainError
from .geometry import ManifoldModel, Points, StepResult
from .mc import Estimate, McConfig, run_chunks, run_grid, summarize, summarize_weighted
from .paths import PathSample, bridge_weight, check_delta, default_delta, time_grid, walk
from .trig import TrigPoly

SymbolFn = Callable[[Points], np.ndarray]
PotentialFn = Callable[[Points], np.ndarray]


def mm(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Batched matrix product, elementwise for 1 x 1 fibers."""
    if a.shape[-1] == 1 and b.shape[-2] == 1:
        return a * b
    return a @ b


# -- operators and sections -------------------------------------------------


@dataclass
class FirstOrderOp:
    """Q = sigma1(Q) nabla + q0 on a rank-d bundle.

    ``symbol(p)`` has shape (n, m, d, d): entry i is sigma1(Q) paired with the
    coordinate vector d_i, so ``sigma1(p, X) = sum_i X^i S_i`` for chart
    components X. ``potential(p)`` has shape (n, d, d). Either may be None,
    meaning zero. The optional Fourier data lets the spectral oracle assemble
    the same operator exactly.
    """

    manifold: ManifoldModel
    rank: int
    symbol: SymbolFn | None = None
    potential: PotentialFn | None = None
    fourier_symbol: list[TrigPoly] | None = field(default=None, repr=False)
    fourier_potential: TrigPoly | None = field(default=None, repr=False)
    name: str = "Q"

    @property
    def is_zero(self) -> bool:
        return self.symbol is None and self.potential is None

    def sigma1(self, p: Points, X) -> np.ndarray:
        d = self.rank
        if self.symbol is None:
            return np.zeros((len(p), d, d), dtype=complex)
        X = np.asarray(X, dtype=float).reshape(len(p), self.manifold.dim)
        return contract(self.symbol(p), X)

    def q0(self, p: Points) -> np.ndarray:
        if self.potential is None:
            return np.zeros((len(p), self.rank, self.rank), dtype=complex)
        return self.potential(p)

    def increment(self, p: Points, X: np.ndarray, h: float) -> np.ndarray | None:
        """sigma1(p, X) + q0(p) h, or None when Q vanishes."""
        out = None
        if self.symbol is not None:
            out = contract(self.symbol(p), X)
        if self.potential is not None:
            q = self.potential(p) * h
            out = q if out is None else out + q
        return out

    def split(self) -> tuple["FirstOrderOp", "FirstOrderOp"]:
        """(symbol part, zeroth-order part)."""
        a = FirstOrderOp(self.manifold, self.rank, self.symbol, None, self.fourier_symbol, None, self.name + ".sym")
        b = FirstOrderOp(self.manifold, self.rank, None, self.potential, None, self.fourier_potential, self.name + ".q0")
        return a, b

    @classmethod
    def zero(cls, M: ManifoldModel, d: int = 1) -> "FirstOrderOp":
        return cls(M, d, name="0")

    @classmethod
    def trig(
        cls,
        M: ManifoldModel,
        symbol: list[TrigPoly] | None = None,
        potential: TrigPoly | None = None,
        name: str = "Q",
    ) -> "FirstOrderOp":
        """Operator with trig-polynomial coefficients on a circle or torus."""
        ref = potential if potential is not None else (symbol[0] if symbol else None)
        d = ref.shape[0] if ref is not None else 1
        sym_fn = pot_fn = None
        if symbol is not None:
            if len(symbol) != M.dim:
                raise ValueError("need one symbol coefficient per coordinate")
            sym = list(symbol)
            sym_fn = lambda p: np.stack([S(p.coords) for S in sym], axis=1)  # noqa: E731
        if potential is not None:
            pot_fn = lambda p: potential(p.coords)  # noqa: E731
        return cls(M, d, sym_fn, pot_fn, symbol, potential, name)

    @classmethod
    def constant(cls, M: ManifoldModel, symbol=None, potential=None, rank: int | None = None, name: str = "Q"):
        """Constant coefficients. ``symbol`` is one d x d matrix (or scalar) per coordinate."""
        if symbol is not None:
            symbol = np.asarray(symbol, dtype=complex)
            if symbol.ndim <= 1:
                symbol = symbol.reshape(-1, 1, 1) * np.ones((M.dim, 1, 1))
        if potential is not None:
            potential = np.asarray(potential, dtype=complex)
            if potential.ndim == 0:
                d = rank or (symbol.shape[-1] if symbol is not None else 1)
                potential = potential * np.eye(d)
        d = symbol.shape[-1] if symbol is not None else potential.shape[-1] if potential is not None else rank or 1
        periods = getattr(M, "periods", None)
        if periods is not None:
            fs = None if symbol is None else [TrigPoly.constant(symbol[j], periods, (d, d)) for j in range(M.dim)]
            fp = None if potential is None else TrigPoly.constant(potential, periods, (d, d))
        else:
            fs = fp = None
        sym_fn = None if symbol is None else (lambda p: np.broadcast_to(symbol, (len(p),) + symbol.shape))
        pot_fn = None if potential is None else (lambda p: np.broadcast_to(potential, (len(p), d, d)))
        return cls(M, d, sym_fn, pot_fn, fs, fp, name)


@dataclass
class SectionFn:
    """A section given in chart-referenced fiber coordinates: fn(points) -> (n, d)."""

    fn: Callable[[Points], np.ndarray]
    rank: int
    smooth: str = "C^inf"
    fourier: TrigPoly | None = field(default=None, repr=False)

    def __call__(self, p: Points) -> np.ndarray:
        return np.asarray(self.fn(p), dtype=complex).reshape(len(p), self.rank)

    @classmethod
    def constant(cls, v) -> "SectionFn":
        v = np.atleast_1d(np.asarray(v, dtype=complex))
        return cls(lambda p: np.broadcast_to(v, (len(p), v.size)), v.size, fourier=None)

    @classmethod
    def trig(cls, f: TrigPoly) -> "SectionFn":
        """Section with trig-polynomial components; ``f`` has shape (d, 1)."""
        return cls(lambda p: f(p.coords)[:, :, 0], f.shape[0], fourier=f)


# -- the transported walk ---------------------------------------------------


@dataclass
class Step:
    """One step of a path together with the transport before and after it.

    ``T`` lives in the start point's chart, ``T_next`` in the chart of
    ``res.points``.
    """

    i: int
    h: float
    p: Points
    res: StepResult
    T: np.ndarray
    T_next: np.ndarray
    final: bool = False


class TransportedWalk:
    """Stream a batch of paths from x, carrying stochastic parallel transport.

    With a ``target`` the walk covers [0, t - delta] on the grid and then
    closes with one geodesic step of length delta onto the target, so every
    path ends exactly there (the bridge completion step). Afterwards
    ``end`` is the point reached at t - delta, ``weight`` the bridge weight
    and ``T`` the total transport expressed in the target's chart.
    """

    def __init__(
        self,
        B: BundleSpec,
        x: Points,
        t: float,
        dt: float,
        gen: np.random.Generator,
        n: int,
        rule: str = "midpoint",
        target: Points | None = None,
        delta: float | None = None,
    ):
        self.B, self.x, self.t, self.gen, self.n, self.rule = B, x, t, gen, n, rule
        self.target, self.delta = target, delta
        horizon = t if target is None else t - delta
        self.times = time_grid(horizon, dt)
        d = B.rank
        self.T = np.broadcast_to(np.eye(d, dtype=complex), (n, d, d)).copy()
        self.end: Points | None = None
        self.weight: np.ndarray | None = None

    def __iter__(self):
        B, M = self.B, self.B.manifold
        T = self.T
        p = frames = None
        for i, h, _, p, frames, res in walk(M, self.x, self.times, self.gen, self.n):
            T_next = transport_step(B, T, p, res, self.rule)
            yield Step(i, h, p, res, T, T_next)
            T = T_next
            p, frames = res.points, res.frames
        self.end = p
        if self.target is None:
            self.T = T
            return
        y = self.target
        self.weight = bridge_weight(M, self.x, p, y, self.t, self.delta)
        ys = y.repeat(self.n) if len(y) == 1 else y
        res = M.step_to(p, frames, ys)
        T_next = transport_step(B, T, p, res, self.rule)
        yield Step(len(self.times) - 1, self.delta, p, res, T, T_next, final=True)
        off = res.points.chart != ys.chart
        if np.any(off) and not B.is_trivial:  # a trivial bundle's frame is global
            if B.transition is None:
                raise ChartError("bridge ends in another chart but the bundle has no transition functions")
            T_next = T_next.copy()
            T_next[off] = B.transition(ys[off], res.points.chart[off], ys.chart[off]) @ T_next[off]
        self.T = T_next


def q_update(Qm: np.ndarray, Q: FirstOrderOp, s: Step, trivial: bool) -> np.ndarray:
    """One Ito-Euler step Q <- Q - Q //^{-1} (sigma1(p, F xi) + q0 h) //."""
    M = Q.increment(s.p, s.res.vel0, s.h)
    if M is None:
        return Qm
    if not trivial:
        M = conjugate(s.T, M)
    return Qm - mm(Qm, M)


def _needs_conj(B: BundleSpec) -> bool:
    return not (B.is_trivial or B.rank == 1)


def _identity(n: int, d: int) -> np.ndarray:
    return np.broadcast_to(np.eye(d, dtype=complex), (n, d, d)).copy()


def _dagger(T: np.ndarray) -> np.ndarray:
    return np.conj(np.swapaxes(T, -1, -2))


def _check_pre(B: BundleSpec, Q: FirstOrderOp, t: float) -> None:
    if not t > 0:
        raise DomainError(f"t must be positive, got {t}")
    if Q.rank != B.rank:
        raise DomainError("operator and bundle ranks differ")


# -- operations --------------------------------------------------------------


def solve_q_process(B: BundleSpec, Q: FirstOrderOp, path: PathSample, transport: TransportSequence) -> np.ndarray:
    """Q-process at the final time for each stored path, shape (P, d, d)."""
    if transport.mats.shape[1] != path.n_steps + 1:
        raise DomainError("transport is not aligned with the path")
    trivial = not _needs_conj(B)
    Qm = _identity(path.n_paths, B.rank)
    for i, h, res in path.steps():
        s = Step(i, h, path.point(i), res, transport[i], transport[i + 1])
        Qm = q_update(Qm, Q, s, trivial)
    return Qm


def fk_estimate(B: BundleSpec, Q: FirstOrderOp, psi: SectionFn, x: Points, t: float, mc: McConfig) -> Estimate:
    """Monte Carlo value of e^{-tH} Psi at x, a complex d-vector."""
    _check_pre(B, Q, t)
    started = time.perf_counter()
    trivial = not _needs_conj(B)

    def chunk(rng, n):
        w = TransportedWalk(B, x, t, mc.dt, rng.generator(), n, mc.transport_rule)
        Qm = _identity(n, B.rank)
        for s in w:
            Qm = q_update(Qm, Q, s, trivial)
        v = psi(w.end)
        return np.einsum("nij,nj->ni", mm(Qm, _dagger(w.T)), v)

    return summarize(run_chunks(mc, chunk), mc, started)


def _kernel_run(B, Q, x, y, t, mc, delta):
    check_delta(t, mc.dt, delta)
    started = time.perf_counter()
    trivial = not _needs_conj(B)

    def chunk(rng, n):
        w = TransportedWalk(B, x, t, mc.dt, rng.generator(), n, mc.transport_rule, y, delta)
        Qm = _identity(n, B.rank)
        for s in w:
            Qm = q_update(Qm, Q, s, trivial)
        return np.concatenate([mm(Qm, _dagger(w.T)).reshape(n, -1), w.weight[:, None]], axis=1)

    out = run_chunks(mc, chunk)
    d = B.rank
    vals = out[:, :-1].reshape(-1, d, d)
    weights = out[:, -1].real
    scale = float(B.manifold.heat_kernel(x, y, t)[0])
    est = summarize_weighted(vals, weights, mc, scale, started)
    est.extra["delta"] = delta
    return est


def kernel_estimate(
    B: BundleSpec, Q: FirstOrderOp, x: Points, y: Points, t: float, mc: McConfig
) -> Estimate:
    """Heat kernel e^{-tH}(x, y) as a d x d matrix from weighted bridge paths.

    Paths run freely up to t - delta and are reweighted by
    p(delta, b_{t-delta}, y) / p(t, x, y); the last subinterval is a single
    geodesic step onto y. ``mean`` is the self-normalized estimate.
    """
    _check_pre(B, Q, t)
    delta = mc.delta if mc.delta is not None else default_delta(t, mc.dt)
    return _kernel_run(B, Q, x, y, t, mc, delta)


def delta_extrapolate(estimator: Callable[[float], Estimate], delta: float) -> Estimate:
    """Two-point extrapolation 2 E(delta/2) - E(delta) removing the O(delta) term."""
    a = estimator(delta)
    b = estimator(delta / 2)
    mean = 2 * np.asarray(b.mean) - np.asarray(a.mean)
    se = np.sqrt(4 * np.asarray(b.stderr) ** 2 + np.asarray(a.stderr) ** 2)
    extra = {"coarse": a.mean, "fine": b.mean, "delta": delta}
    return Estimate(mean, se, a.n_paths + b.n_paths, a.dt, a.seed, a.wall_time + b.wall_time, 0, extra)


def kernel_estimate_extrapolated(B, Q, x, y, t, mc: McConfig, delta: float | None = None) -> Estimate:
    delta = delta if delta is not None else default_delta(t, mc.dt)
    return delta_extrapolate(lambda dl: _kernel_run(B, Q, x, y, t, mc, dl), delta)


@dataclass
class GridReport:
    """Per-point estimates over a grid of start points and their supremum."""

    per_point: Estimate
    sup: float
    sup_stderr: float
    argmax: int
    extra: dict = field(default_factory=dict)

    def to_json(self, timing: bool = True) -> dict:
        out = {
            "per_point": self.per_point.to_json(timing),
            "sup": float(self.sup),
            "sup_stderr": float(self.sup_stderr),
            "argmax": int(self.argmax),
        }
        for k, v in self.extra.items():
            out[k] = v.to_json(timing) if isinstance(v, Estimate) else v
        return out


def _grid_points(grid) -> Points:
    """Start points as one batch; accepts Points or a list of single points."""
    if isinstance(grid, Points):
        return grid
    return Points.concat(list(grid))


def _grid_estimate(samples: list[np.ndarray], mc: McConfig, started: float) -> tuple[Estimate, float, float, int]:
    ests = [summarize(s, mc) for s in samples]
    mean = np.array([float(np.real(e.mean)) for e in ests])
    se = np.array([float(e.stderr) for e in ests])
    j = int(np.argmax(mean))
    est = Estimate(mean, se, sum(e.n_paths for e in ests), mc.dt, mc.seed, time.perf_counter() - started)
    return est, float(mean[j]), float(se[j]), j


def moment_diagnostic(B: BundleSpec, Q: FirstOrderOp, grid, t: float, mc: McConfig) -> GridReport:
    """E[|Q(t)|^2] per start point (spectral norm) and its grid supremum."""
    _check_pre(B, Q, t)
    started = time.perf_counter()
    pts = _grid_points(grid)
    trivial = not _needs_conj(B)

    def task(idx, rng, m):
        n = len(idx)
        w = TransportedWalk(B, pts[idx], t, mc.dt, rng.generator(), n, mc.transport_rule)
        Qm = _identity(n, B.rank)
        for s in w:
            Qm = q_update(Qm, Q, s, trivial)
        if B.rank == 1:
            return np.abs(Qm[:, 0, 0]) ** 2
        return np.linalg.norm(Qm, ord=2, axis=(1, 2)) ** 2

    samples = run_grid(mc, len(pts), mc.n_paths, task)
    est, sup, se, j = _grid_estimate(samples, mc, started)
    return GridReport(est, sup, se, j)


def kato_estimate(
    M: ManifoldModel, w: Callable[[Points], np.ndarray], t: float, grid, mc: McConfig, p: float | None = None
) -> GridReport:
    """sup_x of the trapezoidal estimate of int_0^t E|w(b_s)| ds.

    With ``p`` given, ``extra["khashminskii"]`` holds the per-point
    exponential moments E[exp(p int_0^t |w(b_s)| ds)] and their supremum.
    """
    if not t > 0:
        raise DomainError(f"t must be positive, got {t}")
    started = time.perf_counter()
    pts = _grid_points(grid)
    times = time_grid(t, mc.dt)

    def task(idx, rng, m):
        acc = np.zeros(len(idx))
        for _, h, _, q, _, res in walk(M, pts[idx], times, rng.generator(), len(idx)):
            acc += 0.5 * h * (np.abs(w(q)) + np.abs(w(res.points)))
        return acc

    samples = run_grid(mc, len(pts), mc.n_paths, task)
    est, sup, se, j = _grid_estimate(samples, mc, started)
    extra = {}
    if p is not None:
        kh, ksup, kse, kj = _grid_estimate([np.exp(p * s) for s in samples], mc, started)
        extra["khashminskii"] = GridReport(kh, ksup, kse, kj)
    return GridReport(est, sup, se, j, extra)


def factorization_check(
    B: BundleSpec, Q: FirstOrderOp, path: PathSample, transport: TransportSequence, per_path: bool = False
):
    """Discrepancy between Q and the two-stage product Q2 Q1 on the same noise.

    Q1 solves the symbol-only equation dQ1 = -Q1 //^{-1} sigma1(db) //, and
    Q2 the random ODE dQ2 = -Q2 Q1 //^{-1} q0 // Q1^{-1} dt. Both stages use
    the same Ito-Euler grid as ``solve_q_process``. Returns the root mean
    square over paths of the Frobenius norm of Q - Q2 Q1.
    """
    trivial = not _needs_conj(B)
    sym, pot = Q.split()
    n, d = path.n_paths, B.rank
    Qm, Q1, Q2 = _identity(n, d), _identity(n, d), _identity(n, d)
    for i, h, res in path.steps():
        s = Step(i, h, path.point(i), res, transport[i], transport[i + 1])
        Qm = q_update(Qm, Q, s, trivial)
        if pot.potential is not None:
            V = pot.q0(s.p)
            if not trivial:
                V = conjugate(s.T, V)
            if sym.symbol is not None:
                V = mm(mm(Q1, V), np.linalg.inv(Q1))
            Q2 = Q2 - mm(Q2, V) * h
        Q1 = q_update(Q1, sym, s, trivial)
    diff = np.linalg.norm((Qm - mm(Q2, Q1)).reshape(n, -1), axis=1)
    if per_path:
        return diff
    return float(np.sqrt(np.mean(diff**2)))


def observed_order(errors, factor: float = 2.0) -> np.ndarray:
    """Successive convergence orders log(e_k / e_{k+1}) / log(factor)."""
    e = np.asarray(errors, dtype=float)
    return np.log(e[:-1] / e[1:]) / math.log(factor)
