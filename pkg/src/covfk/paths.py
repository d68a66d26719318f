"""Brownian paths on the model geometries and bridge reweighting.

Paths are generated by the geodesic Euler scheme: draw a Gaussian increment
in R^m, push it through the current orthonormal frame, move along the
geodesic and carry the frame along by parallel translation. The frame is
the discretized horizontal lift; reading increments through it realizes the
solder form.

All supported geometries are compact, so Brownian motion never explodes and
the lifetime indicator in the Feynman-Kac formulas is identically one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .errors import DomainError
from .geometry import ManifoldModel, Points, StepResult

_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class RngConfig:
    """Key of a counter-based random stream (Philox, 128-bit key)."""

    seed: int
    stream: int = 0

    def generator(self) -> np.random.Generator:
        key = ((self.seed & _MASK64) << 64) | (self.stream & _MASK64)
        return np.random.Generator(np.random.Philox(key=key))

    def child(self, i: int) -> "RngConfig":
        """The i-th child stream. Depends only on (seed, stream, i)."""
        ss = np.random.SeedSequence(entropy=[self.seed & _MASK64, self.stream & _MASK64, i])
        word = int(ss.generate_state(1, dtype=np.uint64)[0])
        return RngConfig(self.seed, word)


def split_streams(rng: RngConfig, n: int) -> list[RngConfig]:
    """n independent child streams; child i is ``rng.child(i)``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return [rng.child(i) for i in range(n)]


def time_grid(t: float, dt: float) -> np.ndarray:
    """Uniform grid 0 = t_0 < ... < t_n = t; the last step is truncated if dt does not divide t."""
    if not t > 0 or not dt > 0:
        raise DomainError(f"need t > 0 and dt > 0, got t={t}, dt={dt}")
    if dt > t * (1 + 1e-12):
        raise DomainError("dt must not exceed t")
    n = round(t / dt)
    if n >= 1 and abs(n * dt - t) <= 1e-9 * t:
        return np.linspace(0.0, t, n + 1)
    n = math.ceil(t / dt)
    grid = np.arange(n + 1) * dt
    grid[-1] = t
    return grid


@dataclass
class PathSample:
    """A batch of discretized Brownian paths.

    Shapes: ``coords`` (P, n+1, m), ``chart`` (P, n+1), ``frames`` (P, n+1, ., m)
    in the manifold's native frame representation (embedded 3 x 2 frames on
    the sphere), ``increments`` (P, n, m) already scaled by sqrt(dt).
    """

    manifold: ManifoldModel
    times: np.ndarray
    chart: np.ndarray
    coords: np.ndarray
    embedded: np.ndarray | None
    frames: np.ndarray
    increments: np.ndarray

    @property
    def n_paths(self) -> int:
        return self.coords.shape[0]

    @property
    def n_steps(self) -> int:
        return len(self.times) - 1

    @property
    def points(self) -> list[Points]:
        return [self.point(i) for i in range(self.n_steps + 1)]

    def point(self, i: int) -> Points:
        emb = None if self.embedded is None else self.embedded[:, i]
        return Points(self.chart[:, i], self.coords[:, i], emb)

    def chart_frames(self, i: int) -> np.ndarray:
        """Frame at step i as m x m matrices in chart coordinates."""
        return self.manifold.chart_frames(self.point(i), self.frames[:, i])

    def coarsen(self, k: int) -> "PathSample":
        """The same Brownian path seen on a grid k times coarser.

        Increments are summed in blocks of k and the geodesic scheme is
        re-run, so the coarse path is driven by exactly the same noise.
        """
        n = self.n_steps
        if k < 1 or n % k:
            raise DomainError(f"cannot coarsen {n} steps by a factor {k}")
        times = self.times[::k]
        incr = self.increments.reshape(self.n_paths, n // k, k, -1).sum(axis=2)
        M = self.manifold
        P, nc = self.n_paths, n // k
        chart = np.empty((P, nc + 1), dtype=np.int64)
        coords = np.empty((P, nc + 1, M.dim))
        frames = np.empty((P, nc + 1) + self.frames.shape[2:])
        emb = None if self.embedded is None else np.empty((P, nc + 1, 3))
        p, fr = self.point(0), self.frames[:, 0]
        chart[:, 0], coords[:, 0], frames[:, 0] = p.chart, p.coords, fr
        if emb is not None:
            emb[:, 0] = p.embedded
        for i in range(nc):
            res = M.step(p, fr, incr[:, i])
            p, fr = res.points, res.frames
            chart[:, i + 1], coords[:, i + 1], frames[:, i + 1] = p.chart, p.coords, fr
            if emb is not None:
                emb[:, i + 1] = p.embedded
        return PathSample(M, times, chart, coords, emb, frames, incr)

    def steps(self) -> Iterator[tuple[int, float, StepResult]]:
        """Replay the stored path, yielding the same step data as the sampler."""
        M = self.manifold
        for i in range(self.n_steps):
            h = self.times[i + 1] - self.times[i]
            res = M.step(self.point(i), self.frames[:, i], self.increments[:, i])
            yield i, h, res


@dataclass
class BridgeSample:
    """Unconditioned path on [0, t - delta] with its bridge importance weight."""

    path: PathSample
    target: Points
    t: float
    delta: float
    weight: np.ndarray


def walk(
    M: ManifoldModel,
    x: Points,
    times: np.ndarray,
    gen: np.random.Generator,
    n_paths: int,
) -> Iterator[tuple[int, float, np.ndarray, Points, np.ndarray, StepResult]]:
    """Stream the geodesic Euler scheme without storing the path.

    Yields ``(i, h, xi, p_i, F_i, step)`` where ``F_i`` is the chart frame at
    the start of step i and ``step`` the :class:`StepResult`.
    """
    p = x.repeat(n_paths) if len(x) == 1 else x
    frames = M.initial_frames(p)
    m = M.dim
    for i in range(len(times) - 1):
        h = times[i + 1] - times[i]
        xi = gen.standard_normal((n_paths, m)) * math.sqrt(h)
        res = M.step(p, frames, xi)
        yield i, h, xi, p, frames, res
        p, frames = res.points, res.frames


def sample_bm(
    M: ManifoldModel, x: Points, t: float, dt: float, rng: RngConfig, n_paths: int = 1
) -> PathSample:
    times = time_grid(t, dt)
    n = len(times) - 1
    gen = rng.generator()
    coords = np.empty((n_paths, n + 1, M.dim))
    chart = np.empty((n_paths, n + 1), dtype=np.int64)
    p0 = x.repeat(n_paths)
    frames0 = M.initial_frames(p0)
    frames = np.empty((n_paths, n + 1) + frames0.shape[1:])
    emb = None if p0.embedded is None else np.empty((n_paths, n + 1, 3))
    incr = np.empty((n_paths, n, M.dim))
    coords[:, 0], chart[:, 0], frames[:, 0] = p0.coords, p0.chart, frames0
    if emb is not None:
        emb[:, 0] = p0.embedded
    for i, h, xi, _, _, res in walk(M, p0, times, gen, n_paths):
        incr[:, i] = xi
        coords[:, i + 1] = res.points.coords
        chart[:, i + 1] = res.points.chart
        frames[:, i + 1] = res.frames
        if emb is not None:
            emb[:, i + 1] = res.points.embedded
    return PathSample(M, times, chart, coords, emb, frames, incr)


def check_delta(t: float, dt: float, delta: float) -> None:
    if not 0 < delta < t:
        raise DomainError(f"bridge delta must lie in (0, t), got {delta}")
    k = delta / dt
    if abs(k - round(k)) > 1e-6 * max(1.0, k):
        raise DomainError("bridge delta must be a multiple of dt")


def default_delta(t: float, dt: float) -> float:
    """max(dt, t/100), rounded to a multiple of dt."""
    d = max(dt, t / 100.0)
    return max(1, round(d / dt)) * dt


def bridge_weight(M: ManifoldModel, x: Points, end: Points, y: Points, t: float, delta: float) -> np.ndarray:
    """p(delta, end, y) / p(t, x, y) for a batch of path endpoints at time t - delta."""
    n = len(end)
    ys = y.repeat(n) if len(y) == 1 else y
    num = M.heat_kernel(end, ys, delta)
    den = M.heat_kernel(x, y, t)
    return num / den[0] if len(den) == 1 else num / den


def sample_bridge(
    M: ManifoldModel,
    x: Points,
    y: Points,
    t: float,
    dt: float,
    delta: float,
    rng: RngConfig,
    n_paths: int = 1,
) -> BridgeSample:
    check_delta(t, dt, delta)
    path = sample_bm(M, x, t - delta, dt, rng, n_paths)
    w = bridge_weight(M, x, path.point(path.n_steps), y, t, delta)
    return BridgeSample(path, y, t, delta, w)
