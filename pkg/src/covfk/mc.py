"""Monte Carlo plumbing: run configuration, chunked parallel execution, estimates.

Paths are processed in fixed-size chunks. Chunk j always draws from the
child stream ``RngConfig(seed).child(j)`` and results are concatenated in
chunk order, so an estimate depends on (seed, n_paths, dt, chunk_size) but
never on the number of workers.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import NonFiniteSampleError
from .paths import RngConfig


@dataclass(frozen=True)
class McConfig:
    n_paths: int
    dt: float
    seed: int = 0
    delta: float | None = None
    workers: int = 1
    chunk_size: int = 4096
    transport_rule: str = "midpoint"
    abort_on_nonfinite: bool = True

    def __post_init__(self):
        if self.n_paths < 1:
            raise ValueError("n_paths must be >= 1")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.workers < 1 or self.chunk_size < 1:
            raise ValueError("workers and chunk_size must be >= 1")

    def chunks(self) -> list[tuple[RngConfig, int]]:
        root = RngConfig(self.seed, 0)
        n_chunks = math.ceil(self.n_paths / self.chunk_size)
        sizes = [self.chunk_size] * (n_chunks - 1)
        sizes.append(self.n_paths - self.chunk_size * (n_chunks - 1))
        return [(root.child(j), n) for j, n in enumerate(sizes)]


@dataclass
class Estimate:
    mean: np.ndarray
    stderr: np.ndarray
    n_paths: int
    dt: float
    seed: int
    wall_time: float = 0.0
    n_rejected: int = 0
    extra: dict = field(default_factory=dict)

    def within(self, target, n_sigma: float = 3.0, slack: float = 0.0) -> bool:
        """Every entry within n_sigma standard errors (plus slack) of target."""
        err = np.abs(np.asarray(self.mean) - np.asarray(target))
        return bool(np.all(err <= n_sigma * np.asarray(self.stderr) + slack))

    def to_json(self, timing: bool = True) -> dict:
        out = {
            "mean": to_jsonable(self.mean),
            "stderr": to_jsonable(np.asarray(self.stderr, dtype=float)),
            "n_paths": int(self.n_paths),
            "dt": float(self.dt),
            "seed": int(self.seed),
            "n_rejected": int(self.n_rejected),
        }
        if self.extra:
            out["extra"] = {k: to_jsonable(v) for k, v in self.extra.items()}
        if timing:
            out["wall_time"] = float(self.wall_time)
        return out


def to_jsonable(x):
    """Complex numbers as [re, im]; arrays as nested row-major lists."""
    if isinstance(x, Estimate):
        return x.to_json()
    if isinstance(x, dict):
        return {k: to_jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [to_jsonable(v) for v in x]
    arr = np.asarray(x)
    if np.iscomplexobj(arr):
        if arr.ndim == 0:
            return [float(arr.real), float(arr.imag)]
        return [to_jsonable(v) for v in arr]
    if arr.dtype == bool:
        return arr.tolist()
    if arr.dtype.kind in "iu":
        return arr.tolist()
    if arr.dtype.kind == "f":
        return arr.tolist() if arr.ndim else float(arr)
    return x


def run_chunks(mc: McConfig, fn: Callable[[RngConfig, int], np.ndarray]) -> np.ndarray:
    """Evaluate ``fn(rng, n)`` on every chunk and concatenate in chunk order."""
    chunks = mc.chunks()
    if mc.workers == 1 or len(chunks) == 1:
        parts = [fn(rng, n) for rng, n in chunks]
    else:
        with ThreadPoolExecutor(max_workers=mc.workers) as pool:
            parts = list(pool.map(lambda c: fn(*c), chunks))
    return np.concatenate(parts, axis=0)


def run_grid(
    mc: McConfig, n_grid: int, n_per: int, fn: Callable[[np.ndarray, RngConfig, int], np.ndarray]
) -> list[np.ndarray]:
    """Run ``n_per`` paths from each of ``n_grid`` start points, all points batched together.

    Chunk c holds m_c paths per grid point and draws from
    ``RngConfig(seed).child(c)``; ``fn(idx, rng, m_c)`` receives the grid index
    of every row (each point repeated m_c times, grid-major) and returns one
    result row per path. Results come back split per grid point.
    """
    root = RngConfig(mc.seed, 0)
    per_chunk = max(1, mc.chunk_size // n_grid)
    n_chunks = math.ceil(n_per / per_chunk)
    sizes = [per_chunk] * (n_chunks - 1) + [n_per - per_chunk * (n_chunks - 1)]
    tasks = [(np.repeat(np.arange(n_grid), m), root.child(c), m) for c, m in enumerate(sizes)]
    if mc.workers == 1 or len(tasks) == 1:
        parts = [fn(*task) for task in tasks]
    else:
        with ThreadPoolExecutor(max_workers=mc.workers) as pool:
            parts = list(pool.map(lambda task: fn(*task), tasks))
    out = []
    for j in range(n_grid):
        out.append(np.concatenate([p[j * m:(j + 1) * m] for p, m in zip(parts, sizes)], axis=0))
    return out


def _check_finite(samples: np.ndarray, mc: McConfig) -> int:
    bad = ~np.isfinite(samples.reshape(len(samples), -1)).all(axis=1)
    n_bad = int(bad.sum())
    if n_bad and mc.abort_on_nonfinite:
        raise NonFiniteSampleError(f"{n_bad} non-finite path samples", n_rejected=n_bad)
    return n_bad


def summarize(samples: np.ndarray, mc: McConfig, started: float | None = None) -> Estimate:
    """Sample mean and standard error (sample std / sqrt(n)) per entry."""
    n_bad = _check_finite(samples, mc)
    if n_bad:
        keep = np.isfinite(samples.reshape(len(samples), -1)).all(axis=1)
        samples = samples[keep]
    n = len(samples)
    if n and np.all(samples == samples[0]):
        mean = samples[0].copy()
        stderr = np.zeros(mean.shape)
    else:
        mean = samples.mean(axis=0)
        ddof = 1 if n > 1 else 0
        dev = samples - mean
        var = np.sum(np.abs(dev) ** 2, axis=0) / max(n - ddof, 1)
        stderr = np.sqrt(var / n)
    wall = 0.0 if started is None else time.perf_counter() - started
    return Estimate(mean, stderr, n, mc.dt, mc.seed, wall, n_bad)


def kish_ess(weights: np.ndarray) -> float:
    """(sum w)^2 / sum w^2; near 1 means one path carries the estimate and its stderr is unreliable."""
    w = np.asarray(weights, dtype=float)
    s2 = float(np.sum(w * w))
    return float(np.sum(w)) ** 2 / s2 if s2 > 0 else 0.0


def summarize_weighted(
    values: np.ndarray, weights: np.ndarray, mc: McConfig, scale: float = 1.0, started: float | None = None
) -> Estimate:
    """Self-normalized importance estimate scale * sum(w Y) / sum(w).

    The standard error is the delta-method one. ``extra`` carries the plain
    estimators mean(w Y) and mean(w) with their own standard errors, so
    callers can form either ratio.
    """
    shape = values.shape[1:]
    w = weights.reshape((-1,) + (1,) * len(shape))
    wy = values * w
    n_bad = _check_finite(wy, mc)
    if n_bad:
        keep = np.isfinite(wy.reshape(len(wy), -1)).all(axis=1)
        values, weights, wy = values[keep], weights[keep], wy[keep]
        w = weights.reshape((-1,) + (1,) * len(shape))
    n = len(values)
    sw = weights.sum()
    ratio = wy.sum(axis=0) / sw
    resid = w * (values - ratio)
    se_ratio = np.sqrt(np.sum(np.abs(resid) ** 2, axis=0)) / abs(sw)
    if np.all(values == values[0]) and np.all(weights == weights[0]):
        se_ratio = np.zeros(shape)
    plain = wy.mean(axis=0)
    plain_se = np.sqrt(np.sum(np.abs(wy - plain) ** 2, axis=0) / max(n - 1, 1) / n)
    wmean = weights.mean()
    wse = weights.std(ddof=1) / math.sqrt(n) if n > 1 else 0.0
    wall = 0.0 if started is None else time.perf_counter() - started
    extra = {
        "ess": kish_ess(weights),
        "weighted_mean": scale * plain,
        "weighted_mean_stderr": abs(scale) * plain_se,
        "weight_mean": wmean,
        "weight_stderr": wse,
    }
    return Estimate(scale * ratio, abs(scale) * se_ratio, n, mc.dt, mc.seed, wall, n_bad, extra)
