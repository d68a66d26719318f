"""Metric vector bundles with metric connections, and stochastic parallel transport.

A connection is given chart-wise as a local 1-form A = A_i du^i with
anti-Hermitian d x d coefficients, so that nabla = d + A in the chart's fiber
frame. Transport along a path solves d(//) = -A(db) // in the Stratonovich
sense; per step this is discretized as

    //_{i+1} = exp(-A(p_{i+1/2}) du_i) //_i

with p_{i+1/2} the geodesic midpoint and du_i the chart increment. On chart
switches the fiber frame is changed by the bundle transition function. The
exponential of an anti-Hermitian matrix is unitary, so unitarity holds to
round-off at every step.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ChartError, DomainError
from .geometry import Circle, FlatTorus, ManifoldModel, Points, Sphere2, StepResult
from .paths import PathSample
from .trig import TrigPoly

ConnectionFn = Callable[[Points], np.ndarray]
TransitionFn = Callable[[Points, np.ndarray, np.ndarray], np.ndarray]


@dataclass
class BundleSpec:
    """Rank-d Hermitian bundle with a metric connection.

    ``connection(points)`` returns A of shape (n, m, d, d) in each point's chart;
    ``transition(points, src, dst)`` the unitary change of fiber frame from
    chart ``src`` to chart ``dst`` at the given points. ``connection=None``
    means the trivial connection (A = 0 everywhere).
    """

    manifold: ManifoldModel
    rank: int
    connection: ConnectionFn | None = None
    transition: TransitionFn | None = None
    name: str = "custom"
    fourier: list[TrigPoly] | None = field(default=None, repr=False)

    @property
    def is_trivial(self) -> bool:
        return self.connection is None

    def connection_at(self, p: Points) -> np.ndarray:
        m, d = self.manifold.dim, self.rank
        if self.connection is None:
            return np.zeros((len(p), m, d, d), dtype=complex)
        return self.connection(p)

    def gauge(self, G: np.ndarray) -> "BundleSpec":
        """Constant unitary change of fiber frame s -> G s.

        The new connection is G A G^{-1}, so every transport is conjugated by G.
        """
        G = np.asarray(G, dtype=complex)
        Gi = np.linalg.inv(G)
        conn = None
        if self.connection is not None:
            base = self.connection
            conn = lambda p: G @ base(p) @ Gi  # noqa: E731
        trans = None
        if self.transition is not None:
            base_t = self.transition
            trans = lambda p, s, d: G @ base_t(p, s, d) @ Gi  # noqa: E731
        return BundleSpec(self.manifold, self.rank, conn, trans, self.name + "+gauge")


@dataclass
class TransportSequence:
    """Transport matrices //_0 = I, ..., //_n, shape (P, n+1, d, d)."""

    mats: np.ndarray

    def __getitem__(self, i):
        return self.mats[:, i]


def expm_antihermitian(X: np.ndarray) -> np.ndarray:
    """exp(X) for a batch (n, d, d) of anti-Hermitian matrices."""
    d = X.shape[-1]
    if d == 1:
        return np.exp(X)
    if d == 2:
        return expm_2x2(X)
    H = 1j * X
    H = 0.5 * (H + np.conj(np.swapaxes(H, -1, -2)))
    lam, V = np.linalg.eigh(H)
    return (V * np.exp(-1j * lam)[..., None, :]) @ np.conj(np.swapaxes(V, -1, -2))


def expm_2x2(X: np.ndarray) -> np.ndarray:
    """Closed-form exponential of a batch of 2 x 2 complex matrices."""
    a = 0.5 * (X[..., 0, 0] + X[..., 1, 1])
    B = X - a[..., None, None] * np.eye(2)
    det = B[..., 0, 0] * B[..., 1, 1] - B[..., 0, 1] * B[..., 1, 0]
    s = np.sqrt(-det + 0j)
    small = np.abs(s) < 1e-6
    s_safe = np.where(small, 1.0, s)
    sinhc = np.where(small, 1.0 + s * s / 6.0, np.sinh(s_safe) / s_safe)
    out = np.cosh(s)[..., None, None] * np.eye(2) + sinhc[..., None, None] * B
    return np.exp(a)[..., None, None] * out


def contract(A: np.ndarray, v: np.ndarray) -> np.ndarray:
    """sum_i A[n, i] v[n, i] for A of shape (n, m, d, d)."""
    return np.einsum("nimk,ni->nmk", A, v)


def transport_step(
    B: BundleSpec, T: np.ndarray, start: Points, step: StepResult, rule: str = "midpoint"
) -> np.ndarray:
    """Advance a batch of transport matrices across one path step."""
    if B.connection is None:
        return T
    if not np.all(np.isfinite(step.disp)):
        raise ChartError("non-finite chart increment; step left the chart atlas")
    if rule == "midpoint":
        A = B.connection(step.mid)
    elif rule == "ito":
        A = B.connection(start)
    else:
        raise ValueError(f"unknown transport rule {rule!r}")
    U = expm_antihermitian(-contract(A, step.disp))
    T_new = U @ T
    if np.any(step.switched):
        if B.transition is None:
            raise ChartError("path switched charts but the bundle has no transition functions")
        sw = step.switched
        G = B.transition(step.points[sw], start.chart[sw], step.points.chart[sw])
        T_new = T_new.copy()
        T_new[sw] = G @ T_new[sw]
    return T_new


def parallel_transport(B: BundleSpec, path: PathSample, rule: str = "midpoint") -> TransportSequence:
    if B.manifold is not path.manifold and type(B.manifold) is not type(path.manifold):
        raise ChartError("bundle and path live on different manifolds")
    P, n, d = path.n_paths, path.n_steps, B.rank
    mats = np.empty((P, n + 1, d, d), dtype=complex)
    T = np.broadcast_to(np.eye(d, dtype=complex), (P, d, d)).copy()
    mats[:, 0] = T
    for i, _, res in path.steps():
        T = transport_step(B, T, path.point(i), res, rule)
        mats[:, i + 1] = T
    return TransportSequence(mats)


def transport_conjugate(B: BundleSpec, seq: TransportSequence, i: int, X: np.ndarray) -> np.ndarray:
    """//_i^{-1} X //_i: the endomorphism X at b_i read in the fiber at the start."""
    T = seq[i]
    return np.conj(np.swapaxes(T, -1, -2)) @ X @ T


def conjugate(T: np.ndarray, X: np.ndarray) -> np.ndarray:
    """T^{-1} X T for unitary T."""
    return np.conj(np.swapaxes(T, -1, -2)) @ X @ T


# -- presets ----------------------------------------------------------------


def trivial(M: ManifoldModel, d: int = 1) -> BundleSpec:
    return BundleSpec(M, d, None, None, f"trivial({d})")


def u1_flat(M: ManifoldModel, a) -> BundleSpec:
    """Line bundle with the flat connection A = i a_j du^j (constant a)."""
    if not isinstance(M, (Circle, FlatTorus)):
        raise DomainError("u1_flat is defined on circles and flat tori")
    a = np.broadcast_to(np.asarray(a, dtype=float), (M.dim,)).copy()

    def conn(p: Points) -> np.ndarray:
        out = np.empty((len(p), M.dim, 1, 1), dtype=complex)
        out[:, :, 0, 0] = 1j * a
        return out

    fourier = [TrigPoly.constant(1j * a[j], M.periods) for j in range(M.dim)]
    return BundleSpec(M, 1, conn, None, f"u1_flat({a.tolist()})", fourier)


def from_trig(M: ManifoldModel, A: list[TrigPoly], name: str = "trig") -> BundleSpec:
    """Bundle over a circle/torus with trig-polynomial connection coefficients."""
    if len(A) != M.dim:
        raise ValueError("need one coefficient per coordinate")
    d = A[0].shape[0]

    def conn(p: Points) -> np.ndarray:
        return np.stack([Aj(p.coords) for Aj in A], axis=1)

    return BundleSpec(M, d, conn, None, name, list(A))


def tangent_s2(S: Sphere2) -> BundleSpec:
    """Tangent bundle in the orthonormal chart frames e_a = d_a / lambda.

    A_i = F^{-1}(d_i F + Gamma_i F) with F = I / lambda, built from the
    manifold's Christoffel symbols.
    """

    def conn(p: Points) -> np.ndarray:
        G = S.christoffel(p)  # [n, k, i, j]
        dphi = S.dlog_conformal(p)
        A = np.einsum("nkij->nikj", G) - dphi[:, :, None, None] * np.eye(2)
        return A.astype(complex)

    def trans(p: Points, src, dst) -> np.ndarray:
        E_dst = S.initial_frames(p)
        E_src = S.initial_frames(S.in_chart(p, src))
        return np.einsum("nia,nib->nab", E_dst, E_src).astype(complex)

    return BundleSpec(S, 2, conn, trans, "tangent_s2")


def from_config(M: ManifoldModel, spec: str) -> BundleSpec:
    """Parse preset names: trivial(d), u1_flat(a), tangent_s2, spinor_s2."""
    spec = spec.replace(" ", "")
    if spec.startswith("trivial"):
        inner = spec[len("trivial"):].strip("()")
        return trivial(M, int(inner) if inner else 1)
    if spec.startswith("u1_flat"):
        inner = spec[len("u1_flat"):].strip("()")
        vals = [float(v) for v in inner.split(",")] if inner else [0.0]
        return u1_flat(M, vals if len(vals) > 1 else vals[0])
    if spec == "tangent_s2":
        return tangent_s2(M)
    if spec == "spinor_s2":
        from .spin.geometry import spinor_bundle

        return spinor_bundle(M)
    raise DomainError(f"unknown bundle preset {spec!r}")
