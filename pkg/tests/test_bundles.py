import math

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from covfk import faults
from covfk.bundles import (
    expm_2x2,
    expm_antihermitian,
    from_config,
    parallel_transport,
    tangent_s2,
    transport_step,
    trivial,
    u1_flat,
)
from covfk.errors import DomainError
from covfk.geometry import Circle, FlatTorus, Sphere2
from covfk.paths import RngConfig, sample_bm
from covfk.spin.geometry import spinor_bundle
from covfk.validate import octant_holonomy

entries = st.floats(-3, 3)


def _skew(a, b):
    X = a + 1j * b
    return 0.5 * (X - np.conj(np.swapaxes(X, -1, -2)))


@given(arrays(float, (2, 2), elements=entries), arrays(float, (2, 2), elements=entries))
def test_expm_2x2_matches_scipy(a, b):
    X = a + 1j * b
    assert np.allclose(expm_2x2(X[None])[0], scipy.linalg.expm(X), atol=1e-9 * max(1, np.abs(scipy.linalg.expm(X)).max()))


@given(st.integers(1, 5), st.integers(0, 2**32 - 1))
def test_expm_antihermitian_is_unitary_and_exact(d, seed):
    r = np.random.default_rng(seed)
    X = _skew(r.normal(size=(3, d, d)), r.normal(size=(3, d, d)))
    U = expm_antihermitian(X)
    assert np.allclose(np.conj(np.swapaxes(U, -1, -2)) @ U, np.eye(d), atol=1e-12)
    assert np.allclose(U[1], scipy.linalg.expm(X[1]), atol=1e-10)


@pytest.mark.parametrize("r", [1.0, 2.0])
def test_octant_holonomy_is_enclosed_angle(r):
    assert octant_holonomy(Sphere2(r)) == pytest.approx(math.pi / 2, abs=1e-4)


def test_octant_holonomy_detects_flipped_christoffel():
    with faults.injected("christoffel_sign"):
        assert abs(octant_holonomy(Sphere2()) - math.pi / 2) > 0.1


@given(st.floats(-2, 2))
def test_u1_flat_holonomy(a):
    C = Circle()
    B = u1_flat(C, a)
    p = C.point([0.0])
    fr = C.initial_frames(p)
    T = np.eye(1, dtype=complex)[None]
    for _ in range(50):
        res = C.step(p, fr, np.array([[2 * math.pi / 50]]))
        T = transport_step(B, T, p, res)
        p = res.points
    assert T[0, 0, 0] == pytest.approx(np.exp(-2j * math.pi * a), abs=1e-12)


@pytest.mark.parametrize("bundle", ["tangent", "spinor"])
def test_sphere_transport_unitary_along_random_paths(bundle):
    S = Sphere2(1.4)
    B = tangent_s2(S) if bundle == "tangent" else spinor_bundle(S)
    path = sample_bm(S, S.point([[0.2, -0.1]]), 2.0, 0.02, RngConfig(12), 32)
    U = parallel_transport(B, path).mats
    eye = np.eye(B.rank)
    assert np.allclose(np.conj(np.swapaxes(U, -1, -2)) @ U, eye, atol=1e-10)


def test_tangent_transport_converges_to_path_frames():
    # the sampler carries its frame by exact geodesic translation; the connection
    # transport must approach it (in orthonormal coefficients) as dt shrinks
    S = Sphere2()
    fine = sample_bm(S, S.point([[0.1, 0.4]]), 1.0, 1 / 512, RngConfig(2), 16)
    errs = []
    for k in (16, 4, 1):
        path = fine.coarsen(k) if k > 1 else fine
        U = parallel_transport(tangent_s2(S), path).mats[:, -1].real
        n = path.n_steps
        lam0 = np.sqrt(S.metric(path.point(0))[:, :1, :1])
        lamn = np.sqrt(S.metric(path.point(n))[:, :1, :1])
        lhs = np.einsum("nij,njk->nik", U, lam0 * path.chart_frames(0))
        errs.append(np.abs(lhs - lamn * path.chart_frames(n)).max())
    assert errs[0] > 2 * errs[1] > 4 * errs[2]
    assert errs[2] < 2e-3


def test_gauge_change_conjugates_transport():
    C = Circle()
    A = _skew(np.array([[0.3, 1.0], [0.2, -0.5]]), np.array([[0.1, 0.4], [0.0, 0.7]]))
    from covfk.bundles import from_trig
    from covfk.trig import TrigPoly

    B = from_trig(C, [TrigPoly.constant(A, C.periods, (2, 2)) + TrigPoly.cos(1, C.periods, 0.5j, (2, 2))])
    G = scipy.linalg.expm(_skew(np.array([[0.0, 1.0], [2.0, 0.0]]), np.array([[1.0, 0.0], [0.5, 0.3]])))
    path = sample_bm(C, C.point([0.0]), 1.0, 0.05, RngConfig(1), 8)
    T = parallel_transport(B, path).mats[:, -1]
    Tg = parallel_transport(B.gauge(G), path).mats[:, -1]
    assert np.allclose(Tg, G @ T @ np.linalg.inv(G), atol=1e-12)


def test_trivial_transport_is_identity():
    T = FlatTorus()
    path = sample_bm(T, T.point([[0.0, 0.0]]), 0.5, 0.1, RngConfig(0), 4)
    mats = parallel_transport(trivial(T, 3), path).mats
    assert np.array_equal(mats, np.broadcast_to(np.eye(3), mats.shape))


def test_transport_rules_converge_to_their_own_integrals():
    # A = i cos(theta) dtheta: midpoint transport is exp(-i int cos(b) o db) = exp(-i (sin b_t - sin b_0)),
    # the left-point rule the Ito integral, which differs by -(1/2) int sin(b) ds
    C = Circle()
    from covfk.bundles import from_trig
    from covfk.trig import TrigPoly

    B = from_trig(C, [TrigPoly.cos(1, C.periods, 1j)])
    path = sample_bm(C, C.point([0.3]), 1.0, 1e-3, RngConfig(5), 64)
    b = path.coords[:, :, 0]
    strat = np.sin(b[:, -1]) - np.sin(b[:, 0])
    s = np.sin(b)
    ito = strat + 0.5 * np.sum(0.5 * (s[:, 1:] + s[:, :-1]) * np.diff(path.times), axis=1)
    mid = parallel_transport(B, path, "midpoint").mats[:, -1, 0, 0]
    left = parallel_transport(B, path, "ito").mats[:, -1, 0, 0]
    assert np.abs(mid - np.exp(-1j * strat)).max() < 1e-3
    assert np.abs(left - np.exp(-1j * ito)).max() < 0.1
    assert np.abs(mid - left).max() > 0.1
    with pytest.raises(ValueError):
        parallel_transport(B, path, "euler")


def test_presets():
    C, S = Circle(), Sphere2()
    assert from_config(C, "trivial(3)").rank == 3
    assert from_config(C, "trivial").rank == 1
    assert from_config(C, "u1_flat(0.25)").rank == 1
    assert from_config(S, "tangent_s2").rank == 2
    assert from_config(S, "spinor_s2").rank == 2
    with pytest.raises(DomainError):
        from_config(C, "mystery")
    with pytest.raises(DomainError):
        u1_flat(S, 0.1)
