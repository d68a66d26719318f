"""The twelve acceptance criteria, one or more tests each.

Every criterion records a PASS/FAIL line that the terminal summary prints at
the end of the run. Criterion 3 has an unattainable first half (a strict
xfail, reported as FAIL); see the README for the reason.
"""

import json
import math
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE
from covfk import cli
from covfk.berezin import perturbation_identity_check, trace_formula_mc, trace_formula_spectral
from covfk.bundles import parallel_transport, trivial
from covfk.expr import form
from covfk.fk import FirstOrderOp, SectionFn, factorization_check, fk_estimate, kato_estimate, moment_diagnostic
from covfk.fk import observed_order
from covfk.geometry import Circle, FlatTorus, Sphere2
from covfk.mc import McConfig
from covfk.paths import RngConfig, sample_bm, sample_bridge
from covfk.spectral import assemble_H, semigroup_apply
from covfk.spin.chern import TForm, chern_N0, chern_N1, chern_N1_via_trace
from covfk.spin.dirac import commutation_identity_check, lichnerowicz_check, plane_wave
from covfk.spin.geometry import Form, SpinorField, surface
from covfk.spin.oracle import chern_N1_spectral, dirac_truncation, str_heat
from covfk.trig import TrigPoly

C_TOL = 2.0  # bias allowance per unit of dt (or dt + delta)
WORKERS = 2


def record(k: int, ok: bool, desc: str, detail: str = "") -> None:
    prev = ACCEPTANCE.get(k)
    if prev is not None:
        ok = ok and prev[0]
        detail = "; ".join(d for d in (prev[2], detail) if d)
    ACCEPTANCE[k] = (bool(ok), desc, detail)


# -- 1. Feynman-Kac against the exact Fourier solution --------------------------------

CASES_1 = [(a, V, k, t) for a, V in ((1.0, 0.0), (1j, 0.0), (1.0, 2 + 3j)) for k in (0, 1, 3) for t in (0.25, 1.0)]


@pytest.mark.parametrize("a,V,k,t", CASES_1)
def test_criterion_01_fk_circle_matches_fourier(a, V, k, t):
    C = Circle()
    x0 = 0.4
    Q = FirstOrderOp.constant(C, a, V)
    psi = SectionFn.trig(TrigPoly({(k,): 1.0}, C.periods))
    mc = McConfig(100_000, 1e-3, seed=101 + k, workers=WORKERS)
    started = time.perf_counter()
    est = fk_estimate(trivial(C), Q, psi, C.point([x0]), t, mc)
    wall = time.perf_counter() - started
    exact = np.exp(-t * (k * k / 2 + 1j * k * a + V)) * np.exp(1j * k * x0)
    err = abs(est.mean[0] - exact)
    bar = 3 * est.stderr[0] + C_TOL * mc.dt
    ok = err <= bar and wall <= 60 and est.n_rejected == 0
    record(1, ok, "FK on the circle vs exp(-t(k^2/2 + ika + V)) e^{ikx}", "" if ok else f"a={a} V={V} k={k} t={t} err={err:.2e} bar={bar:.2e}")
    assert est.n_rejected == 0
    assert err <= bar
    assert wall <= 60


# -- 2. Nilpotent zeroth-order term ----------------------------------------------------

def test_criterion_02_nilpotent_potential():
    C = Circle()
    N = np.array([[0, 1], [0, 0]], dtype=complex)
    w = np.array([1.0, -2.0])
    t, x0 = 0.7, 0.3
    B = trivial(C, 2)
    Q = FirstOrderOp.constant(C, None, N)
    # w e^{i theta}: the scalar heat flow gives e^{-t/2}, the nilpotent part (I - tN)
    f = TrigPoly({(1,): w.reshape(2, 1).astype(complex)}, C.periods, (2, 1))
    psi = SectionFn.trig(f)
    est = fk_estimate(B, Q, psi, C.point([x0]), t, McConfig(40_000, 1e-2, seed=7, workers=WORKERS))
    exact = np.exp(-t / 2) * np.exp(1j * x0) * ((np.eye(2) - t * N) @ w)
    ok_mc = bool(np.all(np.abs(est.mean - exact) <= 3 * est.stderr + 1e-12))
    T = assemble_H(B, Q, 16)
    spec = T.evaluate(semigroup_apply(T, t, T.coeffs(psi)), C.point([x0]))[0]
    ok_spec = bool(np.all(np.abs(est.mean - spec) <= 3 * est.stderr + 1e-12))
    ok_ref = float(np.abs(spec - exact).max()) < 1e-12
    record(2, ok_mc and ok_spec and ok_ref, "nilpotent q0: (I - tN) w and the K=16 matrix exponential")
    assert ok_ref
    assert ok_mc
    assert ok_spec


# -- 3. Moment diagnostics -------------------------------------------------------------

GRID_3 = Circle().quadrature(16)[0]


@pytest.mark.xfail(strict=True, reason="E|Q(t)|^2 = exp((a^2 - 2 Re V) t) > 1 for a skew symbol; the bound is unattainable")
def test_criterion_03a_skew_symbol_moment_bound():
    C = Circle()
    a, V, t = 1.0, 0.3, 1.0
    rep = moment_diagnostic(trivial(C), FirstOrderOp.constant(C, 1j * a, V), GRID_3, t, McConfig(20_000, 1e-2, seed=3))
    ok = rep.sup <= 1 + 3 * rep.sup_stderr
    record(3, ok, "moment diagnostics", f"3a skew symbol sup E|Q|^2 = {rep.sup:.4f} > 1 (unattainable); exact value e^{{(a^2 - 2V)t}} = {math.exp((a * a - 2 * V) * t):.4f}")
    assert ok


def test_criterion_03a_corrected_moment_identity():
    # the quantity the diagnostic actually measures, against its closed form
    C = Circle()
    a, V, t = 1.0, 0.3, 1.0
    mc = McConfig(20_000, 1e-2, seed=3)
    rep = moment_diagnostic(trivial(C), FirstOrderOp.constant(C, 1j * a, V), GRID_3, t, mc)
    exact = math.exp((a * a - 2 * V) * t)
    assert np.all(np.abs(rep.per_point.mean - exact) <= 3 * rep.per_point.stderr + C_TOL * mc.dt)


def test_criterion_03b_scalar_potential_decay():
    C = Circle()
    c, t = 0.7, 1.0
    mc = McConfig(2000, 1e-3, seed=5)
    rep = moment_diagnostic(trivial(C), FirstOrderOp.constant(C, None, c), GRID_3, t, mc)
    err = float(np.abs(rep.per_point.mean - math.exp(-2 * c * t)).max())
    bar = 3 * rep.sup_stderr + C_TOL * mc.dt
    record(3, err <= bar, "moment diagnostics", f"3b q0 = cI gives e^(-2ct) (err {err:.1e})")
    assert err <= bar


# -- 4. Factorization order -------------------------------------------------------------

def test_criterion_04_factorization_order():
    C = Circle()
    A = 0.8 * np.array([[[0, 1], [-1, 0]]], dtype=complex)
    V = np.array([[0.5, 1.0], [0.0, -0.3]], dtype=complex)
    B = trivial(C, 2)
    Q = FirstOrderOp.constant(C, A, V)
    fine = sample_bm(C, C.point([0.2]), 1.0, 1 / 256, RngConfig(3), 2000)
    errs = []
    for k in (8, 4, 2, 1):
        p = fine.coarsen(k) if k > 1 else fine
        errs.append(factorization_check(B, Q, p, parallel_transport(B, p)))
    orders = observed_order(errs)
    ok = bool(np.all(orders >= 0.9) and np.all(np.diff(errs) < 0))
    record(4, ok, "factorization discrepancy order >= 0.9 over three halvings", f"orders {np.round(orders, 3).tolist()}")
    assert ok


# -- 5. Kato diagnostic --------------------------------------------------------------------

def test_criterion_05_kato_circle():
    C = Circle()
    t = 1.0
    grid = C.quadrature(16)[0]  # contains theta = 0 where the supremum sits
    rep = kato_estimate(C, lambda p: 1 + np.cos(p.coords[:, 0]), t, grid, McConfig(20_000, 1e-2, seed=5))
    exact = t + 2 * (1 - math.exp(-t / 2))
    err = abs(rep.sup - exact)
    ok = err <= 3 * rep.sup_stderr
    record(5, ok, "Kato diagnostic for 1 + cos reproduces t + 2(1 - e^{-t/2})", f"err {err:.1e}, 3se {3 * rep.sup_stderr:.1e}")
    assert ok


# -- 6. Bridge normalization ----------------------------------------------------------------

@pytest.mark.parametrize("kind", ["circle", "sphere2"])
@pytest.mark.parametrize("t", [0.5, 2.0])
def test_criterion_06_bridge_weight_mean(kind, t):
    M = Circle() if kind == "circle" else Sphere2()
    x = M.point([0.3]) if kind == "circle" else M.point([[0.3, -0.2]])
    y = M.point([2.0]) if kind == "circle" else M.point([[-0.4, 0.5]])
    for target in (x, y):
        br = sample_bridge(M, x, target, t, t / 200, t / 100, RngConfig(17), 20_000)
        w = br.weight
        err = abs(w.mean() - 1)
        bar = 3 * w.std() / math.sqrt(len(w))
        ok = err <= bar
        record(6, ok, "bridge weights have mean 1", "" if ok else f"{kind} t={t}: err {err:.2e} > {bar:.2e}")
        assert ok


# -- 7. Berezin identity ---------------------------------------------------------------------

def test_criterion_07_berezin_identity():
    rng = np.random.default_rng(7)
    dims = np.linspace(2, 64, 20).astype(int)
    started = time.perf_counter()
    worst = 0.0
    for n in dims:
        A = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
        H = A @ A.conj().T / n + rng.normal(size=(n, n)) * 0.1  # not normal
        P = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
        t = rng.uniform(0.2, 2.0)
        worst = max(worst, perturbation_identity_check(H, P, t) / max(1.0, np.linalg.norm(P)))
    wall = time.perf_counter() - started
    ok = worst <= 1e-9 and wall <= 5
    record(7, ok, "Berezin theta-part = -Duhamel over 20 random pairs up to dimension 64", f"worst {worst:.1e}, {wall:.2f} s")
    assert worst <= 1e-9
    assert wall <= 5


# -- 8. Trace formula -------------------------------------------------------------------------

@pytest.mark.parametrize("which", ["derivative", "one_plus_cos"])
def test_criterion_08_trace_formula(which):
    C = Circle()
    B = trivial(C)
    t = 1.0
    if which == "derivative":
        P = FirstOrderOp.constant(C, 1.0, None)
    else:
        P = FirstOrderOp.trig(C, None, TrigPoly({(0,): 1.0, (1,): 0.5, (-1,): 0.5}, C.periods))
    T = assemble_H(B, FirstOrderOp.zero(C), 32)
    ref = trace_formula_spectral(T, T.operator(P, B), t)
    mc = McConfig(32_000, 1e-2, seed=8, workers=WORKERS)
    est = trace_formula_mc(B, None, P, None, t, mc, grid=32)
    err = abs(complex(est.mean) - ref)
    bar = 3 * float(est.stderr) + C_TOL * (mc.dt + est.extra["delta"])
    if which == "derivative":
        assert abs(ref) < 1e-12
    ok = err <= bar
    record(8, ok, "trace formula vs K=32 Duhamel trace (P = d/dtheta, 1 + cos)", f"{which}: err {err:.1e} bar {bar:.1e}")
    assert ok


# -- 9. Lichnerowicz and commutation identities --------------------------------------------------

def _in_band(r):
    return bool(np.all((r >= 3.5) & (r <= 4.5)))


def test_criterion_09_lichnerowicz_and_commutation():
    rng = np.random.default_rng(9)
    S = surface(Sphere2())
    Tor = surface(FlatTorus())
    ok_all = True
    for _ in range(20):
        p = S.at(0, rng.uniform(-0.8, 0.8, size=(1, 2)))
        amp = rng.normal(size=(3, 2)) + 1j * rng.normal(size=(3, 2))
        phi = SpinorField.from_embedded(S, lambda X, amp=amp: amp[0] + X[:, :1] * amp[1] + X[:, 2:] ** 2 * amp[2])
        c = rng.normal(size=3)
        alpha = Form(w1=lambda X, c=c: np.stack([c[0] * X[:, 1] * X[:, 2], c[1] + X[:, 0], c[2] * X[:, 0] ** 2], axis=-1))
        r_l = lichnerowicz_check(S, phi, p, 2e-3) / lichnerowicz_check(S, phi, p, 1e-3)
        r_c = commutation_identity_check(S, alpha, phi, p, 2e-3) / commutation_identity_check(S, alpha, phi, p, 1e-3)
        q = Tor.at(0, rng.uniform(0, 2 * math.pi, size=(1, 2)))
        k = rng.integers(-2, 3, size=2).astype(float)
        if not k.any():
            k[0] = 1.0
        psi = plane_wave(k, rng.normal(size=2) + 1j * rng.normal(size=2))
        m = rng.integers(1, 3, size=2)
        beta = Form(w1=lambda U, m=m: np.stack([np.cos(m[0] * U[:, 1]), np.sin(m[1] * U[:, 0])], axis=-1))
        r_t = commutation_identity_check(Tor, beta, psi, q, 2e-2) / commutation_identity_check(Tor, beta, psi, q, 1e-2)
        ok_all &= _in_band(r_l) and _in_band(r_c) and _in_band(r_t)
    record(9, ok_all, "Lichnerowicz and commutation discrepancies quarter under h-halving")
    assert ok_all


# -- 10. McKean-Singer ---------------------------------------------------------------------------

def test_criterion_10_index_zero():
    S = Sphere2()
    mc = McConfig(100_000, 2e-2, seed=10, workers=WORKERS)
    est = chern_N0(Form(f0=lambda X: np.ones(len(X))), S, mc, 2.0, (6, 12))
    err = abs(complex(est.mean))
    ok_mc = err <= 3 * float(est.stderr) and est.n_paths >= 100_000
    T = dirac_truncation(8)
    strs = [abs(str_heat(T, t)) for t in (1.0, 2.0)]
    ok_str = max(strs) <= 1e-10
    expect = np.arange(1, 5, dtype=float)
    ok_ev = True
    for K in (4, 8):
        ev = dirac_truncation(K).eigenvalues
        for lam in expect:
            ok_ev &= bool(np.min(np.abs(ev - lam)) <= 1e-2 and np.min(np.abs(ev + lam)) <= 1e-2)
    ok = ok_mc and ok_str and ok_ev
    record(10, ok, "Ch_0(1) = 0, Str e^{-tD^2} = 0, Dirac eigenvalues +-(k+1)", f"MC {err:.1e} vs 3se {3 * float(est.stderr):.1e}")
    assert ok_mc
    assert ok_str
    assert ok_ev


# -- 11. Chern N = 1 -----------------------------------------------------------------------------

CASES_11 = [("vol", "1 + z"), ({"f2": "z"}, "z")]


@pytest.mark.parametrize("a0,f", CASES_11)
def test_criterion_11_chern_n1(a0, f):
    S = Sphere2()
    alpha0 = form(a0)
    alpha1 = TForm(Form(), form(f))
    mc = McConfig(14_400, 2e-2, seed=11, workers=WORKERS)
    grid = (6, 12)
    est = chern_N1(alpha0, alpha1, S, mc, 2.0, grid)
    ref = chern_N1_spectral(dirac_truncation(10), alpha0, None, alpha1.dblprime, 1.0)
    err = abs(complex(est.mean) - ref)
    bar = 3 * float(est.stderr) + C_TOL * (mc.dt + est.extra["delta"])
    other = chern_N1_via_trace(alpha0, alpha1, S, McConfig(14_400, 2e-2, seed=12, workers=WORKERS), 2.0, grid)
    diff = abs(complex(est.mean) - complex(other.mean))
    comb = 3 * math.hypot(float(est.stderr), float(other.stderr))
    ok = err <= bar and diff <= comb
    record(11, ok, "Ch_1 vs spinor Duhamel value and vs the trace formula", f"{a0}/{f}: err {err:.1e} bar {bar:.1e}; cross {diff:.1e} <= {comb:.1e}")
    assert err <= bar
    assert diff <= comb


def test_criterion_11_same_noise_agreement():
    # on identical paths the two routes are the same functional
    S = Sphere2()
    alpha0, alpha1 = form("vol"), TForm(Form(), form("1 + z"))
    mc = McConfig(720, 5e-2, seed=4)
    a = chern_N1(alpha0, alpha1, S, mc, 2.0, (6, 12))
    b = chern_N1_via_trace(alpha0, alpha1, S, mc, 2.0, (6, 12))
    assert abs(complex(a.mean) - complex(b.mean)) < 1e-10


# -- 12. Determinism across worker counts -----------------------------------------------------------

DETERMINISM_CONFIGS = {
    "fk": {
        "geometry": {"kind": "circle"},
        "operator": {"sigma1": [1], "q0": "2"},
        "psi": "exp(3*i*theta)",
        "x": {"coords": [0.4]},
        "t": 0.25,
        "mc": {"n_paths": 3000, "dt": 0.01, "seed": 1, "chunk_size": 512},
    },
    "fk_kernel": {
        "geometry": {"kind": "sphere2"},
        "bundle": "tangent_s2",
        "x": {"coords": [0.1, 0.2]},
        "y": {"coords": [0.3, -0.1]},
        "t": 0.5,
        "mc": {"n_paths": 1500, "dt": 0.05, "seed": 2, "chunk_size": 256},
    },
    "trace": {
        "geometry": {"kind": "circle"},
        "P": {"q0": "1 + cos(theta)"},
        "t": 1.0,
        "grid": 8,
        "mc": {"n_paths": 2000, "dt": 0.05, "seed": 3, "chunk_size": 64},
    },
    "chern": {
        "N": 1,
        "alpha0": "vol",
        "alpha1": {"dt": "1 + z"},
        "grid": [3, 6],
        "cross_check": True,
        "mc": {"n_paths": 720, "dt": 0.1, "seed": 4, "chunk_size": 72},
    },
}


def _run_cli(command, cfg, workers, tmp_path):
    cfg_path = tmp_path / f"{command}.json"
    cfg_path.write_text(json.dumps(cfg, indent=2))
    out = tmp_path / f"{command}-{workers}.out.json"
    code = cli.main([command, "--config", str(cfg_path), "--workers", str(workers), "--no-timing", "--out", str(out)])
    return code, out.read_bytes()


@pytest.mark.parametrize("name", sorted(DETERMINISM_CONFIGS))
def test_criterion_12_cli_bytes_independent_of_workers(name, tmp_path):
    command = name.split("_")[0]
    cfg = DETERMINISM_CONFIGS[name]
    code1, a = _run_cli(command, cfg, 1, tmp_path)
    code3, b = _run_cli(command, cfg, 3, tmp_path)
    code1b, c = _run_cli(command, cfg, 1, tmp_path)
    ok = code1 in (0, 1) and code1 == code3 == code1b and a == b == c
    record(12, ok, "byte-identical result JSON across runs and --workers values", "" if ok else f"{name} differs")
    assert a == c
    assert a == b


def test_criterion_12_library_estimators_independent_of_workers():
    C = Circle()
    grid = C.quadrature(4)[0]
    runs = []
    for w in (1, 3):
        mc = McConfig(600, 0.05, seed=12, workers=w, chunk_size=128)
        md = moment_diagnostic(trivial(C), FirstOrderOp.constant(C, 1j, 0.3), grid, 0.5, mc)
        ka = kato_estimate(C, lambda p: 1 + np.cos(p.coords[:, 0]), 0.5, grid, mc)
        ch = chern_N0(form("vol"), Sphere2(), McConfig(180, 0.1, seed=12, workers=w, chunk_size=32), 2.0, (3, 6))
        runs.append(json.dumps(cli.to_jsonable([md.to_json(False), ka.to_json(False), ch.to_json(False)]), sort_keys=True))
    ok = runs[0] == runs[1]
    record(12, ok, "byte-identical result JSON across runs and --workers values")
    assert ok

