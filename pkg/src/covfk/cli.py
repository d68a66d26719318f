"""Command line front end: ``covfk fk|trace|chern|validate``.

Configs are JSON documents validated against the schemas shipped in
``covfk/schemas``. Results are JSON with complex numbers as [re, im] pairs.
Exit codes: 0 success, 1 runtime or acceptance failure, 2 config error.

Two runs with the same config and seed produce byte-identical output apart
from the ``timing`` block (dropped entirely by ``--no-timing``). The echoed
config leaves out ``mc.workers`` because the worker count never changes a
result.
"""

from __future__ import annotations

import argparse
import copy
import dataclasses
import json
import math
import os
import sys
import time
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np
import scipy
from referencing import Registry, Resource
from referencing.jsonschema import DRAFT202012

from . import __version__, faults
from .bundles import from_config as bundle_from_config
from .errors import ConfigError, CovFKError
from .geometry import Circle, FlatTorus, ManifoldModel, Points, Sphere2
from .geometry import from_config as geometry_from_config
from .mc import McConfig, to_jsonable

RESULT_SCHEMA = "covfk.result/1"
DEFAULT_C = 2.0
COMMANDS = ("fk", "trace", "chern", "validate")


# -- config loading -------------------------------------------------------------


def _schemas() -> tuple[Registry, dict]:
    root = resources.files("covfk") / "schemas"
    docs = {}
    for name in ("common", *COMMANDS):
        docs[name] = json.loads((root / f"{name}.json").read_text())
    registry = Registry().with_resources(
        (f"covfk/{name}.json", Resource.from_contents(doc, default_specification=DRAFT202012))
        for name, doc in docs.items()
    )
    return registry, docs


def _line_of(text: str, path) -> int:
    """Best-effort line number of a JSON path inside the source text."""
    pos = 0
    for part in path:
        if isinstance(part, str):
            hit = text.find(json.dumps(part), pos)
            if hit < 0:
                break
            pos = hit
        else:
            # skip to the part-th element of the array that starts after pos
            start = text.find("[", pos)
            if start < 0:
                break
            depth, count, i = 0, 0, start + 1
            while i < len(text) and count < part:
                ch = text[i]
                if ch in "[{":
                    depth += 1
                elif ch in "]}":
                    depth -= 1
                elif ch == "," and depth == 0:
                    count += 1
                elif ch == '"':
                    i = text.find('"', i + 1)
                    while text[i - 1] == "\\":
                        i = text.find('"', i + 1)
                i += 1
            pos = i
    return text.count("\n", 0, pos) + 1


def _json_path(path) -> str:
    out = "$"
    for part in path:
        out += f"[{part}]" if isinstance(part, int) else f".{part}"
    return out


def load_config(text: str, command: str, source: str = "<config>") -> dict:
    """Parse and schema-check a config; raises ConfigError with a line number."""
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source}:{exc.lineno}: malformed JSON: {exc.msg}") from None
    registry, docs = _schemas()
    validator = jsonschema.Draft202012Validator(docs[command], registry=registry)
    errors = sorted(validator.iter_errors(cfg), key=lambda e: (len(e.absolute_path), list(map(str, e.absolute_path))))
    if errors:
        err = jsonschema.exceptions.best_match(errors)
        path = list(err.absolute_path)
        if err.validator == "additionalProperties" and isinstance(err.instance, dict):
            allowed = set(err.schema.get("properties", {}))
            extra = sorted(set(err.instance) - allowed)
            if extra:
                path = path + [extra[0]]
        line = _line_of(text, path)
        raise ConfigError(f"{source}:{line}: {_json_path(path)}: {err.message}")
    cfg["_text"] = text
    cfg["_source"] = source
    return cfg


def _at(cfg: dict, path: tuple, fn):
    """Run a builder; re-raise its ConfigError with the line of ``path``."""
    try:
        return fn()
    except ConfigError as exc:
        line = _line_of(cfg.get("_text", ""), list(path))
        raise ConfigError(f"{cfg.get('_source', '<config>')}:{line}: {_json_path(path)}: {exc}") from None


# -- shared builders ----------------------------------------------------------------


def _geometry(cfg: dict, default=None) -> ManifoldModel:
    g = cfg.get("geometry", default)
    return _at(cfg, ("geometry",), lambda: _guard(lambda: geometry_from_config(g)))


def _guard(fn):
    """Turn domain errors raised while building objects into config errors."""
    try:
        return fn()
    except ConfigError:
        raise
    except (CovFKError, ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from None


def _bundle(cfg: dict, M: ManifoldModel):
    spec = cfg.get("bundle", "trivial(1)")
    return _at(cfg, ("bundle",), lambda: _guard(lambda: bundle_from_config(M, spec)))


def _point(cfg: dict, key: str, M: ManifoldModel) -> Points:
    spec = cfg[key]

    def build():
        coords = spec["coords"]
        if len(coords) != M.dim:
            raise ConfigError(f"expected {M.dim} coordinates, got {len(coords)}")
        return M.point([coords], spec.get("chart", 0))

    return _at(cfg, (key,), lambda: _guard(build))


def _mc(cfg: dict, args) -> McConfig:
    m = dict(cfg["mc"])
    if "paths" in m:
        m["n_paths"] = m.pop("paths")
    bridge = m.pop("bridge", {})
    if "delta" in bridge:
        if "delta" in m and m["delta"] != bridge["delta"]:
            raise ConfigError(f"{cfg['_source']}:{_line_of(cfg['_text'], ['mc', 'bridge'])}: $.mc: delta and bridge.delta disagree")
        m["delta"] = bridge["delta"]
    if args.seed is not None:
        m["seed"] = args.seed
    if args.workers is not None:
        m["workers"] = args.workers
    return _at(cfg, ("mc",), lambda: _guard(lambda: McConfig(**m)))


def _oracle_K(cfg: dict, default: int) -> int | None:
    o = cfg.get("oracle", True)
    if o is False:
        return None
    if isinstance(o, dict):
        return int(o.get("K", default))
    return default


def _check(name: str, err: float, bar: float) -> dict:
    return {"name": name, "error": float(err), "bar": float(bar), "passed": bool(np.isfinite(err) and err <= bar)}


def _est_json(est) -> dict:
    return est.to_json(timing=False)


# -- commands -------------------------------------------------------------------------


def cmd_fk(cfg: dict, args) -> dict:
    from .expr import first_order_op, section
    from .fk import fk_estimate, kernel_estimate
    from .paths import default_delta

    M = _geometry(cfg)
    B = _bundle(cfg, M)
    rank = B.rank
    Q = _at(cfg, ("operator",), lambda: _guard(lambda: first_order_op(cfg.get("operator", {}), M, rank)))
    x = _point(cfg, "x", M)
    mc = _mc(cfg, args)
    t = float(cfg["t"])
    C = float(cfg.get("tolerance_C", DEFAULT_C))
    kernel = "y" in cfg
    if kernel:
        if "psi" in cfg:
            raise ConfigError(f"{cfg['_source']}:{_line_of(cfg['_text'], ['psi'])}: $.psi: give either psi or y, not both")
        y = _point(cfg, "y", M)
        est = kernel_estimate(B, Q, x, y, t, mc)
        delta = est.extra["delta"]
    else:
        if "psi" not in cfg:
            raise ConfigError(f"{cfg['_source']}:1: $: psi is required without y")
        psi = _at(cfg, ("psi",), lambda: _guard(lambda: section(cfg["psi"], M, rank)))
        est = fk_estimate(B, Q, psi, x, t, mc)
        delta = 0.0

    out = {"estimate": _est_json(est), "oracle": None, "checks": []}
    if est.n_rejected:
        out["checks"].append(_check("no rejected paths", est.n_rejected, 0))
    K = _oracle_K(cfg, 16 if isinstance(M, Circle) else 8)
    if K is not None and isinstance(M, (Circle, FlatTorus)) and _expressible(B, Q):
        ref = _fk_oracle(B, Q, x, t, K, y if kernel else None, None if kernel else psi)
        err = np.abs(np.asarray(est.mean) - ref)
        bar = 3 * np.asarray(est.stderr) + C * (mc.dt + delta)
        out["oracle"] = {"kind": "fourier", "K": K, "value": to_jsonable(ref)}
        worst = int(np.argmax(err - bar))
        out["checks"].append(_check("|MC - oracle| <= 3 stderr + C (dt + delta)", err.flat[worst], bar.flat[worst]))
    out["tolerance_C"] = C
    out["_wall"] = est.wall_time
    return out


def _expressible(B, Q) -> bool:
    if not B.is_trivial and B.fourier is None:
        return False
    if Q.symbol is not None and Q.fourier_symbol is None:
        return False
    if Q.potential is not None and Q.fourier_potential is None:
        return False
    return True


def _fk_oracle(B, Q, x: Points, t: float, K: int, y: Points | None, psi) -> np.ndarray:
    from .spectral import assemble_H, semigroup_apply

    T = assemble_H(B, Q, K)
    if y is None:
        return T.evaluate(semigroup_apply(T, t, T.coeffs(psi)), x)[0]
    # column b of the kernel is e^{-tH} applied to delta_y e_b, projected on the modes
    d = T.rank
    w = 2 * np.pi / T.manifold.periods
    ey = np.exp(1j * (y.coords[0] * w) @ T.modes.T) / math.sqrt(T.manifold.volume)
    out = np.zeros((d, d), dtype=complex)
    for b in range(d):
        v = np.zeros(T.size, dtype=complex)
        v[b::d] = np.conj(ey)
        out[:, b] = T.evaluate(semigroup_apply(T, t, v), x)[0]
    return out


def cmd_trace(cfg: dict, args) -> dict:
    from .berezin import perturbation_identity_check, trace_formula_mc, trace_formula_spectral
    from .expr import first_order_op, sphere_field, trig_poly
    from .fk import FirstOrderOp
    from .spectral import assemble_H

    M = _geometry(cfg)
    B = _bundle(cfg, M)
    rank = B.rank
    V = _at(cfg, ("V",), lambda: _guard(lambda: first_order_op(cfg["V"], M, rank))) if "V" in cfg else None
    P = _at(cfg, ("P",), lambda: _guard(lambda: first_order_op(cfg["P"], M, rank)))
    flat = isinstance(M, (Circle, FlatTorus))
    Vt_poly = Vt = None
    if "Vtilde" in cfg:
        if flat:
            Vt_poly = _at(cfg, ("Vtilde",), lambda: _guard(lambda: trig_poly(cfg["Vtilde"], M, rank)))
            Vt = lambda p: Vt_poly(p.coords)  # noqa: E731
        else:
            Vt, _ = _at(cfg, ("Vtilde",), lambda: _guard(lambda: sphere_field(cfg["Vtilde"], rank)))
    mc = _mc(cfg, args)
    t = float(cfg["t"])
    C = float(cfg.get("tolerance_C", DEFAULT_C))
    grid = cfg.get("grid")
    if isinstance(grid, list):
        grid = tuple(grid)

    out = {"oracle": None, "checks": []}
    K = _oracle_K(cfg, 32 if isinstance(M, Circle) else 6)
    V_op = V if V is not None else FirstOrderOp.zero(M, rank)
    T = None
    if K is not None and flat and _expressible(B, V_op) and _expressible(B, P):
        T = assemble_H(B, V_op, K)
        Pm = T.operator(P, B)
        H = T.H
    else:
        rng = np.random.default_rng(0)
        A = rng.normal(size=(8, 8)) + 1j * rng.normal(size=(8, 8))
        H, Pm = A @ A.conj().T / 8, rng.normal(size=(8, 8)) + 0j
    pre = perturbation_identity_check(H, Pm, t) / max(1.0, float(np.linalg.norm(Pm)))
    out["preflight"] = _check("Berezin theta-part = -Duhamel", pre, 1e-9)
    if not out["preflight"]["passed"]:
        out["checks"].append(out["preflight"])
        return out

    est = trace_formula_mc(B, V, P, Vt, t, mc, grid=grid)
    out["estimate"] = _est_json(est)
    if T is not None:
        Vtm = T.multiplication(Vt_poly) if Vt_poly is not None else None
        ref = trace_formula_spectral(T, Pm, t, Vtm)
        delta = est.extra.get("delta", 0.0)
        err = abs(complex(est.mean) - ref)
        bar = 3 * float(est.stderr) + C * (mc.dt + delta)
        out["oracle"] = {"kind": "duhamel", "K": K, "value": to_jsonable(ref)}
        out["checks"].append(_check("|MC - Duhamel trace| <= 3 stderr + C (dt + delta)", err, bar))
    out["tolerance_C"] = C
    out["_wall"] = est.wall_time
    return out


def cmd_chern(cfg: dict, args) -> dict:
    from .expr import form, tform
    from .spin.chern import CHERN_T, chern_N0, chern_N1, chern_N1_via_trace
    from .spin.oracle import chern_N0_spectral, chern_N1_spectral, dirac_truncation

    M = _geometry(cfg, {"kind": "sphere2", "radius": 1.0})
    if not isinstance(M, Sphere2):
        raise ConfigError(f"{cfg['_source']}:{_line_of(cfg['_text'], ['geometry'])}: $.geometry: chern runs on sphere2")
    a0 = _at(cfg, ("alpha0",), lambda: _guard(lambda: form(cfg["alpha0"])))
    N = int(cfg["N"])
    a1 = _at(cfg, ("alpha1",), lambda: _guard(lambda: tform(cfg.get("alpha1")))) if N == 1 else None
    mc = _mc(cfg, args)
    t = float(cfg.get("t", CHERN_T))
    C = float(cfg.get("tolerance_C", DEFAULT_C))
    grid = tuple(cfg["grid"]) if "grid" in cfg else None
    conv = cfg.get("convention", "increasing")
    out = {"oracle": None, "checks": []}
    if N == 0:
        est = chern_N0(a0, M, mc, t, grid, conv)
    else:
        est = chern_N1(a0, a1, M, mc, t, grid, cfg.get("form", "ito"), conv)
    out["estimate"] = _est_json(est)
    wall = est.wall_time
    delta = est.extra.get("delta", 0.0) if est.extra else 0.0
    if N == 1 and a1.is_zero:
        out["checks"].append(_check("alpha1 = 0 gives 0", abs(complex(est.mean)), 0.0))
    K = _oracle_K(cfg, 10)
    if K is not None and not (N == 1 and a1.is_zero):
        T = dirac_truncation(K, M.radius, conv)
        if N == 0:
            ref = chern_N0_spectral(T, a0, t / 2)
        else:
            p = None if a1.prime.is_zero else a1.prime
            pp = None if a1.dblprime.is_zero else a1.dblprime
            ref = chern_N1_spectral(T, a0, p, pp, t / 2)
        err = abs(complex(est.mean) - ref)
        bar = 3 * float(est.stderr) + C * (mc.dt + delta)
        out["oracle"] = {"kind": "dirac_truncation", "K": K, "value": to_jsonable(ref)}
        out["checks"].append(_check("|MC - spectral| <= 3 stderr + C (dt + delta)", err, bar))
    if N == 1 and cfg.get("cross_check") and not a1.is_zero:
        # an independent seed so the combined bar is a genuine statistical check
        other = chern_N1_via_trace(a0, a1, M, dataclasses.replace(mc, seed=mc.seed + 1), t, grid, conv)
        wall += other.wall_time
        diff = abs(complex(est.mean) - complex(other.mean))
        bar = 3 * math.hypot(float(est.stderr), float(other.stderr))
        out["cross_check"] = {"trace_formula": _est_json(other), "difference": diff, "bar": bar}
        out["checks"].append(_check("chern_N1 vs trace formula within combined bars", diff, bar))
    out["tolerance_C"] = C
    out["_wall"] = wall
    return out


def cmd_validate(cfg: dict, args) -> dict:
    from .validate import run_suite, summary_table

    suite = args.suite or cfg.get("suite", "all")
    fault_names = list(cfg.get("faults", [])) + list(args.fault or [])
    started = time.perf_counter()
    report = run_suite(suite, fault_names)
    table = summary_table(report)
    print(table, file=sys.stderr)
    out = {"suite": suite, "faults": fault_names, "suites": report["suites"], "summary": table.splitlines()}
    out["checks"] = [
        {"name": s["suite"], "passed": s["passed"]} for s in report["suites"]
    ]
    if args.no_timing:
        for s in out["suites"]:
            s.pop("wall_time", None)
    out["_wall"] = time.perf_counter() - started
    return out


_COMMANDS = {"fk": cmd_fk, "trace": cmd_trace, "chern": cmd_chern, "validate": cmd_validate}


# -- driver ------------------------------------------------------------------------------


def _echo(cfg: dict, args) -> dict:
    echo = {k: copy.deepcopy(v) for k, v in cfg.items() if not k.startswith("_")}
    if "mc" in echo:
        echo["mc"].pop("workers", None)
        if args.seed is not None:
            echo["mc"]["seed"] = args.seed
    return echo


def build_result(command: str, cfg: dict, args) -> dict:
    body = _COMMANDS[command](cfg, args)
    wall = body.pop("_wall", None)
    checks = body.get("checks", [])
    result = {
        "schema": RESULT_SCHEMA,
        "command": command,
        "config": _echo(cfg, args),
        **body,
        "pass": bool(all(c["passed"] for c in checks)),
        "versions": {"covfk": __version__, "numpy": np.__version__, "scipy": scipy.__version__},
    }
    if not args.no_timing:
        result["timing"] = {"wall_time": wall}
    return result


def dumps(result: dict) -> str:
    return json.dumps(to_jsonable(result), indent=2, sort_keys=True) + "\n"


def _golden(name: str, text: str, update: bool) -> None:
    root = os.environ.get("COVFK_GOLDEN_DIR")
    if not root:
        raise ConfigError("--golden needs the COVFK_GOLDEN_DIR environment variable")
    path = Path(root) / name
    strip = lambda s: {k: v for k, v in json.loads(s).items() if k not in _GOLDEN_IGNORED}  # noqa: E731
    if update or not path.exists():
        if not update:
            raise CovFKError(f"golden file {path} does not exist (use --update-golden)")
        path.write_text(text)
        return
    where = _first_difference(strip(path.read_text()), strip(text))
    if where is not None:
        raise CovFKError(f"result differs from golden file {path} at {where}")


# wall-clock and library versions legitimately vary between machines
_GOLDEN_IGNORED = ("timing", "versions", "wall_time")


def _first_difference(a, b, where="$", rel=1e-9):
    """Path of the first mismatch, comparing floats to a relative tolerance."""
    if isinstance(a, dict) and isinstance(b, dict):
        if set(a) - set(_GOLDEN_IGNORED) != set(b) - set(_GOLDEN_IGNORED):
            return where
        for k in sorted(a):
            if k in _GOLDEN_IGNORED:
                continue
            d = _first_difference(a[k], b[k], f"{where}.{k}", rel)
            if d is not None:
                return d
        return None
    if isinstance(a, list) and isinstance(b, list):
        if len(a) != len(b):
            return where
        for i, (x, y) in enumerate(zip(a, b)):
            d = _first_difference(x, y, f"{where}[{i}]", rel)
            if d is not None:
                return d
        return None
    if isinstance(a, float) or isinstance(b, float):
        if isinstance(a, bool) or isinstance(b, bool) or not isinstance(a, (int, float)) or not isinstance(b, (int, float)):
            return where
        return None if math.isclose(a, b, rel_tol=rel, abs_tol=1e-12) else where
    return None if a == b else where


def make_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="covfk", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="JSON run config (optional for validate)")
    p.add_argument("--seed", type=int, help="override mc.seed")
    p.add_argument("--workers", type=int, help="worker threads (never changes results)")
    p.add_argument("--out", help="write the result JSON here instead of stdout")
    p.add_argument("--no-timing", action="store_true", help="omit wall-clock fields")
    p.add_argument("--suite", choices=("geometry", "paths", "transport", "fk", "trace", "spin", "all"))
    p.add_argument("--fault", action="append", choices=sorted(faults.KNOWN_FAULTS), help="inject a fault (testing)")
    p.add_argument("--golden", help="compare against this file in $COVFK_GOLDEN_DIR")
    p.add_argument("--update-golden", action="store_true", help="write the golden file instead of comparing")
    return p


def main(argv=None) -> int:
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code else 0
    try:
        if args.workers is not None and args.workers < 1:
            raise ConfigError("--workers must be >= 1")
        if args.config:
            try:
                text = Path(args.config).read_text()
            except OSError as exc:
                raise ConfigError(f"cannot read config: {exc}") from None
            cfg = load_config(text, args.command, args.config)
        elif args.command == "validate":
            cfg = {}
        else:
            raise ConfigError(f"{args.command} needs --config")
        injected = [] if args.command == "validate" else list(args.fault or [])
        for f in injected:
            faults.enable(f)
        try:
            result = build_result(args.command, cfg, args)
        finally:
            for f in injected:
                faults.disable(f)
        text = dumps(result)
        if args.out:
            Path(args.out).write_text(text)
        else:
            sys.stdout.write(text)
        if args.golden:
            _golden(args.golden, text, args.update_golden)
    except ConfigError as exc:
        print(f"covfk: config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - runtime failures map to exit code 1
        print(f"covfk: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    if not result["pass"]:
        print("covfk: acceptance check failed", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
