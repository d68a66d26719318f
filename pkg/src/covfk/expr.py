"""The small coefficient grammar used by run configs.

Expressions are Python-syntax strings restricted to

    numbers, i (or j) for the imaginary unit, pi,
    + - * and / by constants, ** with a non-negative integer exponent,
    cos(.), sin(.), exp(.),

plus variables that depend on the geometry. On circles and flat tori the
variables are the chart angles (``theta`` on a circle, ``theta1``,
``theta2``, ... on a torus; angle_j = 2 pi x_j / period_j) and the result is
a trig polynomial, so cos and sin need an integer-linear combination of
angles and exp needs i times one. On the sphere the variables are the
embedded coordinates ``x``, ``y``, ``z`` and any composition is allowed.
Matrix literals are nested JSON lists of expressions.

Parsing goes through :mod:`ast` with a node whitelist; nothing is ever
passed to eval.
"""

from __future__ import annotations

import ast
import math
from typing import Callable

import numpy as np

from .errors import ConfigError
from .geometry import Circle, FlatTorus, ManifoldModel, Points, Sphere2
from .trig import TrigPoly

_FUNCS = ("cos", "sin", "exp")
_CONSTS = {"pi": math.pi, "i": 1j, "j": 1j}
_MAX_POWER = 16


def parse(text) -> ast.expr:
    """Validated expression tree. Numbers are accepted as-is."""
    if isinstance(text, bool) or not isinstance(text, (str, int, float)):
        raise ConfigError(f"expected an expression string or number, got {text!r}")
    src = repr(text) if not isinstance(text, str) else text
    try:
        tree = ast.parse(src.strip(), mode="eval")
    except SyntaxError as exc:
        raise ConfigError(f"cannot parse expression {text!r}: {exc.msg}") from None
    for node in ast.walk(tree):
        if isinstance(node, (ast.Expression, ast.Load, ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow, ast.USub, ast.UAdd)):
            continue
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float, complex)) and not isinstance(node.value, bool):
            continue
        if isinstance(node, (ast.BinOp, ast.UnaryOp, ast.Name)):
            continue
        if isinstance(node, ast.Call):
            if not isinstance(node.func, ast.Name) or node.func.id not in _FUNCS or len(node.args) != 1 or node.keywords:
                raise ConfigError(f"only {', '.join(_FUNCS)} of one argument are allowed in {text!r}")
            continue
        raise ConfigError(f"disallowed syntax {type(node).__name__} in {text!r}")
    return tree.body


# -- trig polynomials on circles and tori ---------------------------------------


def angle_names(M: ManifoldModel) -> list[str]:
    if isinstance(M, Circle):
        return ["theta"]
    if isinstance(M, FlatTorus):
        return [f"theta{j + 1}" for j in range(M.dim)]
    raise ConfigError(f"no chart angles on {M!r}")


class _Trig:
    """dict mode -> complex coefficient."""

    def __init__(self, terms: dict, dim: int):
        self.terms = {q: c for q, c in terms.items() if c != 0}
        self.dim = dim

    @classmethod
    def const(cls, c, dim):
        return cls({(0,) * dim: complex(c)}, dim)

    def scalar(self):
        if any(any(q) for q in self.terms):
            return None
        return self.terms.get((0,) * self.dim, 0j)

    def __add__(self, o):
        out = dict(self.terms)
        for q, c in o.terms.items():
            out[q] = out.get(q, 0) + c
        return _Trig(out, self.dim)

    def scale(self, a):
        return _Trig({q: a * c for q, c in self.terms.items()}, self.dim)

    def __mul__(self, o):
        out: dict = {}
        for q1, c1 in self.terms.items():
            for q2, c2 in o.terms.items():
                q = tuple(a + b for a, b in zip(q1, q2))
                out[q] = out.get(q, 0) + c1 * c2
        return _Trig(out, self.dim)


def _trig_eval(node, names, text) -> _Trig:
    dim = len(names)
    if isinstance(node, ast.Constant):
        return _Trig.const(node.value, dim)
    if isinstance(node, ast.Name):
        if node.id in _CONSTS:
            return _Trig.const(_CONSTS[node.id], dim)
        if node.id in names:
            raise ConfigError(f"bare angle {node.id!r} is not a trig polynomial in {text!r}")
        raise ConfigError(f"unknown variable {node.id!r} in {text!r}")
    if isinstance(node, ast.UnaryOp):
        v = _trig_eval(node.operand, names, text)
        return v.scale(-1) if isinstance(node.op, ast.USub) else v
    if isinstance(node, ast.BinOp):
        a = _trig_eval(node.left, names, text)
        b = _trig_eval(node.right, names, text)
        if isinstance(node.op, ast.Add):
            return a + b
        if isinstance(node.op, ast.Sub):
            return a + b.scale(-1)
        if isinstance(node.op, ast.Mult):
            return a * b
        if isinstance(node.op, ast.Div):
            s = b.scalar()
            if s is None or s == 0:
                raise ConfigError(f"division only by nonzero constants in {text!r}")
            return a.scale(1 / s)
        if isinstance(node.op, ast.Pow):
            s = b.scalar()
            if s is None or s.imag != 0 or s.real != int(s.real) or not 0 <= s.real <= _MAX_POWER:
                raise ConfigError(f"exponent must be an integer in [0, {_MAX_POWER}] in {text!r}")
            out = _Trig.const(1, dim)
            for _ in range(int(s.real)):
                out = out * a
            return out
    if isinstance(node, ast.Call):
        mode, c = _complex_linear(node.args[0], names, text)
        if node.func.id == "exp":
            # exp(i k.theta + c) with integer k
            if np.any(mode.real != 0):
                raise ConfigError(f"exp needs i times an integer combination of angles in {text!r}")
            return _Trig({_integer_modes(mode.imag, text): np.exp(c)}, dim)
        if np.any(mode.imag != 0):
            raise ConfigError(f"cos/sin need a real combination of angles in {text!r}")
        q = _integer_modes(mode.real, text)
        nq = tuple(-v for v in q)
        e, ne = np.exp(1j * c), np.exp(-1j * c)
        if node.func.id == "cos":
            return _Trig({q: 0.5 * e}, dim) + _Trig({nq: 0.5 * ne}, dim)
        return _Trig({q: -0.5j * e}, dim) + _Trig({nq: 0.5j * ne}, dim)
    raise ConfigError(f"unsupported expression {ast.dump(node)} in {text!r}")


def _integer_modes(k: np.ndarray, text) -> tuple:
    ki = np.rint(k)
    if np.any(np.abs(k - ki) > 1e-12):
        raise ConfigError(f"angle coefficients must be integers in {text!r}")
    return tuple(int(v) for v in ki)


def _complex_linear(node, names, text):
    dim = len(names)
    if isinstance(node, ast.Constant):
        return np.zeros(dim, complex), complex(node.value)
    if isinstance(node, ast.Name):
        if node.id in names:
            v = np.zeros(dim, complex)
            v[names.index(node.id)] = 1
            return v, 0j
        if node.id in _CONSTS:
            return np.zeros(dim, complex), complex(_CONSTS[node.id])
        raise ConfigError(f"unknown variable {node.id!r} in {text!r}")
    if isinstance(node, ast.UnaryOp):
        v, c = _complex_linear(node.operand, names, text)
        return (-v, -c) if isinstance(node.op, ast.USub) else (v, c)
    if isinstance(node, ast.BinOp):
        a, ca = _complex_linear(node.left, names, text)
        b, cb = _complex_linear(node.right, names, text)
        if isinstance(node.op, ast.Add):
            return a + b, ca + cb
        if isinstance(node.op, ast.Sub):
            return a - b, ca - cb
        if isinstance(node.op, ast.Mult):
            if not a.any():
                return ca * b, ca * cb
            if not b.any():
                return cb * a, ca * cb
        if isinstance(node.op, ast.Div) and not b.any() and cb != 0:
            return a / cb, ca / cb
    raise ConfigError(f"argument must be linear in the angles in {text!r}")


def _to_trigpoly(t: _Trig, M: ManifoldModel) -> TrigPoly:
    return TrigPoly(dict(t.terms) or {(0,) * M.dim: 0.0}, M.periods)


def _matrix(spec, each: Callable, text_shape=None):
    """Apply ``each`` to the leaves of a scalar, vector or matrix literal."""
    if isinstance(spec, list):
        if not spec:
            raise ConfigError("empty matrix literal")
        if all(isinstance(row, list) for row in spec):
            n = len(spec[0])
            if any(len(row) != n for row in spec):
                raise ConfigError(f"ragged matrix literal {spec!r}")
            return [[each(v) for v in row] for row in spec], (len(spec), n)
        if any(isinstance(v, list) for v in spec):
            raise ConfigError(f"mixed vector/matrix literal {spec!r}")
        return [[each(v)] for v in spec], (len(spec), 1)
    return [[each(spec)]], (1, 1)


def trig_poly(spec, M: ManifoldModel, rank: int | None = None) -> TrigPoly:
    """TrigPoly from an expression or a matrix/vector literal of expressions.

    A scalar expression with ``rank`` given becomes that multiple of the
    rank x rank identity.
    """
    names = angle_names(M)
    leaves, shape = _matrix(spec, lambda v: _trig_eval(parse(v), names, v))
    if shape == (1, 1) and rank and rank > 1:
        t = leaves[0][0]
        return TrigPoly({q: c for q, c in t.terms.items()} or {(0,) * M.dim: 0.0}, M.periods, (rank, rank))
    coeffs: dict = {}
    for r, row in enumerate(leaves):
        for c, t in enumerate(row):
            for q, v in t.terms.items():
                coeffs.setdefault(q, np.zeros(shape, dtype=complex))[r, c] += v
    if not coeffs:
        coeffs = {(0,) * M.dim: np.zeros(shape, dtype=complex)}
    return TrigPoly(coeffs, M.periods, shape)


# -- numeric functions on the sphere ----------------------------------------------


_NP_FUNCS = {"cos": np.cos, "sin": np.sin, "exp": np.exp}


def _num_eval(node, env: dict, text):
    if isinstance(node, ast.Constant):
        return node.value
    if isinstance(node, ast.Name):
        if node.id in env:
            return env[node.id]
        if node.id in _CONSTS:
            return _CONSTS[node.id]
        raise ConfigError(f"unknown variable {node.id!r} in {text!r}")
    if isinstance(node, ast.UnaryOp):
        v = _num_eval(node.operand, env, text)
        return -v if isinstance(node.op, ast.USub) else v
    if isinstance(node, ast.BinOp):
        a = _num_eval(node.left, env, text)
        b = _num_eval(node.right, env, text)
        if isinstance(node.op, ast.Add):
            return a + b
        if isinstance(node.op, ast.Sub):
            return a - b
        if isinstance(node.op, ast.Mult):
            return a * b
        if isinstance(node.op, ast.Div):
            if not np.isscalar(b) or b == 0:
                raise ConfigError(f"division only by nonzero constants in {text!r}")
            return a / b
        if isinstance(node.op, ast.Pow):
            if not np.isscalar(b) or b != int(np.real(b)) or not 0 <= np.real(b) <= _MAX_POWER:
                raise ConfigError(f"exponent must be an integer in [0, {_MAX_POWER}] in {text!r}")
            return a ** int(np.real(b))
    if isinstance(node, ast.Call):
        return _NP_FUNCS[node.func.id](_num_eval(node.args[0], env, text))
    raise ConfigError(f"unsupported expression in {text!r}")


def embedded_fn(spec) -> Callable[[np.ndarray], np.ndarray]:
    """Complex function of embedded points x (shape (n, 3)) in the variables x, y, z."""
    node = parse(spec)

    def fn(X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        env = {"x": X[:, 0], "y": X[:, 1], "z": X[:, 2]}
        return np.asarray(_num_eval(node, env, spec), dtype=complex) * np.ones(len(X))

    return fn


def sphere_field(spec, rank: int | None = None) -> tuple[Callable[[Points], np.ndarray], tuple]:
    """Matrix field on the sphere; evaluated at Points, shape (n, r, c)."""
    leaves, shape = _matrix(spec, embedded_fn)
    scalar_id = shape == (1, 1) and rank and rank > 1

    def fn(p: Points) -> np.ndarray:
        n = len(p)
        out = np.empty((n,) + shape, dtype=complex)
        for r, row in enumerate(leaves):
            for c, f in enumerate(row):
                out[:, r, c] = f(p.embedded)
        if scalar_id:
            return out[:, 0, 0][:, None, None] * np.eye(rank)
        return out

    return fn, ((rank, rank) if scalar_id else shape)


# -- builders used by the CLI -------------------------------------------------------


def first_order_op(spec: dict, M: ManifoldModel, rank: int):
    """FirstOrderOp from {"sigma1": [one entry per coordinate], "q0": entry}."""
    from .fk import FirstOrderOp

    unknown = set(spec) - {"sigma1", "q0"}
    if unknown:
        raise ConfigError(f"unknown operator keys {sorted(unknown)}")
    sig, q0 = spec.get("sigma1"), spec.get("q0")
    if isinstance(M, (Circle, FlatTorus)):
        symbol = None
        if sig is not None:
            if not isinstance(sig, list) or len(sig) != M.dim:
                raise ConfigError(f"sigma1 needs one entry per coordinate ({M.dim})")
            symbol = [trig_poly(s, M, rank) for s in sig]
        potential = trig_poly(q0, M, rank) if q0 is not None else None
        for f in (symbol or []) + ([potential] if potential is not None else []):
            if f.shape != (rank, rank):
                raise ConfigError(f"coefficient shape {f.shape} does not match bundle rank {rank}")
        return FirstOrderOp.trig(M, symbol, potential)
    if sig is not None:
        raise ConfigError("sigma1 is only supported on circles and flat tori")
    if q0 is None:
        return FirstOrderOp.zero(M, rank)
    fn, shape = sphere_field(q0, rank)
    if shape != (rank, rank):
        raise ConfigError(f"q0 shape {shape} does not match bundle rank {rank}")
    return FirstOrderOp(M, rank, None, fn, name="Q")


def section(spec, M: ManifoldModel, rank: int):
    """SectionFn from a scalar (rank 1) or a vector literal of expressions."""
    from .fk import SectionFn

    if isinstance(M, (Circle, FlatTorus)):
        f = trig_poly(spec if isinstance(spec, list) else [spec], M)
        if f.shape != (rank, 1):
            raise ConfigError(f"psi has {f.shape[0]} components, bundle rank is {rank}")
        return SectionFn.trig(f)
    fn, shape = sphere_field(spec if isinstance(spec, list) else [spec])
    if shape != (rank, 1):
        raise ConfigError(f"psi has {shape[0]} components, bundle rank is {rank}")
    return SectionFn(lambda p: fn(p)[:, :, 0], rank)


def form(spec):
    """Mixed form on the sphere from {"f0": expr, "w1": [wx, wy, wz], "f2": expr} or "vol".

    The 1-form part is an ambient covector field (projected to the sphere),
    the 2-form part a multiple of the volume form.
    """
    from .spin.geometry import Form

    if spec is None or spec == 0 or spec == "0":
        return Form()
    if spec == "vol":
        return Form(f2=embedded_fn(1), label="vol")
    if not isinstance(spec, dict):
        return Form(f0=embedded_fn(spec), label=str(spec))
    unknown = set(spec) - {"f0", "w1", "f2"}
    if unknown:
        raise ConfigError(f"unknown form keys {sorted(unknown)}")
    f0 = embedded_fn(spec["f0"]) if "f0" in spec else None
    f2 = embedded_fn(spec["f2"]) if "f2" in spec else None
    w1 = None
    if "w1" in spec:
        comps = spec["w1"]
        if not isinstance(comps, list) or len(comps) != 3:
            raise ConfigError("w1 needs three ambient components")
        fs = [embedded_fn(c) for c in comps]
        w1 = lambda X: np.stack([f(X) for f in fs], axis=-1)  # noqa: E731
    return Form(f0, w1, f2, label="form")


def tform(spec):
    """TForm from {"prime": form, "dt": form}; a bare form means alpha'' = 0."""
    from .spin.chern import TForm

    if isinstance(spec, dict) and set(spec) <= {"prime", "dt"} and spec:
        return TForm(form(spec.get("prime")), form(spec.get("dt")))
    return TForm(form(spec), form(None))
