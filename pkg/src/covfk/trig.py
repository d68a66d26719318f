"""Matrix-valued trigonometric polynomials on circles and flat tori.

These are the coefficient functions the spectral oracle can assemble without
aliasing: f(x) = sum_q c_q exp(i <q, w x>), with w_j = 2 pi / period_j and
finitely many integer modes q.
"""

from __future__ import annotations

import numpy as np


class TrigPoly:
    def __init__(self, coeffs: dict, periods, shape=(1, 1)):
        self.periods = np.atleast_1d(np.asarray(periods, dtype=float))
        self.dim = self.periods.size
        self.shape = tuple(shape)
        self.coeffs = {}
        for q, c in coeffs.items():
            q = (q,) if np.isscalar(q) else tuple(int(v) for v in q)
            if len(q) != self.dim:
                raise ValueError(f"mode {q} has wrong dimension")
            c = np.asarray(c, dtype=complex)
            if c.ndim == 0:
                c = c * np.eye(self.shape[0]) if self.shape[0] == self.shape[1] else np.full(self.shape, c)
            self.coeffs[q] = self.coeffs.get(q, 0) + c.reshape(self.shape)

    @classmethod
    def constant(cls, value, periods, shape=(1, 1)):
        return cls({(0,) * np.atleast_1d(periods).size: value}, periods, shape)

    @classmethod
    def cos(cls, mode, periods, scale=1.0, shape=(1, 1)):
        mode = (mode,) if np.isscalar(mode) else tuple(mode)
        neg = tuple(-q for q in mode)
        return cls({mode: 0.5 * scale, neg: 0.5 * scale}, periods, shape)

    @classmethod
    def sin(cls, mode, periods, scale=1.0, shape=(1, 1)):
        mode = (mode,) if np.isscalar(mode) else tuple(mode)
        neg = tuple(-q for q in mode)
        return cls({mode: -0.5j * scale, neg: 0.5j * scale}, periods, shape)

    @property
    def degree(self) -> int:
        return max((max(abs(v) for v in q) for q in self.coeffs), default=0)

    @property
    def is_zero(self) -> bool:
        return all(np.all(c == 0) for c in self.coeffs.values())

    def __add__(self, other: "TrigPoly") -> "TrigPoly":
        out = dict(self.coeffs)
        for q, c in other.coeffs.items():
            out[q] = out.get(q, 0) + c
        return TrigPoly(out, self.periods, self.shape)

    def __mul__(self, scalar) -> "TrigPoly":
        return TrigPoly({q: scalar * c for q, c in self.coeffs.items()}, self.periods, self.shape)

    __rmul__ = __mul__

    def __call__(self, coords) -> np.ndarray:
        coords = np.atleast_2d(np.asarray(coords, dtype=float)).reshape(-1, self.dim)
        w = 2 * np.pi / self.periods
        out = np.zeros((coords.shape[0],) + self.shape, dtype=complex)
        for q, c in self.coeffs.items():
            if not any(q):
                out += c
                continue
            phase = np.exp(1j * (coords * w) @ np.asarray(q, dtype=float))
            out += phase[:, None, None] * c
        return out

    def __repr__(self):
        return f"TrigPoly(degree={self.degree}, shape={self.shape}, modes={len(self.coeffs)})"
