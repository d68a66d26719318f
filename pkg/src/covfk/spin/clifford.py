"""Clifford algebra of R^2 on C^2.

gamma_1 = i sigma_y and gamma_2 = -i sigma_x are anti-Hermitian, square to
-1 and anticommute. The grading is gamma = i gamma_1 gamma_2 = sigma_z.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)
SIGMA = np.stack([SIGMA_X, SIGMA_Y, SIGMA_Z])
I2 = np.eye(2, dtype=complex)

GAMMA1 = 1j * SIGMA_Y
GAMMA2 = -1j * SIGMA_X
GAMMA12 = GAMMA1 @ GAMMA2
GRADING = 1j * GAMMA12

# scalar multiplying gamma_1 gamma_2 in c(e^1 ^ e^2)
CONVENTIONS = {"increasing": 1.0, "literal": 0.5}


def vol_factor(convention: str) -> float:
    try:
        return CONVENTIONS[convention]
    except KeyError:
        raise ValueError(f"unknown Clifford convention {convention!r}") from None


@dataclass(frozen=True)
class CliffordAlgebra2:
    gammas: np.ndarray = field(default_factory=lambda: np.stack([GAMMA1, GAMMA2]))
    grading: np.ndarray = field(default_factory=lambda: GRADING.copy())

    def relations_defect(self) -> float:
        g = self.gammas
        worst = 0.0
        for i in range(2):
            for j in range(2):
                anti = g[i] @ g[j] + g[j] @ g[i] + 2.0 * (i == j) * I2
                worst = max(worst, np.abs(anti).max())
        gam = self.grading
        worst = max(worst, np.abs(gam @ gam - I2).max())
        for i in range(2):
            worst = max(worst, np.abs(gam @ g[i] + g[i] @ gam).max())
        return float(worst)


def clifford_mult(f0=0.0, a=(0.0, 0.0), f2=0.0, convention: str = "increasing") -> np.ndarray:
    """c(f0 + a_1 e^1 + a_2 e^2 + f2 e^1 ^ e^2) in an orthonormal coframe.

    Inputs broadcast over a leading batch axis. Under the "increasing"
    convention c(e^1 ^ e^2) = gamma_1 gamma_2; the "literal" convention
    quantizes the wedge of two covectors as (1/2!) times their Clifford
    product, which gives half of that.
    """
    f0 = np.asarray(f0, dtype=complex)
    a = np.asarray(a, dtype=complex)
    f2 = np.asarray(f2, dtype=complex)
    k = vol_factor(convention)
    out = (
        f0[..., None, None] * I2
        + a[..., 0, None, None] * GAMMA1
        + a[..., 1, None, None] * GAMMA2
        + (k * f2)[..., None, None] * GAMMA12
    )
    return out


def wedge_word(u, v, convention: str = "literal") -> np.ndarray:
    """c(u ^ v) for two covectors given by orthonormal components.

    The antisymmetrized product (c(u)c(v) - c(v)c(u)) / 2 is the increasing
    index value; the literal convention carries an extra 1/2!.
    """
    cu = clifford_mult(a=u)
    cv = clifford_mult(a=v)
    anti = 0.5 * (cu @ cv - cv @ cu)
    return vol_factor(convention) * anti
