"""Symmetric traceless tensor values in 2D and 3D.

A 2x2 traceless symmetric tensor is stored as the pair (p, q) with matrix
[[p, q], [q, -p]]; a 3x3 one stores its five independent entries, the (3,3)
entry being -(Q11+Q22).  Eigenvalues are closed-form in both cases, which
keeps the physicality tests branch-free and deterministic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Sequence, Union

import numpy as np

if TYPE_CHECKING:
    from .energy import LdGParams

# Absolute slack on eigenvalue-interval membership; separates discretization
# drift from a genuine violation.
PHYSICALITY_TOL = 1e-10

# Unit-vector check for director inputs.
_UNIT_TOL = 1e-12


@dataclass(frozen=True)
class QTensor2:
    """2x2 symmetric traceless tensor [[p, q], [q, -p]]."""

    p: float
    q: float

    def matrix(self) -> np.ndarray:
        return np.array([[self.p, self.q], [self.q, -self.p]], dtype=float)

    @property
    def h(self) -> float:
        """sqrt(p^2 + q^2); the Frobenius norm is sqrt(2)*h."""
        return math.hypot(self.p, self.q)


@dataclass(frozen=True)
class QTensor3:
    """3x3 symmetric traceless tensor; q33 = -(q11 + q22) by construction."""

    q11: float
    q22: float
    q12: float
    q13: float
    q23: float

    def matrix(self) -> np.ndarray:
        q33 = -(self.q11 + self.q22)
        return np.array(
            [
                [self.q11, self.q12, self.q13],
                [self.q12, self.q22, self.q23],
                [self.q13, self.q23, q33],
            ],
            dtype=float,
        )

    @classmethod
    def from_matrix(cls, m: np.ndarray) -> "QTensor3":
        m = np.asarray(m, dtype=float)
        if m.shape != (3, 3):
            raise ValueError("expected a 3x3 matrix")
        if not np.allclose(m, m.T, atol=1e-12):
            raise ValueError("matrix is not symmetric")
        if abs(np.trace(m)) > 1e-12 * max(1.0, np.abs(m).max()):
            raise ValueError("matrix is not traceless")
        return cls(m[0, 0], m[1, 1], m[0, 1], m[0, 2], m[1, 2])


QTensor = Union[QTensor2, QTensor3]


@dataclass(frozen=True)
class PhysicalityInterval:
    """Eigenvalue interval [lo, hi] defining physical states in dimension dim."""

    lo: float
    hi: float
    dim: int

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise ValueError("dim must be 2 or 3")
        if not self.lo < self.hi:
            raise ValueError("empty physicality interval: lo must be < hi")
        if self.dim == 2 and abs(self.lo + self.hi) > 1e-12 * max(abs(self.lo), abs(self.hi)):
            raise ValueError("2D physicality interval must be symmetric about 0")


def _dim(Q: QTensor) -> int:
    return 2 if isinstance(Q, QTensor2) else 3


def frobenius_norm(Q: QTensor) -> float:
    """sqrt(tr(Q^2)).  For a QTensor2 this equals sqrt(2(p^2+q^2))."""
    if isinstance(Q, QTensor2):
        return math.sqrt(2.0 * (Q.p * Q.p + Q.q * Q.q))
    m = Q.matrix()
    return math.sqrt(float(np.sum(m * m)))


def eigvals_traceless_sym3(m: np.ndarray) -> np.ndarray:
    """Eigenvalues of traceless symmetric 3x3 matrices, ascending.

    Works on a single matrix or an array of shape (..., 3, 3).  Uses the
    trigonometric solution of lambda^3 - J2 lambda - J3 = 0 with
    J2 = tr(m^2)/2 and J3 = det(m), which is exact for tr(m) = 0 and
    involves no iteration.  Near a double root the closed form loses half
    the digits (sqrt(eps) spread of the clustered pair), so those rare
    entries are recomputed with the LAPACK symmetric solver to keep hull
    certificates valid at 1e-8 tolerances.
    """
    m = np.asarray(m, dtype=float)
    j2 = 0.5 * np.einsum("...ij,...ji->...", m, m)
    j3 = np.linalg.det(m)
    u = np.sqrt(np.maximum(j2, 0.0) / 3.0)
    # cos(3 theta) = J3 / (2 u^3); clip guards roundoff at the extremal cases
    with np.errstate(divide="ignore", invalid="ignore"):
        arg = np.where(u > 0.0, j3 / np.maximum(2.0 * u**3, 1e-300), 0.0)
    theta = np.arccos(np.clip(arg, -1.0, 1.0)) / 3.0
    k = np.arange(3.0)
    lam = 2.0 * u[..., None] * np.cos(theta[..., None] - 2.0 * np.pi * k / 3.0)
    lam = np.where(u[..., None] > 0.0, lam, 0.0)
    lam = np.sort(lam, axis=-1)
    gap = np.minimum(lam[..., 1] - lam[..., 0], lam[..., 2] - lam[..., 1])
    near_double = (gap < 1e-4 * u) & (u > 0.0)
    if np.any(near_double):
        if lam.ndim == 1:
            return np.linalg.eigvalsh(m)
        lam[near_double] = np.linalg.eigvalsh(m[near_double])
    return lam


def eigenvalues(Q: QTensor) -> np.ndarray:
    """Eigenvalues sorted ascending.

    QTensor2: exactly (-sqrt(p^2+q^2), +sqrt(p^2+q^2)).  QTensor3: the three
    real roots of the characteristic polynomial; they sum to zero.
    """
    if isinstance(Q, QTensor2):
        lam = math.hypot(Q.p, Q.q)
        return np.array([-lam, lam])
    return eigvals_traceless_sym3(Q.matrix())


def from_director(n: Sequence[float], s: float, d: int) -> QTensor:
    """Uniaxial tensor s (n (x) n - I/d) for a unit director n.

    Rejects non-unit directors (|n| must be 1 within 1e-12) and mismatched
    dimension; the result is symmetric traceless by construction.
    """
    n = np.asarray(n, dtype=float)
    if d not in (2, 3):
        raise ValueError("d must be 2 or 3")
    if n.shape != (d,):
        raise ValueError(f"director must have length {d}")
    norm = float(np.linalg.norm(n))
    if abs(norm - 1.0) > _UNIT_TOL:
        raise ValueError(f"director must be a unit vector (|n| = {norm!r})")
    if d == 2:
        return QTensor2(p=s * (n[0] * n[0] - 0.5), q=s * n[0] * n[1])
    m = s * (np.outer(n, n) - np.eye(3) / 3.0)
    return QTensor3(m[0, 0], m[1, 1], m[0, 1], m[0, 2], m[1, 2])


def hedgehog_tensor(x: Sequence[float], theta: float) -> QTensor2:
    """theta * S(x) with S_ij = x_i x_j / |x|^2 - delta_ij / 2.

    The ansatz is singular at the origin, so x = 0 is rejected; tr(S^2) = 1/2
    so the Frobenius norm of the result is |theta|/sqrt(2).
    """
    x = np.asarray(x, dtype=float)
    if x.shape != (2,):
        raise ValueError("x must be a 2-vector")
    r2 = float(x[0] * x[0] + x[1] * x[1])
    if r2 == 0.0:
        raise ValueError("hedgehog ansatz is singular at the origin")
    return QTensor2(p=theta * (x[0] * x[0] / r2 - 0.5), q=theta * x[0] * x[1] / r2)


def physical_interval(params: "LdGParams", d: int) -> PhysicalityInterval:
    """Invariant eigenvalue interval for the bulk flow in dimension d.

    d = 2: [-sqrt(|a|/2c), +sqrt(|a|/2c)].
    d = 3: [-(b + sqrt(b^2-24ac))/(12c), (b + sqrt(b^2-24ac))/(6c)],
    requiring b > 0, b^2 - 24ac >= 0 and |a| < b^2/(3c).
    """
    a, b, c = params.a, params.b, params.c
    if c <= 0:
        raise ValueError("physicality interval requires c > 0")
    if d == 2:
        radius = math.sqrt(abs(a) / (2.0 * c))
        if radius == 0.0:
            raise ValueError("empty physicality radius (a = 0 gives a degenerate interval)")
        return PhysicalityInterval(lo=-radius, hi=radius, dim=2)
    if d == 3:
        if b <= 0:
            raise ValueError("3D physicality interval requires b > 0")
        if abs(a) >= b * b / (3.0 * c):
            raise ValueError("3D physicality interval requires |a| < b^2/(3c)")
        disc = b * b - 24.0 * a * c
        if disc < 0:
            raise ValueError("b^2 - 24ac < 0: interval endpoints are not real")
        root = b + math.sqrt(disc)
        return PhysicalityInterval(lo=-root / (12.0 * c), hi=root / (6.0 * c), dim=3)
    raise ValueError("d must be 2 or 3")


def unit_physicality_interval(d: int) -> PhysicalityInterval:
    """The normalized preset (-1/d, 1-1/d).

    Offered alongside physical_interval; no equivalence between the two is
    asserted anywhere.
    """
    if d not in (2, 3):
        raise ValueError("d must be 2 or 3")
    return PhysicalityInterval(lo=-1.0 / d, hi=1.0 - 1.0 / d, dim=d)


def is_physical(Q: QTensor, interval: PhysicalityInterval) -> bool:
    """True iff every eigenvalue of Q lies in [lo - tol, hi + tol]."""
    if _dim(Q) != interval.dim:
        raise ValueError("tensor dimension does not match interval.dim")
    lam = eigenvalues(Q)
    return bool(
        lam[0] >= interval.lo - PHYSICALITY_TOL and lam[-1] <= interval.hi + PHYSICALITY_TOL
    )
