"""Jones and Stokes calculus for pure polarization states.

Stokes convention used throughout the package::

    s1 = |ex|^2 - |ey|^2
    s2 = 2 Re(ex* ey)
    s3 = 2 Im(ex* ey)

so horizontal is (1, 0, 0), +45 deg linear is (0, 1, 0) and right circular
(ex, ey) = (1, i)/sqrt(2) is (0, 0, 1).  The Pauli triple matching this
convention is (sigma_z, sigma_x, sigma_y), and ``rotation_about_axis`` builds
exp(-i angle/2 n.sigma), a right-handed rotation of the Stokes vector.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError

ALGEBRA_TOL = 1e-10
INPUT_TOL = 1e-6

PAULI = np.array(
    [
        [[1, 0], [0, -1]],
        [[0, 1], [1, 0]],
        [[0, -1j], [1j, 0]],
    ],
    dtype=complex,
)
IDENTITY = np.eye(2, dtype=complex)


@dataclass(frozen=True)
class JonesVector:
    ex: complex
    ey: complex

    def __post_init__(self):
        ex, ey = complex(self.ex), complex(self.ey)
        if not all(math.isfinite(x) for x in (ex.real, ex.imag, ey.real, ey.imag)):
            raise InvalidInputError(f"non-finite Jones amplitudes ({ex}, {ey})")
        object.__setattr__(self, "ex", ex)
        object.__setattr__(self, "ey", ey)

    @classmethod
    def from_array(cls, a) -> "JonesVector":
        a = np.asarray(a, dtype=complex).reshape(2)
        return cls(a[0], a[1])

    @property
    def array(self) -> np.ndarray:
        return np.array([self.ex, self.ey], dtype=complex)

    @property
    def norm(self) -> float:
        return math.sqrt(abs(self.ex) ** 2 + abs(self.ey) ** 2)

    def normalize(self) -> "JonesVector":
        n = self.norm
        if n == 0.0:
            raise InvalidInputError("cannot normalize the zero Jones vector")
        return JonesVector(self.ex / n, self.ey / n)


@dataclass(frozen=True)
class StokesVector:
    s1: float
    s2: float
    s3: float

    def __post_init__(self):
        vals = tuple(float(v) for v in (self.s1, self.s2, self.s3))
        if not all(math.isfinite(v) for v in vals):
            raise InvalidInputError(f"non-finite Stokes components {vals}")
        for name, v in zip(("s1", "s2", "s3"), vals):
            object.__setattr__(self, name, v)

    @classmethod
    def from_array(cls, a) -> "StokesVector":
        a = np.asarray(a, dtype=float).reshape(3)
        return cls(a[0], a[1], a[2])

    @property
    def array(self) -> np.ndarray:
        return np.array([self.s1, self.s2, self.s3])

    @property
    def norm(self) -> float:
        return math.sqrt(self.s1 ** 2 + self.s2 ** 2 + self.s3 ** 2)

    def normalize(self) -> "StokesVector":
        n = self.norm
        if n == 0.0:
            raise InvalidInputError("cannot normalize the zero Stokes vector")
        return StokesVector(self.s1 / n, self.s2 / n, self.s3 / n)

    def __neg__(self) -> "StokesVector":
        return StokesVector(-self.s1, -self.s2, -self.s3)


class JonesMatrix:
    """Immutable 2x2 complex operator.

    ``a @ b`` composes (b acts first), ``m @ v`` applies to a JonesVector.
    """

    __slots__ = ("_m",)

    def __init__(self, m):
        m = np.array(m, dtype=complex).reshape(2, 2)
        if not np.all(np.isfinite(m)):
            raise InvalidInputError("non-finite Jones matrix entries")
        m.setflags(write=False)
        self._m = m

    @property
    def m(self) -> np.ndarray:
        return self._m

    @classmethod
    def identity(cls) -> "JonesMatrix":
        return cls(IDENTITY)

    def dagger(self) -> "JonesMatrix":
        return JonesMatrix(self._m.conj().T)

    def inverse(self) -> "JonesMatrix":
        return JonesMatrix(np.linalg.inv(self._m))

    def unitarity_error(self) -> float:
        return float(np.linalg.norm(self._m.conj().T @ self._m - IDENTITY))

    def is_unitary(self, tol: float = ALGEBRA_TOL) -> bool:
        return self.unitarity_error() <= tol

    def __matmul__(self, other):
        if isinstance(other, JonesMatrix):
            return compose(self, other)
        if isinstance(other, JonesVector):
            return apply(self, other)
        return NotImplemented

    def __repr__(self) -> str:
        return f"JonesMatrix({self._m.tolist()!r})"


H = JonesVector(1.0, 0.0)
V = JonesVector(0.0, 1.0)
D = JonesVector(1 / math.sqrt(2), 1 / math.sqrt(2))
A = JonesVector(1 / math.sqrt(2), -1 / math.sqrt(2))
R = JonesVector(1 / math.sqrt(2), 1j / math.sqrt(2))
L = JonesVector(1 / math.sqrt(2), -1j / math.sqrt(2))
NAMED_STATES = {"H": H, "V": V, "D": D, "A": A, "R": R, "L": L}


def jones_to_stokes(v: JonesVector) -> StokesVector:
    ex, ey = v.ex, v.ey
    c = ex.conjugate() * ey
    return StokesVector(abs(ex) ** 2 - abs(ey) ** 2, 2 * c.real, 2 * c.imag)


def stokes_to_jones(s: StokesVector) -> JonesVector:
    """Inverse of :func:`jones_to_stokes` with ``ex`` real and non-negative.

    At the south pole (ex == 0) the representative is (0, 1).
    """
    if abs(s.norm - 1.0) > INPUT_TOL:
        raise InvalidInputError(f"Stokes vector norm {s.norm} is not 1")
    s1 = min(1.0, max(-1.0, s.s1 / s.norm))
    ex = math.sqrt((1.0 + s1) / 2.0)
    if ex == 0.0:
        return JonesVector(0.0, 1.0)
    ey_mag = math.sqrt((1.0 - s1) / 2.0)
    phase = math.atan2(s.s3, s.s2)
    return JonesVector(ex, ey_mag * complex(math.cos(phase), math.sin(phase)))


def stokes_generator(axis: StokesVector) -> np.ndarray:
    """n.sigma for a unit Stokes axis, in the package's Pauli convention."""
    return np.tensordot(axis.array, PAULI, axes=1)


def rotation_about_axis(axis: StokesVector, angle: float) -> JonesMatrix:
    if abs(axis.norm - 1.0) > INPUT_TOL:
        raise InvalidInputError(f"rotation axis norm {axis.norm} is not 1")
    n = axis.normalize()
    half = 0.5 * angle
    return JonesMatrix(math.cos(half) * IDENTITY - 1j * math.sin(half) * stokes_generator(n))


def apply(m: JonesMatrix, v: JonesVector) -> JonesVector:
    return JonesVector.from_array(m.m @ v.array)


def compose(a: JonesMatrix, b: JonesMatrix) -> JonesMatrix:
    """Operator product ``a b``: ``b`` acts first."""
    return JonesMatrix(a.m @ b.m)


def fidelity(a: JonesVector, b: JonesVector) -> float:
    ov = a.ex.conjugate() * b.ex + a.ey.conjugate() * b.ey
    return min(1.0, max(0.0, abs(ov) ** 2))


def sphere_angle(a: StokesVector, b: StokesVector) -> float:
    c = a.s1 * b.s1 + a.s2 * b.s2 + a.s3 * b.s3
    return math.acos(min(1.0, max(-1.0, c)))


def added_loss(angle: float) -> float:
    """Power lost through an analyzer aligned with the target SOP: sin^2(angle/2)."""
    return math.sin(0.5 * angle) ** 2


def phase_distance(a, b) -> float:
    """min over unit-modulus lambda of ||a - lambda b|| (Frobenius / Euclidean).

    Accepts JonesMatrix, JonesVector or raw arrays of matching shape.
    """
    x = _as_array(a).ravel()
    y = _as_array(b).ravel()
    # the minimizing phase aligns y with x; evaluating the norm directly avoids
    # the sqrt(eps) floor of the expanded form
    ov = np.vdot(y, x)
    lam = ov / abs(ov) if abs(ov) > 0 else 1.0
    return float(np.linalg.norm(x - lam * y))


def rotation_angle(m) -> float:
    """Poincare-sphere rotation angle (in [0, pi]) of a unitary Jones matrix.

    This is the largest deviation any probe state can suffer under ``m``.
    """
    u = _as_array(m)
    det = np.linalg.det(u)
    c = abs(np.trace(u)) / (2.0 * math.sqrt(abs(det)))
    return 2.0 * math.acos(min(1.0, c))


def rotation_angles(u: np.ndarray) -> np.ndarray:
    """Vectorized :func:`rotation_angle` over a stack of shape (n, 2, 2)."""
    det = np.linalg.det(u)
    c = np.abs(np.trace(u, axis1=-2, axis2=-1)) / (2.0 * np.sqrt(np.abs(det)))
    return 2.0 * np.arccos(np.minimum(1.0, c))


def stokes_of(vectors: np.ndarray) -> np.ndarray:
    """Stokes triples for a stack of (unnormalized) Jones arrays of shape (n, 2)."""
    ex, ey = vectors[..., 0], vectors[..., 1]
    p = np.abs(ex) ** 2 + np.abs(ey) ** 2
    c = ex.conj() * ey
    return np.stack([np.abs(ex) ** 2 - np.abs(ey) ** 2, 2 * c.real, 2 * c.imag], axis=-1) / p[..., None]


def haar_random_batch(rng: np.random.Generator, n: int) -> np.ndarray:
    """n Haar-distributed U(2) matrices, shape (n, 2, 2)."""
    z = (rng.standard_normal((n, 2, 2)) + 1j * rng.standard_normal((n, 2, 2))) / math.sqrt(2.0)
    q, r = np.linalg.qr(z)
    d = np.diagonal(r, axis1=-2, axis2=-1)
    return q * (d / np.abs(d))[:, None, :]


def haar_random(rng: np.random.Generator) -> JonesMatrix:
    return JonesMatrix(haar_random_batch(rng, 1)[0])


def _as_array(x) -> np.ndarray:
    if isinstance(x, JonesMatrix):
        return x.m
    if isinstance(x, JonesVector):
        return x.array
    return np.asarray(x, dtype=complex)
