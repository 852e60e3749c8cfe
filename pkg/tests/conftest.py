import math

import numpy as np
import pytest
from hypothesis import strategies as st

from polctl import jones

finite = st.floats(min_value=-1.0, max_value=1.0, allow_nan=False)


@st.composite
def unit_stokes(draw):
    v = np.array([draw(finite), draw(finite), draw(finite)])
    n = np.linalg.norm(v)
    if n < 1e-3:
        v, n = np.array([0.0, 0.0, 1.0]), 1.0
    return jones.StokesVector.from_array(v / n)


@st.composite
def jones_states(draw):
    re = [draw(finite) for _ in range(2)]
    im = [draw(finite) for _ in range(2)]
    v = np.array([complex(re[0], im[0]), complex(re[1], im[1])])
    n = np.linalg.norm(v)
    if n < 1e-3:
        v, n = np.array([1.0, 0.0], dtype=complex), 1.0
    return jones.JonesVector.from_array(v / n)


angles = st.floats(min_value=-4 * math.pi, max_value=4 * math.pi, allow_nan=False)
seeds = st.integers(min_value=0, max_value=2**32 - 1)


def rodrigues(s: np.ndarray, axis: np.ndarray, angle: float) -> np.ndarray:
    """Right-handed rotation of a 3-vector; independent oracle for Stokes rotations."""
    k = axis / np.linalg.norm(axis)
    return (s * math.cos(angle) + np.cross(k, s) * math.sin(angle)
            + k * np.dot(k, s) * (1 - math.cos(angle)))


def stokes_from_density(v: np.ndarray) -> np.ndarray:
    """Stokes triple from rho = v v^dagger traced against (sz, sx, sy)."""
    rho = np.outer(v, v.conj())
    sz = np.array([[1, 0], [0, -1]])
    sx = np.array([[0, 1], [1, 0]])
    sy = np.array([[0, -1j], [1j, 0]])
    return np.real([np.trace(rho @ sz), np.trace(rho @ sx), np.trace(rho @ sy)])


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
