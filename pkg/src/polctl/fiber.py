"""Drifting birefringent fiber with first-order PMD.

The transfer operator is

    T(omega, t) = U(t) exp(-i (omega - omega0) (tau/2) b.sigma)

where U(t) is a wavelength-independent unitary performing an isotropic random
walk on SU(2), tau is the differential group delay and b the (fixed) PMD axis.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import jones
from ._backend import kernels
from .errors import AliasingError, InvalidInputError
from .jones import JonesMatrix, StokesVector

SPEED_OF_LIGHT = 299_792_458.0
DEFAULT_WAVELENGTH = 1550e-9


def omega_from_wavelength(wavelength: float = DEFAULT_WAVELENGTH) -> float:
    return 2.0 * math.pi * SPEED_OF_LIGHT / wavelength


def delta_omega_from_nm(delta_lambda_nm: float, wavelength_nm: float = 1550.0) -> float:
    """Angular-frequency offset for a wavelength spacing: 2 pi c dlambda / lambda^2."""
    lam = wavelength_nm * 1e-9
    return 2.0 * math.pi * SPEED_OF_LIGHT * (delta_lambda_nm * 1e-9) / lam ** 2


@dataclass(frozen=True)
class ChannelSpec:
    dgd_tau: float = 0.0
    pmd_axis: StokesVector = field(default_factory=lambda: StokesVector(0.0, 0.0, 1.0))
    omega0: float = field(default_factory=omega_from_wavelength)
    delta_omega: float = field(default_factory=lambda: delta_omega_from_nm(0.8))
    drift_rate: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not isinstance(self.pmd_axis, StokesVector):
            object.__setattr__(self, "pmd_axis", StokesVector.from_array(self.pmd_axis))
        if self.dgd_tau < 0:
            raise InvalidInputError(f"dgd_tau must be >= 0, got {self.dgd_tau}")
        if self.delta_omega < 0:
            raise InvalidInputError(f"delta_omega must be >= 0, got {self.delta_omega}")
        if self.drift_rate < 0:
            raise InvalidInputError(f"drift_rate must be >= 0, got {self.drift_rate}")
        if abs(self.pmd_axis.norm - 1.0) > jones.INPUT_TOL:
            raise InvalidInputError(f"pmd_axis must be a unit vector, norm {self.pmd_axis.norm}")

    @property
    def omega1(self) -> float:
        return self.omega0 - self.delta_omega

    @property
    def omega3(self) -> float:
        return self.omega0 + self.delta_omega


def condition_number(spec: ChannelSpec) -> float:
    """tau * delta_omega; first-order PMD control is exact only when this is << 1."""
    return spec.dgd_tau * spec.delta_omega


class FiberChannel:
    """Single-owner stateful channel.  ``rng`` drives the drift process only."""

    def __init__(self, spec: ChannelSpec, base_unitary: JonesMatrix | None = None,
                 rng: np.random.Generator | None = None):
        self.spec = spec
        self.rng = rng if rng is not None else np.random.default_rng(spec.seed)
        if base_unitary is None:
            base_unitary = jones.haar_random(self.rng)
        if not base_unitary.is_unitary(1e-9):
            raise InvalidInputError("base_unitary must be unitary")
        self._u = np.array(base_unitary.m, dtype=complex)
        self.sim_time = 0.0
        self._generator = jones.stokes_generator(spec.pmd_axis.normalize())

    @property
    def base_unitary(self) -> JonesMatrix:
        return JonesMatrix(self._u)

    def pmd_factor(self, omega: float) -> np.ndarray:
        half = 0.5 * (omega - self.spec.omega0) * self.spec.dgd_tau
        return math.cos(half) * jones.IDENTITY - 1j * math.sin(half) * self._generator

    def transfer(self, omega: float) -> JonesMatrix:
        return JonesMatrix(self._u @ self.pmd_factor(omega))

    def derivative(self, omega: float) -> JonesMatrix:
        """Analytic dT/domega of the exponential model."""
        k = -0.5j * self.spec.dgd_tau * self._generator
        return JonesMatrix(self._u @ self.pmd_factor(omega) @ k)

    def step(self, dt: float) -> None:
        if not dt > 0:
            raise InvalidInputError(f"dt must be > 0, got {dt}")
        if self.spec.drift_rate > 0:
            incr = self.rng.standard_normal((1, 3)) * (self.spec.drift_rate * math.sqrt(dt))
            kernels.drift_apply(self._u, incr)
        self.sim_time += dt

    def perturb(self, axis: StokesVector, angle: float) -> None:
        r = jones.rotation_about_axis(axis, angle)
        self._u = r.m @ self._u
        kernels.nearest_unitary(self._u)

    def dgd_from_derivative(self, omega: float | None = None) -> float:
        """2 ||T^-1 dT/domega|| with the spectral norm."""
        if omega is None:
            omega = self.spec.omega0
        t = self.transfer(omega).m
        dt = self.derivative(omega).m
        return 2.0 * float(np.linalg.norm(np.linalg.solve(t, dt), 2))


def dgd_jme(t_lo: JonesMatrix, t_hi: JonesMatrix, d_omega: float,
            max_dgd: float | None = None) -> float:
    """Jones-matrix eigenanalysis: |arg(rho1/rho2)| / d_omega for the
    eigenvalues of t_hi t_lo^-1.

    Phases are only defined modulo 2 pi, so a delay with d_omega * tau >= pi
    aliases.  ``max_dgd`` states the largest delay the caller expects; the
    call raises AliasingError when that bound could wrap, or when the measured
    phase sits at the wrap point itself.
    """
    if not d_omega > 0:
        raise InvalidInputError(f"d_omega must be > 0, got {d_omega}")
    if not (t_lo.is_unitary(1e-9) and t_hi.is_unitary(1e-9)):
        raise InvalidInputError("dgd_jme expects unitary transfer matrices")
    if max_dgd is not None and max_dgd * d_omega >= math.pi:
        raise AliasingError(f"d_omega * max_dgd = {max_dgd * d_omega:.3f} >= pi")
    rho = np.linalg.eigvals(t_hi.m @ np.linalg.inv(t_lo.m))
    dphi = abs(np.angle(rho[0] / rho[1]))
    if math.pi - dphi < 1e-9:
        raise AliasingError("eigenvalue phase difference is at the wrap point")
    return dphi / d_omega
