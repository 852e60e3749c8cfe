"""Two-stage intensity-feedback polarization controller.

R1 is a stack of four retarders with fixed axes (H, +45, H, +45 on the
Poincare equator; plate 0 acts first).  R3 is a single retarder whose axis is
the first reference state S1, so it never disturbs S1.  The only feedback is
the power behind two polarizers: S1 at omega1 (channel 1) and S3 at omega3
(channel 3).  Every cycle each R1 plate is dithered +-step on i1 and R3 on i3,
keeping whichever of the three probed values reads highest.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import jones
from ._backend import kernels
from .errors import InvalidInputError, SolverError
from .fiber import FiberChannel
from .jones import JonesMatrix, JonesVector, StokesVector

N_ACTUATORS = 5
NOISE_PER_CYCLE = 15
_HADAMARD = np.array([[1, 1], [1, -1]], dtype=complex) / math.sqrt(2.0)


@dataclass(frozen=True)
class ReferenceBasis:
    s1_state: JonesVector = jones.H
    s3_state: JonesVector = jones.D

    def __post_init__(self):
        object.__setattr__(self, "s1_state", self.s1_state.normalize())
        object.__setattr__(self, "s3_state", self.s3_state.normalize())
        f = jones.fidelity(self.s1_state, self.s3_state)
        if abs(f - 0.5) > jones.INPUT_TOL:
            raise InvalidInputError(f"reference states must be mutually unbiased, fidelity {f}")

    @property
    def s1_axis(self) -> StokesVector:
        return jones.jones_to_stokes(self.s1_state)

    @property
    def r3_generator(self) -> np.ndarray:
        return jones.stokes_generator(self.s1_axis)


@dataclass(frozen=True)
class ControllerConfig:
    grow: float = 1.3
    shrink: float = 0.7
    step_min: float = 1e-3
    step_max: float = 0.5
    probe_time: float = 25e-6
    extinction_db: float | None = None
    convergence_threshold: float = 1e-4
    convergence_cycles: int = 10

    def __post_init__(self):
        if not (0 < self.shrink < 1 <= self.grow):
            raise InvalidInputError("need 0 < shrink < 1 <= grow")
        if not (0 < self.step_min <= self.step_max):
            raise InvalidInputError("need 0 < step_min <= step_max")
        if not self.probe_time > 0:
            raise InvalidInputError("probe_time must be > 0")

    @property
    def loop_period(self) -> float:
        """Duration of one full cycle: one probe slot per actuator."""
        return N_ACTUATORS * self.probe_time

    @property
    def extinction_eps(self) -> float:
        if self.extinction_db is None:
            return 0.0
        return 10.0 ** (-self.extinction_db / 10.0)

    def kernel_params(self) -> np.ndarray:
        return np.array([self.grow, self.shrink, self.step_min, self.step_max,
                         self.extinction_eps, self.convergence_threshold])


@dataclass
class ControllerState:
    r1_retardances: np.ndarray = field(default_factory=lambda: np.zeros(4))
    r3_retardance: float = 0.0
    dither_step: float = 0.05
    iteration: int = 0
    streak: int = 0
    config: ControllerConfig = field(default_factory=ControllerConfig)

    def __post_init__(self):
        r = np.asarray(self.r1_retardances, dtype=float).reshape(4)
        self.r1_retardances = np.mod(r, 2 * math.pi)
        self.r3_retardance = float(np.mod(self.r3_retardance, 2 * math.pi))

    @property
    def retardances(self) -> np.ndarray:
        return np.append(self.r1_retardances, self.r3_retardance)

    @property
    def converged(self) -> bool:
        return self.streak >= self.config.convergence_cycles

    def copy(self) -> "ControllerState":
        return replace(self, r1_retardances=self.r1_retardances.copy())


@dataclass(frozen=True)
class FeedbackSample:
    i1: float
    i3: float


def plate_matrix(index: int, retardance: float) -> np.ndarray:
    c, s = math.cos(0.5 * retardance), math.sin(0.5 * retardance)
    if index % 2 == 0:
        return np.array([[c - 1j * s, 0], [0, c + 1j * s]])
    return np.array([[c, -1j * s], [-1j * s, c]])


def r1_stack(r1: np.ndarray) -> np.ndarray:
    """Plate-stack matrices for retardances of shape (n, 4) -> (n, 2, 2)."""
    r1 = np.atleast_2d(r1)
    c, s = np.cos(0.5 * r1), np.sin(0.5 * r1)
    n = r1.shape[0]
    out = np.broadcast_to(jones.IDENTITY, (n, 2, 2)).copy()
    for p in range(4):
        m = np.zeros((n, 2, 2), dtype=complex)
        if p % 2 == 0:
            m[:, 0, 0] = c[:, p] - 1j * s[:, p]
            m[:, 1, 1] = c[:, p] + 1j * s[:, p]
        else:
            m[:, 0, 0] = m[:, 1, 1] = c[:, p]
            m[:, 0, 1] = m[:, 1, 0] = -1j * s[:, p]
        out = m @ out
    return out


def r3_stack(theta: np.ndarray, basis: ReferenceBasis) -> np.ndarray:
    theta = np.atleast_1d(theta)
    k = basis.r3_generator
    return (np.cos(0.5 * theta)[:, None, None] * jones.IDENTITY
            - 1j * np.sin(0.5 * theta)[:, None, None] * k)


def realize(ctrl: ControllerState, basis: ReferenceBasis = ReferenceBasis()):
    r1 = JonesMatrix(r1_stack(ctrl.r1_retardances[None, :])[0])
    r3 = jones.rotation_about_axis(basis.s1_axis, ctrl.r3_retardance)
    return r1, r3


def _reference_transfers(ch: FiberChannel):
    return ch.transfer(ch.spec.omega1).m, ch.transfer(ch.spec.omega3).m


def measure_feedback(ch: FiberChannel, ctrl: ControllerState, basis: ReferenceBasis = ReferenceBasis(),
                     noise_std: float = 0.0, rng: np.random.Generator | None = None) -> FeedbackSample:
    a1, a3 = _reference_transfers(ch)
    i1, i3 = kernels.intensities(np.ascontiguousarray(ctrl.retardances), a1, a3,
                                 basis.s1_state.array, basis.s3_state.array,
                                 np.ascontiguousarray(basis.r3_generator), ctrl.config.extinction_eps)
    if noise_std > 0:
        if rng is None:
            raise InvalidInputError("noise_std > 0 requires an rng")
        n1, n3 = rng.standard_normal(2) * noise_std
        i1 = min(1.0, max(0.0, i1 + n1))
        i3 = min(1.0, max(0.0, i3 + n3))
    return FeedbackSample(i1, i3)


def oracle_solve(t: JonesMatrix, phi: float = 0.0):
    """Closed-form controller setting for a monochromatic channel (H/+45 basis).

    r1 = diag(1, e^{i phi}) T^-1 and r3 = diag(1, e^{-i phi}); the phases
    cancel so r3 r1 T is the identity for every phi.
    """
    if not t.is_unitary(1e-9):
        raise InvalidInputError("oracle_solve expects a unitary channel matrix")
    r1 = np.diag([1.0, np.exp(1j * phi)]) @ t.m.conj().T
    r3 = np.diag([1.0, np.exp(-1j * phi)])
    return JonesMatrix(r1), JonesMatrix(r3)


def _orthogonal(v: JonesVector) -> JonesVector:
    return JonesVector(-v.ey.conjugate(), v.ex.conjugate())


def multiplexed_solve(t1: JonesMatrix, t3: JonesMatrix, basis: ReferenceBasis = ReferenceBasis()):
    """Fixed point of the intensity loop when the references see different
    transfers: S1 is locked exactly (i1 = 1) and R3 then maximizes i3.

    Only the product r3 r1 is unique; r1 = t1^-1 is returned.
    """
    r1 = t1.m.conj().T
    w = r1 @ t3.m @ basis.s3_state.array
    v = np.column_stack([basis.s1_state.array, _orthogonal(basis.s1_state).array])
    a = v.conj().T @ basis.s3_state.array
    b = v.conj().T @ w
    c0, c1 = a[0].conjugate() * b[0], a[1].conjugate() * b[1]
    theta = float(np.angle(c0) - np.angle(c1))
    return JonesMatrix(r1), jones.rotation_about_axis(basis.s1_axis, theta)


def static_transform(ch: FiberChannel, basis: ReferenceBasis = ReferenceBasis()) -> JonesMatrix:
    """Signal-channel transform R3 R1 T(omega0) left by an ideally converged loop.

    Independent of the drift state U(t); it is a function of tau*delta_omega and
    the PMD axis only.
    """
    r1, r3 = multiplexed_solve(ch.transfer(ch.spec.omega1), ch.transfer(ch.spec.omega3), basis)
    return JonesMatrix(r3.m @ r1.m @ ch.transfer(ch.spec.omega0).m)


def retardances_for(target_r1: JonesMatrix) -> np.ndarray:
    """Plate retardances realizing ``target_r1`` up to global phase.

    Uses an exact +45/H/+45 Euler decomposition on plates 1..3; plate 0 is
    left at zero.
    """
    if not target_r1.is_unitary(1e-8):
        raise InvalidInputError("target must be unitary")
    w = target_r1.m / np.sqrt(np.linalg.det(target_r1.m))
    v = _HADAMARD @ w @ _HADAMARD
    b = 2.0 * math.atan2(abs(v[0, 1]), abs(v[0, 0]))
    total = -2.0 * np.angle(v[0, 0])
    diff = -2.0 * np.angle(1j * v[0, 1])
    a, c = 0.5 * (total + diff), 0.5 * (total - diff)
    ret = np.mod(np.array([0.0, c, b, a]), 2 * math.pi)
    dist = jones.phase_distance(r1_stack(ret[None, :])[0], target_r1.m)
    if dist > 1e-8:
        raise SolverError(f"plate inversion residual {dist:.3e} exceeds 1e-8")
    return ret


@dataclass
class Schedule:
    dt: float
    total_time: float
    loop_period: float

    def __post_init__(self):
        if not (self.dt > 0 and self.loop_period > 0 and self.total_time >= 0):
            raise InvalidInputError("schedule times must be positive")
        if self.loop_period < self.dt * (1 - 1e-12):
            raise InvalidInputError("loop_period must be >= dt")
        ratio = self.loop_period / self.dt
        if abs(ratio - round(ratio)) > 1e-9 * ratio:
            raise InvalidInputError("loop_period must be an integer multiple of dt")

    @property
    def steps_per_cycle(self) -> int:
        return int(round(self.loop_period / self.dt))

    @property
    def n_cycles(self) -> int:
        return int(round(self.total_time / self.loop_period))


@dataclass
class ClosedLoopTrace:
    """Per-record snapshots of a closed-loop run (one record per ``record_every`` cycles)."""

    times: np.ndarray
    retardances: np.ndarray
    steps: np.ndarray
    iterations: np.ndarray
    streaks: np.ndarray
    intensities: np.ndarray
    base_unitaries: np.ndarray
    basis: ReferenceBasis
    accepted: int = 0

    def __len__(self) -> int:
        return len(self.times)

    def total_transforms(self) -> np.ndarray:
        """R3 R1 T(omega0) per record, shape (n, 2, 2)."""
        r1 = r1_stack(self.retardances[:, :4])
        r3 = r3_stack(self.retardances[:, 4], self.basis)
        return r3 @ r1 @ self.base_unitaries

    def signal_stokes(self, signal: JonesVector) -> np.ndarray:
        out = self.total_transforms() @ signal.array
        return jones.stokes_of(out)


def _kernel_inputs(ch: FiberChannel, basis: ReferenceBasis):
    return (np.ascontiguousarray(ch.pmd_factor(ch.spec.omega1)),
            np.ascontiguousarray(ch.pmd_factor(ch.spec.omega3)),
            basis.s1_state.array, basis.s3_state.array,
            np.ascontiguousarray(basis.r3_generator))


def _run_cycles(ch, ctrl, basis, n, steps_per_cycle, dt, noise_std, rng, control, record_every,
                drift=True):
    """Advance channel and controller by ``n`` cycles inside the kernel."""
    if drift and ch.spec.drift_rate > 0 and steps_per_cycle > 0:
        incr = ch.rng.standard_normal((n, steps_per_cycle, 3)) * (ch.spec.drift_rate * math.sqrt(dt))
    else:
        incr = np.zeros((n, 0, 3))
    if control and noise_std > 0:
        noise = rng.standard_normal((n, NOISE_PER_CYCLE)) * noise_std
    else:
        noise = np.zeros((n, 0))
    m = n // record_every
    out_ret = np.empty((m, N_ACTUATORS))
    out_state = np.empty((m, 3))
    out_i = np.empty((m, 2))
    out_u = np.empty((m, 2, 2), dtype=complex)
    ret = np.ascontiguousarray(ctrl.retardances)
    state = np.array([ctrl.dither_step, float(ctrl.iteration), float(ctrl.streak)])
    p1, p3, s1, s3, k3 = _kernel_inputs(ch, basis)
    accepted = kernels.run_loop(ret, state, ch._u, p1, p3, s1, s3, k3, incr, noise,
                                ctrl.config.kernel_params(), bool(control), record_every,
                                out_ret, out_state, out_i, out_u)
    if drift:
        ch.sim_time += n * steps_per_cycle * dt
    ctrl.r1_retardances = ret[:4].copy()
    ctrl.r3_retardance = float(ret[4])
    ctrl.dither_step = float(state[0])
    ctrl.iteration = int(state[1])
    ctrl.streak = int(state[2])
    return out_ret, out_state, out_i, out_u, accepted


def control_step(ctrl: ControllerState, ch: FiberChannel, basis: ReferenceBasis = ReferenceBasis(),
                 noise_std: float = 0.0, rng: np.random.Generator | None = None) -> ControllerState:
    """One dither cycle over all five actuators; returns the updated state.

    The channel is measured but not advanced.
    """
    if noise_std > 0 and rng is None:
        raise InvalidInputError("noise_std > 0 requires an rng")
    new = ctrl.copy()
    _run_cycles(ch, new, basis, 1, 0, 1.0, noise_std, rng, True, 1, drift=False)
    return new


def converge(ctrl: ControllerState, ch: FiberChannel, basis: ReferenceBasis = ReferenceBasis(),
             noise_std: float = 0.0, rng: np.random.Generator | None = None,
             max_cycles: int = 5000, chunk: int = 50) -> int:
    """Run dither cycles on a frozen channel until convergence is declared.

    Mutates ``ctrl``; returns the number of cycles used (``max_cycles`` if the
    declaration never happened).
    """
    used = 0
    while used < max_cycles:
        n = min(chunk, max_cycles - used)
        _, states, _, _, _ = _run_cycles(ch, ctrl, basis, n, 0, 1.0, noise_std, rng, True, 1, drift=False)
        hit = np.flatnonzero(states[:, 2] >= ctrl.config.convergence_cycles)
        if hit.size:
            return used + int(hit[0]) + 1
        used += n
    return used


def run_closed_loop(ch: FiberChannel, ctrl: ControllerState, basis: ReferenceBasis,
                    schedule: Schedule, noise_std: float = 0.0,
                    rng: np.random.Generator | None = None, control: bool = True,
                    record_every: int = 1, chunk_cycles: int = 200_000) -> ClosedLoopTrace:
    """Interleave channel drift and dither cycles; one record per ``record_every`` cycles.

    Each cycle applies ``schedule.steps_per_cycle`` drift steps of ``dt`` and
    then one control cycle.  Mutates ``ch`` and ``ctrl``.
    """
    if record_every < 1:
        raise InvalidInputError("record_every must be >= 1")
    if noise_std > 0 and control and rng is None:
        raise InvalidInputError("noise_std > 0 requires an rng")
    n_total = schedule.n_cycles
    if n_total % record_every:
        raise InvalidInputError("cycle count must be a multiple of record_every")
    chunk = max(record_every, (chunk_cycles // record_every) * record_every)
    parts = []
    accepted = 0
    t0 = ch.sim_time
    done = 0
    while done < n_total:
        n = min(chunk, n_total - done)
        out = _run_cycles(ch, ctrl, basis, n, schedule.steps_per_cycle, schedule.dt,
                          noise_std, rng, control, record_every)
        parts.append(out[:4])
        accepted += out[4]
        done += n
    if parts:
        ret, st, inten, us = (np.concatenate(x) for x in zip(*parts))
    else:
        ret, st = np.empty((0, N_ACTUATORS)), np.empty((0, 3))
        inten, us = np.empty((0, 2)), np.empty((0, 2, 2), dtype=complex)
    times = t0 + schedule.loop_period * record_every * np.arange(1, len(ret) + 1)
    return ClosedLoopTrace(times=times, retardances=ret, steps=st[:, 0], iterations=st[:, 1].astype(int),
                           streaks=st[:, 2].astype(int), intensities=inten, base_unitaries=us,
                           basis=basis, accepted=int(accepted))
