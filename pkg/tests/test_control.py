import math

import numpy as np
import pytest
from hypothesis import given, settings
from conftest import angles

from polctl import jones
from polctl.control import (ControllerConfig, ControllerState, ReferenceBasis, Schedule, control_step,
                            converge, measure_feedback, multiplexed_solve, oracle_solve, plate_matrix,
                            r1_stack, realize, retardances_for, run_closed_loop, static_transform)
from polctl.errors import InvalidInputError
from polctl.fiber import ChannelSpec, FiberChannel, delta_omega_from_nm
from polctl.jones import JonesMatrix, JonesVector, StokesVector

BASIS = ReferenceBasis()
TAU = 0.54e-12
AXIS = StokesVector(1 / 3, 2 / 3, 2 / 3)


def channel(tau=0.0, drift=0.0, seed=0, base=None):
    return FiberChannel(ChannelSpec(dgd_tau=tau, pmd_axis=AXIS, drift_rate=drift, seed=seed), base_unitary=base)


def feedback_oracle(ch, ctrl, basis=BASIS):
    """i1, i3 straight from the matrix definitions."""
    r1, r3 = realize(ctrl, basis)
    s1, s3 = basis.s1_state.array, basis.s3_state.array
    t1, t3 = ch.transfer(ch.spec.omega1).m, ch.transfer(ch.spec.omega3).m
    i1 = abs(s1.conj() @ r3.m @ r1.m @ t1 @ s1) ** 2
    i3 = abs(s3.conj() @ r3.m @ r1.m @ t3 @ s3) ** 2
    return i1, i3


def test_basis_must_be_unbiased():
    with pytest.raises(InvalidInputError):
        ReferenceBasis(jones.H, jones.V)
    np.testing.assert_allclose(BASIS.s1_axis.array, [1, 0, 0])


def test_realize_zero_is_identity():
    r1, r3 = realize(ControllerState())
    assert np.allclose(r1.m, jones.IDENTITY) and np.allclose(r3.m, jones.IDENTITY)


def test_plate_axes_match_rotation_oracle(rng):
    for _ in range(50):
        r = rng.uniform(0, 2 * np.pi, 4)
        want = jones.IDENTITY
        for p in range(4):
            axis = StokesVector(1, 0, 0) if p % 2 == 0 else StokesVector(0, 1, 0)
            want = jones.rotation_about_axis(axis, r[p]).m @ want
            np.testing.assert_allclose(plate_matrix(p, r[p]), jones.rotation_about_axis(axis, r[p]).m, atol=1e-15)
        np.testing.assert_allclose(r1_stack(r[None])[0], want, atol=1e-14)


def test_realize_unitary_1000(rng):
    r = rng.uniform(-10, 10, (1000, 4))
    m = r1_stack(r)
    err = np.abs(np.conj(np.swapaxes(m, 1, 2)) @ m - jones.IDENTITY).max()
    assert err < 1e-10


@given(angles)
def test_r3_stabilizes_s1(theta):
    _, r3 = realize(ControllerState(r3_retardance=theta))
    assert jones.fidelity(jones.apply(r3, jones.H), jones.H) == pytest.approx(1.0, abs=1e-12)


def test_r3_pi_maps_d_to_a():
    _, r3 = realize(ControllerState(r3_retardance=math.pi))
    assert jones.fidelity(jones.apply(r3, jones.D), jones.A) == pytest.approx(1.0, abs=1e-15)


def test_retardances_stored_mod_2pi():
    c = ControllerState(r1_retardances=[7.0, -1.0, 0, 0], r3_retardance=-0.5)
    assert np.all((c.retardances >= 0) & (c.retardances < 2 * np.pi))


def test_measure_feedback_examples(rng):
    ch = channel(base=JonesMatrix.identity())
    fb = measure_feedback(ch, ControllerState())
    assert (fb.i1, fb.i3) == pytest.approx((1.0, 1.0), abs=1e-15)
    ch = channel(base=jones.rotation_about_axis(StokesVector(0, 1, 0), math.pi))
    fb = measure_feedback(ch, ControllerState())
    assert fb.i1 == pytest.approx(0.0, abs=1e-15) and fb.i3 == pytest.approx(1.0, abs=1e-15)
    # oracle setting on a random monochromatic channel
    ch = channel(base=jones.haar_random(rng))
    r1, _ = oracle_solve(ch.transfer(ch.spec.omega0))
    fb = measure_feedback(ch, ControllerState(r1_retardances=retardances_for(r1)))
    assert (fb.i1, fb.i3) == pytest.approx((1.0, 1.0), abs=1e-10)


def test_measure_feedback_matches_matrix_oracle(rng):
    for seed in range(30):
        ch = channel(tau=TAU, seed=seed)
        ctrl = ControllerState(rng.uniform(0, 6, 4), rng.uniform(0, 6))
        fb = measure_feedback(ch, ctrl)
        assert (fb.i1, fb.i3) == pytest.approx(feedback_oracle(ch, ctrl), abs=1e-13)


def test_measure_feedback_noise_and_clamp(rng):
    ch = channel(base=JonesMatrix.identity())
    with pytest.raises(InvalidInputError):
        measure_feedback(ch, ControllerState(), noise_std=0.1)
    for _ in range(50):
        fb = measure_feedback(ch, ControllerState(), noise_std=0.5, rng=rng)
        assert 0 <= fb.i1 <= 1 and 0 <= fb.i3 <= 1
    a = measure_feedback(ch, ControllerState(), noise_std=0.1, rng=np.random.default_rng(1))
    b = measure_feedback(ch, ControllerState(), noise_std=0.1, rng=np.random.default_rng(1))
    assert a == b


def test_extinction_mixes_orthogonal_projection():
    ch = channel(base=jones.rotation_about_axis(StokesVector(0, 1, 0), math.pi))
    ctrl = ControllerState(config=ControllerConfig(extinction_db=40.0))
    fb = measure_feedback(ch, ctrl)
    assert fb.i1 == pytest.approx(1e-4, rel=1e-9)
    assert fb.i3 == pytest.approx(1 - 1e-4, rel=1e-12)


def test_decoupling_r3_never_changes_i1(rng):
    ch = channel(tau=TAU, seed=2)
    r1 = rng.uniform(0, 6, 4)
    base = measure_feedback(ch, ControllerState(r1, 0.0)).i1
    for theta in rng.uniform(0, 2 * np.pi, 50):
        assert measure_feedback(ch, ControllerState(r1, theta)).i1 == pytest.approx(base, abs=1e-12)


def test_oracle_solve_identity():
    r1, r3 = oracle_solve(JonesMatrix.identity())
    assert jones.phase_distance(r1, jones.IDENTITY) < 1e-15 and jones.phase_distance(r3, jones.IDENTITY) < 1e-15


def test_oracle_solve_haar_1000(rng):
    worst = 0.0
    for m in jones.haar_random_batch(rng, 1000):
        r1, r3 = oracle_solve(JonesMatrix(m))
        worst = max(worst, jones.phase_distance(r3.m @ r1.m @ m, jones.IDENTITY))
    assert worst < 1e-9


@pytest.mark.parametrize("phi", [0.0, math.pi / 3, math.pi])
def test_oracle_phase_family_fixes_both_references(rng, phi):
    t = jones.haar_random(rng)
    r1, r3 = oracle_solve(t, phi)
    # r3 is the S1-axis retarder at theta = -phi
    assert jones.phase_distance(r3, jones.rotation_about_axis(BASIS.s1_axis, -phi)) < 1e-12
    total = JonesMatrix(r3.m @ r1.m @ t.m)
    for s in (jones.H, jones.D):
        assert jones.fidelity(jones.apply(total, s), s) == pytest.approx(1.0, abs=1e-12)


def test_oracle_breaks_when_theta_plus_phi_nonzero(rng):
    t = jones.haar_random(rng)
    r1, _ = oracle_solve(t, 0.7)
    wrong = jones.rotation_about_axis(BASIS.s1_axis, 0.2)
    total = JonesMatrix(wrong.m @ r1.m @ t.m)
    assert jones.fidelity(jones.apply(total, jones.H), jones.H) == pytest.approx(1.0, abs=1e-12)
    assert jones.fidelity(jones.apply(total, jones.D), jones.D) < 0.99


def test_oracle_solve_rejects_non_unitary():
    with pytest.raises(InvalidInputError):
        oracle_solve(JonesMatrix(np.array([[2, 0], [0, 1]])))


def test_full_state_transfer_after_oracle(rng):
    t = jones.haar_random(rng)
    r1, r3 = oracle_solve(t)
    total = JonesMatrix(r3.m @ r1.m @ t.m)
    for _ in range(100):
        v = JonesVector.from_array(rng.standard_normal(2) + 1j * rng.standard_normal(2)).normalize()
        assert jones.fidelity(jones.apply(total, v), v) == pytest.approx(1.0, abs=1e-9)


def test_retardances_for_examples():
    ret = retardances_for(JonesMatrix.identity())
    assert jones.phase_distance(r1_stack(ret[None])[0], jones.IDENTITY) < 1e-8
    single = JonesMatrix(plate_matrix(0, 0.9))
    ret = retardances_for(single)
    assert jones.phase_distance(r1_stack(ret[None])[0], single.m) < 1e-8
    assert jones.phase_distance(r1_stack(np.array([[0.9, 0, 0, 0]]))[0], single.m) < 1e-15


def test_retardances_for_500_random(rng):
    worst = 0.0
    for m in jones.haar_random_batch(rng, 500):
        ret = retardances_for(JonesMatrix(m))
        worst = max(worst, jones.phase_distance(r1_stack(ret[None])[0], m))
    assert worst < 1e-8


def test_retardances_for_near_singular_targets():
    for target in (plate_matrix(1, 1e-9), plate_matrix(1, math.pi), plate_matrix(0, 1e-12) @ plate_matrix(1, math.pi - 1e-12)):
        ret = retardances_for(JonesMatrix(target))
        assert jones.phase_distance(r1_stack(ret[None])[0], target) < 1e-8


def test_retardances_for_rejects_non_unitary():
    with pytest.raises(InvalidInputError):
        retardances_for(JonesMatrix(np.eye(2) * 2))


def brute_force_theta(t1, t3):
    r1 = t1.m.conj().T
    thetas = np.linspace(0, 2 * np.pi, 200001)
    v = r1 @ t3.m @ jones.D.array
    k = BASIS.r3_generator
    r3 = np.cos(thetas / 2)[:, None, None] * jones.IDENTITY - 1j * np.sin(thetas / 2)[:, None, None] * k
    i3 = np.abs(np.einsum("i,nij,j->n", jones.D.array.conj(), r3, v)) ** 2
    best = thetas[np.argmax(i3)]
    return best, i3.max()


def test_multiplexed_solve_matches_brute_force():
    for seed in range(10):
        ch = channel(tau=TAU, seed=seed)
        t1, t3 = ch.transfer(ch.spec.omega1), ch.transfer(ch.spec.omega3)
        r1, r3 = multiplexed_solve(t1, t3)
        _, i3_best = brute_force_theta(t1, t3)
        got = abs(jones.D.array.conj() @ r3.m @ r1.m @ t3.m @ jones.D.array) ** 2
        assert got == pytest.approx(i3_best, abs=1e-9)
        assert got >= i3_best - 1e-12
        assert abs(jones.H.array.conj() @ r3.m @ r1.m @ t1.m @ jones.H.array) ** 2 == pytest.approx(1.0, abs=1e-12)


def test_static_transform_independent_of_drift_state():
    a = static_transform(channel(tau=TAU, seed=1))
    b = static_transform(channel(tau=TAU, seed=2))
    assert jones.phase_distance(a, b) < 1e-12
    assert jones.phase_distance(static_transform(channel(tau=0.0, seed=3)), jones.IDENTITY) < 1e-12


def test_static_offset_scales_with_condition_number():
    # the residual rotation tends to tau*delta_omega for small values and grows with it
    dw = delta_omega_from_nm(0.8)
    for x in (0.005, 0.01, 0.02):
        assert jones.rotation_angle(static_transform(channel(tau=x / dw))) == pytest.approx(x, rel=0.01)
    grid = np.linspace(0.01, 0.5, 25)
    offsets = [jones.rotation_angle(static_transform(channel(tau=x / dw))) for x in grid]
    assert np.all(np.diff(offsets) > 0)


def numpy_dither_cycle(ch, ctrl, basis=BASIS):
    """Straight numpy rendering of one noise-free dither cycle."""
    ret = ctrl.retardances.copy()
    step = ctrl.dither_step
    accepted = 0

    def objective(r, a):
        c = ControllerState(r[:4], r[4])
        i1, i3 = feedback_oracle(ch, c, basis)
        return i1 if a < 4 else i3

    for a in range(5):
        vals = []
        for d in (0.0, step, -step):
            r = ret.copy()
            r[a] = r[a] + d
            vals.append(objective(r, a))
        k = int(np.argmax(vals))
        if k:
            ret[a] = np.mod(ret[a] + (step if k == 1 else -step), 2 * np.pi)
            accepted += 1
    cfg = ctrl.config
    if accepted == 0:
        step = max(step * cfg.shrink, cfg.step_min)
    elif accepted == 5:
        step = min(step * cfg.grow, cfg.step_max)
    return ret, step


def test_control_step_matches_numpy_oracle(rng):
    for seed in range(20):
        ch = channel(tau=TAU, seed=seed)
        ctrl = ControllerState(rng.uniform(0, 6, 4), rng.uniform(0, 6), dither_step=rng.uniform(0.01, 0.5))
        new = control_step(ctrl, ch)
        want_ret, want_step = numpy_dither_cycle(ch, ctrl)
        np.testing.assert_allclose(new.retardances, want_ret, atol=1e-12)
        assert new.dither_step == pytest.approx(want_step, rel=1e-15)
        assert new.iteration == ctrl.iteration + 1
        assert np.array_equal(ctrl.retardances, ctrl.copy().retardances)  # input untouched


def test_converged_state_only_adapts_step(rng):
    ch = channel(base=jones.haar_random(rng))
    r1, _ = oracle_solve(ch.transfer(ch.spec.omega0))
    ctrl = ControllerState(r1_retardances=retardances_for(r1), dither_step=0.1)
    new = control_step(ctrl, ch)
    np.testing.assert_array_equal(new.retardances, ctrl.retardances)
    assert new.dither_step == pytest.approx(0.07)


def test_tie_keeps_current():
    # plate 0 has the S1 axis, so with T = I its probes are exactly tied on i1
    ch = channel(base=JonesMatrix.identity())
    new = control_step(ControllerState(dither_step=0.3), ch)
    assert new.r1_retardances[0] == 0.0


def test_monotone_i1_on_static_channel(rng):
    for seed in range(5):
        ch = channel(tau=TAU, seed=seed)
        ctrl = ControllerState()
        prev = measure_feedback(ch, ctrl).i1
        for _ in range(300):
            ctrl = control_step(ctrl, ch)
            cur = measure_feedback(ch, ctrl).i1
            assert cur >= prev - 1e-12
            prev = cur


def test_control_step_requires_rng_for_noise():
    with pytest.raises(InvalidInputError):
        control_step(ControllerState(), channel(), noise_std=0.01)


def test_converge_monochromatic(rng):
    hits = 0
    for seed in range(20):
        ch = channel(seed=seed)
        ctrl = ControllerState()
        used = converge(ctrl, ch, max_cycles=5000)
        fb = measure_feedback(ch, ctrl)
        r1, r3 = realize(ctrl)
        dev = jones.rotation_angle(r3.m @ r1.m @ ch.transfer(ch.spec.omega0).m)
        hits += used < 5000 and fb.i1 > 0.9999 and fb.i3 > 0.9999 and math.degrees(dev) < 1.0
    assert hits >= 19


@pytest.mark.parametrize("kw", [dict(dt=0, total_time=1, loop_period=1e-3), dict(dt=1e-3, total_time=1, loop_period=1e-4),
                                dict(dt=3e-5, total_time=1, loop_period=1e-4), dict(dt=1e-4, total_time=-1, loop_period=1e-4)])
def test_schedule_validation(kw):
    with pytest.raises(InvalidInputError):
        Schedule(**kw)


def test_schedule_counts():
    s = Schedule(dt=25e-6, total_time=0.01, loop_period=125e-6)
    assert s.steps_per_cycle == 5 and s.n_cycles == 80


def test_run_closed_loop_flat_when_static_and_converged(rng):
    ch = channel(base=jones.haar_random(rng))
    r1, _ = oracle_solve(ch.transfer(ch.spec.omega0))
    ctrl = ControllerState(r1_retardances=retardances_for(r1))
    tr = run_closed_loop(ch, ctrl, BASIS, Schedule(1e-4, 0.05, 1e-4))
    assert len(tr) == 500
    np.testing.assert_allclose(tr.intensities, 1.0, atol=1e-12)
    assert np.ptp(tr.retardances, axis=0).max() == 0
    np.testing.assert_allclose(tr.times, 1e-4 * np.arange(1, 501))


def test_run_closed_loop_equals_stepwise():
    def make():
        return channel(tau=TAU, drift=0.3, seed=11), ControllerState(), np.random.default_rng(5)

    sched = Schedule(dt=25e-6, total_time=0.02, loop_period=125e-6)
    ch, ctrl, rng = make()
    tr = run_closed_loop(ch, ctrl, BASIS, sched, noise_std=2e-3, rng=rng, chunk_cycles=7)
    ch2, ctrl2, rng2 = make()
    for k in range(sched.n_cycles):
        for _ in range(sched.steps_per_cycle):
            ch2.step(sched.dt)
        ctrl2 = control_step(ctrl2, ch2, BASIS, noise_std=2e-3, rng=rng2)
        np.testing.assert_allclose(tr.retardances[k], ctrl2.retardances, atol=1e-12)
        np.testing.assert_allclose(tr.base_unitaries[k], ch2.base_unitary.m, atol=1e-12)
    assert ch.sim_time == pytest.approx(ch2.sim_time)
    assert ctrl.iteration == ctrl2.iteration == sched.n_cycles


def test_run_closed_loop_chunking_and_determinism():
    def go(chunk, record_every=4):
        ch = channel(tau=TAU, drift=0.5, seed=3)
        return run_closed_loop(ch, ControllerState(), BASIS, Schedule(125e-6, 0.1, 125e-6), 1e-3,
                               np.random.default_rng(9), record_every=record_every, chunk_cycles=chunk)
    a, b = go(200_000), go(36)
    for f in ("times", "retardances", "steps", "intensities", "base_unitaries"):
        assert np.array_equal(getattr(a, f), getattr(b, f))
    with pytest.raises(InvalidInputError):
        go(100, record_every=7)


def test_trace_transforms_match_realize():
    ch = channel(tau=TAU, drift=0.5, seed=4)
    tr = run_closed_loop(ch, ControllerState(), BASIS, Schedule(125e-6, 0.01, 125e-6))
    k = len(tr) - 1
    r1, r3 = realize(ControllerState(tr.retardances[k, :4], tr.retardances[k, 4]))
    np.testing.assert_allclose(tr.total_transforms()[k], r3.m @ r1.m @ tr.base_unitaries[k], atol=1e-14)
    np.testing.assert_allclose(tr.base_unitaries[-1], ch.base_unitary.m)


def test_uncontrolled_signal_wanders():
    ch = channel(drift=0.05, seed=8)
    tr = run_closed_loop(ch, ControllerState(), BASIS, Schedule(125e-6, 3600.0, 125e-6),
                         control=False, record_every=8000)
    s = tr.signal_stokes(jones.D)
    dev = np.degrees(np.arccos(np.clip(s @ s[0], -1, 1)))
    assert dev.max() > 90
    assert tr.iterations[-1] == 0
