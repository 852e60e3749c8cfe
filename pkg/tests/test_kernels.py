"""Backend equivalence and kernel oracles."""
import math
import os
import subprocess
import sys

import numpy as np
import pytest
import scipy.linalg

from polctl import _backend, jones
from polctl.control import NOISE_PER_CYCLE, ControllerConfig, ReferenceBasis

BACKENDS = _backend.available()
compiled_only = pytest.mark.skipif("cython" not in BACKENDS, reason="compiled kernels not built")


@pytest.fixture(params=BACKENDS)
def kern(request):
    return _backend.load(request.param)


def inputs(seed, cycles=300, steps=2, noise=True):
    rng = np.random.default_rng(seed)
    basis = ReferenceBasis()
    gen = jones.stokes_generator(jones.StokesVector(0.0, 0.6, 0.8))
    p1 = np.ascontiguousarray(scipy.linalg.expm(0.17j * gen))
    p3 = np.ascontiguousarray(scipy.linalg.expm(-0.17j * gen))
    return dict(
        ret=rng.uniform(0, 2 * np.pi, 5), state=np.array([0.2, 0.0, 0.0]),
        u=jones.haar_random(rng).m.copy(), p1=p1, p3=p3, s1=basis.s1_state.array, s3=basis.s3_state.array,
        k3=np.ascontiguousarray(basis.r3_generator),
        incr=rng.standard_normal((cycles, steps, 3)) * 1e-2,
        noise=rng.standard_normal((cycles, NOISE_PER_CYCLE if noise else 0)) * 1e-3,
        params=ControllerConfig(extinction_db=35.0).kernel_params())


def run(kern, d, record_every=3):
    n = d["incr"].shape[0] // record_every
    out = (np.empty((n, 5)), np.empty((n, 3)), np.empty((n, 2)), np.empty((n, 2, 2), dtype=complex))
    ret, state, u = d["ret"].copy(), d["state"].copy(), d["u"].copy()
    acc = kern.run_loop(ret, state, u, d["p1"], d["p3"], d["s1"], d["s3"], d["k3"], d["incr"], d["noise"],
                        d["params"], True, record_every, *out)
    return acc, ret, state, u, out


@compiled_only
@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("noise", [True, False])
def test_backends_agree(seed, noise):
    d = inputs(seed, noise=noise)
    a = run(_backend.load("cython"), d)
    b = run(_backend.load("python"), d)
    assert a[0] == b[0]
    for x, y in zip(a[1:4] + tuple(a[4]), b[1:4] + tuple(b[4])):
        np.testing.assert_allclose(x, y, rtol=0, atol=1e-12)


def test_nearest_unitary_matches_scipy_polar(kern, rng):
    for _ in range(200):
        m = rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2))
        want, _ = scipy.linalg.polar(m)
        got = m.copy()
        kern.nearest_unitary(got)
        np.testing.assert_allclose(got, want, atol=1e-12)


def test_nearest_unitary_fixes_unitary(kern, rng):
    u = jones.haar_random(rng).m.copy()
    before = u.copy()
    kern.nearest_unitary(u)
    np.testing.assert_allclose(u, before, atol=1e-15)


def test_drift_apply_matches_expm(kern, rng):
    u = jones.haar_random(rng).m.copy()
    incr = rng.standard_normal((20, 3)) * 0.3
    want = u.copy()
    for b in incr:
        want = scipy.linalg.expm(-0.5j * np.tensordot(b, jones.PAULI, axes=1)) @ want
    kern.drift_apply(u, incr)
    np.testing.assert_allclose(u, want, atol=1e-12)


def test_drift_apply_zero_increment(kern, rng):
    u = jones.haar_random(rng).m.copy()
    before = u.copy()
    kern.drift_apply(u, np.zeros((3, 3)))
    np.testing.assert_allclose(u, before, atol=1e-15)


def test_long_drift_stays_unitary(kern):
    u = np.eye(2, dtype=complex)
    kern.drift_apply(u, np.random.default_rng(1).standard_normal((100_000, 3)) * 0.05)
    assert np.abs(u.conj().T @ u - np.eye(2)).max() < 1e-12


def test_intensities_formula(kern, rng):
    d = inputs(3)
    a1 = d["u"] @ d["p1"]
    a3 = d["u"] @ d["p3"]
    i1, i3 = kern.intensities(d["ret"], a1, a3, d["s1"], d["s3"], d["k3"], 0.0)
    from polctl.control import r1_stack, r3_stack
    r = r3_stack(d["ret"][4], ReferenceBasis())[0] @ r1_stack(d["ret"][None, :4])[0]
    assert i1 == pytest.approx(abs(d["s1"].conj() @ r @ a1 @ d["s1"]) ** 2, abs=1e-14)
    assert i3 == pytest.approx(abs(d["s3"].conj() @ r @ a3 @ d["s3"]) ** 2, abs=1e-14)


def test_run_loop_control_off_keeps_retardances(kern):
    d = inputs(4)
    n = d["incr"].shape[0]
    out = (np.empty((n, 5)), np.empty((n, 3)), np.empty((n, 2)), np.empty((n, 2, 2), dtype=complex))
    ret = d["ret"].copy()
    acc = kern.run_loop(ret, d["state"].copy(), d["u"].copy(), d["p1"], d["p3"], d["s1"], d["s3"], d["k3"],
                        d["incr"], d["noise"], d["params"], False, 1, *out)
    assert acc == 0
    assert np.array_equal(ret, d["ret"])
    assert np.all(out[1][:, 1] == 0)


def test_step_bounds_respected(kern):
    d = inputs(5, cycles=600)
    _, _, _, _, out = run(kern, d, record_every=1)
    steps = out[1][:, 0]
    cfg = ControllerConfig()
    assert steps.min() >= cfg.step_min and steps.max() <= cfg.step_max


def test_env_var_forces_fallback():
    code = "import polctl; print(polctl.BACKEND)"
    env = dict(os.environ, POLCTL_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


def test_unknown_backend():
    with pytest.raises(ValueError):
        _backend.load("fortran")
