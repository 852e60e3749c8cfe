"""Compiled vs pure-Python control-loop kernels.

    python benchmarks/bench_kernels.py [--cycles N] [--repeat R]

Runs the same closed-loop workload (drift + noisy dither) through each
available backend, checks that they produce identical trajectories and
prints the per-cycle cost.
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from polctl import jones
from polctl._backend import available, load
from polctl.control import NOISE_PER_CYCLE, ControllerConfig, ReferenceBasis


def workload(cycles: int, seed: int = 0, drift: bool = True):
    rng = np.random.default_rng(seed)
    basis = ReferenceBasis()
    tau_half = 0.17
    gen = jones.stokes_generator(jones.StokesVector(1 / 3, 2 / 3, 2 / 3))
    p1 = np.cos(tau_half) * jones.IDENTITY + 1j * np.sin(tau_half) * gen
    p3 = np.cos(tau_half) * jones.IDENTITY - 1j * np.sin(tau_half) * gen
    incr = rng.standard_normal((cycles, 1 if drift else 0, 3)) * 2e-4
    noise = rng.standard_normal((cycles, NOISE_PER_CYCLE)) * 1e-3
    return dict(
        u=jones.haar_random(rng).m.copy(), p1=np.ascontiguousarray(p1), p3=np.ascontiguousarray(p3),
        s1=basis.s1_state.array, s3=basis.s3_state.array, k3=np.ascontiguousarray(basis.r3_generator),
        incr=incr, noise=noise, params=ControllerConfig().kernel_params())


def run(backend, w, cycles: int):
    ret = np.zeros(5)
    state = np.array([0.05, 0.0, 0.0])
    u = w["u"].copy()
    out = (np.empty((cycles, 5)), np.empty((cycles, 3)), np.empty((cycles, 2)),
           np.empty((cycles, 2, 2), dtype=complex))
    t0 = time.perf_counter()
    backend.run_loop(ret, state, u, w["p1"], w["p3"], w["s1"], w["s3"], w["k3"], w["incr"], w["noise"],
                     w["params"], True, 1, *out)
    return time.perf_counter() - t0, out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--cycles", type=int, default=20_000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    w = workload(args.cycles)
    names = available()
    results = {}
    for name in names:
        best, out = min((run(load(name), w, args.cycles) for _ in range(args.repeat)), key=lambda r: r[0])
        results[name] = (best, out)
        print(f"{name:>7}: {best / args.cycles * 1e6:8.3f} us/cycle  ({args.cycles} cycles, best of {args.repeat})")
    if len(results) == 2:
        (tc, oc), (tp, op) = results["cython"], results["python"]
        same = all(np.allclose(a, b, rtol=0, atol=1e-12) for a, b in zip(oc, op))
        print(f"speedup: {tp / tc:.1f}x   trajectories identical: {same}")
    else:
        print("compiled backend not built; only the fallback was timed")


if __name__ == "__main__":
    main()
