"""Reproduction experiments and their file outputs.

Every experiment is a pure function of a ScenarioConfig: all randomness comes
from child streams of ``SeedSequence(seed)`` (channel drift, controller noise,
detector, scenario draws), and files are written with ``repr`` floats, so equal
configs give byte-identical outputs.

Time-series schema (CSV, one row per record)::

    t_s, sig_s1, sig_s2, sig_s3, deviation_deg, loss, i1, i3

``loss`` is sin^2(deviation/2), i.e. 1 minus the power through an analyzer
aligned with the target state.  In recovery runs the single row with
``t_s < 0`` is the pre-perturbation sample and ``t_s = 0`` is the instant just
after the perturbation.
"""
from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy import stats

from . import jones
from .config import ScenarioConfig, axis_from_value, dumps
from .control import (ControllerState, ReferenceBasis, Schedule, converge, measure_feedback,
                      oracle_solve, realize, run_closed_loop, static_transform)
from .detection import click_probability, qber_added, qber_measured, simulate_counts
from .errors import ConfigError
from .fiber import FiberChannel
from .jones import JonesMatrix, StokesVector

SERIES_HEADER = ("t_s", "sig_s1", "sig_s2", "sig_s3", "deviation_deg", "loss", "i1", "i3")
SWEEP_HEADER = ("condition", "dgd_ps", "drift_rate", "repeats", "mean_deviation_deg",
                "max_deviation_deg", "mean_loss", "max_loss", "qber_added", "predicted_deviation_deg")
COUNTS_HEADER = ("input", "analyzer_deg", "a_s1", "a_s2", "a_s3", "recv_s1", "recv_s2", "recv_s3",
                 "gates", "clicks", "expected_clicks")
RECOVERY_LEVELS = (0.9, 0.999)


@dataclass(frozen=True)
class RunSummary:
    mean_deviation_deg: float
    max_deviation_deg: float
    mean_loss: float
    max_loss: float
    qber_added: float
    iterations: int
    seed: int
    n_records: int
    recovery_time_90: float | None = None
    recovery_time_full: float | None = None
    recovered_90: bool | None = None
    recovered_full: bool | None = None

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Series:
    t: np.ndarray
    stokes: np.ndarray
    deviation_deg: np.ndarray
    loss: np.ndarray
    i1: np.ndarray
    i3: np.ndarray

    @classmethod
    def from_stokes(cls, t, stokes, target: StokesVector, intensities) -> "Series":
        stokes = np.asarray(stokes, dtype=float)
        cos = np.clip(stokes @ target.array, -1.0, 1.0)
        dev = np.degrees(np.arccos(cos))
        loss = np.sin(0.5 * np.radians(dev)) ** 2
        inten = np.asarray(intensities, dtype=float).reshape(-1, 2)
        return cls(np.asarray(t, dtype=float), stokes, dev, loss, inten[:, 0], inten[:, 1])

    def __len__(self) -> int:
        return len(self.t)

    def rows(self):
        for k in range(len(self)):
            yield (self.t[k], *self.stokes[k], self.deviation_deg[k], self.loss[k], self.i1[k], self.i3[k])

    def concat(self, other: "Series") -> "Series":
        return Series(*(np.concatenate([a, b]) for a, b in zip(
            (self.t, self.stokes, self.deviation_deg, self.loss, self.i1, self.i3),
            (other.t, other.stokes, other.deviation_deg, other.loss, other.i1, other.i3))))


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(x) for x in row])


def write_json(path: Path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def read_series(path: str | Path) -> Series:
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = tuple(next(r))
        if header != SERIES_HEADER:
            raise ValueError(f"unexpected time-series header {header}")
        data = np.array([[float(x) for x in row] for row in r]).reshape(-1, len(SERIES_HEADER))
    return Series(data[:, 0], data[:, 1:4], data[:, 4], data[:, 5], data[:, 6], data[:, 7])


def recovery_times(series: Series, duration: float, levels=RECOVERY_LEVELS):
    """First time at or after t = 0 where analyzer power (1 - loss) reaches
    ``level`` times the pre-perturbation power (the row with t < 0).

    Returns [(time, recovered)] per level; time = duration when never reached.
    """
    pre = series.t < 0
    if pre.sum() != 1:
        raise ValueError("recovery series needs exactly one pre-perturbation row")
    p_pre = 1.0 - float(series.loss[pre][0])
    post = ~pre
    t, p = series.t[post], 1.0 - series.loss[post]
    out = []
    for level in levels:
        hit = np.flatnonzero(p >= level * p_pre)
        out.append((float(t[hit[0]]), True) if hit.size else (float(duration), False))
    return out


def summarize(series: Series, seed: int, iterations: int, recovery_duration: float | None = None) -> RunSummary:
    """RunSummary from a time series; recovery fields only when ``recovery_duration`` is given."""
    post = series.t >= 0
    dev = series.deviation_deg[post]
    loss = series.loss[post]
    if dev.size == 0:
        raise ValueError("cannot summarize an empty series")
    extra = {}
    if recovery_duration is not None:
        (t90, ok90), (tfull, okfull) = recovery_times(series, recovery_duration)
        extra = dict(recovery_time_90=t90, recovery_time_full=tfull, recovered_90=ok90, recovered_full=okfull)
    # mean of a constant column can exceed its max by one ulp
    dmax, lmax = float(np.max(dev)), float(np.max(loss))
    return RunSummary(
        mean_deviation_deg=min(float(np.mean(dev)), dmax), max_deviation_deg=dmax,
        mean_loss=min(float(np.mean(loss)), lmax), max_loss=lmax,
        qber_added=min(qber_added(np.radians(dev)), lmax), iterations=int(iterations), seed=int(seed),
        n_records=int(dev.size), **extra)


# --- scenario plumbing ---------------------------------------------------------

@dataclass
class _Scenario:
    cfg: ScenarioConfig
    ch: FiberChannel
    ctrl: ControllerState
    basis: ReferenceBasis
    signal: jones.JonesVector
    frame: JonesMatrix  # expected signal transform of an ideally converged loop
    rng_ctl: np.random.Generator
    rng_det: np.random.Generator
    rng_scen: np.random.Generator

    @property
    def noise(self) -> float:
        return self.cfg["controller.noise_std"]

    def target_for(self, state: jones.JonesVector) -> StokesVector:
        return jones.jones_to_stokes(jones.apply(self.frame, state))

    def total_transform(self) -> np.ndarray:
        r1, r3 = realize(self.ctrl, self.basis)
        return r3.m @ r1.m @ self.ch.transfer(self.ch.spec.omega0).m

    def snapshot(self, t: float) -> Series:
        s = jones.stokes_of((self.total_transform() @ self.signal.array)[None, :])
        fb = measure_feedback(self.ch, self.ctrl, self.basis)
        return Series.from_stokes([t], s, self.target_for(self.signal), [[fb.i1, fb.i3]])

    def schedule(self, duration: float, record_every: int) -> Schedule:
        lp = self.cfg.loop_period
        cycles = int(round(duration / lp))
        cycles -= cycles % record_every
        return Schedule(dt=self.cfg["channel.dt_us"] * 1e-6, total_time=cycles * lp, loop_period=lp)

    def run(self, duration: float, record_every: int, control: bool = True) -> Series:
        trace = run_closed_loop(self.ch, self.ctrl, self.basis, self.schedule(duration, record_every),
                                self.noise, self.rng_ctl, control=control, record_every=record_every)
        return Series.from_stokes(trace.times, trace.signal_stokes(self.signal),
                                  self.target_for(self.signal), trace.intensities)


def _streams(entropy):
    ss = np.random.SeedSequence(entropy)
    return [np.random.default_rng(s) for s in ss.spawn(4)]


def _scenario(cfg: ScenarioConfig, entropy=None, dgd_tau=None, drift_rate=None, warmup=True) -> _Scenario:
    r_ch, r_ctl, r_det, r_sc = _streams(cfg.seed if entropy is None else entropy)
    spec = cfg.channel_spec(dgd_tau=dgd_tau, drift_rate=drift_rate)
    base = JonesMatrix.identity() if cfg["channel.initial"] == "identity" else jones.haar_random(r_ch)
    ch = FiberChannel(spec, base_unitary=base, rng=r_ch)
    ctrl = ControllerState(dither_step=cfg["controller.dither_step"], config=cfg.controller_config())
    basis = ReferenceBasis()
    frame = static_transform(ch, basis) if cfg.target_mode == "calibrated" else JonesMatrix.identity()
    sc = _Scenario(cfg, ch, ctrl, basis, cfg.signal_state(), frame, r_ctl, r_det, r_sc)
    if warmup:
        converge(ctrl, ch, basis, sc.noise, r_ctl, max_cycles=cfg["experiment.warmup_cycles"])
    return sc


def _random_axis(rng: np.random.Generator) -> StokesVector:
    v = rng.standard_normal(3)
    return StokesVector.from_array(v / np.linalg.norm(v))


# --- experiments ---------------------------------------------------------------

@dataclass
class ExperimentResult:
    summary: dict
    files: list[str]
    ok: bool = True


def simulate_run(cfg: ScenarioConfig, entropy=None, dgd_tau=None, drift_rate=None):
    sc = _scenario(cfg, entropy, dgd_tau, drift_rate)
    series = sc.run(cfg["experiment.duration_s"], cfg["experiment.record_every"],
                    control=cfg["experiment.control"])
    return sc, series


def experiment_run(cfg: ScenarioConfig, out: Path | None = None) -> ExperimentResult:
    sc, series = simulate_run(cfg)
    summary = summarize(series, cfg.seed, sc.ctrl.iteration)
    return _finish(cfg, out, summary.to_dict(), series)


def simulate_recovery(cfg: ScenarioConfig, entropy=None, perturb_deg: float | None = None):
    sc = _scenario(cfg, entropy)
    lp = cfg.loop_period
    pre = sc.snapshot(-lp)
    axis_cfg = cfg["experiment.perturb_axis"]
    axis = _random_axis(sc.rng_scen) if axis_cfg == "random" else axis_from_value(axis_cfg)
    angle = cfg["experiment.perturb_deg"] if perturb_deg is None else perturb_deg
    sc.ch.perturb(axis, math.radians(angle))
    series = pre.concat(sc.snapshot(0.0)).concat(sc.run(cfg["experiment.duration_s"], 1))
    return sc, series


def experiment_recovery(cfg: ScenarioConfig, out: Path | None = None) -> ExperimentResult:
    sc, series = simulate_recovery(cfg)
    summary = summarize(series, cfg.seed, sc.ctrl.iteration, recovery_duration=cfg["experiment.duration_s"])
    return _finish(cfg, out, summary.to_dict(), series)


def predicted_deviation_deg(cfg: ScenarioConfig, dgd_tau: float) -> float:
    """Deviation of an ideally converged loop from the launched signal state."""
    ch = FiberChannel(cfg.channel_spec(dgd_tau=dgd_tau, drift_rate=0.0), JonesMatrix.identity())
    s = cfg.signal_state()
    out = jones.apply(static_transform(ch), s)
    return math.degrees(jones.sphere_angle(jones.jones_to_stokes(out), jones.jones_to_stokes(s)))


def _sweep_job(args):
    values, r, dgd_tau, drift = args
    cfg = ScenarioConfig(values)
    _, series = simulate_run(cfg, entropy=(cfg.seed, r), dgd_tau=dgd_tau, drift_rate=drift)
    return summarize(series, cfg.seed, 0)


def experiment_sweep(cfg: ScenarioConfig, out: Path | None = None) -> ExperimentResult:
    dw = cfg.channel_spec().delta_omega
    grid = cfg["experiment.grid"]
    if dw == 0 and any(x > 0 for x in grid):
        raise ConfigError("a tau*delta_omega grid needs wavelength multiplexing (delta_omega > 0)")
    drifts = cfg["experiment.drift_grid"] or [cfg["channel.drift_rate"]]
    repeats = cfg["experiment.repeats"]
    # repeat r uses the same streams at every grid point (common random numbers)
    points = [(x, d) for d in drifts for x in grid]
    jobs = [(cfg.values, r, (x / dw if dw else 0.0), d) for x, d in points for r in range(repeats)]
    n_jobs = cfg["experiment.jobs"]
    if n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(_sweep_job, jobs))
    else:
        results = [_sweep_job(j) for j in jobs]
    rows = []
    for k, (x, d) in enumerate(points):
        chunk = results[k * repeats:(k + 1) * repeats]
        tau = x / dw if dw else 0.0
        rows.append((x, tau * 1e12, d, repeats,
                     float(np.mean([s.mean_deviation_deg for s in chunk])),
                     float(np.max([s.max_deviation_deg for s in chunk])),
                     float(np.mean([s.mean_loss for s in chunk])),
                     float(np.max([s.max_loss for s in chunk])),
                     float(np.mean([s.qber_added for s in chunk])),
                     predicted_deviation_deg(cfg, tau)))
    trend = []
    for d in drifts:
        sel = [row for row in rows if row[2] == d]
        rho = stats.spearmanr([row[0] for row in sel], [row[4] for row in sel]).statistic if len(sel) > 1 else None
        trend.append({"drift_rate": d, "spearman_rho": None if rho is None or np.isnan(rho) else float(rho),
                      "nondecreasing": bool(all(b[4] >= a[4] for a, b in zip(sel, sel[1:])))})
    summary = {"kind": "sweep", "seed": cfg.seed, "grid": grid, "drift_grid": drifts,
               "repeats": repeats, "target": cfg.target_mode, "trend": trend,
               "rows": [dict(zip(SWEEP_HEADER, r)) for r in rows]}
    files = []
    if out is not None:
        out = _prepare(out, cfg)
        write_csv(out / "sweep.csv", SWEEP_HEADER, rows)
        files.append(str(out / "sweep.csv"))
    res = _finish(cfg, out, summary, None)
    res.files = files + res.files
    return res


def _analyzer(psi_deg: float) -> StokesVector:
    a = math.radians(2.0 * psi_deg)
    return StokesVector(math.cos(a), math.sin(a), 0.0)


def experiment_counts(cfg: ScenarioConfig, out: Path | None = None) -> ExperimentResult:
    """Analyzer sweep along the equator for H and +45 inputs under active control.

    Each setting dwells gates / gate_rate seconds of controlled operation; the
    received state at the end of the dwell is expressed in the calibrated
    frame and fed to the binomial click model.
    """
    sc = _scenario(cfg)
    params = cfg.detector_params()
    gates = cfg["experiment.gates"]
    dwell = gates / params.gate_rate if params.gate_rate > 0 else 0.0
    stride = int(round(dwell / cfg.loop_period))  # one record per dwell
    frame_inv = sc.frame.inverse()
    rows = []
    clicks = {}
    for name in ("H", "D"):
        state = jones.NAMED_STATES[name]
        for psi in cfg["experiment.analyzer_deg"]:
            if stride:
                run_closed_loop(sc.ch, sc.ctrl, sc.basis, sc.schedule(dwell, stride), sc.noise,
                                sc.rng_ctl, record_every=stride)
            recv_v = frame_inv.m @ sc.total_transform() @ state.array
            recv = jones.jones_to_stokes(jones.JonesVector.from_array(recv_v).normalize())
            a = _analyzer(psi)
            rec = simulate_counts(params, a, recv, gates, sc.rng_det)
            f = min(1.0, max(0.0, 0.5 * (1.0 + float(a.array @ recv.array))))
            rows.append((name, psi, *a.array, *recv.array, gates, rec.clicks, gates * click_probability(params, f)))
            clicks[(name, psi)] = rec
    qber = {}
    for name, ok_deg in (("H", 0.0), ("D", 45.0)):
        a, b = clicks.get((name, ok_deg)), clicks.get((name, ok_deg + 90.0))
        if a is not None and b is not None and a.clicks + b.clicks > 0:
            qber[name] = qber_measured(a, b)
    summary = {"kind": "counts", "seed": cfg.seed, "gates": gates, "dwell_s": dwell,
               "dark_floor_expected": gates * click_probability(params, 0.0),
               "qber_measured": qber, "iterations": sc.ctrl.iteration}
    files = []
    if out is not None:
        out = _prepare(out, cfg)
        write_csv(out / "counts.csv", COUNTS_HEADER, rows)
        files.append(str(out / "counts.csv"))
    res = _finish(cfg, out, summary, None)
    res.files = files + res.files
    return res


def oracle_check(matrices: np.ndarray, phis) -> dict:
    """Batch check of the closed-form solution over unitaries and phase choices."""
    h, d = jones.H, jones.D
    worst_dist = 0.0
    worst_fid = 0.0
    per_phi = []
    for phi in phis:
        dmax = fmax = 0.0
        for m in matrices:
            r1, r3 = oracle_solve(JonesMatrix(m), phi)
            total = r3.m @ r1.m @ m
            dmax = max(dmax, jones.phase_distance(total, jones.IDENTITY))
            for s in (h, d):
                out = jones.JonesVector.from_array(total @ s.array)
                fmax = max(fmax, 1.0 - jones.fidelity(out, s))
        per_phi.append({"phi_deg": math.degrees(phi), "max_distance": dmax, "max_fidelity_defect": fmax,
                        "pass": bool(dmax < 1e-9 and fmax < 1e-10)})
        worst_dist, worst_fid = max(worst_dist, dmax), max(worst_fid, fmax)
    return {"n": int(len(matrices)), "max_distance": worst_dist, "max_fidelity_defect": worst_fid,
            "phi": per_phi, "pass": bool(worst_dist < 1e-9 and worst_fid < 1e-10)}


def experiment_oracle_check(cfg: ScenarioConfig, out: Path | None = None) -> ExperimentResult:
    rng = _streams(cfg.seed)[3]
    mats = jones.haar_random_batch(rng, cfg["experiment.oracle_n"])
    report = oracle_check(mats, [math.radians(p) for p in cfg["experiment.phi_deg"]])
    report.update(kind="oracle-check", seed=cfg.seed)
    files = []
    if out is not None:
        out = _prepare(out, cfg)
        write_json(out / "oracle_check.json", report)
        files = [str(out / "config.txt"), str(out / "oracle_check.json")]
    return ExperimentResult(report, files, ok=report["pass"])


def _prepare(out: Path, cfg: ScenarioConfig) -> Path:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(dumps(cfg))
    return out


def _finish(cfg, out, summary: dict, series: Series | None) -> ExperimentResult:
    summary = dict(summary)
    summary.setdefault("kind", cfg.kind)
    summary.setdefault("target", cfg.target_mode)
    files = []
    if out is not None:
        out = _prepare(out, cfg)
        if series is not None:
            write_csv(out / "timeseries.csv", SERIES_HEADER, series.rows())
            files.append(str(out / "timeseries.csv"))
        write_json(out / "summary.json", summary)
        files += [str(out / "summary.json"), str(out / "config.txt")]
    return ExperimentResult(summary, files)


EXPERIMENTS = {
    "run": experiment_run,
    "recovery": experiment_recovery,
    "sweep": experiment_sweep,
    "counts": experiment_counts,
    "oracle-check": experiment_oracle_check,
}


def run_experiment(cfg: ScenarioConfig, out: Path | None = None) -> ExperimentResult:
    return EXPERIMENTS[cfg.kind](cfg, out)
