"""Two-stage polarization control for wavelength-multiplexed reference channels."""
from ._backend import BACKEND
from .config import PRESETS, ScenarioConfig, from_preset, load, loads
from .control import (ControllerConfig, ControllerState, FeedbackSample, ReferenceBasis, Schedule,
                      control_step, converge, measure_feedback, multiplexed_solve, oracle_solve,
                      realize, retardances_for, run_closed_loop, static_transform)
from .detection import (CountRecord, DetectorParams, click_probability, qber_added, qber_measured,
                        simulate_counts)
from .errors import (AliasingError, ConfigError, InvalidInputError, SolverError,
                     UndefinedQBERError)
from .experiments import RunSummary, run_experiment
from .fiber import ChannelSpec, FiberChannel, condition_number, dgd_jme
from .jones import (JonesMatrix, JonesVector, StokesVector, apply, compose, fidelity, haar_random,
                    jones_to_stokes, phase_distance, rotation_about_axis, sphere_angle,
                    stokes_to_jones)

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "PRESETS", "ScenarioConfig", "from_preset", "load", "loads",
    "ControllerConfig", "ControllerState", "FeedbackSample", "ReferenceBasis", "Schedule",
    "control_step", "converge", "measure_feedback", "multiplexed_solve", "oracle_solve",
    "realize", "retardances_for", "run_closed_loop", "static_transform",
    "CountRecord", "DetectorParams", "click_probability", "qber_added", "qber_measured",
    "simulate_counts",
    "AliasingError", "ConfigError", "InvalidInputError", "SolverError", "UndefinedQBERError",
    "RunSummary", "run_experiment",
    "ChannelSpec", "FiberChannel", "condition_number", "dgd_jme",
    "JonesMatrix", "JonesVector", "StokesVector", "apply", "compose", "fidelity", "haar_random",
    "jones_to_stokes", "phase_distance", "rotation_about_axis", "sphere_angle", "stokes_to_jones",
]
