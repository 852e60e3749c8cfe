"""Gated single-photon detection and QBER bookkeeping.

Weak coherent pulses: a gate with mean photon number mu, efficiency eta and
analyzer overlap F fires with probability 1 - exp(-mu eta F); dark counts and
reference-channel crosstalk are independent per-gate click sources.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InvalidInputError, UndefinedQBERError
from .jones import StokesVector


@dataclass(frozen=True)
class DetectorParams:
    mean_photons: float = 0.2
    gate_width: float = 2.5e-9
    gate_rate: float = 100e3
    dark_rate: float = 4e-5  # probability per nanosecond
    efficiency: float = 1.0
    crosstalk_prob: float = 0.0

    def __post_init__(self):
        for name in ("mean_photons", "gate_width", "gate_rate", "dark_rate", "efficiency", "crosstalk_prob"):
            if getattr(self, name) < 0:
                raise InvalidInputError(f"{name} must be non-negative")
        if self.efficiency > 1 or self.crosstalk_prob > 1:
            raise InvalidInputError("efficiency and crosstalk_prob must be <= 1")

    @property
    def dark_probability(self) -> float:
        return -math.expm1(-self.dark_rate * self.gate_width * 1e9)


@dataclass(frozen=True)
class CountRecord:
    analyzer_stokes: StokesVector
    gates: int
    clicks: int

    def __post_init__(self):
        if not 0 <= self.clicks <= self.gates:
            raise InvalidInputError("need 0 <= clicks <= gates")

    @property
    def rate(self) -> float:
        return self.clicks / self.gates


def click_probability(params: DetectorParams, fidelity_to_analyzer: float) -> float:
    f = fidelity_to_analyzer
    if not 0.0 <= f <= 1.0:
        raise InvalidInputError(f"fidelity must lie in [0, 1], got {f}")
    p_sig = -math.expm1(-params.mean_photons * params.efficiency * f)
    p_none = (1.0 - p_sig) * (1.0 - params.dark_probability) * (1.0 - params.crosstalk_prob)
    return min(1.0, max(0.0, 1.0 - p_none))


def simulate_counts(params: DetectorParams, analyzer: StokesVector, received: StokesVector,
                    gates: int, rng: np.random.Generator) -> CountRecord:
    if gates <= 0:
        raise InvalidInputError("gates must be positive")
    f = 0.5 * (1.0 + float(np.dot(analyzer.array, received.array)))
    p = click_probability(params, min(1.0, max(0.0, f)))
    return CountRecord(analyzer, int(gates), int(rng.binomial(int(gates), p)))


def qber_added(deviation_angles: Sequence[float]) -> float:
    """Mean of sin^2(angle/2): the optical error rate added by SOP misalignment."""
    a = np.asarray(deviation_angles, dtype=float)
    if a.size == 0:
        raise InvalidInputError("qber_added needs at least one deviation angle")
    return float(np.mean(np.sin(0.5 * a) ** 2))


def qber_measured(correct: CountRecord, orthogonal: CountRecord) -> float:
    total = correct.clicks + orthogonal.clicks
    if total == 0:
        raise UndefinedQBERError("no clicks in either record")
    return orthogonal.clicks / total
