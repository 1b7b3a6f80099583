"""Rician channel sampling and the ToA timing bound.

The localization engine only consumes a timing standard deviation; this
module is how one is derived from bandwidth and SNR.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# K at or above this is treated as a pure line-of-sight channel.
K_LOS_LIMIT = 1e12


@dataclass(frozen=True)
class RicianParams:
    k_factor: float
    n_antennas: int = 1
    spacing_wavelengths: float = 0.5
    angle_rad: float = 0.0

    def __post_init__(self) -> None:
        if not math.isfinite(self.k_factor) or self.k_factor < 0:
            raise ValueError("Rician K-factor must be finite and non-negative")
        if self.n_antennas < 1:
            raise ValueError("need at least one antenna")
        if self.spacing_wavelengths <= 0:
            raise ValueError("antenna spacing must be positive")


@dataclass(frozen=True)
class ToaModel:
    """Pulse timing model.  ``noise_density`` (N0/2) is informational only."""

    beta_hz: float
    snr: float
    noise_density: float = 1.0

    def __post_init__(self) -> None:
        if not (self.beta_hz > 0 and self.snr > 0 and self.noise_density > 0):
            raise ValueError("bandwidth, SNR and noise density must be positive")


def los_steering_vector(p: RicianParams) -> np.ndarray:
    m = np.arange(p.n_antennas)
    return np.exp(2j * np.pi * m * p.spacing_wavelengths * math.cos(p.angle_rad))


def sample_rician(
    p: RicianParams, rng: np.random.Generator, size: int | None = None
) -> np.ndarray:
    """Channel vector(s) h = sqrt(K/(1+K)) h_los + sqrt(1/(1+K)) h_scatter.

    ``size`` draws a batch of shape (size, n_antennas).
    """
    shape = (p.n_antennas,) if size is None else (size, p.n_antennas)
    los = los_steering_vector(p)
    if p.k_factor >= K_LOS_LIMIT:
        return np.broadcast_to(los, shape).copy()
    scatter = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / math.sqrt(2)
    k = p.k_factor
    return math.sqrt(k / (1 + k)) * los + math.sqrt(1 / (1 + k)) * scatter


def toa_crb_seconds(m: ToaModel) -> float:
    return 1.0 / (2.0 * math.sqrt(2.0) * math.pi * m.beta_hz * math.sqrt(m.snr))


def sigma_t_from_toa(m: ToaModel, multipath_inflation: float = 1.0) -> float:
    """Timing std for the localization engine.

    ``multipath_inflation`` is a heuristic knob (>= 1) for channels with a
    weak line-of-sight component; it has no closed form behind it.
    """
    if multipath_inflation < 1.0:
        raise ValueError("multipath inflation must be >= 1")
    return toa_crb_seconds(m) * multipath_inflation


def effective_bandwidth(freqs: np.ndarray, power: np.ndarray) -> float:
    """RMS bandwidth sqrt(int f^2 |S|^2 df / int |S|^2 df), trapezoidal rule.

    ``freqs`` must be a uniform grid.  A single non-zero sample is treated as
    a point mass at that frequency.
    """
    freqs = np.asarray(freqs, dtype=float)
    power = np.asarray(power, dtype=float)
    if freqs.shape != power.shape or freqs.ndim != 1 or freqs.size < 3:
        raise ValueError("need matching 1-D frequency and power arrays of length >= 3")
    if np.any(power < 0):
        raise ValueError("power spectrum must be non-negative")
    steps = np.diff(freqs)
    if not np.allclose(steps, steps[0], rtol=1e-9, atol=0.0) or steps[0] <= 0:
        raise ValueError("frequency grid must be uniform and increasing")
    nz = np.flatnonzero(power)
    if nz.size == 0:
        raise ValueError("spectrum has zero total energy")
    if nz.size == 1:
        return float(abs(freqs[nz[0]]))
    zeroth = np.trapezoid(power, freqs)
    second = np.trapezoid(freqs**2 * power, freqs)
    return float(math.sqrt(second / zeroth))
