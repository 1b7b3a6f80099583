"""Location verification decisions and spoofing Monte Carlo.

The default rule estimates the position from the timings and accepts when
the Mahalanobis distance from the claim, under the Fisher bound at the
claim, is inside the chi-square(2) quantile for ``p_c``.  The residual rule
instead tests the raw timing residual at the claim against chi-square(N-1).
"""

from __future__ import annotations

import enum
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import stats

from .localization import (
    C_LIGHT,
    GeometryError,
    Scenario,
    TdoaObservation,
    expected_phi,
    fisher_matrix,
    ml_estimate_batch,
    position_covariance,
    sample_tdoa_batch,
)
from .rng import substream

CHUNK = 1024
MIN_STATIONS = 4


class Method(enum.Enum):
    REGION = "region"
    RESIDUAL = "residual"


@dataclass(frozen=True, eq=False)
class Verdict:
    accepted: bool
    mahalanobis: float
    threshold: float
    estimate: np.ndarray | None = None
    method: Method = Method.REGION
    reason: str | None = None

    def __post_init__(self) -> None:
        if self.accepted != (self.mahalanobis <= self.threshold):
            raise ValueError("verdict inconsistent with its own threshold")


def region_threshold(p_c: float) -> float:
    """Mahalanobis radius enclosing probability ``p_c`` of a 2-D Gaussian."""
    return math.sqrt(-2.0 * math.log1p(-p_c))


def residual_threshold(p_c: float, dof: int) -> float:
    return math.sqrt(stats.chi2.ppf(p_c, dof))


def _statistics(
    phi: np.ndarray, scenario: Scenario, method: Method
) -> tuple[np.ndarray, np.ndarray | None]:
    """Per-row test statistic (inf on estimation failure) and estimates."""
    phi = phi - C_LIGHT * scenario.processing_delay_s
    claim = scenario.claim
    if method is Method.RESIDUAL:
        resid = phi - expected_phi(claim, scenario)
        return np.sqrt(np.sum(resid**2, axis=1) / scenario.tdoa_variance), None
    cov = position_covariance(fisher_matrix(claim, scenario))
    est, failed = ml_estimate_batch(phi, scenario, claim)
    delta = est - claim
    vinv = np.linalg.inv(cov.matrix)
    with np.errstate(invalid="ignore", over="ignore"):
        m2 = np.einsum("ti,ij,tj->t", delta, vinv, delta)
    stat = np.sqrt(np.maximum(m2, 0.0))
    stat[failed | ~np.isfinite(stat)] = np.inf
    return stat, est


def threshold_for(scenario: Scenario, method: Method, p_c: float | None = None) -> float:
    p = scenario.p_c if p_c is None else p_c
    if method is Method.RESIDUAL:
        return residual_threshold(p, scenario.n_rs - 1)
    return region_threshold(p)


def verify(
    obs: TdoaObservation,
    scenario: Scenario,
    method: Method = Method.REGION,
    p_c: float | None = None,
) -> Verdict:
    """Accept iff the timings place the device inside the effective region.

    ``p_c`` overrides ``scenario.p_c``.  Degenerate geometry is always a
    rejection, never an exception.
    """
    return verify_many([obs], scenario, method, p_c)[0]


def verify_many(
    observations: Sequence[TdoaObservation],
    scenario: Scenario,
    method: Method = Method.REGION,
    p_c: float | None = None,
) -> list[Verdict]:
    """:func:`verify` over several observations in one batched fit."""
    threshold = threshold_for(scenario, method, p_c)
    for obs in observations:
        if obs.phi.shape != (scenario.n_rs - 1,):
            raise ValueError("observation length does not match the station count")
    if not observations:
        return []
    if scenario.n_rs < MIN_STATIONS:
        reason = f"verification needs at least {MIN_STATIONS} reference stations"
        return [Verdict(False, math.inf, threshold, None, method, reason) for _ in observations]
    phi = np.stack([obs.phi for obs in observations])
    try:
        stat, est = _statistics(phi, scenario, method)
    except GeometryError as exc:
        reason = f"degenerate geometry: {exc}"
        return [Verdict(False, math.inf, threshold, None, method, reason) for _ in observations]
    out = []
    for i in range(len(observations)):
        m = float(stat[i])
        reason = None
        if not math.isfinite(m):
            reason = "position estimation failed"
        elif m > threshold:
            reason = "outside effective region"
        estimate = None if est is None else est[i]
        out.append(Verdict(m <= threshold, m, threshold, estimate, method, reason))
    return out


def accept_batch(
    phi: np.ndarray, scenario: Scenario, method: Method = Method.REGION
) -> np.ndarray:
    """Vectorised ``verify(...).accepted`` over rows of ``phi``."""
    threshold = threshold_for(scenario, method)
    if scenario.n_rs < MIN_STATIONS:
        return np.zeros(len(np.atleast_2d(phi)), dtype=bool)
    try:
        stat, _ = _statistics(np.atleast_2d(phi), scenario, method)
    except GeometryError:
        return np.zeros(len(np.atleast_2d(phi)), dtype=bool)
    return stat <= threshold


@dataclass(frozen=True, eq=False)
class SpoofCurve:
    offsets: np.ndarray
    pass_rate: np.ndarray
    trials: int
    seed: int
    n_directions: int = 1

    def __post_init__(self) -> None:
        if len(self.offsets) != len(self.pass_rate):
            raise ValueError("offsets and pass rates differ in length")
        if np.any((self.pass_rate < 0) | (self.pass_rate > 1)):
            raise ValueError("pass rates must lie in [0, 1]")

    def standard_errors(self) -> np.ndarray:
        p = self.pass_rate
        return np.sqrt(np.maximum(p * (1 - p), 1e-12) / self.trials)


def compass_directions(n: int = 8) -> np.ndarray:
    ang = 2 * np.pi * np.arange(n) / n
    return np.stack([np.cos(ang), np.sin(ang)], axis=1)


def _split(total: int, parts: int) -> list[int]:
    base, extra = divmod(total, parts)
    return [base + (1 if i < extra else 0) for i in range(parts)]


def spoof_sweep(
    scenario: Scenario,
    offsets: Sequence[float],
    direction=None,
    trials: int = 10_000,
    seed: int | None = None,
    method: Method = Method.REGION,
    threads: int = 1,
) -> SpoofCurve:
    """Acceptance rate of an emitter displaced from the claim.

    For each offset the true emitter sits at ``claim + offset * direction``
    while the claim stays fixed.  Without ``direction`` the ``trials`` are
    spread over 8 compass directions.  Every (offset, direction, chunk) cell
    has its own counter-keyed random stream, so results are identical for
    any ``threads``.
    """
    if trials < 100:
        raise ValueError("need at least 100 trials")
    seed = scenario.seed if seed is None else int(seed)
    offsets = np.asarray(offsets, dtype=float)
    if direction is None:
        dirs = compass_directions(8)
    else:
        u = np.asarray(direction, dtype=float)
        dirs = (u / np.linalg.norm(u))[None, :]
    per_dir = _split(trials, len(dirs))

    jobs = []
    for i, off in enumerate(offsets):
        for j, u in enumerate(dirs):
            pos = scenario.claim + off * u
            for c, n in enumerate(_split(per_dir[j], max(1, -(-per_dir[j] // CHUNK)))):
                if n:
                    jobs.append((i, j, c, pos, n))

    def run(job) -> tuple[int, int]:
        i, j, c, pos, n = job
        rng = substream(seed, "qlv", i, j, c)
        phi = sample_tdoa_batch(pos, scenario, rng, n)
        return i, int(np.count_nonzero(accept_batch(phi, scenario, method)))

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, jobs))
    else:
        results = [run(job) for job in jobs]
    counts = np.zeros(len(offsets), dtype=np.int64)
    for i, k in results:
        counts[i] += k
    return SpoofCurve(offsets, counts / trials, trials, seed, len(dirs))


def linearized_pass_probability(scenario: Scenario, displacement) -> float:
    """Analytic pass rate for a displaced emitter under the linear Gaussian model.

    The estimate is taken as N(true position, V) so the squared Mahalanobis
    distance from the claim is noncentral chi-square(2).
    """
    cov = position_covariance(fisher_matrix(scenario.claim, scenario))
    delta = np.asarray(displacement, dtype=float)
    nc = float(delta @ np.linalg.solve(cov.matrix, delta))
    t2 = region_threshold(scenario.p_c) ** 2
    if nc == 0:
        return float(stats.chi2.cdf(t2, 2))
    return float(stats.ncx2.cdf(t2, 2, nc))
