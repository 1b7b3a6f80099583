"""Planar TDoA localization: geometry, Fisher information and position bounds.

Range-difference convention: ``phi_n`` (n = 2..N) is measured in meters with
mean ``d_n - d_1`` and variance ``2 (c sigma_t)^2``.  With that convention the
Fisher matrix is

    J = 1/(2 c^2 sigma_t^2) * sum_n g_n g_n^T,   g_n = (cos t_n - cos t_1, sin t_n - sin t_1)

and the position covariance bound is ``J^-1``.  Correlation between the
``phi_n`` through the shared reference station is ignored.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

C_LIGHT = 299_792_458.0
MIN_SEPARATION = 1e-6
COND_LIMIT = 1e12
SCALE_FOR_EPSILON = 3.0


class GeometryError(ValueError):
    """Degenerate or invalid station/point geometry."""


class EstimationFailed(RuntimeError):
    pass


def _point(p) -> np.ndarray:
    arr = np.asarray(p, dtype=float).reshape(-1)
    if arr.shape != (2,) or not np.all(np.isfinite(arr)):
        raise ValueError(f"expected a finite planar point, got {p!r}")
    return arr


@dataclass(frozen=True, eq=False)
class Scenario:
    """Reference stations, claimed decryptor location and timing noise.

    ``rs_positions[0]`` is the TDoA reference station.  ``multipath_inflation``
    multiplies ``sigma_t``; ``processing_delay_s`` is a constant range bias
    (``c * delay``) added to every ``phi_n`` by a delaying device and removed
    before verification.
    """

    rs_positions: np.ndarray
    claim: np.ndarray
    sigma_t: float
    p_c: float = 0.99
    t_d: float = 0.0
    seed: int = 0
    multipath_inflation: float = 1.0
    processing_delay_s: float = 0.0

    def __post_init__(self) -> None:
        rs = np.array(self.rs_positions, dtype=float)
        if rs.ndim != 2 or rs.shape[1] != 2 or rs.shape[0] < 2:
            raise ValueError("need at least two planar reference stations")
        if not np.all(np.isfinite(rs)):
            raise ValueError("station coordinates must be finite")
        claim = _point(self.claim)
        if not self.sigma_t >= 0 or not math.isfinite(self.sigma_t):
            raise ValueError("sigma_t must be finite and non-negative")
        if not 0.0 < self.p_c < 1.0:
            raise ValueError("p_c must lie strictly between 0 and 1")
        if self.multipath_inflation < 1.0:
            raise ValueError("multipath inflation must be >= 1")
        if np.min(np.hypot(*(rs - claim).T)) < MIN_SEPARATION:
            raise GeometryError("claimed location coincides with a reference station")
        rs.setflags(write=False)
        claim.setflags(write=False)
        object.__setattr__(self, "rs_positions", rs)
        object.__setattr__(self, "claim", claim)
        object.__setattr__(self, "seed", int(self.seed))

    @classmethod
    def square(
        cls,
        half_side: float,
        c_sigma_t_m: float,
        center=(0.0, 0.0),
        **kwargs,
    ) -> "Scenario":
        """Four stations on the corners of a square, station 1 at (+h, +h)."""
        cx, cy = _point(center)
        h = half_side
        rs = np.array([[h, h], [-h, h], [-h, -h], [h, -h]]) + [cx, cy]
        kwargs.setdefault("claim", (cx, cy))
        return cls(rs_positions=rs, sigma_t=c_sigma_t_m / C_LIGHT, **kwargs)

    @property
    def n_rs(self) -> int:
        return self.rs_positions.shape[0]

    @property
    def range_sigma(self) -> float:
        """Effective c * sigma_t in meters."""
        return C_LIGHT * self.sigma_t * self.multipath_inflation

    @property
    def tdoa_variance(self) -> float:
        """Variance of each phi_n in m^2."""
        return 2.0 * self.range_sigma**2

    def with_(self, **changes) -> "Scenario":
        return replace(self, **changes)


@dataclass(frozen=True, eq=False)
class TdoaObservation:
    phi: np.ndarray

    def __post_init__(self) -> None:
        phi = np.array(self.phi, dtype=float).reshape(-1)
        if not np.all(np.isfinite(phi)):
            raise ValueError("observation entries must be finite")
        phi.setflags(write=False)
        object.__setattr__(self, "phi", phi)


@dataclass(frozen=True, eq=False)
class FisherMatrix:
    matrix: np.ndarray
    singular: bool = False

    @property
    def condition(self) -> float:
        lo, hi = np.linalg.eigvalsh(self.matrix)
        return math.inf if lo <= 0 else hi / lo


@dataclass(frozen=True)
class PositionCovariance:
    sigma_x: float
    sigma_y: float
    sigma_xy: float
    rho: float

    @classmethod
    def from_matrix(cls, v: np.ndarray) -> "PositionCovariance":
        v = np.asarray(v, dtype=float)
        if abs(v[0, 1] - v[1, 0]) > 1e-12 * max(1.0, abs(v[0, 1])):
            raise ValueError("covariance must be symmetric")
        if v[0, 0] <= 0 or v[1, 1] <= 0 or v[0, 0] * v[1, 1] - v[0, 1] ** 2 <= 0:
            raise GeometryError("covariance is not positive definite")
        sx, sy = math.sqrt(v[0, 0]), math.sqrt(v[1, 1])
        return cls(sx, sy, float(v[0, 1]), float(v[0, 1]) / (sx * sy))

    @property
    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.sigma_x**2, self.sigma_xy], [self.sigma_xy, self.sigma_y**2]]
        )

    @property
    def drms(self) -> float:
        return math.sqrt(self.sigma_x**2 + self.sigma_y**2)


@dataclass(frozen=True)
class ErrorEllipse:
    center: tuple[float, float]
    semi_major: float
    semi_minor: float
    orientation_rad: float
    scale: float = 1.0

    @property
    def coverage(self) -> float:
        """Probability mass of a bivariate Gaussian inside the ellipse."""
        return -math.expm1(-self.scale**2 / 2.0)


def _unit_vectors(points: np.ndarray, rs: np.ndarray):
    """Distances and direction cosines from ``points`` (..., 2) to every station."""
    diff = rs - points[..., None, :]
    d = np.hypot(diff[..., 0], diff[..., 1])
    return d, diff[..., 0], diff[..., 1]


def geometry(point, scenario: Scenario) -> tuple[np.ndarray, np.ndarray]:
    """Distances ``d_n`` and bearings ``theta_n`` from ``point`` to each station."""
    p = _point(point)
    d, dx, dy = _unit_vectors(p, scenario.rs_positions)
    if np.min(d) < MIN_SEPARATION:
        raise GeometryError(f"point {p.tolist()} coincides with a reference station")
    return d, np.arctan2(dy, dx)


def expected_phi(points, scenario: Scenario) -> np.ndarray:
    """Noise-free range differences d_n - d_1 for one point or a batch."""
    d, _, _ = _unit_vectors(np.asarray(points, dtype=float), scenario.rs_positions)
    return d[..., 1:] - d[..., :1]


def sample_tdoa_batch(
    true_pos,
    scenario: Scenario,
    rng: np.random.Generator,
    size: int,
    delay_s: float = 0.0,
) -> np.ndarray:
    """``size`` noisy observations as an array of shape (size, N-1)."""
    geometry(true_pos, scenario)
    mean = expected_phi(_point(true_pos), scenario) + C_LIGHT * delay_s
    noise = rng.standard_normal((size, scenario.n_rs - 1))
    return mean + math.sqrt(scenario.tdoa_variance) * noise


def sample_tdoa(
    true_pos, scenario: Scenario, rng: np.random.Generator, delay_s: float = 0.0
) -> TdoaObservation:
    return TdoaObservation(sample_tdoa_batch(true_pos, scenario, rng, 1, delay_s)[0])


def neg_log_likelihood(obs: TdoaObservation, candidate, scenario: Scenario) -> float:
    """Sum of (phi_n - (d_n - d_1))^2 / (4 c^2 sigma_t^2), constants dropped."""
    geometry(candidate, scenario)
    resid = obs.phi - expected_phi(_point(candidate), scenario)
    return float(np.sum(resid**2) / (2.0 * scenario.tdoa_variance))


def _fisher_entries(cos: np.ndarray, sin: np.ndarray, prefactor: float):
    gc = cos[..., 1:] - cos[..., :1]
    gs = sin[..., 1:] - sin[..., :1]
    return (
        prefactor * np.sum(gc * gc, axis=-1),
        prefactor * np.sum(gs * gs, axis=-1),
        prefactor * np.sum(gs * gc, axis=-1),
    )


def fisher_matrix(point, scenario: Scenario) -> FisherMatrix:
    if scenario.sigma_t <= 0:
        raise ValueError("Fisher information needs sigma_t > 0")
    d, theta = geometry(point, scenario)
    j11, j22, j12 = _fisher_entries(
        np.cos(theta), np.sin(theta), 1.0 / scenario.tdoa_variance
    )
    j = np.array([[j11, j12], [j12, j22]], dtype=float)
    return FisherMatrix(j, singular=not _invertible(j11, j22, j12))


def _eig2(j11, j22, j12):
    mid = (j11 + j22) / 2.0
    rad = np.hypot((j11 - j22) / 2.0, j12)
    return mid - rad, mid + rad


def _invertible(j11, j22, j12):
    lo, hi = _eig2(j11, j22, j12)
    with np.errstate(divide="ignore", invalid="ignore"):
        return (lo > 0) & (hi < COND_LIMIT * lo)


def position_covariance(j: FisherMatrix) -> PositionCovariance:
    m = j.matrix
    j11, j22, j12 = float(m[0, 0]), float(m[1, 1]), float(m[0, 1])
    if not _invertible(j11, j22, j12):
        raise GeometryError("Fisher matrix is singular; geometry is degenerate")
    det = j11 * j22 - j12 * j12
    return PositionCovariance.from_matrix(np.array([[j22, -j12], [-j12, j11]]) / det)


def position_pdf(est, claim, cov: PositionCovariance) -> float:
    """Bivariate Gaussian density of the estimate around the claim (1/m^2)."""
    rho = cov.rho
    if abs(rho) >= 1.0:
        raise ValueError("correlation coefficient must satisfy |rho| < 1")
    dx, dy = _point(est) - _point(claim)
    sx, sy = cov.sigma_x, cov.sigma_y
    quad = dx * dx / sx**2 + dy * dy / sy**2 - 2.0 * rho * dx * dy / (sx * sy)
    norm = 1.0 / (2.0 * math.pi * math.sqrt(1.0 - rho * rho) * sx * sy)
    return norm * math.exp(-quad / (2.0 * (1.0 - rho * rho)))


def error_ellipse(
    cov: PositionCovariance, scale: float = SCALE_FOR_EPSILON, center=(0.0, 0.0)
) -> ErrorEllipse:
    """Axes ``scale * sqrt(eigenvalues)``; orientation of the major axis in [0, pi)."""
    if scale <= 0:
        raise ValueError("scale must be positive")
    vals, vecs = np.linalg.eigh(cov.matrix)
    if vals[0] <= 0:
        raise GeometryError("covariance is not positive definite")
    major = vecs[:, 1]
    angle = math.atan2(major[1], major[0]) % math.pi
    if angle >= math.pi:
        angle = 0.0
    c = _point(center)
    return ErrorEllipse(
        (float(c[0]), float(c[1])),
        scale * math.sqrt(vals[1]),
        scale * math.sqrt(vals[0]),
        angle,
        scale,
    )


def mahalanobis(est, claim, cov: PositionCovariance) -> float:
    delta = _point(est) - _point(claim)
    return float(math.sqrt(max(delta @ np.linalg.solve(cov.matrix, delta), 0.0)))


@dataclass(frozen=True)
class GridRegion:
    x_min: float
    x_max: float
    y_min: float
    y_max: float
    nx: int
    ny: int

    def __post_init__(self) -> None:
        if self.nx < 1 or self.ny < 1:
            raise ValueError("grid needs at least one point per axis")
        if self.x_max < self.x_min or self.y_max < self.y_min:
            raise ValueError("grid bounds are inverted")

    @property
    def xs(self) -> np.ndarray:
        return np.linspace(self.x_min, self.x_max, self.nx)

    @property
    def ys(self) -> np.ndarray:
        return np.linspace(self.y_min, self.y_max, self.ny)


@dataclass(frozen=True, eq=False)
class CrbGrid:
    """Per-point bounds, arrays of shape (ny, nx); NaN marks unavailable points."""

    xs: np.ndarray
    ys: np.ndarray
    drms: np.ndarray
    sigma_x: np.ndarray
    sigma_y: np.ndarray
    rho: np.ndarray

    @property
    def available(self) -> np.ndarray:
        return np.isfinite(self.drms)


def _crb_rows(ys: np.ndarray, xs: np.ndarray, scenario: Scenario):
    pts = np.stack(np.meshgrid(xs, ys), axis=-1)
    d, dx, dy = _unit_vectors(pts, scenario.rs_positions)
    with np.errstate(divide="ignore", invalid="ignore"):
        j11, j22, j12 = _fisher_entries(dx / d, dy / d, 1.0 / scenario.tdoa_variance)
        ok = _invertible(j11, j22, j12) & (np.min(d, axis=-1) >= MIN_SEPARATION)
        det = j11 * j22 - j12 * j12
        vxx, vyy, vxy = j22 / det, j11 / det, -j12 / det
        sx, sy = np.sqrt(vxx), np.sqrt(vyy)
        out = (np.sqrt(vxx + vyy), sx, sy, vxy / (sx * sy))
    return tuple(np.where(ok, a, np.nan) for a in out)


def crb_grid(region: GridRegion, scenario: Scenario, threads: int = 1) -> CrbGrid:
    """drms = sqrt(sigma_x^2 + sigma_y^2) of the TDoA bound at every grid point.

    Rows are split across ``threads`` workers; every point is computed
    independently so the result does not depend on the split.
    """
    if scenario.sigma_t <= 0:
        raise ValueError("CRB needs sigma_t > 0")
    xs, ys = region.xs, region.ys
    threads = max(1, min(int(threads), len(ys)))
    chunks = np.array_split(ys, threads)
    if threads == 1:
        parts = [_crb_rows(ys, xs, scenario)]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda c: _crb_rows(c, xs, scenario), chunks))
    cols = [np.concatenate([p[i] for p in parts], axis=0) for i in range(4)]
    return CrbGrid(xs, ys, *cols)


# --- estimation ------------------------------------------------------------


def _cost(phi: np.ndarray, pos: np.ndarray, rs: np.ndarray) -> np.ndarray:
    d, _, _ = _unit_vectors(pos, rs)
    r = phi - (d[:, 1:] - d[:, :1])
    return np.sum(r * r, axis=1)


def ml_estimate_batch(
    phi: np.ndarray,
    scenario: Scenario,
    init,
    max_iter: int = 100,
    tol: float = 1e-6,
    max_halvings: int = 40,
) -> tuple[np.ndarray, np.ndarray]:
    """Damped Gauss-Newton least squares for a batch of observations.

    Returns ``(estimates, failed)`` with shapes (T, 2) and (T,).  Each row
    follows its own trajectory; the batch only shares the Python loop.
    A row fails when its step norm grows for 10 successive iterations or
    the normal equations become singular.
    """
    phi = np.atleast_2d(np.asarray(phi, dtype=float))
    rs = scenario.rs_positions
    if phi.shape[1] != scenario.n_rs - 1:
        raise ValueError("observation length does not match the station count")
    if scenario.n_rs < 3:
        raise GeometryError("position estimation needs at least three stations")
    t = phi.shape[0]
    pos = np.tile(_point(init), (t, 1))
    done = np.zeros(t, dtype=bool)
    failed = np.zeros(t, dtype=bool)
    last_step = np.full(t, np.inf)
    growth = np.zeros(t, dtype=int)

    for _ in range(max_iter):
        act = ~(done | failed)
        if not act.any():
            break
        p = pos[act]
        d, dx, dy = _unit_vectors(p, rs)
        d = np.maximum(d, MIN_SEPARATION)
        # d(d_n)/dp = (p - rs_n)/d_n = -(dx, dy)/d
        ux, uy = -dx / d, -dy / d
        gx, gy = ux[:, 1:] - ux[:, :1], uy[:, 1:] - uy[:, :1]
        r = phi[act] - (d[:, 1:] - d[:, :1])
        a11 = np.sum(gx * gx, axis=1)
        a22 = np.sum(gy * gy, axis=1)
        a12 = np.sum(gx * gy, axis=1)
        b1 = np.sum(gx * r, axis=1)
        b2 = np.sum(gy * r, axis=1)
        det = a11 * a22 - a12 * a12
        scale = np.maximum(a11 * a22, 1e-300)
        singular = det <= 1e-12 * scale
        with np.errstate(divide="ignore", invalid="ignore"):
            step = np.stack([(a22 * b1 - a12 * b2) / det, (a11 * b2 - a12 * b1) / det], 1)
        step[singular] = 0.0

        cost0 = np.sum(r * r, axis=1)
        lam = np.ones(len(p))
        trial = p + step
        cost1 = _cost(phi[act], trial, rs)
        worse = (cost1 > cost0) & ~singular
        for _ in range(max_halvings):
            if not worse.any():
                break
            lam[worse] *= 0.5
            trial[worse] = p[worse] + lam[worse, None] * step[worse]
            cost1[worse] = _cost(phi[act][worse], trial[worse], rs)
            worse = worse & (cost1 > cost0)
        # still worse after all halvings: already at a numerical minimum
        trial[worse] = p[worse]
        taken = np.hypot(*(trial - p).T)

        idx = np.flatnonzero(act)
        pos[idx] = trial
        grew = taken > last_step[idx]
        growth[idx] = np.where(grew, growth[idx] + 1, 0)
        last_step[idx] = taken
        failed[idx] |= singular | (growth[idx] >= 10) | ~np.all(np.isfinite(trial), axis=1)
        done[idx] |= (taken < tol) & ~failed[idx]
    return pos, failed


def ml_estimate(obs: TdoaObservation, scenario: Scenario, init) -> np.ndarray:
    """Maximum-likelihood position from one observation, started at ``init``."""
    est, failed = ml_estimate_batch(obs.phi[None, :], scenario, init)
    if failed[0]:
        raise EstimationFailed("Gauss-Newton iteration diverged or became singular")
    return est[0]


def square_drms(c_sigma_t_m: float) -> float:
    """Closed-form drms at the centre of a four-station square (far-field value)."""
    # V = (2 c^2 sigma_t^2 / 12) [[4, -2], [-2, 4]], trace = (4/3) c^2 sigma_t^2
    return c_sigma_t_m * math.sqrt(4.0 / 3.0)


def rotate(points: Sequence, angle: float) -> np.ndarray:
    """Rotate row-vector points counter-clockwise about the origin."""
    c, s = math.cos(angle), math.sin(angle)
    return np.asarray(points, dtype=float) @ np.array([[c, s], [-s, c]])
