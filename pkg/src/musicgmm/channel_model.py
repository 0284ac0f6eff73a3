"""Rician spatial channel model for a uniform linear array.

Each coherence block has one line-of-sight ray and a handful of scattering
clusters. The NLoS part is circularly-symmetric Gaussian with a covariance
obtained by integrating the array response against a sum of truncated
Laplace angular power densities.

Angles are in degrees at every public interface and radians internally.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property, lru_cache

import numpy as np
import scipy.special

from .numerics import psd_sqrt

QUADRATURE_POINTS = 4096


@dataclass(frozen=True)
class ArrayGeometry:
    M: int
    spacing_ratio: float = 0.5  # d / lambda

    def __post_init__(self):
        if int(self.M) != self.M or self.M < 2:
            raise ValueError(f"antenna count must be an integer >= 2, got {self.M}")
        if not self.spacing_ratio > 0:
            raise ValueError(f"spacing ratio must be positive, got {self.spacing_ratio}")


@dataclass(frozen=True)
class ClusterParams:
    center_angle: float  # degrees
    power: float
    angular_spread: float  # degrees, std of the Laplace density

    def __post_init__(self):
        if not self.angular_spread > 0:
            raise ValueError("angular spread must be positive")
        if not 0 < self.power <= 1:
            raise ValueError(f"cluster power must lie in (0, 1], got {self.power}")

    @property
    def laplace_scale(self) -> float:
        """Laplace scale parameter in radians (std / sqrt(2))."""
        return math.radians(self.angular_spread) / math.sqrt(2.0)


@dataclass(frozen=True)
class ScenarioConfig:
    """Distribution parameters for :func:`draw_scenario`."""

    M: int = 64
    spacing_ratio: float = 0.5
    n_clusters: int = 3
    angular_spread_deg: float = 2.0
    rician_K_db: float = 0.0
    sector_deg: float = 60.0

    @property
    def geometry(self) -> ArrayGeometry:
        return ArrayGeometry(self.M, self.spacing_ratio)

    @property
    def rician_K(self) -> float:
        return db_to_linear(self.rician_K_db)


@dataclass(frozen=True)
class ChannelScenario:
    los_angle: float  # degrees
    los_phase: float  # radians
    rician_K: float  # linear
    clusters: tuple[ClusterParams, ...]
    geometry: ArrayGeometry

    @property
    def rho(self) -> complex:
        """LoS path gain, sqrt(M) * exp(j phi)."""
        return math.sqrt(self.geometry.M) * complex(math.cos(self.los_phase), math.sin(self.los_phase))

    @cached_property
    def nlos_covariance(self) -> np.ndarray:
        return nlos_covariance(self.clusters, self.geometry)

    @cached_property
    def covariance(self) -> np.ndarray:
        return channel_covariance(self)


@dataclass(frozen=True)
class ObservationBlock:
    """What a (non-genie) estimator gets to see: ``T`` noisy snapshots."""

    Y: np.ndarray  # M x T
    noise_variance: float

    def __post_init__(self):
        if self.Y.ndim != 2 or self.Y.shape[1] < 1:
            raise ValueError(f"Y must be M x T with T >= 1, got {self.Y.shape}")
        if not self.noise_variance > 0:
            raise ValueError("noise variance must be positive")

    @property
    def T(self) -> int:
        return self.Y.shape[1]

    @property
    def latest(self) -> np.ndarray:
        """The most recent observation y(T)."""
        return self.Y[:, -1]


@dataclass(frozen=True)
class GroundTruth:
    """Harness-only side information; only genie estimators receive it."""

    all_channels: np.ndarray  # M x T
    scenario: ChannelScenario | None = field(default=None)

    @property
    def target_channel(self) -> np.ndarray:
        return self.all_channels[:, -1]


def db_to_linear(x_db: float) -> float:
    return math.inf if x_db == math.inf else 10.0 ** (x_db / 10.0)


def _rician_weights(K: float) -> tuple[float, float]:
    """(K/(K+1), 1/(K+1)) with the K = inf limit handled."""
    if math.isinf(K):
        return 1.0, 0.0
    return K / (K + 1.0), 1.0 / (K + 1.0)


def _steering_rad(psi, geometry: ArrayGeometry) -> np.ndarray:
    psi = np.asarray(psi, dtype=float)
    m = np.arange(geometry.M)
    phase = -2j * np.pi * geometry.spacing_ratio * np.multiply.outer(m, np.sin(psi))
    return np.exp(phase) / math.sqrt(geometry.M)


def steering_vector(theta: float, geometry: ArrayGeometry) -> np.ndarray:
    """Unit-norm ULA response ``exp(-j 2 pi (d/lambda) m sin(theta)) / sqrt(M)``."""
    if not np.isfinite(theta):
        raise ValueError("angle must be finite")
    return _steering_rad(math.radians(theta), geometry)


def steering_matrix(thetas, geometry: ArrayGeometry) -> np.ndarray:
    """Stack steering vectors for ``thetas`` (degrees) as the columns of an M x G matrix."""
    return _steering_rad(np.radians(np.atleast_1d(np.asarray(thetas, dtype=float))), geometry)


# --- NLoS angular power density -------------------------------------------


def _truncation_mass(center: np.ndarray, scale: np.ndarray) -> np.ndarray:
    # probability mass of Laplace(center, scale) inside [-pi, pi]
    return 1.0 - 0.5 * np.exp(-(np.pi - center) / scale) - 0.5 * np.exp(-(np.pi + center) / scale)


def nlos_power_density(psi, clusters) -> np.ndarray | float:
    """Sum of truncated, renormalized Laplace densities at ``psi`` (radians)."""
    psi_arr = np.asarray(psi, dtype=float)
    out = np.zeros_like(psi_arr)
    inside = np.abs(psi_arr) <= np.pi
    for c in clusters:
        mu = math.radians(c.center_angle)
        b = c.laplace_scale
        peak = c.power / (2.0 * b * _truncation_mass(np.asarray(mu), np.asarray(b)))
        out += np.where(inside, peak * np.exp(-np.abs(psi_arr - mu) / b), 0.0)
    return float(out) if out.ndim == 0 else out


def _laplace_fourier(centers, scales, powers, orders) -> np.ndarray:
    """Coefficients ``F_m = int_{-pi}^{pi} g(psi) exp(-j m psi) dpsi``.

    ``centers``/``scales``/``powers`` have shape (B, C) (radians), ``orders``
    is the integer vector of m. Result has shape (B, len(orders)). Each
    truncated Laplace term integrates in closed form.
    """
    mu = centers[..., None]
    b = scales[..., None]
    w = -np.asarray(orders, dtype=float)  # exp(j w psi) with w = -m
    sign = np.where(np.asarray(orders) % 2 == 0, 1.0, -1.0)  # exp(+-j m pi)
    e_mu = np.exp(1j * w * mu)
    left = (e_mu - np.exp(-(np.pi + mu) / b) * sign) / (1.0 / b + 1j * w)
    right = (e_mu - np.exp(-(np.pi - mu) / b) * sign) / (1.0 / b - 1j * w)
    norm = 2.0 * b * _truncation_mass(mu, b)
    return np.sum(powers[..., None] * (left + right) / norm, axis=-2)


@lru_cache(maxsize=16)
def _bessel_table(geometry: ArrayGeometry) -> tuple[np.ndarray, np.ndarray]:
    # exp(-j z sin psi) = sum_m J_m(z) exp(-j m psi)   (Jacobi-Anger)
    z = 2.0 * np.pi * geometry.spacing_ratio * np.arange(geometry.M)
    zmax = z[-1]
    m_max = int(math.ceil(zmax + 12.0 * zmax ** (1.0 / 3.0) + 40))
    orders = np.arange(-m_max, m_max + 1)
    return orders, scipy.special.jv(orders[:, None], z[None, :])


def _toeplitz_stack(first_col: np.ndarray) -> np.ndarray:
    """Hermitian Toeplitz matrices from their first columns (shape (..., M))."""
    M = first_col.shape[-1]
    lag = np.arange(M)[:, None] - np.arange(M)[None, :]
    lower = first_col[..., np.abs(lag)]
    return np.where(lag >= 0, lower, np.conj(lower))


def nlos_covariance(clusters, geometry: ArrayGeometry, method: str = "series",
                    n_points: int = QUADRATURE_POINTS) -> np.ndarray:
    """NLoS spatial covariance ``M * int g(psi) a(psi) a(psi)^H dpsi``.

    ``method="series"`` evaluates the integral exactly through the
    Jacobi-Anger expansion and the closed-form Fourier coefficients of the
    truncated Laplace densities. ``method="quadrature"`` uses the composite
    trapezoidal rule on ``n_points`` uniform nodes over [-pi, pi], with each
    cluster's discrete weights renormalized to its power.
    """
    clusters = tuple(clusters)
    if not clusters:
        raise ValueError("need at least one cluster")
    if method == "series":
        orders, table = _bessel_table(geometry)
        centers = np.radians([[c.center_angle for c in clusters]])
        scales = np.array([[c.laplace_scale for c in clusters]])
        powers = np.array([[c.power for c in clusters]])
        first_col = _laplace_fourier(centers, scales, powers, orders) @ table
        return _toeplitz_stack(first_col[0])
    if method == "quadrature":
        psi = np.linspace(-np.pi, np.pi, n_points)
        trap = np.full(n_points, psi[1] - psi[0])
        trap[[0, -1]] *= 0.5
        weights = np.zeros(n_points)
        for c in clusters:
            wc = trap * np.exp(-np.abs(psi - math.radians(c.center_angle)) / c.laplace_scale)
            weights += c.power * wc / wc.sum()
        A = _steering_rad(psi, geometry)
        return geometry.M * (A * weights) @ A.conj().T
    raise ValueError(f"unknown method {method!r}")


def channel_covariance(scenario: ChannelScenario) -> np.ndarray:
    """``K|rho|^2/(K+1) a a^H + C_NLoS/(K+1)``; trace M."""
    w_los, w_nlos = _rician_weights(scenario.rician_K)
    M = scenario.geometry.M
    a = steering_vector(scenario.los_angle, scenario.geometry)
    C = w_los * M * np.outer(a, a.conj())
    if w_nlos > 0:
        C = C + w_nlos * scenario.nlos_covariance
    return C


# --- sampling ---------------------------------------------------------------


def _complex_normal(rng: np.random.Generator, shape) -> np.ndarray:
    # real/imag interleaved so a longer draw extends a shorter one
    z = rng.standard_normal((*shape, 2))
    return (z[..., 0] + 1j * z[..., 1]) / math.sqrt(2.0)


def _snapshot_normal(rng: np.random.Generator, M: int, T: int) -> np.ndarray:
    """M x T standard complex normals; the first t columns do not depend on T."""
    return _complex_normal(rng, (T, M)).T


def draw_scenario(rng: np.random.Generator, config: ScenarioConfig) -> ChannelScenario:
    """Draw LoS angle/phase uniformly and place ``n_clusters`` clusters in the sector.

    Cluster centers are uniform in the sector; powers are uniform on (0, 1)
    and then normalized to sum to one.
    """
    if config.n_clusters < 1:
        raise ValueError(f"cluster count must be >= 1, got {config.n_clusters}")
    s = config.sector_deg
    theta = rng.uniform(-s, s)
    phi = rng.uniform(0.0, 2.0 * np.pi)
    centers = rng.uniform(-s, s, size=config.n_clusters)
    powers = rng.uniform(size=config.n_clusters)
    powers = powers / powers.sum()
    clusters = tuple(
        ClusterParams(float(c), float(p), config.angular_spread_deg) for c, p in zip(centers, powers)
    )
    return ChannelScenario(float(theta), float(phi), config.rician_K, clusters, config.geometry)


def draw_channels(scenario: ChannelScenario, T: int, rng: np.random.Generator) -> np.ndarray:
    """Draw an M x T block of channel snapshots; LoS part fixed across the block."""
    if T < 1:
        raise ValueError("T must be >= 1")
    w_los, w_nlos = _rician_weights(scenario.rician_K)
    geom = scenario.geometry
    los = math.sqrt(w_los) * scenario.rho * steering_vector(scenario.los_angle, geom)
    w = _snapshot_normal(rng, geom.M, T)
    if w_nlos == 0:
        return np.repeat(los[:, None], T, axis=1)
    nlos = psd_sqrt(scenario.nlos_covariance) @ w
    return los[:, None] + math.sqrt(w_nlos) * nlos


def add_noise(H: np.ndarray, noise_variance: float, rng: np.random.Generator
              ) -> tuple[ObservationBlock, GroundTruth]:
    """Return the noisy observation ``Y = H + N`` and the matching ground truth."""
    if not noise_variance > 0:
        raise ValueError("noise variance must be positive")
    H = np.asarray(H)
    if H.ndim == 2:
        N = _snapshot_normal(rng, *H.shape)
    else:
        N = _complex_normal(rng, H.shape)
    N *= math.sqrt(noise_variance)
    return ObservationBlock(H + N, float(noise_variance)), GroundTruth(H)


def draw_training_channels(rng: np.random.Generator, config: ScenarioConfig, L: int,
                           chunk: int = 1024) -> tuple[np.ndarray, np.ndarray]:
    """Draw ``L`` independent scenarios with one channel each (vectorized).

    Returns ``(channels, los_angles)`` with shapes (L, M) and (L,).
    Same distribution as ``draw_channels(draw_scenario(...), 1, ...)``.
    """
    if L < 1:
        raise ValueError("L must be >= 1")
    if config.n_clusters < 1:
        raise ValueError(f"cluster count must be >= 1, got {config.n_clusters}")
    geom = config.geometry
    M, n, s = geom.M, config.n_clusters, config.sector_deg
    w_los, w_nlos = _rician_weights(config.rician_K)
    orders, table = _bessel_table(geom)
    scale = math.radians(config.angular_spread_deg) / math.sqrt(2.0)

    out = np.empty((L, M), dtype=np.complex128)
    angles = np.empty(L)
    for start in range(0, L, chunk):
        B = min(chunk, L - start)
        theta = rng.uniform(-s, s, size=B)
        phi = rng.uniform(0.0, 2.0 * np.pi, size=B)
        centers = rng.uniform(-s, s, size=(B, n))
        powers = rng.uniform(size=(B, n))
        powers /= powers.sum(axis=1, keepdims=True)
        w = _complex_normal(rng, (B, M))

        los = math.sqrt(w_los * M) * np.exp(1j * phi)[:, None] * steering_matrix(theta, geom).T
        h = los
        if w_nlos > 0:
            first_col = _laplace_fourier(np.radians(centers), np.full((B, n), scale), powers, orders) @ table
            roots = psd_sqrt(_toeplitz_stack(first_col))
            h = h + math.sqrt(w_nlos) * np.einsum("bij,bj->bi", roots, w)
        out[start:start + B] = h
        angles[start:start + B] = theta
    return out, angles


__all__ = [
    "ArrayGeometry", "ClusterParams", "ScenarioConfig", "ChannelScenario",
    "ObservationBlock", "GroundTruth", "steering_vector", "steering_matrix",
    "nlos_power_density", "nlos_covariance", "channel_covariance", "draw_scenario",
    "draw_channels", "add_noise", "draw_training_channels", "db_to_linear",
]
