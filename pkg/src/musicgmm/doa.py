"""Subspace direction-of-arrival estimation on a ULA (MUSIC, LS-ESPRIT)."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .channel_model import ArrayGeometry, steering_matrix
from .numerics import NumericalError, hermitian_eig

FIELD_OF_VIEW = (-60.0, 60.0)


@dataclass(frozen=True, eq=False)
class SteeringGrid:
    """Uniform angle grid with cached steering vectors (columns of ``vectors``).

    Doubles as the OMP dictionary.
    """

    angles: np.ndarray  # degrees, ascending
    vectors: np.ndarray  # M x G
    geometry: ArrayGeometry

    @classmethod
    def uniform(cls, geometry: ArrayGeometry, n_points: int | None = None,
                multiplier: int = 16, span: tuple[float, float] = FIELD_OF_VIEW) -> SteeringGrid:
        G = multiplier * geometry.M if n_points is None else n_points
        if G < 2:
            raise ValueError("grid needs at least two points")
        angles = np.linspace(span[0], span[1], G)
        return cls(angles, steering_matrix(angles, geometry), geometry)

    @property
    def size(self) -> int:
        return self.angles.size

    @property
    def step(self) -> float:
        return float(self.angles[1] - self.angles[0])

    @property
    def grid_id(self) -> str:
        return f"ula-u{self.size}[{self.angles[0]:g},{self.angles[-1]:g}]"

    def nearest(self, theta: float) -> int:
        return int(np.argmin(np.abs(self.angles - theta)))


@dataclass(frozen=True, eq=False)
class MusicSpectrum:
    grid: SteeringGrid
    values: np.ndarray

    @property
    def argmax_angle(self) -> float:
        return top_peaks(self, 1)[0]


def sample_covariance(Y) -> np.ndarray:
    """``Y Y^H / T``."""
    Y = np.asarray(Y)
    if Y.ndim == 1:
        Y = Y[:, None]
    if Y.shape[1] < 1:
        raise ValueError("need at least one snapshot")
    return Y @ Y.conj().T / Y.shape[1]


def update_covariance(C, y, alpha: float, beta: float) -> np.ndarray:
    """Recursive covariance tracking ``alpha*C + beta*y y^H``."""
    C = np.asarray(C)
    y = np.asarray(y).reshape(-1)
    if C.shape != (y.size, y.size):
        raise ValueError(f"dimension mismatch: C {C.shape}, y {y.shape}")
    if not (alpha > 0 and beta > 0):
        raise ValueError("alpha and beta must be positive")
    return alpha * C + beta * np.outer(y, y.conj())


def noise_subspace(C, n_signal: int) -> np.ndarray:
    C = np.asarray(C)
    M = C.shape[0]
    if not 1 <= n_signal < M:
        raise ValueError(f"signal dimension must satisfy 1 <= P < M={M}, got {n_signal}")
    _, V = hermitian_eig(C)
    return V[:, : M - n_signal]


def music_spectrum(C, n_signal: int, grid: SteeringGrid) -> MusicSpectrum:
    """MUSIC pseudo-spectrum ``1 / ||E_n^H a(theta)||^2`` over ``grid``."""
    En = noise_subspace(C, n_signal)
    proj = En.conj().T @ grid.vectors
    denom = np.sum(proj.real ** 2 + proj.imag ** 2, axis=0)
    # exact nulls only occur for noiseless inputs on grid points
    denom = np.maximum(denom, np.finfo(float).tiny)
    return MusicSpectrum(grid, 1.0 / denom)


def top_peaks(spectrum: MusicSpectrum, count: int) -> list[float]:
    """Angles of the ``count`` largest strict local maxima (endpoints allowed).

    If there are fewer local maxima than ``count`` the remainder is filled
    with the largest of the other grid values. Ties go to the smaller angle.
    """
    v = np.asarray(spectrum.values)
    G = v.size
    if count < 1:
        raise ValueError("count must be >= 1")
    if count > G:
        raise ValueError(f"cannot take {count} peaks from a grid of {G} points")
    is_peak = np.ones(G, dtype=bool)
    is_peak[1:] &= v[1:] > v[:-1]
    is_peak[:-1] &= v[:-1] > v[1:]
    # lexsort: last key is primary -> descending value, then ascending index
    order = np.lexsort((np.arange(G), -v))
    peaks = [i for i in order if is_peak[i]][:count]
    if len(peaks) < count:
        taken = set(peaks)
        peaks += [i for i in order if i not in taken][: count - len(peaks)]
    return [float(spectrum.grid.angles[i]) for i in peaks]


def exchange_matrix(M: int) -> np.ndarray:
    return np.eye(M)[::-1]


def forward_backward(C) -> np.ndarray:
    """Forward-backward average ``(C + J conj(C) J) / 2``."""
    C = np.asarray(C)
    if C.ndim != 2 or C.shape[0] != C.shape[1]:
        raise ValueError(f"expected square matrix, got shape {C.shape}")
    # J conj(C) J just reverses both axes
    return 0.5 * (C + np.conj(C[::-1, ::-1]))


def esprit(C_fb, n_paths: int, geometry: ArrayGeometry) -> list[float]:
    """LS-ESPRIT angles (degrees, ascending) from a (forward-backward) covariance."""
    C_fb = np.asarray(C_fb)
    M = C_fb.shape[0]
    if not 1 <= n_paths < M:
        raise ValueError(f"path count must satisfy 1 <= P < M={M}, got {n_paths}")
    _, V = hermitian_eig(C_fb)
    Es = V[:, M - n_paths:]
    E1, E2 = Es[:-1], Es[1:]
    sv = np.linalg.svd(E1, compute_uv=False)
    if sv[-1] <= 1e-12 * sv[0]:
        raise NumericalError(f"rank-deficient subarray signal subspace (sigma_min={sv[-1]:.3e})")
    Psi = np.linalg.lstsq(E1, E2, rcond=None)[0]
    phases = np.angle(np.linalg.eigvals(Psi))
    s = np.clip(-phases / (2.0 * math.pi * geometry.spacing_ratio), -1.0, 1.0)
    return sorted(float(x) for x in np.degrees(np.arcsin(s)))


def rotation_eigenvalues(C_fb, n_paths: int) -> np.ndarray:
    """Eigenvalues of the ESPRIT rotation operator (exposed for diagnostics)."""
    M = C_fb.shape[0]
    _, V = hermitian_eig(C_fb)
    Es = V[:, M - n_paths:]
    return np.linalg.eigvals(np.linalg.lstsq(Es[:-1], Es[1:], rcond=None)[0])
