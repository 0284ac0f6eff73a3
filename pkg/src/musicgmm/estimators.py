"""Channel estimators: the two-stage MUSIC-GMM estimator and its baselines.

Every estimator maps an :class:`ObservationBlock` (plus trained artifacts)
to an :class:`EstimatorOutput` for the latest snapshot ``h(T)``. Genie
baselines additionally take a :class:`GroundTruth`; nothing else does.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field

import numpy as np

from .channel_model import ArrayGeometry, GroundTruth, ObservationBlock, steering_matrix
from .doa import (SteeringGrid, esprit, forward_backward, music_spectrum, sample_covariance,
                  top_peaks)
from .gmm_cme import (FilterBank, GmmModel, gmm_estimate, label_doa_batch, nlos_noise_scale,
                      precompute_filters)
from .numerics import NumericalError, solve_hpd

S_MAX = 16
P_MAX = 8
GRAM_COND_LIMIT = 1e12

ESTIMATOR_TAGS = (
    "ls", "gmm", "music-s-cov", "genie-omp", "genie-music", "genie-esprit", "genie-lmmse", "music-gmm",
)
GENIE_TAGS = frozenset({"genie-omp", "genie-music", "genie-esprit", "genie-lmmse"})
TRAINED_TAGS = {"gmm": "full", "music-gmm": "nlos", "music-s-cov": "scov"}


@dataclass(frozen=True)
class EstimatorOutput:
    channel_estimate: np.ndarray
    doa_estimate: float | None = None
    tag: str = ""


@dataclass(frozen=True)
class LosPrior:
    power: float  # empirical LoS power E|a(theta)^H h|^2

    def __post_init__(self):
        if not self.power >= 0:
            raise ValueError("LoS power must be nonnegative")


def estimate_plos(channels, grid: SteeringGrid) -> LosPrior:
    """Mean ``|a(theta_l)^H h_l|^2`` with ``theta_l`` the grid label of ``h_l``."""
    H = np.atleast_2d(np.asarray(channels))
    if H.shape[0] == 0:
        raise ValueError("empty training set")
    A = grid.vectors[:, label_doa_batch(H, grid)].T
    proj = np.sum(A.conj() * H, axis=1)
    return LosPrior(float(np.mean(proj.real ** 2 + proj.imag ** 2)))


def los_estimate(y, theta: float, prior: LosPrior, noise_variance: float,
                 geometry: ArrayGeometry | None = None) -> np.ndarray:
    """Scalar-LMMSE-shrunk projection of ``y`` onto ``a(theta)``."""
    if not noise_variance > 0:
        raise ValueError("noise variance must be positive")
    y = np.asarray(y)
    a = steering_matrix([theta], geometry or ArrayGeometry(y.size))[:, 0]
    gain = prior.power / (prior.power + noise_variance)
    return gain * a * (a.conj() @ y)


def music_doa(block: ObservationBlock, grid: SteeringGrid) -> float:
    """Dominant-path DoA: argmax of the P=1 MUSIC spectrum of all T snapshots."""
    return top_peaks(music_spectrum(sample_covariance(block.Y), 1, grid), 1)[0]


def _split_los(block: ObservationBlock, prior: LosPrior, grid: SteeringGrid):
    theta = music_doa(block, grid)
    a = grid.vectors[:, grid.nearest(theta)]
    y = block.latest
    los = los_estimate(y, theta, prior, block.noise_variance, grid.geometry)
    y_nlos = y - a * (a.conj() @ y)
    return theta, los, y_nlos


def music_gmm(block: ObservationBlock, model: GmmModel, prior: LosPrior, grid: SteeringGrid,
              bank: FilterBank | None = None) -> EstimatorOutput:
    """Proposed two-stage estimate: MUSIC LoS stage plus GMM estimate of the projected rest."""
    if model.M != block.Y.shape[0]:
        raise ValueError(f"model trained for M={model.M}, observation has M={block.Y.shape[0]}")
    theta, los, y_nlos = _split_los(block, prior, grid)
    nlos = gmm_estimate(model, y_nlos, block.noise_variance, bank=bank)
    return EstimatorOutput(los + nlos, theta, "music-gmm")


def ls_estimate(block: ObservationBlock) -> EstimatorOutput:
    return EstimatorOutput(block.latest.copy(), None, "ls")


def full_gmm(block: ObservationBlock, model_full: GmmModel,
             bank: FilterBank | None = None) -> EstimatorOutput:
    """GMM estimate of the whole channel, noise covariance ``sigma^2 I``."""
    est = gmm_estimate(model_full, block.latest, block.noise_variance, bank=bank, noise_scale=1.0)
    return EstimatorOutput(est, None, "gmm")


def music_scov(block: ObservationBlock, nlos_cov, prior: LosPrior,
               grid: SteeringGrid) -> EstimatorOutput:
    """MUSIC LoS stage plus LMMSE with the global projected sample covariance."""
    theta, los, y_nlos = _split_los(block, prior, grid)
    M = y_nlos.size
    noise = nlos_noise_scale(M) * block.noise_variance
    nlos = nlos_cov @ solve_hpd(nlos_cov + noise * np.eye(M), y_nlos)
    return EstimatorOutput(los + nlos, theta, "music-s-cov")


# --- sparse recovery ----------------------------------------------------------


def omp_path(y, dictionary: SteeringGrid, S_max: int) -> tuple[list[np.ndarray], list[int]]:
    """Run OMP for ``S_max`` steps, returning the estimate after every step.

    The greedy path is nested, so the k-th estimate equals ``omp(y, D, k)``.
    Raises :class:`NumericalError` if the selected atoms become (numerically)
    rank deficient; the estimates computed so far are attached as
    ``err.partial``.
    """
    y = np.asarray(y)
    D = dictionary.vectors
    M = D.shape[0]
    if not 1 <= S_max <= M:
        raise ValueError(f"sparsity must satisfy 1 <= S <= M={M}, got {S_max}")
    residual = y.copy()
    support: list[int] = []
    estimates: list[np.ndarray] = []
    for _ in range(S_max):
        corr = np.abs(D.conj().T @ residual)
        corr[support] = -1.0
        support.append(int(np.argmax(corr)))
        A = D[:, support]
        sv = np.linalg.svd(A, compute_uv=False)
        if (sv[0] / sv[-1]) ** 2 > GRAM_COND_LIMIT:
            err = NumericalError(f"OMP atoms rank deficient at S={len(support)}")
            err.partial = estimates
            raise err
        coef = np.linalg.lstsq(A, y, rcond=None)[0]
        est = A @ coef
        residual = y - est
        estimates.append(est)
    return estimates, support


def omp(y, dictionary: SteeringGrid, S: int) -> np.ndarray:
    """Orthogonal matching pursuit with ``S`` atoms; returns ``D_S s_hat``."""
    return omp_path(y, dictionary, S)[0][-1]


def genie_omp(block: ObservationBlock, truth: GroundTruth, dictionary: SteeringGrid,
              S_max: int = S_MAX) -> EstimatorOutput:
    """OMP with the sparsity order that minimizes the true error."""
    h = truth.target_channel
    try:
        estimates = omp_path(block.latest, dictionary, min(S_max, block.Y.shape[0]))[0]
    except NumericalError as err:
        estimates = err.partial
        if not estimates:
            raise
    errors = [np.linalg.norm(h - e) for e in estimates]
    return EstimatorOutput(estimates[int(np.argmin(errors))], None, "genie-omp")


# --- parametric -----------------------------------------------------------------


def _drop_nearest_duplicate(angles: list[float]) -> list[float]:
    order = np.argsort(angles)
    srt = np.asarray(angles)[order]
    k = int(np.argmin(np.diff(srt)))
    keep = np.delete(order, k + 1)
    return [angles[i] for i in sorted(keep)]


def parametric_ls(angles, y, geometry: ArrayGeometry | None = None) -> np.ndarray:
    """Orthogonal projection of ``y`` onto the span of ``a(theta_p)``."""
    y = np.asarray(y)
    geometry = geometry or ArrayGeometry(y.size)
    angles = [float(a) for a in angles]
    if not 1 <= len(angles) < geometry.M:
        raise ValueError(f"need 1 <= number of angles < M={geometry.M}")
    for attempt in range(2):
        A = steering_matrix(angles, geometry)
        G = A.conj().T @ A
        if np.linalg.cond(G) <= GRAM_COND_LIMIT:
            return A @ np.linalg.solve(G, A.conj().T @ y)
        if attempt == 0 and len(angles) > 1:
            angles = _drop_nearest_duplicate(angles)
        else:
            break
    raise NumericalError("steering Gram matrix ill-conditioned even after dropping duplicates")


def genie_parametric(block: ObservationBlock, truth: GroundTruth, method: str,
                     grid: SteeringGrid, P_max: int = P_MAX) -> EstimatorOutput:
    """Ray-model LS estimate with the path count that minimizes the true error.

    ``method`` is ``"music"`` (grid peaks of the P-path MUSIC spectrum) or
    ``"esprit"`` (LS-ESPRIT on the forward-backward averaged covariance).
    """
    if method not in ("music", "esprit"):
        raise ValueError(f"unknown method {method!r}")
    C = sample_covariance(block.Y)
    if method == "esprit":
        C = forward_backward(C)
    y, h = block.latest, truth.target_channel
    M = y.size
    best, best_err = None, np.inf
    for P in range(1, min(P_max, M - 1) + 1):
        try:
            if method == "music":
                angles = top_peaks(music_spectrum(C, P, grid), P)
            else:
                angles = esprit(C, P, grid.geometry)
            est = parametric_ls(angles, y, grid.geometry)
        except (NumericalError, np.linalg.LinAlgError):
            continue
        err = np.linalg.norm(h - est)
        if err < best_err:
            best, best_err = est, err
    if best is None:
        raise NumericalError(f"genie-{method}: every path count failed")
    return EstimatorOutput(best, None, f"genie-{method}")


def genie_lmmse(block: ObservationBlock, truth: GroundTruth) -> EstimatorOutput:
    """LMMSE with the true scenario covariance ``C (C + sigma^2 I)^{-1} y``."""
    if truth.scenario is None:
        raise ValueError("genie LMMSE needs the true scenario")
    C = truth.scenario.covariance
    M = C.shape[0]
    est = C @ solve_hpd(C + block.noise_variance * np.eye(M), block.latest)
    return EstimatorOutput(est, None, "genie-lmmse")


# --- dispatch ---------------------------------------------------------------------


@dataclass(eq=False)
class TrainedArtifacts:
    """Everything estimators learn from training data, shared read-only across trials."""

    grid: SteeringGrid
    nlos_model: GmmModel | None = None
    full_model: GmmModel | None = None
    nlos_cov: np.ndarray | None = None
    prior: LosPrior | None = None
    _banks: dict = field(default_factory=dict, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def bank(self, which: str, noise_variance: float) -> FilterBank:
        """Filter bank for ``which`` in {"nlos", "full"}, built once per noise level."""
        key = (which, float(noise_variance))
        with self._lock:
            if key not in self._banks:
                if which == "nlos":
                    self._banks[key] = precompute_filters(self.nlos_model, noise_variance)
                else:
                    self._banks[key] = precompute_filters(self.full_model, noise_variance,
                                                          noise_scale=1.0)
            return self._banks[key]


def run_estimator(tag: str, block: ObservationBlock, artifacts: TrainedArtifacts,
                  truth: GroundTruth | None = None, S_max: int = S_MAX,
                  P_max: int = P_MAX) -> EstimatorOutput:
    """Dispatch by tag; only genie estimators are handed ``truth``."""
    grid = artifacts.grid
    sigma2 = block.noise_variance
    if tag in GENIE_TAGS and truth is None:
        raise ValueError(f"{tag} needs ground truth")
    if tag == "ls":
        return ls_estimate(block)
    if tag == "gmm":
        return full_gmm(block, artifacts.full_model, artifacts.bank("full", sigma2))
    if tag == "music-gmm":
        return music_gmm(block, artifacts.nlos_model, artifacts.prior, grid,
                         artifacts.bank("nlos", sigma2))
    if tag == "music-s-cov":
        return music_scov(block, artifacts.nlos_cov, artifacts.prior, grid)
    if tag == "genie-omp":
        return genie_omp(block, truth, grid, S_max)
    if tag == "genie-music":
        return genie_parametric(block, truth, "music", grid, P_max)
    if tag == "genie-esprit":
        return genie_parametric(block, truth, "esprit", grid, P_max)
    if tag == "genie-lmmse":
        return genie_lmmse(block, truth)
    raise ValueError(f"unknown estimator tag {tag!r}; choose from {', '.join(ESTIMATOR_TAGS)}")
