"""Complex Gaussian mixtures and the GMM approximation of the conditional mean.

A mixture is fitted with EM on (projected) channel samples. For a noisy
observation ``y = h + n`` with ``n ~ CN(0, s*sigma2*I)`` the estimate is the
responsibility-weighted sum of per-component LMMSE estimates. Filters only
depend on the noise level, so :func:`precompute_filters` builds them once per
SNR and estimation then costs O(J M^2) per observation.
"""

from __future__ import annotations

import logging
import math
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

from .channel_model import ArrayGeometry, steering_vector
from .doa import SteeringGrid
from .numerics import NumericalError, inverse_cholesky, logdet_hpd, solve_hpd

log = logging.getLogger(__name__)

MODEL_MAGIC = b"MGMMCME\x00"
MODEL_VERSION = 1
_HEADER = struct.Struct("<8sIIIQ32sddQ")


class TrainingError(RuntimeError):
    """EM could not produce a usable mixture."""


class ModelFormatError(ValueError):
    """A persisted model file is malformed or incompatible."""


@dataclass(frozen=True)
class EmConfig:
    max_iterations: int = 200
    tol: float = 1e-6  # relative log-likelihood change
    reg: float | None = None  # diagonal loading, default 1e-6 * M
    init: str = "farthest"
    seed: int = 0
    # responsibilities below this are left out of the M-step sums
    resp_floor: float = 1e-12

    def __post_init__(self):
        if self.max_iterations < 1 or not self.tol > 0:
            raise ValueError("max_iterations and tol must be positive")
        if self.reg is not None and not self.reg > 0:
            raise ValueError("reg must be positive")
        if self.init not in ("farthest", "random"):
            raise ValueError(f"unknown init strategy {self.init!r}")

    def regularization(self, M: int) -> float:
        return 1e-6 * M if self.reg is None else self.reg


@dataclass(frozen=True, eq=False)
class GmmModel:
    weights: np.ndarray  # (J,)
    means: np.ndarray  # (J, M)
    covariances: np.ndarray  # (J, M, M)
    n_samples: int = 0
    grid_id: str = ""
    angular_spread: float = math.nan
    rician_K_db: float = math.nan
    seed: int = 0
    log_likelihood: tuple[float, ...] = field(default=(), repr=False)
    n_reinit: int = 0

    @property
    def J(self) -> int:
        return self.weights.size

    @property
    def M(self) -> int:
        return self.means.shape[1]


@dataclass(frozen=True, eq=False)
class FilterBank:
    """Per-component filters ``W_j = C_j (C_j + s*sigma2*I)^{-1}`` for one noise level."""

    noise_variance: float
    noise_scale: float
    filters: np.ndarray  # (J, M, M)
    whiteners: np.ndarray  # (J, M, M), inverse Cholesky factor of C_j + C_n
    logdets: np.ndarray  # (J,), log det(C_j + C_n)

    @property
    def noise_level(self) -> float:
        return self.noise_scale * self.noise_variance


def nlos_noise_scale(M: int) -> float:
    """Noise power left in an (M-1)-dimensional projection, as a fraction of sigma^2."""
    return (M - 1) / M


# --- training-set construction ----------------------------------------------


def label_doa(h, grid: SteeringGrid) -> float:
    """Grid angle maximizing ``|a(theta)^H h|`` (ties toward the smaller angle)."""
    corr = np.abs(grid.vectors.conj().T @ np.asarray(h))
    return float(grid.angles[int(np.argmax(corr))])


def label_doa_batch(H, grid: SteeringGrid, chunk: int = 4096) -> np.ndarray:
    """Grid indices of :func:`label_doa` for every row of ``H`` (shape (L, M))."""
    H = np.asarray(H)
    A = grid.vectors.conj()
    out = np.empty(H.shape[0], dtype=np.intp)
    for s in range(0, H.shape[0], chunk):
        out[s:s + chunk] = np.argmax(np.abs(H[s:s + chunk] @ A), axis=1)
    return out


def project_nlos(h, theta: float, geometry: ArrayGeometry | None = None) -> np.ndarray:
    """``(I - a a^H) h`` for the steering vector at ``theta``."""
    h = np.asarray(h)
    a = steering_vector(theta, geometry or ArrayGeometry(h.shape[-1]))
    return h - a * (a.conj() @ h)


def build_training_set(channels, grid: SteeringGrid) -> np.ndarray:
    """Project each channel (rows of ``channels``) off its labeled LoS direction."""
    H = np.atleast_2d(np.asarray(channels))
    A = grid.vectors[:, label_doa_batch(H, grid)].T  # (L, M)
    coef = np.sum(A.conj() * H, axis=1)
    return H - A * coef[:, None]


# --- densities ----------------------------------------------------------------


def log_gaussian(x, mu, C) -> float:
    """Log density of ``CN(mu, C)`` at ``x``."""
    d = np.asarray(x) - np.asarray(mu)
    M = d.size
    quad = np.real(np.vdot(d, solve_hpd(C, d)))
    return float(-M * math.log(math.pi) - logdet_hpd(C) - quad)


def _component_log_densities(X, means, whiteners, logdets, chunk: int = 8,
                             row_chunk: int = 1024) -> np.ndarray:
    """``log CN(x_i; mu_j, C_j)`` for rows ``x_i`` given inverse Cholesky factors.

    Returns an (L, J) array. Components are processed in groups so each group
    is one large matrix product; rows are blocked to stay cache resident.
    """
    L, M = X.shape
    J = means.shape[0]
    out = np.empty((L, J))
    const = -M * math.log(math.pi)
    for s in range(0, J, chunk):
        js = range(s, min(s + chunk, J))
        k = len(js)
        W = np.concatenate([whiteners[j].T for j in js], axis=1)  # (M, k*M)
        offs = np.concatenate([means[j] @ whiteners[j].T for j in js])
        for r in range(0, L, row_chunk):
            Z = X[r:r + row_chunk] @ W
            Z -= offs
            Zf = Z.view(np.float64).reshape(Z.shape[0], k, 2 * M)
            out[r:r + row_chunk, s:s + k] = np.einsum("lkm,lkm->lk", Zf, Zf)
        out[:, s:s + k] = const - logdets[s:s + k] - out[:, s:s + k]
    return out


# --- EM -------------------------------------------------------------------------


def _farthest_point_seeds(X: np.ndarray, J: int, rng: np.random.Generator) -> np.ndarray:
    # |x - s|^2 on complex rows equals the distance on [Re, Im] concatenations
    L = X.shape[0]
    sq = np.sum(X.real ** 2 + X.imag ** 2, axis=1)
    seeds = [int(rng.integers(L))]
    dist = np.full(L, np.inf)
    for _ in range(J):
        s = X[seeds[-1]]
        d = sq + sq[seeds[-1]] - 2.0 * (X @ s.conj()).real
        dist = np.minimum(dist, d)
        if len(seeds) < J:
            seeds.append(int(np.argmax(dist)))
    return np.asarray(seeds)


def fit_gmm(samples, J: int, em: EmConfig = EmConfig(), **metadata) -> GmmModel:
    """Fit a J-component circular complex Gaussian mixture with EM.

    Parameters
    ----------
    samples : array_like, shape (L, M)
        Training vectors as rows.
    J : int
        Number of components.
    em : EmConfig
        Iteration budget, tolerance, regularization and initialization.
    **metadata
        Stored on the returned model (``grid_id``, ``angular_spread``,
        ``rician_K_db``).

    Returns
    -------
    GmmModel
        With ``log_likelihood`` holding the total log-likelihood after
        initialization and after every iteration.
    """
    X = np.ascontiguousarray(np.asarray(samples, dtype=np.complex128))
    if X.ndim != 2:
        raise ValueError("samples must be an (L, M) array")
    L, M = X.shape
    if J < 1 or L < J:
        raise ValueError(f"need 1 <= J <= L, got J={J}, L={L}")
    rng = np.random.default_rng(em.seed)
    eps = em.regularization(M)
    eye = np.eye(M)

    global_cov = X.T @ X.conj() / L
    if em.init == "farthest":
        seeds = _farthest_point_seeds(X, J, rng)
    else:
        seeds = rng.choice(L, size=J, replace=False)
    means = X[seeds].copy()
    covs = np.repeat((global_cov + eps * eye)[None], J, axis=0)
    weights = np.full(J, 1.0 / J)

    def e_step():
        Linv, logdet = inverse_cholesky(covs)
        logp = _component_log_densities(X, means, Linv, logdet) + np.log(weights)
        norm = logsumexp(logp, axis=1)
        return np.exp(logp - norm[:, None]), float(norm.sum())

    R, ll = e_step()
    history = [ll]
    n_reinit = 0
    for it in range(em.max_iterations):
        Nk = R.sum(axis=0)
        for j in range(J):
            idx = np.flatnonzero(R[:, j] > em.resp_floor)
            r = R[idx, j]
            nj = r.sum()
            collapsed = Nk[j] / L < 1e-12 or nj <= 0
            if not collapsed:
                mu = r @ X[idx] / nj
                D = X[idx] - mu
                C = (D.T * r) @ D.conj() / nj
                collapsed = np.trace(C).real < 1e-12
            if collapsed:
                n_reinit += 1
                if n_reinit > J:
                    raise TrainingError(
                        f"more than J={J} component collapses (iteration {it}, component {j})"
                    )
                log.warning("EM: component %d collapsed at iteration %d, reinitializing", j, it)
                mu = X[rng.integers(L)].copy()
                C = global_cov
                Nk[j] = L / J
            means[j] = mu
            covs[j] = 0.5 * (C + C.conj().T) + eps * eye
        weights = Nk / Nk.sum()
        R, ll = e_step()
        history.append(ll)
        prev = history[-2]
        if abs(ll - prev) <= em.tol * abs(prev):
            break
    log.info("EM finished after %d iterations, log-likelihood %.6e", len(history) - 1, history[-1])
    return GmmModel(
        weights=weights,
        means=means,
        covariances=covs,
        n_samples=L,
        seed=em.seed,
        log_likelihood=tuple(history),
        n_reinit=n_reinit,
        **metadata,
    )


# --- conditional-mean estimation -----------------------------------------------


def _noise_scale(model: GmmModel, noise_scale: float | None) -> float:
    return nlos_noise_scale(model.M) if noise_scale is None else noise_scale


def precompute_filters(model: GmmModel, noise_variance: float,
                       noise_scale: float | None = None) -> FilterBank:
    """Build the per-component LMMSE filters for one noise variance."""
    if not noise_variance > 0:
        raise ValueError("noise variance must be positive")
    s = _noise_scale(model, noise_scale)
    M = model.M
    A = model.covariances + (s * noise_variance) * np.eye(M)
    whiteners, logdets = inverse_cholesky(A)
    # A^{-1} = Linv^H Linv, so W = C A^{-1}
    Ainv = np.conj(np.swapaxes(whiteners, -1, -2)) @ whiteners
    filters = model.covariances @ Ainv
    return FilterBank(float(noise_variance), s, filters, whiteners, np.asarray(logdets))


def _bank_for(model, noise_variance, bank, noise_scale) -> FilterBank:
    if bank is None:
        return precompute_filters(model, noise_variance, noise_scale)
    if bank.noise_variance != noise_variance:
        raise ValueError(
            f"filter bank built for sigma2={bank.noise_variance}, called with {noise_variance}"
        )
    return bank


def _log_posterior(model: GmmModel, y: np.ndarray, bank: FilterBank) -> np.ndarray:
    Z = np.einsum("jab,jb->ja", bank.whiteners, y[None, :] - model.means)
    q = np.sum(Z.real ** 2 + Z.imag ** 2, axis=1)
    with np.errstate(divide="ignore"):
        return np.log(model.weights) - model.M * math.log(math.pi) - bank.logdets - q


def responsibilities(model: GmmModel, y, noise_variance: float, bank: FilterBank | None = None,
                     noise_scale: float | None = None) -> np.ndarray:
    """Posterior component probabilities ``p(j | y)`` (a probability simplex)."""
    if not noise_variance > 0:
        raise ValueError("noise variance must be positive")
    bank = _bank_for(model, noise_variance, bank, noise_scale)
    lp = _log_posterior(model, np.asarray(y), bank)
    if not np.any(np.isfinite(lp)):
        raise NumericalError("all mixture components have zero density at the observation")
    return np.exp(lp - logsumexp(lp))


def component_lmmse(model: GmmModel, j: int, y, noise_variance: float,
                    bank: FilterBank | None = None, noise_scale: float | None = None) -> np.ndarray:
    """``C_j (C_j + C_n)^{-1} (y - mu_j) + mu_j``."""
    if not 0 <= j < model.J:
        raise IndexError(f"component {j} out of range for J={model.J}")
    if not noise_variance > 0:
        raise ValueError("noise variance must be positive")
    y = np.asarray(y)
    mu = model.means[j]
    if bank is None:
        s = _noise_scale(model, noise_scale)
        C = model.covariances[j]
        return C @ solve_hpd(C + s * noise_variance * np.eye(model.M), y - mu) + mu
    _bank_for(model, noise_variance, bank, noise_scale)
    return bank.filters[j] @ (y - mu) + mu


def gmm_estimate(model: GmmModel, y, noise_variance: float, bank: FilterBank | None = None,
                 noise_scale: float | None = None) -> np.ndarray:
    """Responsibility-weighted combination of the component LMMSE estimates."""
    y = np.asarray(y)
    bank = _bank_for(model, noise_variance, bank, noise_scale)
    resp = responsibilities(model, y, noise_variance, bank)
    D = y[None, :] - model.means
    est = np.einsum("jab,jb->ja", bank.filters, D) + model.means
    return resp @ est


# --- persistence ----------------------------------------------------------------


def save_model(model: GmmModel, path) -> None:
    """Write ``model`` in the versioned little-endian binary format."""
    grid_id = model.grid_id.encode("ascii")
    if len(grid_id) > 32:
        raise ValueError("grid id longer than 32 bytes")
    header = _HEADER.pack(
        MODEL_MAGIC, MODEL_VERSION, model.M, model.J, model.n_samples, grid_id,
        float(model.angular_spread), float(model.rician_K_db), model.seed,
    )
    with open(path, "wb") as f:
        f.write(header)
        f.write(np.ascontiguousarray(model.weights, dtype="<f8").tobytes())
        f.write(np.ascontiguousarray(model.means, dtype="<c16").tobytes())
        f.write(np.ascontiguousarray(model.covariances, dtype="<c16").tobytes())


def load_model(path, expected_M: int | None = None) -> GmmModel:
    """Read a model written by :func:`save_model`.

    Raises :class:`ModelFormatError` on a bad magic/version, a truncated
    file, or an antenna count different from ``expected_M``.
    """
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise ModelFormatError(f"{path}: file too short for header")
    magic, version, M, J, L, grid_id, sigma_as, k_db, seed = _HEADER.unpack_from(data)
    if magic != MODEL_MAGIC:
        raise ModelFormatError(f"{path}: not a GMM model file")
    if version != MODEL_VERSION:
        raise ModelFormatError(f"{path}: unsupported format version {version}")
    if expected_M is not None and M != expected_M:
        raise ModelFormatError(f"{path}: model has M={M}, expected M={expected_M}")
    off = _HEADER.size
    need = off + 8 * J + 16 * J * M + 16 * J * M * M
    if len(data) != need:
        raise ModelFormatError(f"{path}: expected {need} bytes, found {len(data)}")
    weights = np.frombuffer(data, "<f8", J, off).astype(np.float64)
    off += 8 * J
    means = np.frombuffer(data, "<c16", J * M, off).astype(np.complex128).reshape(J, M)
    off += 16 * J * M
    covs = np.frombuffer(data, "<c16", J * M * M, off).astype(np.complex128).reshape(J, M, M)
    return GmmModel(
        weights=weights, means=means, covariances=covs, n_samples=L,
        grid_id=grid_id.rstrip(b"\x00").decode("ascii"),
        angular_spread=sigma_as, rician_K_db=k_db, seed=seed,
    )


def with_metadata(model: GmmModel, **kw) -> GmmModel:
    return replace(model, **kw)
