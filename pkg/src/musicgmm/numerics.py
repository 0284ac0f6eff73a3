"""Dense Hermitian linear-algebra helpers.

Matrices and vectors are plain ``numpy`` complex128 arrays. Every function
also accepts a stack of matrices (leading batch axes) where that makes sense,
since the mixture code factors all components at once.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg

HERMITIAN_TOL = 1e-10
# relative diagonal loading applied before any factorization
REGULARIZATION = 1e-10


class NumericalError(ArithmeticError):
    """A factorization or solve failed for numerical reasons."""


def _as_square(A) -> np.ndarray:
    A = np.asarray(A)
    if A.ndim < 2 or A.shape[-1] != A.shape[-2]:
        raise ValueError(f"expected square matrix, got shape {A.shape}")
    return A


def check_hermitian(A, tol: float = HERMITIAN_TOL) -> np.ndarray:
    A = _as_square(A)
    asym = np.max(np.abs(A - np.conj(np.swapaxes(A, -1, -2)))) if A.size else 0.0
    if asym > tol:
        raise ValueError(f"matrix is not Hermitian (max |A - A^H| = {asym:.3e})")
    return A


def hermitian_eig(A) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of a Hermitian matrix.

    Returns
    -------
    eigenvalues : ndarray
        Real, ascending.
    eigenvectors : ndarray
        Unitary matrix whose k-th column belongs to ``eigenvalues[k]``.
    """
    A = check_hermitian(A)
    return np.linalg.eigh(A)


def regularize(A) -> np.ndarray:
    """Return ``A + 1e-10 * trace(A)/M * I`` (batched over leading axes)."""
    A = _as_square(A)
    M = A.shape[-1]
    load = REGULARIZATION * np.abs(np.trace(A, axis1=-2, axis2=-1).real) / M
    out = np.array(A, dtype=np.complex128, copy=True)
    idx = np.arange(M)
    out[..., idx, idx] += np.asarray(load)[..., None]
    return out


def _smallest_pivot(A: np.ndarray) -> float:
    _, d, _ = scipy.linalg.ldl(A, lower=True, hermitian=True)
    return float(np.min(np.linalg.eigvalsh(d)))


def cholesky_hpd(A) -> np.ndarray:
    """Lower Cholesky factor of the regularized Hermitian PD matrix ``A``.

    Raises :class:`NumericalError` naming the smallest LDL pivot when ``A``
    is not positive definite.
    """
    A = regularize(check_hermitian(A))
    try:
        return np.linalg.cholesky(A)
    except np.linalg.LinAlgError:
        flat = A.reshape(-1, A.shape[-2], A.shape[-1])
        pivots = []
        for k, Ak in enumerate(flat):
            try:
                np.linalg.cholesky(Ak)
            except np.linalg.LinAlgError:
                pivots.append((k, _smallest_pivot(Ak)))
        k, piv = min(pivots, key=lambda kp: kp[1])
        where = f" (batch index {k})" if flat.shape[0] > 1 else ""
        raise NumericalError(
            f"matrix is not positive definite{where}: smallest pivot {piv:.6e}"
        ) from None


def solve_hpd(A, B) -> np.ndarray:
    """Solve ``A X = B`` for Hermitian positive-definite ``A``."""
    A = np.asarray(A)
    B = np.asarray(B)
    if B.shape[0] != A.shape[-1]:
        raise ValueError(f"shape mismatch: A {A.shape}, B {B.shape}")
    L = cholesky_hpd(A)
    return scipy.linalg.cho_solve((L, True), B)


def logdet_hpd(A) -> float | np.ndarray:
    """Log-determinant of a Hermitian positive-definite matrix (or stack)."""
    L = cholesky_hpd(A)
    diag = np.diagonal(L, axis1=-2, axis2=-1).real
    out = 2.0 * np.sum(np.log(diag), axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def inverse_cholesky(A) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(Linv, logdet)`` with ``Linv = L^{-1}`` for ``A = L L^H``.

    ``x^H A^{-1} x == ||Linv @ x||^2``. Works on stacks of matrices.
    """
    L = cholesky_hpd(A)
    M = L.shape[-1]
    eye = np.eye(M, dtype=np.complex128)
    if L.ndim == 2:
        Linv = scipy.linalg.solve_triangular(L, eye, lower=True)
    else:
        Linv = np.stack([scipy.linalg.solve_triangular(Lk, eye, lower=True) for Lk in L])
    logdet = 2.0 * np.sum(np.log(np.diagonal(L, axis1=-2, axis2=-1).real), axis=-1)
    return Linv, logdet


def psd_sqrt(A) -> np.ndarray:
    """Hermitian square root factor ``V diag(sqrt(max(w, 0)))`` of a PSD matrix.

    Negative eigenvalues (quadrature/rounding noise) are clamped to zero.
    Batched over leading axes.
    """
    A = np.asarray(A)
    w, V = np.linalg.eigh(A)
    return V * np.sqrt(np.clip(w, 0.0, None))[..., None, :]
