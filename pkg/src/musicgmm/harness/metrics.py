"""Error metrics aggregated over Monte-Carlo trials."""

from __future__ import annotations

import numpy as np


def nmse(estimates, truths) -> float:
    """Mean of ``||h - h_hat||^2 / M`` over trials.

    Both arguments are ``(N, M)`` arrays (or sequences of length-M vectors).
    """
    est = np.asarray(estimates)
    ref = np.asarray(truths)
    if est.size == 0:
        raise ValueError("nmse of an empty trial set")
    if est.shape != ref.shape:
        raise ValueError(f"shape mismatch: {est.shape} vs {ref.shape}")
    if est.ndim == 1:
        est, ref = est[None], ref[None]
    return float(np.mean(np.abs(ref - est) ** 2))


def rmse_deg(estimates, truths) -> float:
    """Root-mean-square angle error in degrees."""
    est = np.asarray(estimates, dtype=float)
    ref = np.asarray(truths, dtype=float)
    if est.size == 0:
        raise ValueError("rmse of an empty trial set")
    if est.shape != ref.shape:
        raise ValueError(f"shape mismatch: {est.shape} vs {ref.shape}")
    return float(np.sqrt(np.mean((est - ref) ** 2)))
