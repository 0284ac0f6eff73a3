"""Small-size property and oracle checks run by ``musicgmm validate``.

Each check raises ``AssertionError`` with a short diagnostic on failure and
returns a one-line summary otherwise.
"""

from __future__ import annotations

import math
import tempfile
import time
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

from ..channel_model import ArrayGeometry, ScenarioConfig, draw_channels, draw_scenario, \
    draw_training_channels, steering_matrix
from ..doa import SteeringGrid, forward_backward, music_spectrum, top_peaks
from ..estimators import genie_parametric, parametric_ls, run_estimator, _split_los
from ..gmm_cme import EmConfig, GmmModel, component_lmmse, fit_gmm, \
    gmm_estimate, precompute_filters, responsibilities
from ..numerics import hermitian_eig, logdet_hpd, solve_hpd
from .config import ExperimentConfig
from .pipeline import draw_trial, evaluate_point, music_doa_rmse, run_sweep, train_artifacts
from .results import emit_csv

CHECKS = []


def check(fn):
    CHECKS.append(fn)
    return fn


def _random_hermitian(rng, n, psd=False):
    A = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    return A @ A.conj().T + n * np.eye(n) if psd else 0.5 * (A + A.conj().T)


# --- oracles ---------------------------------------------------------------------


def brute_force_conditional_mean(weights, means, covs, y, noise_level, spacing=0.25,
                                 half_width=5.0) -> np.ndarray:
    """``E[h | y]`` for a complex GMM prior and ``y = h + CN(0, noise_level I)``.

    Direct Riemann sum over a tensor grid of the real coordinates of ``h``;
    meant for M <= 2. Independent of the closed-form mixture-of-LMMSE route.
    """
    M = means.shape[1]
    axis = np.arange(-half_width, half_width + spacing / 2, spacing)
    mesh = np.meshgrid(*([axis] * (2 * M)), indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=1)
    H = pts[:, :M] + 1j * pts[:, M:]
    log_prior = []
    for w, mu, C in zip(weights, means, covs):
        D = H - mu
        quad = np.sum((D @ np.linalg.inv(C).T) * D.conj(), axis=1).real
        log_prior.append(math.log(w) - M * math.log(math.pi) - math.log(np.linalg.det(C).real) - quad)
    log_prior = logsumexp(np.stack(log_prior), axis=0)
    log_lik = -np.sum(np.abs(y - H) ** 2, axis=1) / noise_level
    lw = log_prior + log_lik
    w = np.exp(lw - lw.max())
    return (w @ H) / w.sum()


def toy_mixture(rng, M=2, J=2) -> GmmModel:
    means = 0.8 * (rng.standard_normal((J, M)) + 1j * rng.standard_normal((J, M))) / math.sqrt(2)
    covs = []
    for _ in range(J):
        B = (rng.standard_normal((M, M)) + 1j * rng.standard_normal((M, M))) / math.sqrt(2)
        covs.append(0.3 * B @ B.conj().T + 0.3 * np.eye(M))
    w = rng.uniform(0.3, 1.0, J)
    return GmmModel(w / w.sum(), means, np.asarray(covs))


def synthetic_mixture_samples(rng, L=3000, M=4, J=3):
    """Samples from a well-separated full-rank complex mixture."""
    truth = toy_mixture(rng, M, J)
    means = 2.0 * truth.means
    z = rng.choice(J, size=L, p=truth.weights)
    W = (rng.standard_normal((L, M)) + 1j * rng.standard_normal((L, M))) / math.sqrt(2)
    roots = np.linalg.cholesky(truth.covariances)
    return means[z] + np.einsum("nij,nj->ni", roots[z], W)


# --- numerics --------------------------------------------------------------------


@check
def eig_reconstruction(rng):
    worst = 0.0
    for n in (1, 2, 7, 32, 64):
        A = _random_hermitian(rng, n)
        w, V = hermitian_eig(A)
        worst = max(worst, np.linalg.norm(A - (V * w) @ V.conj().T) / np.linalg.norm(A))
    assert worst <= 1e-8, worst
    return f"max relative residual {worst:.1e}"


@check
def solve_and_logdet(rng):
    worst_solve = worst_logdet = 0.0
    for n in (2, 16, 64):
        A = _random_hermitian(rng, n, psd=True)
        x = rng.standard_normal(n) + 1j * rng.standard_normal(n)
        worst_solve = max(worst_solve, np.linalg.norm(solve_hpd(A, A @ x) - x) / np.linalg.norm(x))
        ref = np.sum(np.log(hermitian_eig(A)[0]))
        worst_logdet = max(worst_logdet, abs(logdet_hpd(A) - ref) / abs(ref))
    assert worst_solve <= 1e-8 and worst_logdet <= 1e-8, (worst_solve, worst_logdet)
    return f"solve {worst_solve:.1e}, logdet {worst_logdet:.1e}"


# --- channel model ---------------------------------------------------------------


@check
def channel_normalization(rng):
    cfg = ScenarioConfig(M=32)
    g = cfg.geometry
    norms = np.linalg.norm(steering_matrix(rng.uniform(-90, 90, 200), g), axis=0)
    assert np.max(np.abs(norms - 1)) <= 1e-12
    for _ in range(5):
        sc = draw_scenario(rng, cfg)
        C = sc.nlos_covariance
        assert abs(np.trace(C).real - g.M) <= 1e-4 * g.M
        assert abs(np.trace(sc.covariance).real - g.M) <= 1e-4 * g.M
        assert np.linalg.eigvalsh(C).min() >= -1e-8 * g.M
    H, _ = draw_training_channels(rng, cfg, 4000)
    energy = np.mean(np.sum(np.abs(H) ** 2, axis=1))
    assert abs(energy - g.M) <= 0.05 * g.M, energy
    return f"E||h||^2 = {energy:.2f} (M={g.M})"


@check
def channel_determinism(rng):
    cfg = ScenarioConfig(M=16)
    seed = int(rng.integers(2 ** 31))
    a = draw_channels(draw_scenario(np.random.default_rng(seed), cfg), 5, np.random.default_rng(seed))
    b = draw_channels(draw_scenario(np.random.default_rng(seed), cfg), 5, np.random.default_rng(seed))
    Ha, _ = draw_training_channels(np.random.default_rng(seed), cfg, 50)
    Hb, _ = draw_training_channels(np.random.default_rng(seed), cfg, 50)
    assert np.array_equal(a, b) and np.array_equal(Ha, Hb)
    return "bitwise identical"


# --- DoA -------------------------------------------------------------------------


@check
def music_properties(rng):
    geom = ArrayGeometry(16)
    grid = SteeringGrid.uniform(geom)
    for P in (1, 2, 3):
        idx = np.sort(rng.choice(np.arange(0, grid.size, 12), size=P, replace=False))
        A = grid.vectors[:, idx]
        C = A @ np.diag(rng.uniform(0.5, 2.0, P)) @ A.conj().T
        spec = music_spectrum(C + 1e-3 * np.eye(geom.M), P, grid)
        assert sorted(top_peaks(spec, P)) == list(grid.angles[idx])
        scaled = music_spectrum(7.5 * (C + 1e-3 * np.eye(geom.M)), P, grid)
        assert sorted(top_peaks(scaled, P)) == sorted(top_peaks(spec, P))
        # values at exact nulls are rounding noise; compare the shape elsewhere
        finite = spec.values < 1e6
        ratio = scaled.values[finite] / spec.values[finite]
        assert np.allclose(ratio, ratio[0], rtol=1e-6)
    C = _random_hermitian(rng, geom.M)
    F = forward_backward(C)
    assert np.allclose(forward_backward(F), F, atol=1e-14)
    assert np.allclose(F, np.conj(F[::-1, ::-1]), atol=1e-14)
    return "peak recovery, scale invariance, FB idempotence"


@check
def music_rmse_decreases_with_snapshots(rng):
    cfg = ExperimentConfig(trials=100)
    grid = SteeringGrid.uniform(cfg.scenario.geometry)
    rmse = [music_doa_rmse(cfg.replace(T=T), grid) for T in (1, 3, 5, 10, 20, 100)]
    assert all(np.diff(rmse) < 0), rmse
    return "RMSE " + ", ".join(f"{r:.3g}" for r in rmse)


# --- GMM -------------------------------------------------------------------------


@check
def em_monotone(rng):
    X = synthetic_mixture_samples(rng)
    model = fit_gmm(X, 3, EmConfig(max_iterations=100, tol=1e-12, seed=int(rng.integers(1000))))
    ll = np.asarray(model.log_likelihood)
    drops = np.diff(ll) + 1e-9 * np.abs(ll[:-1])
    assert np.all(drops >= 0), float(drops.min())
    return f"{len(ll) - 1} iterations, log-likelihood {ll[0]:.1f} -> {ll[-1]:.1f}"


@check
def responsibility_simplex_and_filters(rng):
    model = toy_mixture(rng, M=4, J=5)
    for _ in range(20):
        y = 3 * (rng.standard_normal(4) + 1j * rng.standard_normal(4))
        s2 = 10 ** rng.uniform(-2, 2)
        r = responsibilities(model, y, s2)
        assert np.all(r >= 0) and abs(r.sum() - 1) <= 1e-10
        bank = precompute_filters(model, s2)
        assert np.allclose(gmm_estimate(model, y, s2), gmm_estimate(model, y, s2, bank), atol=1e-10)
        j = int(rng.integers(model.J))
        w, U = np.linalg.eigh(model.covariances[j])
        lo = U.conj().T @ (component_lmmse(model, j, y, s2) - model.means[j])
        hi = U.conj().T @ (component_lmmse(model, j, y, 4 * s2) - model.means[j])
        assert np.all(np.abs(hi) <= np.abs(lo) + 1e-12)
    return "simplex, banked == unbanked, shrinkage toward the mean"


@check
def cme_oracle(rng):
    worst = 0.0
    for _ in range(20):
        model = toy_mixture(rng)
        h = model.means[rng.integers(2)] + 0.5 * (rng.standard_normal(2) + 1j * rng.standard_normal(2))
        s2 = 0.5
        y = h + math.sqrt(s2 / 2) * (rng.standard_normal(2) + 1j * rng.standard_normal(2))
        ref = brute_force_conditional_mean(model.weights, model.means, model.covariances, y,
                                           s2 * 0.5)
        worst = max(worst, np.max(np.abs(gmm_estimate(model, y, s2) - ref)))
    assert worst <= 1e-3, worst
    return f"max deviation from numerical integration {worst:.1e}"


# --- estimators / pipeline -------------------------------------------------------


def _tiny_config(**kw) -> ExperimentConfig:
    base = dict(M=8, T=5, trials=12, train_size=600, n_components=4, em_max_iterations=15,
                snr_db=(0.0, 10.0), seed=3)
    base.update(kw)
    return ExperimentConfig(**base)


@check
def estimator_properties(rng):
    cfg = _tiny_config()
    art = train_artifacts(cfg)
    for trial in range(5):
        scenario, block, truth = draw_trial(cfg, 0, trial)
        for tag in cfg.estimators:
            a = run_estimator(tag, block, art, truth)
            b = run_estimator(tag, block, art, truth)
            assert np.array_equal(a.channel_estimate, b.channel_estimate), tag
        theta, _, y_nlos = _split_los(block, art.prior, art.grid)
        a_hat = art.grid.vectors[:, art.grid.nearest(theta)]
        assert abs(a_hat.conj() @ y_nlos) <= 1e-10 * max(1.0, np.linalg.norm(block.latest))
        angles = sorted(rng.uniform(-60, 60, 3))
        est = parametric_ls(angles, block.latest, art.grid.geometry)
        assert np.linalg.norm(est) <= np.linalg.norm(block.latest) * (1 + 1e-12)
        best = genie_parametric(block, truth, "esprit", art.grid, P_max=4).channel_estimate
        err = np.linalg.norm(truth.target_channel - best)
        fixed = genie_parametric(block, truth, "esprit", art.grid, P_max=1).channel_estimate
        assert err <= np.linalg.norm(truth.target_channel - fixed) + 1e-12
    return "determinism, stage-2 orthogonality, projection contraction, genie argmin"


@check
def pipeline_determinism(rng):
    cfg = _tiny_config()
    art = {}
    with tempfile.TemporaryDirectory() as tmp:
        paths = []
        for k in range(2):
            table = run_sweep(cfg, artifacts=art if k else None)
            p = Path(tmp) / f"run{k}.csv"
            emit_csv(table, p, timings=False)
            paths.append(p)
        same = paths[0].read_bytes() == paths[1].read_bytes()
    assert same, "CSV bytes differ between identical runs"
    point = cfg.sweep_points()[0][2]
    trained = train_artifacts(point)
    serial = evaluate_point(point, trained, "snr_db", 0.0)
    threaded = evaluate_point(point.replace(threads=4), trained, "snr_db", 0.0)
    for a, b in zip(serial.rows, threaded.rows):
        assert a.nmse == b.nmse and a.doa_rmse_deg == b.doa_rmse_deg, a.estimator
    return "identical CSV bytes; aggregates independent of execution order"


def run_all(seed: int = 0, names=None, out=print) -> bool:
    """Run every registered check; returns True when all pass."""
    ok = True
    t_all = time.perf_counter()
    for fn in CHECKS:
        if names and fn.__name__ not in names:
            continue
        rng = np.random.default_rng([seed, len(fn.__name__)])
        t0 = time.perf_counter()
        try:
            detail = fn(rng)
            status = "PASS"
        except AssertionError as err:
            detail, status, ok = f"assertion failed: {err}", "FAIL", False
        out(f"{status} {fn.__name__}: {detail} [{time.perf_counter() - t0:.1f} s]")
    out(f"{'all checks passed' if ok else 'some checks FAILED'} in {time.perf_counter() - t_all:.1f} s")
    return ok
