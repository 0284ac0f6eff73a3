"""Training and Monte-Carlo evaluation of estimators over a sweep."""

from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..channel_model import GroundTruth, add_noise, db_to_linear, draw_channels, draw_scenario, \
    draw_training_channels
from ..doa import SteeringGrid
from ..estimators import GENIE_TAGS, TRAINED_TAGS, LosPrior, TrainedArtifacts, estimate_plos, \
    music_doa, run_estimator
from ..gmm_cme import EmConfig, ModelFormatError, build_training_set, fit_gmm, load_model, \
    save_model
from ..numerics import NumericalError
from .config import ExperimentConfig
from .metrics import nmse, rmse_deg
from .results import ResultRow, ResultTable

log = logging.getLogger(__name__)

FAILURE_WARN_FRACTION = 0.01
DOA_TAGS = ("music-gmm", "music-s-cov")
MANIFEST = "manifest.json"


def _needed_artifacts(estimators) -> set[str]:
    return {TRAINED_TAGS[t] for t in estimators if t in TRAINED_TAGS}


def make_grid(config: ExperimentConfig) -> SteeringGrid:
    return SteeringGrid.uniform(config.scenario.geometry, multiplier=config.grid_multiplier)


def train_rng(config: ExperimentConfig) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([config.seed, 0]))


def trial_rngs(config: ExperimentConfig, sweep_index: int, trial: int):
    """Independent (scenario, channel, noise) generators for one trial."""
    if config.common_random_numbers:
        key = [config.seed, 1, trial]
    else:
        key = [config.seed, 1, sweep_index, trial]
    return tuple(np.random.default_rng(s) for s in np.random.SeedSequence(key).spawn(3))


def draw_trial(point: ExperimentConfig, sweep_index: int, trial: int):
    """Scenario, observation block and ground truth of one Monte-Carlo trial."""
    r_scenario, r_channel, r_noise = trial_rngs(point, sweep_index, trial)
    scenario = draw_scenario(r_scenario, point.scenario)
    H = draw_channels(scenario, point.T, r_channel)
    block, truth = add_noise(H, db_to_linear(-point.snr_db[0]), r_noise)
    return scenario, block, GroundTruth(truth.all_channels, scenario)


def train_artifacts(config: ExperimentConfig, estimators=None) -> TrainedArtifacts:
    """Draw a training set and fit whatever the requested estimators need."""
    need = _needed_artifacts(config.estimators if estimators is None else estimators)
    grid = make_grid(config)
    if not need:
        return TrainedArtifacts(grid)
    t0 = time.perf_counter()
    H, _ = draw_training_channels(train_rng(config), config.scenario, config.train_size)
    prior = estimate_plos(H, grid)
    em = EmConfig(max_iterations=config.em_max_iterations, tol=config.em_tol, reg=config.em_reg,
                  init=config.em_init, seed=config.seed)
    meta = dict(grid_id=grid.grid_id, angular_spread=config.angular_spread_deg,
                rician_K_db=config.rician_K_db)
    nlos_model = full_model = nlos_cov = None
    if need & {"nlos", "scov"}:
        X = build_training_set(H, grid)
        if "scov" in need:
            nlos_cov = X.T @ X.conj() / X.shape[0]
        if "nlos" in need:
            nlos_model = fit_gmm(X, config.n_components, em, **meta)
        del X
    if "full" in need:
        full_model = fit_gmm(H, config.n_components, em, **meta)
    log.info("trained %s (%s) in %.1f s", config.training_label(), ", ".join(sorted(need)),
             time.perf_counter() - t0)
    return TrainedArtifacts(grid, nlos_model, full_model, nlos_cov, prior)


def save_artifacts(artifacts: TrainedArtifacts, directory, config: ExperimentConfig) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    files = {}
    if artifacts.nlos_model is not None:
        save_model(artifacts.nlos_model, d / "nlos_gmm.bin")
        files["nlos"] = "nlos_gmm.bin"
    if artifacts.full_model is not None:
        save_model(artifacts.full_model, d / "full_gmm.bin")
        files["full"] = "full_gmm.bin"
    if artifacts.nlos_cov is not None:
        np.save(d / "nlos_cov.npy", artifacts.nlos_cov)
        files["scov"] = "nlos_cov.npy"
    manifest = {
        "training_hash": config.training_hash(),
        "training": config.training_dict(),
        "los_power": None if artifacts.prior is None else artifacts.prior.power,
        "grid_id": artifacts.grid.grid_id,
        "files": files,
    }
    (d / MANIFEST).write_text(json.dumps(manifest, indent=2, default=repr))


def load_artifacts(directory, config: ExperimentConfig, estimators=None) -> TrainedArtifacts:
    """Load artifacts saved by :func:`save_artifacts` and check they fit ``config``.

    Raises
    ------
    ModelFormatError
        On a missing or malformed manifest, a model whose antenna count
        differs from ``config.M``, or models trained under other settings.
    """
    d = Path(directory)
    try:
        manifest = json.loads((d / MANIFEST).read_text())
    except FileNotFoundError:
        raise ModelFormatError(f"{d}: no trained models (missing {MANIFEST})") from None
    except json.JSONDecodeError as err:
        raise ModelFormatError(f"{d / MANIFEST}: {err}") from None
    files = manifest.get("files", {})
    need = _needed_artifacts(config.estimators if estimators is None else estimators)
    missing = need - set(files)
    if missing:
        raise ModelFormatError(f"{d}: models for {sorted(missing)} were not trained")
    grid = make_grid(config)
    nlos = load_model(d / files["nlos"], expected_M=config.M) if "nlos" in need else None
    full = load_model(d / files["full"], expected_M=config.M) if "full" in need else None
    cov = None
    if "scov" in need:
        cov = np.load(d / files["scov"])
        if cov.shape != (config.M, config.M):
            raise ModelFormatError(f"{d}: covariance is {cov.shape}, expected M={config.M}")
    if manifest.get("training_hash") != config.training_hash():
        raise ModelFormatError(f"{d}: models were trained with a different configuration")
    prior = None if manifest.get("los_power") is None else LosPrior(float(manifest["los_power"]))
    return TrainedArtifacts(grid, nlos, full, cov, prior)


def train_pipeline(config: ExperimentConfig, out_dir=None) -> TrainedArtifacts:
    """Train the artifacts for ``config`` and optionally persist them to ``out_dir``."""
    art = train_artifacts(config)
    if out_dir is not None:
        save_artifacts(art, out_dir, config)
    return art


def training_points(config: ExperimentConfig) -> list[ExperimentConfig]:
    """Distinct training configurations needed by the sweep, in first-use order."""
    seen, out = set(), []
    for _, _, point in config.sweep_points():
        h = point.training_hash()
        if h not in seen:
            seen.add(h)
            out.append(point)
    return out


def artifacts_dir(root, point: ExperimentConfig) -> Path:
    return Path(root) / point.training_label()


def obtain_artifacts(point: ExperimentConfig, cache_root=None, allow_training: bool = True
                     ) -> TrainedArtifacts:
    """Load cached artifacts when they match ``point``; otherwise train (and cache)."""
    if not allow_training:
        if cache_root is None:
            raise ValueError("a models directory is required when training is disabled")
        if not _needed_artifacts(point.estimators):
            return TrainedArtifacts(make_grid(point))
        return load_artifacts(artifacts_dir(cache_root, point), point)
    if cache_root is not None:
        d = artifacts_dir(cache_root, point)
        if (d / MANIFEST).exists():
            try:
                return load_artifacts(d, point)
            except ModelFormatError as err:
                log.info("retraining: %s", err)
    art = train_artifacts(point)
    if cache_root is not None and _needed_artifacts(point.estimators):
        save_artifacts(art, artifacts_dir(cache_root, point), point)
    return art


@dataclass
class TrialOutcome:
    estimates: dict  # tag -> channel estimate or None on failure
    doa: dict  # tag -> DoA estimate
    truth: np.ndarray
    los_angle: float
    seconds: dict


def run_trial(point: ExperimentConfig, artifacts: TrainedArtifacts, sweep_index: int,
              trial: int) -> TrialOutcome:
    """Draw one scenario and coherence block and apply every configured estimator."""
    scenario, block, truth = draw_trial(point, sweep_index, trial)
    estimates, doa, seconds = {}, {}, {}
    for tag in point.estimators:
        t0 = time.perf_counter()
        try:
            out = run_estimator(tag, block, artifacts, truth if tag in GENIE_TAGS else None,
                                S_max=point.s_max, P_max=point.p_max)
            estimates[tag] = out.channel_estimate
            doa[tag] = out.doa_estimate
        except (NumericalError, np.linalg.LinAlgError) as err:
            log.debug("trial %d, %s failed: %s", trial, tag, err)
            estimates[tag] = None
        seconds[tag] = time.perf_counter() - t0
    return TrialOutcome(estimates, doa, truth.target_channel, scenario.los_angle, seconds)


def evaluate_point(point: ExperimentConfig, artifacts: TrainedArtifacts, label: str, value: float,
                   sweep_index: int = 0) -> ResultTable:
    """Monte-Carlo NMSE (and DoA RMSE) of every estimator at one sweep point."""
    def one(trial):
        return run_trial(point, artifacts, sweep_index, trial)

    if point.threads > 1:
        with ThreadPoolExecutor(max_workers=point.threads) as pool:
            outcomes = list(pool.map(one, range(point.trials)))
    else:
        outcomes = [one(n) for n in range(point.trials)]

    table = ResultTable()
    for tag in point.estimators:
        ok = [o for o in outcomes if o.estimates[tag] is not None]
        failures = len(outcomes) - len(ok)
        if failures > FAILURE_WARN_FRACTION * len(outcomes):
            log.warning("%s at %s=%g: %d of %d trials failed", tag, label, value, failures,
                        len(outcomes))
        err = nmse([o.estimates[tag] for o in ok], [o.truth for o in ok]) if ok else float("nan")
        rmse = None
        if tag in DOA_TAGS and ok:
            rmse = rmse_deg([o.doa[tag] for o in ok], [o.los_angle for o in ok])
        wall = float(sum(o.seconds[tag] for o in outcomes))
        table.add(ResultRow(label, float(value), tag, err, rmse, len(ok), failures, wall))
    return table


def run_sweep(config: ExperimentConfig, cache_root=None, artifacts: dict | None = None,
              allow_training: bool = True) -> ResultTable:
    """Evaluate every sweep point of ``config``.

    Trained artifacts come from ``artifacts`` (keyed by training hash) when
    given, else from ``cache_root`` or fresh training (only loading when
    ``allow_training`` is false). Models are retrained whenever a sweep
    point changes a training parameter.
    """
    artifacts = {} if artifacts is None else artifacts
    table = ResultTable()
    for idx, (label, value, point) in enumerate(config.sweep_points()):
        key = point.training_hash()
        if key not in artifacts:
            artifacts[key] = obtain_artifacts(point, cache_root, allow_training)
        t0 = time.perf_counter()
        table.extend(evaluate_point(point, artifacts[key], label, value, idx))
        log.info("%s=%g done in %.1f s", label, value, time.perf_counter() - t0)
    return table


def music_doa_rmse(point: ExperimentConfig, grid: SteeringGrid | None = None,
                   sweep_index: int = 0) -> float:
    """RMSE of the MUSIC LoS-angle estimate alone, on the same draws as :func:`run_trial`."""
    grid = grid or make_grid(point)
    est, ref = [], []
    for trial in range(point.trials):
        scenario, block, _ = draw_trial(point, sweep_index, trial)
        est.append(music_doa(block, grid))
        ref.append(scenario.los_angle)
    return rmse_deg(est, ref)
