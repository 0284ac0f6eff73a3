"""Two-stage LoS/NLoS channel estimation: MUSIC for the dominant path, GMM for the rest."""

from .channel_model import (ArrayGeometry, ChannelScenario, ClusterParams, GroundTruth,
                            ObservationBlock, ScenarioConfig)
from .doa import SteeringGrid
from .estimators import ESTIMATOR_TAGS, EstimatorOutput, TrainedArtifacts, run_estimator
from .gmm_cme import EmConfig, GmmModel, ModelFormatError, TrainingError, fit_gmm
from .numerics import NumericalError

__all__ = [
    "ArrayGeometry", "ChannelScenario", "ClusterParams", "GroundTruth", "ObservationBlock",
    "ScenarioConfig", "SteeringGrid", "ESTIMATOR_TAGS", "EstimatorOutput", "TrainedArtifacts",
    "run_estimator", "EmConfig", "GmmModel", "ModelFormatError", "TrainingError", "fit_gmm",
    "NumericalError",
]

__version__ = "0.1.0"
