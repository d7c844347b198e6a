"""Cross-view geo-localization with curriculum-scheduled orientation and FoV augmentation."""

from .curriculum import ScheduleSpec, curriculum_for_epoch, schedule_value
from .data import SceneSpec, ScenePair, generate_dataset, generate_scene, load_split
from .encoder import DualEncoder, EncoderSpec, attribution_heatmap, encode, load_checkpoint
from .evaluation import RecallReport, consistency_scores, evaluate_fov_protocol, recall_at_k
from .imaging import (GroundTransformParams, HeatMap, SatelliteTransformParams, ViewImage,
                      transform_ground, transform_satellite)
from .mining import MiningPlan, build_mining_plan
from .objectives import EmbeddingBatch, LossWeights, cross_loss, disc_loss, infonce, total_loss
from .trainer import RunConfig, load_config, run_training, train_epoch

__version__ = "0.1.0"

__all__ = [
    "DualEncoder", "EmbeddingBatch", "EncoderSpec", "GroundTransformParams", "HeatMap", "LossWeights",
    "MiningPlan", "RecallReport", "RunConfig", "SatelliteTransformParams", "ScenePair", "SceneSpec",
    "ScheduleSpec", "ViewImage", "attribution_heatmap", "build_mining_plan", "consistency_scores",
    "cross_loss", "curriculum_for_epoch", "disc_loss", "encode", "evaluate_fov_protocol",
    "generate_dataset", "generate_scene", "infonce", "load_checkpoint", "load_config", "load_split",
    "recall_at_k", "run_training", "schedule_value", "total_loss", "train_epoch", "transform_ground",
    "transform_satellite",
]
