"""Trajectory planners: truncated anchor diffusion and regression baselines."""
from .anchors import AnchorSet, kmeans, make_anchors
from .diffusion import (
    EGO_DIM,
    NUM_COMMANDS,
    Condition,
    DiffusionPlanner,
    PlannerConfig,
    PlanOutput,
    TrajectoryNormalizer,
    closed_form_zero_noise,
    ego_features,
    select_candidate,
)
from .schedule import (
    NoiseSchedule,
    denoise_step,
    forward_diffuse,
    inference_timesteps,
    make_schedule,
    predict_clean,
    timestep_embedding,
)
from .variants import (
    EgoMLPPlanner,
    LSTMPlanner,
    MLPPlanner,
    RegressionPlanner,
    TransformerPlanner,
    make_planner,
    plan_variant,
)

__all__ = [
    "AnchorSet", "Condition", "DiffusionPlanner", "EGO_DIM", "EgoMLPPlanner", "LSTMPlanner",
    "MLPPlanner", "NUM_COMMANDS", "NoiseSchedule", "PlanOutput", "PlannerConfig", "RegressionPlanner",
    "TrajectoryNormalizer", "TransformerPlanner", "closed_form_zero_noise", "denoise_step",
    "ego_features", "forward_diffuse", "inference_timesteps", "kmeans", "make_anchors",
    "make_planner", "make_schedule", "plan_variant", "predict_clean", "select_candidate",
    "timestep_embedding",
]
