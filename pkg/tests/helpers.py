"""Small configs and datasets shared by the pipeline tests."""
from __future__ import annotations

import functools

from prix.backbone import BackboneConfig, CaRTConfig
from prix.config import DataConfig, ModelConfig, OptimConfig, RunConfig
from prix.planner.diffusion import PlannerConfig
from prix.sim.scenes import generate_split
from prix.train import Dataset


def tiny_config(seed: int = 0, epochs: int = 2, **planner) -> RunConfig:
    """A model small enough to train a few epochs in about a second."""
    backbone = BackboneConfig(channels=(4, 8), stem_channels=4, blocks_per_stage=1, fpn_dim=8,
                              cart=CaRTConfig(dim=8, pooled_hw=(2, 4), num_heads=2, dropout=0.0))
    plan = PlannerConfig(num_anchors=4, hidden=16, num_blocks=1, time_embed_dim=8, **planner)
    model = ModelConfig(backbone=backbone, planner=plan, det_queries=4, det_dim=8, seg_hidden=8)
    return RunConfig(model=model, optim=OptimConfig(lr=1e-3, epochs=epochs, batch_size=4, milestones=(1,)),
                     data=DataConfig(train_count=8, eval_count=4), seed=seed, timing_runs=1).validate()


@functools.lru_cache(maxsize=None)
def tiny_data(count: int = 8, seed: int = 1) -> Dataset:
    return Dataset.from_scenes(generate_split(count, seed))
