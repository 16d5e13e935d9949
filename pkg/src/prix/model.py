"""Full network: visual encoder, planner head and the two auxiliary heads."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .backbone import VisualEncoder
from .config import ModelConfig
from .heads import DetectionHead, LossWeights, SegmentationHead, loss_det, loss_sem, loss_total
from .planner.diffusion import PlanOutput
from .planner.variants import make_planner
from .sim.render import RenderedScene
from .tensor.nn import Module
from .tensor.tensor import Tensor, no_grad

IMAGE_MEAN, IMAGE_STD = 0.5, 0.25


@dataclass
class Batch:
    images: np.ndarray  # [B, Ncam, 3, H, W]
    ego: np.ndarray  # [B, 5]
    gt: np.ndarray  # [B, T, 3]
    semantic: np.ndarray  # [B, Hs, Ws]
    boxes: list  # B arrays [G, 5]

    @classmethod
    def stack(cls, items: list[RenderedScene], gts: list[np.ndarray]) -> "Batch":
        return cls(np.stack([r.images for r in items]), np.stack([r.ego for r in items]),
                   np.stack(gts), np.stack([r.semantic for r in items]), [r.boxes for r in items])


class PrixModel(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator, dtype: str = "float32"):
        cfg.validate()
        self.cfg = cfg
        self.encoder = VisualEncoder(cfg.backbone, rng)
        feat = cfg.backbone.fpn_dim
        self.planner = make_planner(cfg.planner, feat, rng)
        self.det = DetectionHead(feat, rng, cfg.det_queries, cfg.det_dim, extent=cfg.det_extent)
        self.seg = SegmentationHead(feat, rng, cfg.seg_hidden, grid_hw=cfg.seg_grid)
        self.astype(dtype)
        self.dtype = np.dtype(dtype)

    def encode(self, images: np.ndarray):
        x = (np.asarray(images, dtype=self.dtype) - IMAGE_MEAN) / IMAGE_STD
        return self.encoder(Tensor(x.astype(self.dtype)))

    def loss(self, batch: Batch, w: LossWeights, rng: np.random.Generator) -> tuple[Tensor, dict]:
        """Weighted total objective and per-part scalar values.

        Heads whose weight is zero are not evaluated at all.
        """
        pyramid, c_visual = self.encode(batch.images)
        parts, log = {}, {}
        if w.plan > 0:
            parts["plan"], info = self.planner.loss(c_visual, batch.ego, batch.gt, rng)
            log.update(info)
        if w.det > 0 and (w.cls > 0 or w.reg > 0):
            boxes, logits = self.det(pyramid.fused)
            parts["det"] = loss_det(boxes, logits, batch.boxes, w.cls, w.reg)
        if w.sem > 0:
            parts["sem"] = loss_sem(self.seg(pyramid.fused), batch.semantic)
        total = loss_total(parts, w)
        for k in ("plan", "det", "sem"):
            log[k] = parts[k].item() if k in parts else 0.0
        log["total"] = total.item()
        return total, log

    def plan(self, images: np.ndarray, ego: np.ndarray, noise: np.ndarray | None = None,
             steps: int | None = None, rng=None) -> PlanOutput:
        self.eval()
        with no_grad():
            _, c_visual = self.encode(images)
            out = self.planner.plan(c_visual, ego, rng, steps=steps, noise=noise)
        self.train()
        return out

    @property
    def planner_noise_shape(self) -> tuple[int, int, int] | None:
        """(K, T, 3) for diffusion heads, None for single-trajectory regressors."""
        p = self.cfg.planner
        return (p.num_anchors, p.horizon, 3) if p.head == "diffusion" else None
