"""Auxiliary detection / BEV segmentation heads and the training losses."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import ConfigError, DomainError, ShapeError
from .tensor import functional as F
from .tensor.nn import MLP, Conv2d, LayerNorm, Linear, Module, Parameter
from .tensor.tensor import Tensor, concat, exp, relu, tabs, tanh, tsum

NUM_SEM_CLASSES = 7
SEM_CLASSES = ("background", "drivable", "lane_divider", "crosswalk", "vehicle", "pedestrian", "static")


@dataclass
class AgentBox:
    x: float
    y: float
    w: float
    l: float
    yaw: float
    class_id: int = 4
    score: float = 1.0

    def __post_init__(self):
        if not (self.w > 0 and self.l > 0):
            raise DomainError(f"box size must be positive, got w={self.w}, l={self.l}")
        if not 0.0 <= self.score <= 1.0:
            raise DomainError(f"score {self.score} outside [0, 1]")

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.w, self.l, self.yaw])


@dataclass
class LossWeights:
    plan: float = 10.0
    det: float = 1.0
    cls: float = 10.0
    reg: float = 1.0
    sem: float = 10.0

    def validate(self) -> None:
        for k, v in vars(self).items():
            if not (v >= 0 and math.isfinite(v)):
                raise ConfigError(f"loss weight {k}={v} must be finite and >= 0")


# ------------------------------------------------------------- detection


class CrossAttention(Module):
    def __init__(self, dim: int, heads: int, rng: np.random.Generator):
        self.dim, self.heads = dim, heads
        self.q = Linear(dim, dim, rng)
        self.kv = Linear(dim, 2 * dim, rng)
        self.out = Linear(dim, dim, rng)

    def forward(self, queries: Tensor, memory: Tensor) -> Tensor:
        B, Nq, d = queries.shape
        Nk = memory.shape[1]
        hd = d // self.heads
        q = self.q(queries).reshape(B, Nq, self.heads, hd).transpose(0, 2, 1, 3)
        kv = self.kv(memory).reshape(B, Nk, 2, self.heads, hd).transpose(2, 0, 3, 1, 4).contiguous()
        k, v = kv[0], kv[1]
        attn = F.softmax((q @ k.swapaxes(-1, -2)) * (1.0 / math.sqrt(hd)), axis=-1)
        ctx = (attn @ v).transpose(0, 2, 1, 3).contiguous().reshape(B, Nq, d)
        return self.out(ctx)


class DetectionHead(Module):
    """Learned queries, one cross-attention decoder layer, box FFN and existence FFN.

    Box parameters are (x, y, w, l, yaw). Centers are tanh-bounded to
    ``extent`` meters, yaw to (-pi, pi), sizes are exp of the raw output.
    """

    def __init__(self, in_dim: int, rng: np.random.Generator, num_queries: int = 30, dim: int = 64,
                 heads: int = 4, extent: float = 32.0, zero_init: bool = False):
        self.num_queries = num_queries
        self.extent = extent
        self.mem_proj = Linear(in_dim, dim, rng)
        self.queries = Parameter(rng.normal(0.0, 1.0, size=(num_queries, dim)))
        self.norm_q = LayerNorm(dim)
        self.cross = CrossAttention(dim, heads, rng)
        self.norm_ff = LayerNorm(dim)
        self.ff = MLP(dim, 2 * dim, dim, rng)
        self.box_ffn = MLP(dim, dim, 5, rng, zero_out=zero_init)
        self.cls_ffn = MLP(dim, dim, 1, rng, zero_out=zero_init)

    def forward(self, fused: Tensor) -> tuple[Tensor, Tensor]:
        """Return (boxes [B, Q, 5], existence logits [B, Q])."""
        B, C, H, W = fused.shape
        mem = self.mem_proj(fused.reshape(B, C, H * W).transpose(0, 2, 1))
        q = self.queries.reshape(1, self.num_queries, -1) + Tensor(np.zeros((B, 1, 1), dtype=fused.dtype))
        q = q + self.cross(self.norm_q(q), mem)
        q = q + self.ff(self.norm_ff(q))
        raw = self.box_ffn(q)
        center = tanh(raw[..., 0:2]) * self.extent
        size = exp(raw[..., 2:4])
        yaw = tanh(raw[..., 4:5]) * math.pi
        boxes = concat([center, size, yaw], axis=-1)
        return boxes, self.cls_ffn(q).reshape(B, self.num_queries)


def detect(fused: Tensor, head: DetectionHead) -> list[list[AgentBox]]:
    """Decode every query of every batch item into an AgentBox."""
    boxes, logits = head(fused)
    scores = 1.0 / (1.0 + np.exp(-logits.data.astype(np.float64)))
    out = []
    for b in range(boxes.shape[0]):
        out.append([AgentBox(*map(float, boxes.data[b, q]), class_id=4, score=float(scores[b, q]))
                    for q in range(boxes.shape[1])])
    return out


# ---------------------------------------------------------- segmentation


class SegmentationHead(Module):
    def __init__(self, in_dim: int, rng: np.random.Generator, hidden: int = 64,
                 num_classes: int = NUM_SEM_CLASSES, grid_hw: tuple[int, int] = (64, 64)):
        self.conv = Conv2d(in_dim, hidden, 3, rng)
        self.classifier = Conv2d(hidden, num_classes, 1, rng)
        self.grid_hw = tuple(grid_hw)

    def forward(self, fused: Tensor) -> Tensor:
        logits = self.classifier(relu(self.conv(fused)))
        return F.upsample(logits, self.grid_hw, "bilinear")


def segment(fused: Tensor, head: SegmentationHead) -> Tensor:
    return head(fused)


# ------------------------------------------------------------------ losses


def loss_plan(pred: Tensor, gt) -> Tensor:
    """Mean over waypoints (and batch) of the per-waypoint L1 norm."""
    gt_arr = gt.data if isinstance(gt, Tensor) else np.asarray(gt, dtype=pred.dtype)
    if pred.shape != gt_arr.shape:
        raise ShapeError(f"trajectory shapes differ: {pred.shape} vs {gt_arr.shape}")
    per_wp = tsum(tabs(pred - gt_arr.astype(pred.dtype)), axis=-1)
    return per_wp.mean()


def _wrap(a: np.ndarray) -> np.ndarray:
    return (a + np.pi) % (2 * np.pi) - np.pi


def box_l1(pred: np.ndarray, gt: np.ndarray) -> np.ndarray:
    """Pairwise L1 [P, G] over (x, y, w, l, wrapped yaw)."""
    d = np.abs(pred[:, None, :] - gt[None, :, :])
    d[..., 4] = np.abs(_wrap(pred[:, None, 4] - gt[None, :, 4]))
    return d.sum(-1)


def match_cost(boxes: np.ndarray, logits: np.ndarray, gt: np.ndarray, lam_cls: float, lam_reg: float) -> np.ndarray:
    """[Q, G] cost: lambda_cls * (1 - p) + lambda_reg * L1 centre distance."""
    p = 1.0 / (1.0 + np.exp(-logits))
    center = np.abs(boxes[:, None, :2] - gt[None, :, :2]).sum(-1)
    return lam_cls * (1.0 - p)[:, None] + lam_reg * center


def hungarian_match(cost: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Minimum-cost assignment of every column (gt) to a distinct row (query)."""
    if cost.shape[1] > cost.shape[0]:
        raise DomainError(f"{cost.shape[1]} ground-truth agents exceed {cost.shape[0]} queries")
    rows, cols = linear_sum_assignment(cost)
    order = np.argsort(cols)
    return rows[order], cols[order]


def loss_det(boxes: Tensor, logits: Tensor, gt_agents: list[np.ndarray], lam_cls: float = 10.0,
             lam_reg: float = 1.0, gamma: float = 2.0, alpha: float = 0.25) -> Tensor:
    """Hungarian-matched focal classification plus L1 box regression, batch mean.

    ``gt_agents[b]`` is a [G_b, 5] array of (x, y, w, l, yaw). Unmatched
    queries are pushed towards "no object" by the focal term.
    """
    if lam_cls < 0 or lam_reg < 0:
        raise ConfigError("detection weights must be >= 0")
    B, Q = logits.shape
    if len(gt_agents) != B:
        raise ShapeError(f"{len(gt_agents)} gt lists for batch of {B}")
    target = np.zeros((B, Q), dtype=np.int64)
    bidx, qidx, gts = [], [], []
    for b, gt in enumerate(gt_agents):
        gt = np.asarray(gt, dtype=np.float64).reshape(-1, 5)
        if len(gt) == 0:
            continue
        cost = match_cost(boxes.data[b].astype(np.float64), logits.data[b].astype(np.float64), gt,
                          lam_cls, lam_reg)
        rows, cols = hungarian_match(cost)
        target[b, rows] = 1
        bidx.extend([b] * len(rows))
        qidx.extend(rows.tolist())
        gts.append(gt[cols])
    total = None
    if lam_cls > 0:
        total = F.binary_focal_loss(logits, target, gamma, alpha) * lam_cls
    if lam_reg > 0 and bidx:
        matched = boxes[np.array(bidx), np.array(qidx)]
        gt_all = np.concatenate(gts).astype(boxes.dtype)
        diff = matched - gt_all
        # wrap yaw error through a constant shift so the gradient is unchanged
        yaw_shift = (_wrap(diff.data[:, 4]) - diff.data[:, 4]).astype(boxes.dtype)
        shift = np.zeros_like(gt_all)
        shift[:, 4] = yaw_shift
        reg = tsum(tabs(diff + shift), axis=-1).mean() * lam_reg
        total = reg if total is None else total + reg
    if total is None:
        return Tensor(np.zeros((), dtype=logits.dtype))
    return total


def loss_sem(logits: Tensor, target) -> Tensor:
    """Mean pixel-wise cross-entropy; ``logits`` [B, C, H, W], ``target`` [B, H, W]."""
    target = np.asarray(target)
    if target.shape != (logits.shape[0],) + logits.shape[2:]:
        raise ShapeError(f"target shape {target.shape} does not match logits {logits.shape}")
    return F.cross_entropy(logits, target, axis=1)


def loss_total(parts: dict, w: LossWeights) -> Tensor:
    """Weighted sum plan/det/sem. ``parts['det']`` is already the inner-weighted detection loss.

    Terms with zero weight are skipped entirely, so they contribute neither
    value nor gradient.
    """
    w.validate()
    total = None
    for key, lam in (("plan", w.plan), ("det", w.det), ("sem", w.sem)):
        if lam == 0 or key not in parts or parts[key] is None:
            continue
        term = parts[key] * lam
        total = term if total is None else total + term
    if total is None:
        ref = next((p for p in parts.values() if isinstance(p, Tensor)), None)
        return Tensor(np.zeros((), dtype=ref.dtype if ref is not None else np.float32))
    return total
