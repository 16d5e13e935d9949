"""Residual CNN backbone with Context-aware Recalibration (CaRT) and FPN fusion.

Layout for the default config (canvas H x W after concatenating cameras):

    stem (stride 2)  ->  f1 -> CaRT -> f2 -> CaRT -> f3 -> CaRT -> f4 -> CaRT
                          H/4          H/8          H/16         H/32
    top-down FPN over the four recalibrated maps -> fused map at H/4
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .tensor import functional as F
from .tensor.nn import Conv2d, LayerNorm, Linear, MLP, Module
from .tensor.tensor import ShapeError, Tensor, concat, relu


@dataclass
class CaRTConfig:
    dim: int = 64
    pooled_hw: tuple[int, int] = (4, 8)
    num_sa_layers: int = 2
    num_heads: int = 4
    weight_sharing: str = "shared"  # shared | separate
    merge_mode: str = "concat_project"  # concat_project | add
    enabled: bool = True
    fused_qkv: bool = True
    mlp_ratio: int = 2
    dropout: float = 0.1

    def validate(self) -> None:
        if self.dim % self.num_heads:
            raise ConfigError(f"CaRT dim {self.dim} not divisible by {self.num_heads} heads")
        if min(self.pooled_hw) < 1 or self.num_sa_layers < 1:
            raise ConfigError("pooled_hw must be >= 1x1 and num_sa_layers >= 1")
        if self.weight_sharing not in ("shared", "separate"):
            raise ConfigError(f"unknown weight_sharing {self.weight_sharing!r}")
        if self.merge_mode not in ("concat_project", "add"):
            raise ConfigError(f"unknown merge_mode {self.merge_mode!r}")


@dataclass
class BackboneConfig:
    channels: tuple[int, ...] = (16, 32, 64, 128)
    stem_channels: int = 16
    blocks_per_stage: int = 2
    num_cameras: int = 3
    image_hw: tuple[int, int] = (64, 64)
    fpn_dim: int = 64
    cart: CaRTConfig = field(default_factory=CaRTConfig)

    def validate(self) -> None:
        if len(self.channels) < 1:
            raise ConfigError("need at least one stage")
        self.cart.validate()


@dataclass
class FeaturePyramid:
    stages: list[Tensor]
    recalibrated: list[Tensor]
    attention_out: list[Tensor | None]
    fused: Tensor


# ------------------------------------------------------------------ stages


class ResidualBlock(Module):
    """Pre-activation block: ``shortcut(x) + conv(relu(conv(relu(x))))``."""

    def __init__(self, c_in: int, c_out: int, stride: int, rng: np.random.Generator):
        self.conv1 = Conv2d(c_in, c_out, 3, rng, stride=stride)
        self.conv2 = Conv2d(c_out, c_out, 3, rng)
        self.shortcut = Conv2d(c_in, c_out, 1, rng, stride=stride, bias=False) \
            if (stride != 1 or c_in != c_out) else None

    def forward(self, x: Tensor) -> Tensor:
        h = self.conv2(relu(self.conv1(relu(x))))
        skip = x if self.shortcut is None else self.shortcut(x)
        return skip + h


class Stage(Module):
    def __init__(self, c_in: int, c_out: int, blocks: int, rng: np.random.Generator):
        self.c_in = c_in
        self.c_out = c_out
        self.blocks = [ResidualBlock(c_in if i == 0 else c_out, c_out, 2 if i == 0 else 1, rng)
                       for i in range(blocks)]

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[1] != self.c_in:
            raise ShapeError(f"stage expects {self.c_in} channels, got {x.shape[1]}")
        for b in self.blocks:
            x = b(x)
        return x


# --------------------------------------------------------------- attention


class MultiHeadSelfAttention(Module):
    """Scaled dot-product self-attention over [B, N, d] tokens.

    With ``fused=True`` one [d, 3d] projection yields Q, K and V.
    """

    def __init__(self, dim: int, heads: int, rng: np.random.Generator, fused: bool = True):
        if dim % heads:
            raise ConfigError(f"dim {dim} not divisible by heads {heads}")
        self.dim = dim
        self.heads = heads
        self.fused = fused
        if fused:
            self.qkv = Linear(dim, 3 * dim, rng)
        else:
            self.q = Linear(dim, dim, rng)
            self.k = Linear(dim, dim, rng)
            self.v = Linear(dim, dim, rng)
        self.out = Linear(dim, dim, rng)

    def _split_heads(self, t: Tensor, B: int, N: int) -> Tensor:
        return t.reshape(B, N, self.heads, self.dim // self.heads).transpose(0, 2, 1, 3)

    def project_qkv(self, x: Tensor) -> tuple[Tensor, Tensor, Tensor]:
        B, N, _ = x.shape
        if self.fused:
            qkv = self.qkv(x).reshape(B, N, 3, self.heads, self.dim // self.heads)
            qkv = qkv.transpose(2, 0, 3, 1, 4).contiguous()
            return qkv[0], qkv[1], qkv[2]
        return (self._split_heads(self.q(x), B, N), self._split_heads(self.k(x), B, N),
                self._split_heads(self.v(x), B, N))

    def forward(self, x: Tensor) -> Tensor:
        B, N, d = x.shape
        q, k, v = self.project_qkv(x)
        scores = (q @ k.swapaxes(-1, -2)) * (1.0 / math.sqrt(d // self.heads))
        ctx = F.softmax(scores, axis=-1) @ v
        ctx = ctx.transpose(0, 2, 1, 3).contiguous().reshape(B, N, d)
        return self.out(ctx)


class AttentionBlock(Module):
    """Pre-norm transformer block: LN -> MHSA -> add -> LN -> GELU MLP -> add."""

    def __init__(self, dim: int, heads: int, rng: np.random.Generator, fused: bool = True,
                 mlp_ratio: int = 2, dropout: float = 0.0):
        self.norm1 = LayerNorm(dim)
        self.attn = MultiHeadSelfAttention(dim, heads, rng, fused)
        self.norm2 = LayerNorm(dim)
        self.mlp = MLP(dim, mlp_ratio * dim, dim, rng)
        self.dropout = dropout
        self._rng: np.random.Generator | None = None

    def _drop(self, x: Tensor) -> Tensor:
        if not self.training or self._rng is None or self.dropout == 0.0:
            return x
        return F.dropout(x, self.dropout, self._rng, train=True)

    def forward(self, x: Tensor) -> Tensor:
        x = x + self._drop(self.attn(self.norm1(x)))
        return x + self._drop(self.mlp(self.norm2(x)))


class AttentionStack(Module):
    def __init__(self, cfg: CaRTConfig, rng: np.random.Generator):
        self.layers = [AttentionBlock(cfg.dim, cfg.num_heads, rng, cfg.fused_qkv, cfg.mlp_ratio, cfg.dropout)
                       for _ in range(cfg.num_sa_layers)]

    def forward(self, tokens: Tensor) -> Tensor:
        for layer in self.layers:
            tokens = layer(tokens)
        return tokens


def shared_attention(tokens: Tensor, block: Module) -> Tensor:
    """Apply one attention block (or stack) to [B, N, d] tokens."""
    if tokens.ndim != 3:
        raise ShapeError(f"tokens must be [B,N,d], got {tokens.shape}")
    return block(tokens)


# -------------------------------------------------------------------- CaRT


class CaRT(Module):
    """Pool -> project to shared width -> self-attention -> upsample -> project back -> merge."""

    def __init__(self, channels: tuple[int, ...], cfg: CaRTConfig, rng: np.random.Generator):
        cfg.validate()
        self.cfg = cfg
        self.channels = tuple(channels)
        n = len(channels)
        if cfg.enabled:
            self.in_proj = [Linear(c, cfg.dim, rng) for c in channels]
            self.out_proj = [Conv2d(cfg.dim, c, 1, rng) for c in channels]
            if cfg.weight_sharing == "shared":
                shared = AttentionStack(cfg, rng)
                self.attention = [shared] * n
            else:
                self.attention = [AttentionStack(cfg, rng) for _ in range(n)]
        else:
            self.in_proj = self.out_proj = self.attention = None
        if cfg.merge_mode == "concat_project":
            self.merge = [Conv2d(2 * c, c, 1, rng) for c in channels]
        else:
            self.merge = None

    def recalibrate(self, x: Tensor, stage_index: int) -> tuple[Tensor, Tensor | None]:
        """Return (x^c, attention tokens) for the zero-based ``stage_index``."""
        cfg = self.cfg
        B, C, H, W = x.shape
        ph, pw = cfg.pooled_hw
        pooled = F.adaptive_avg_pool(x, (ph, pw))
        attn_out = None
        if cfg.enabled:
            tokens = pooled.transpose(0, 2, 3, 1).contiguous().reshape(B, ph * pw, C)
            tokens = self.in_proj[stage_index](tokens)
            attn_out = shared_attention(tokens, self.attention[stage_index])
            grid = attn_out.reshape(B, ph, pw, cfg.dim).transpose(0, 3, 1, 2).contiguous()
            # 1x1 projection and bilinear upsampling commute (rows of the resize sum to 1),
            # so project at pooled resolution.
            branch = F.upsample(self.out_proj[stage_index](grid), (H, W), "bilinear")
        else:
            branch = F.upsample(pooled, (H, W), "bilinear")
        if self.merge is None:
            return x + branch, attn_out
        return self.merge[stage_index](concat([x, branch], axis=1)), attn_out

    def attention_blocks(self) -> list[Module]:
        if self.attention is None:
            return []
        uniq: list[Module] = []
        for a in self.attention:
            if all(a is not u for u in uniq):
                uniq.append(a)
        return uniq


def cart_recalibrate(x: Tensor, cart: CaRT, stage_index: int) -> Tensor:
    if not 0 <= stage_index < len(cart.channels):
        raise ConfigError(f"stage_index {stage_index} out of range")
    return cart.recalibrate(x, stage_index)[0]


# --------------------------------------------------------------------- FPN


class FPN(Module):
    def __init__(self, channels: tuple[int, ...], dim: int, rng: np.random.Generator):
        self.lateral = [Conv2d(c, dim, 1, rng) for c in channels]
        self.smooth = [Conv2d(dim, dim, 3, rng) for _ in channels]

    def forward(self, levels: list[Tensor]) -> Tensor:
        if len(levels) != len(self.lateral):
            raise ShapeError(f"FPN built for {len(self.lateral)} levels, got {len(levels)}")
        top = len(levels) - 1
        p = self.smooth[top](self.lateral[top](levels[top]))
        for i in range(top - 1, -1, -1):
            up = F.upsample(p, levels[i].shape[2:], "nearest")
            p = self.smooth[i](self.lateral[i](levels[i]) + up)
        return p


def fpn_topdown(fpn: FPN, stages: list[Tensor], recalibrated: list[Tensor | None]) -> Tensor:
    if len(stages) < 1:
        raise ShapeError("need at least one pyramid level")
    levels = [r if r is not None else s for s, r in zip(stages, recalibrated)]
    return fpn(levels)


# ----------------------------------------------------------------- encoder


class VisualEncoder(Module):
    def __init__(self, cfg: BackboneConfig, rng: np.random.Generator):
        cfg.validate()
        self.cfg = cfg
        self.stem = Conv2d(3, cfg.stem_channels, 3, rng, stride=2)
        ins = (cfg.stem_channels,) + tuple(cfg.channels[:-1])
        self.stages = [Stage(ci, co, cfg.blocks_per_stage, rng) for ci, co in zip(ins, cfg.channels)]
        self.cart = CaRT(tuple(cfg.channels), cfg.cart, rng)
        self.fpn = FPN(tuple(cfg.channels), cfg.fpn_dim, rng)

    def seed_dropout(self, rng: np.random.Generator | None) -> None:
        for m in self.modules():
            if isinstance(m, AttentionBlock):
                m._rng = rng

    def run_stage(self, x: Tensor, stage_index: int) -> Tensor:
        return self.stages[stage_index](x)

    def canvas(self, images: Tensor) -> Tensor:
        if images.ndim != 5:
            raise ShapeError(f"images must be [B,Ncam,3,H,W], got {images.shape}")
        B, ncam = images.shape[:2]
        if ncam != self.cfg.num_cameras:
            raise ConfigError(f"expected {self.cfg.num_cameras} cameras, got {ncam}")
        # cameras side by side along the width axis
        return images.transpose(0, 2, 3, 1, 4).contiguous().reshape(
            B, images.shape[2], images.shape[3], ncam * images.shape[4])

    def forward(self, images: Tensor) -> tuple[FeaturePyramid, Tensor]:
        x = self.stem(self.canvas(images))
        stages, recal, attn = [], [], []
        for i, stage in enumerate(self.stages):
            x = stage(x)
            stages.append(x)
            x, a = self.cart.recalibrate(x, i)
            recal.append(x)
            attn.append(a)
        fused = fpn_topdown(self.fpn, stages, recal)
        c_visual = fused.mean(axis=(2, 3))
        return FeaturePyramid(stages, recal, attn, fused), c_visual


def extract_features(images: Tensor, encoder: VisualEncoder) -> tuple[FeaturePyramid, Tensor]:
    return encoder(images)


def count_params(cfg: BackboneConfig, seed: int = 0) -> dict[str, int]:
    """Exact parameter counts per backbone submodule."""
    enc = VisualEncoder(cfg, np.random.default_rng(seed))
    attn = sum(b.num_parameters() for b in enc.cart.attention_blocks())
    proj = sum(m.num_parameters() for m in (enc.cart.in_proj or []) + (enc.cart.out_proj or []))
    merge = sum(m.num_parameters() for m in (enc.cart.merge or []))
    counts = {
        "stem": enc.stem.num_parameters(),
        "stages": sum(s.num_parameters() for s in enc.stages),
        "cart.attention": attn,
        "cart.projections": proj,
        "cart.merge": merge,
        "fpn": enc.fpn.num_parameters(),
    }
    total = enc.num_parameters()
    if total != sum(counts.values()):
        raise AssertionError("unattributed backbone parameters")
    counts["total"] = total
    return counts
