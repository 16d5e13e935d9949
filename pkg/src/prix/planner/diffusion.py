"""Conditional noise-prediction network and truncated anchor-based planning."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, DomainError, ShapeError
from ..tensor import functional as F
from ..tensor.nn import MLP, LayerNorm, Linear, Module, Parameter
from ..tensor.tensor import Tensor, concat, gelu, no_grad
from .anchors import AnchorSet
from .schedule import (
    NoiseSchedule,
    denoise_step,
    forward_diffuse,
    inference_timesteps,
    make_schedule,
    timestep_embedding,
)

NUM_COMMANDS = 3  # left, straight, right
EGO_DIM = 2 + NUM_COMMANDS
# the anchor-drift gate is stored divided by this gain so Adam can open it within
# a few hundred steps while it still starts at exactly zero
GATE_GAIN = 20.0


@dataclass
class PlannerConfig:
    head: str = "diffusion"  # diffusion | mlp | transformer | lstm | ego_mlp
    horizon: int = 8
    num_anchors: int = 20
    hidden: int = 128
    num_blocks: int = 3
    time_embed_dim: int = 32
    train_steps: int = 50
    truncation: int = 25
    inference_steps: int = 2
    beta_start: float = 1e-4
    beta_end: float = 2e-2
    use_anchors: bool = True
    use_endpoints: bool = False
    conf_weight: float = 1.0

    def validate(self) -> None:
        if self.head not in ("diffusion", "mlp", "transformer", "lstm", "ego_mlp"):
            raise ConfigError(f"unknown planner head {self.head!r}")
        if self.horizon < 1 or self.num_anchors < 1 or self.hidden < 1:
            raise ConfigError("planner sizes must be positive")
        if not 1 <= self.truncation <= self.train_steps:
            raise ConfigError("truncation must lie in [1, train_steps]")
        if self.inference_steps < 1:
            raise ConfigError("inference_steps must be >= 1")
        if self.inference_steps > self.train_steps:
            raise ConfigError("inference_steps exceeds train_steps")

    def schedule(self) -> NoiseSchedule:
        return make_schedule(self.train_steps, "linear", self.beta_start, self.beta_end,
                             truncation=self.truncation)


def ego_features(velocity, acceleration, command) -> np.ndarray:
    """[B, 5] ego vector: scaled speed, scaled acceleration, command one-hot."""
    v = np.atleast_1d(np.asarray(velocity, dtype=np.float64))
    a = np.atleast_1d(np.asarray(acceleration, dtype=np.float64))
    cmd = np.atleast_1d(np.asarray(command))
    if not (np.all(np.isfinite(v)) and np.all(np.isfinite(a))):
        raise DomainError("ego velocity/acceleration must be finite")
    if cmd.dtype.kind not in "iu" or np.any(cmd < 0) or np.any(cmd >= NUM_COMMANDS):
        raise DomainError(f"driving command must be an integer in [0, {NUM_COMMANDS})")
    out = np.zeros((len(v), EGO_DIM))
    out[:, 0] = v / 10.0
    out[:, 1] = a / 3.0
    out[np.arange(len(v)), 2 + cmd] = 1.0
    return out


@dataclass
class TrajectoryNormalizer:
    """Per-(waypoint, channel) standardization of [.., T, 3] trajectories."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, trajectories: np.ndarray, min_std: float = 0.05) -> "TrajectoryNormalizer":
        trajectories = np.asarray(trajectories, dtype=np.float64)
        return cls(trajectories.mean(0), np.maximum(trajectories.std(0), min_std))

    @classmethod
    def identity(cls, horizon: int) -> "TrajectoryNormalizer":
        return cls(np.zeros((horizon, 3)), np.ones((horizon, 3)))

    def normalize(self, traj):
        return (traj - self.mean) / self.std

    def denormalize(self, traj):
        if isinstance(traj, Tensor):
            return traj * self.std.astype(traj.dtype) + self.mean.astype(traj.dtype)
        return traj * self.std + self.mean


@dataclass
class Condition:
    c_visual: Tensor  # [B, F]
    c_ego: np.ndarray  # [B, EGO_DIM]
    c_anch: Tensor  # [B, K, T*3 (+2)]
    fused: Tensor  # [B, K, hidden]
    anchors: np.ndarray  # [B, K, T, 3] normalized start candidates

    @property
    def num_candidates(self) -> int:
        return self.fused.shape[1]


@dataclass
class PlanOutput:
    trajectory: np.ndarray  # [B, T, 3] meters, selected
    candidates: np.ndarray | None = None  # [B, K, T, 3] meters
    confidences: np.ndarray | None = None  # [B, K], softmax over candidates
    selected: np.ndarray | None = None  # [B]


def select_candidate(confidences) -> np.ndarray:
    """Index of the most confident candidate along the last axis."""
    conf = np.asarray(confidences)
    if conf.shape[-1] == 0:
        raise ConfigError("no candidates to select from")
    return conf.argmax(-1)


class ResidualMLPBlock(Module):
    def __init__(self, dim: int, rng: np.random.Generator):
        self.norm = LayerNorm(dim)
        self.fc1 = Linear(dim, 2 * dim, rng)
        self.fc2 = Linear(2 * dim, dim, rng)

    def forward(self, h: Tensor) -> Tensor:
        return h + self.fc2(gelu(self.fc1(self.norm(h))))


def _as_tensor(x, dtype) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=dtype))


class DiffusionPlanner(Module):
    """Noise predictor over K candidate trajectories plus a confidence head.

    Candidates live in normalized waypoint space. Every candidate is
    processed independently by the same weights, so the network is
    equivariant to candidate permutations.
    """

    def __init__(self, cfg: PlannerConfig, visual_dim: int, rng: np.random.Generator):
        cfg.validate()
        self.cfg = cfg
        self.visual_dim = visual_dim
        T = cfg.horizon
        n_in = visual_dim + EGO_DIM + T * 3 + (2 if cfg.use_endpoints else 0)
        self.combine = MLP(n_in, cfg.hidden, cfg.hidden, rng)
        self.time_proj = Linear(cfg.time_embed_dim, cfg.hidden, rng)
        self.tau_proj = Linear(T * 3, cfg.hidden, rng)
        self.blocks = [ResidualMLPBlock(cfg.hidden, rng) for _ in range(cfg.num_blocks)]
        self.norm_out = LayerNorm(cfg.hidden)
        self.eps_head = Linear(cfg.hidden, T * 3, rng, zero_init=True)
        self.anchor_gate = Parameter(np.zeros(T * 3))
        # confidence sees only the condition, so it ranks candidates the same
        # way whatever noise or intermediate trajectory they currently carry
        self.conf_head = MLP(cfg.hidden, cfg.hidden, 1, rng, zero_out=True)
        self.sched = cfg.schedule()
        self.normalizer = TrajectoryNormalizer.identity(T)
        self.anchor_set = AnchorSet(np.zeros((cfg.num_anchors, T, 3)), "unset")

    # -------------------------------------------------------------- setup
    def set_anchors(self, anchors: AnchorSet, normalizer: TrajectoryNormalizer) -> None:
        if len(anchors) == 0:
            raise ConfigError("anchor set is empty")
        if anchors.anchors.shape[1:] != (self.cfg.horizon, 3):
            raise ShapeError(f"anchor shape {anchors.anchors.shape} does not match horizon")
        self.anchor_set = anchors
        self.normalizer = normalizer

    def start_candidates(self) -> np.ndarray:
        """Normalized [K, T, 3] trajectories the reverse process starts from."""
        if self.cfg.use_anchors:
            return self.normalizer.normalize(self.anchor_set.anchors)
        # without anchors every candidate starts from the dataset mean (zeros after normalization)
        return np.zeros((self.cfg.num_anchors, self.cfg.horizon, 3))

    def endpoints(self) -> np.ndarray:
        """Normalized anchor end points [K, 2], used as optional extra conditioning."""
        return self.normalizer.normalize(self.anchor_set.anchors)[:, -1, :2]

    # ------------------------------------------------------------ network
    def build_condition(self, c_visual, ego, anchors=None) -> Condition:
        """Fuse visual, ego and per-candidate anchor inputs into one vector per candidate.

        ``anchors`` are normalized [K, T, 3] or [B, K, T, 3] start candidates,
        by default the planner's own.
        """
        dtype = self.combine.fc1.weight.dtype
        c_visual = _as_tensor(c_visual, dtype)
        ego = np.asarray(ego, dtype=dtype)
        B = c_visual.shape[0]
        anchors = self.start_candidates() if anchors is None else np.asarray(anchors, dtype=np.float64)
        if anchors.ndim == 3:
            anchors = np.broadcast_to(anchors[None], (B,) + anchors.shape)
        if anchors.ndim != 4 or anchors.shape[0] != B or anchors.shape[2:] != (self.cfg.horizon, 3):
            raise ShapeError(f"anchor shape {anchors.shape} does not fit batch {B}, horizon {self.cfg.horizon}")
        K = anchors.shape[1]
        if c_visual.shape != (B, self.visual_dim):
            raise ShapeError(f"c_visual shape {c_visual.shape} != {(B, self.visual_dim)}")
        if ego.shape != (B, EGO_DIM):
            raise ShapeError(f"ego shape {ego.shape} != {(B, EGO_DIM)}")
        anch = Tensor(anchors.reshape(B, K, -1).astype(dtype))
        if self.cfg.use_endpoints:
            ends = np.broadcast_to(self.endpoints()[None], (B, K, 2)).astype(dtype)
            anch = concat([anch, Tensor(ends)], axis=2)
        vis = c_visual.reshape(B, 1, -1) + Tensor(np.zeros((B, K, 1), dtype=dtype))
        ego_t = Tensor(np.broadcast_to(ego[:, None, :], (B, K, EGO_DIM)).copy())
        fused = self.combine(concat([vis, ego_t, anch], axis=2))
        return Condition(c_visual, ego, anch, fused, anchors)

    def predict_noise(self, tau_i, steps, cond: Condition) -> tuple[Tensor, Tensor]:
        """Return (eps_hat [B,K,T,3], confidence logits [B,K])."""
        B, K = cond.fused.shape[0], cond.fused.shape[1]
        T = self.cfg.horizon
        dtype = cond.fused.dtype
        tau = _as_tensor(tau_i, dtype)
        if tau.shape != (B, K, T, 3):
            raise ShapeError(f"candidate shape {tau.shape} != {(B, K, T, 3)}")
        steps = np.broadcast_to(np.asarray(steps), (B,))
        temb = timestep_embedding(steps, self.cfg.time_embed_dim).astype(dtype)
        h = cond.fused + self.time_proj(Tensor(temb)).reshape(B, 1, -1) + self.tau_proj(tau.reshape(B, K, -1))
        for blk in self.blocks:
            h = blk(h)
        h = self.norm_out(h)
        # Both output terms are corrections in clean-trajectory units, turned into a
        # noise estimate by sqrt(abar / (1 - abar)); the implied clean trajectory is
        # then tau / sqrt(abar) minus the correction. The gated term is the drift of
        # the rescaled candidate away from its anchor: with the gate open the head
        # regresses the anchor-to-target offset instead of cancelling input noise.
        ab = np.array([self.sched.alpha_bar(int(i)) for i in steps]).reshape(B, 1, 1, 1)
        scale = np.sqrt(ab / np.maximum(1.0 - ab, 1e-12)).astype(dtype)
        drift = (tau * (1.0 / np.sqrt(ab)).astype(dtype) - cond.anchors.astype(dtype)).reshape(B, K, -1)
        corr = self.eps_head(h) + drift * (self.anchor_gate * GATE_GAIN)
        eps = corr.reshape(B, K, T, 3) * scale
        logits = self.conf_head(cond.fused).reshape(B, K)
        return eps, logits

    def forward(self, tau_i, steps, c_visual, ego) -> tuple[Tensor, Tensor]:
        return self.predict_noise(tau_i, steps, self.build_condition(c_visual, ego))

    # ----------------------------------------------------------- training
    def loss(self, c_visual, ego, gt: np.ndarray, rng: np.random.Generator) -> tuple[Tensor, dict]:
        """Clean-trajectory L1 on the positive candidate plus candidate-selection CE.

        Candidates are start trajectories noised to a random level in
        [1, truncation]. The implied clean trajectory of every candidate is
        compared to ground truth in meters; the closest one is the positive.
        """
        from ..heads import loss_plan  # local import: heads depends on planner types

        B = gt.shape[0]
        K, T = self.cfg.num_anchors, self.cfg.horizon
        dtype = self.combine.fc1.weight.dtype
        start = self.start_candidates()
        levels = rng.integers(1, self.sched.truncation + 1, size=B)
        noise = rng.standard_normal((B, K, T, 3))
        ab = self.sched.alpha_bars[levels - 1][:, None, None, None]
        tau = (np.sqrt(ab) * start[None] + np.sqrt(1 - ab) * noise).astype(dtype)
        eps, logits = self.predict_noise(tau, levels, self.build_condition(c_visual, ego))
        x0 = (Tensor(tau) - eps * np.sqrt(1 - ab).astype(dtype)) * (1.0 / np.sqrt(ab)).astype(dtype)
        x0_m = self.normalizer.denormalize(x0)
        dist = np.linalg.norm(x0_m.data[..., :2] - gt[:, None, :, :2], axis=-1).mean(-1)
        pos = dist.argmin(1)
        best = x0_m[np.arange(B), pos]
        l_plan = loss_plan(best, gt.astype(dtype))
        l_conf = F.cross_entropy(logits, pos, axis=1)
        total = l_plan + l_conf * self.cfg.conf_weight if self.cfg.conf_weight else l_plan
        return total, {"plan_l1": l_plan.item(), "conf_ce": l_conf.item(),
                       "ade": float(dist[np.arange(B), pos].mean())}

    # ---------------------------------------------------------- inference
    def plan(self, c_visual, ego, rng: np.random.Generator | int | None = None, steps: int | None = None,
             noise: np.ndarray | None = None) -> PlanOutput:
        """Noise the start candidates to the truncation level and denoise in ``steps`` hops.

        ``noise`` ([B, K, T, 3]) overrides the draw from ``rng``, which lets a
        caller fix the noise per scene independent of batching.
        """
        steps = self.cfg.inference_steps if steps is None else steps
        if steps < 1:
            raise DomainError("steps must be >= 1")
        start_level = max(self.sched.truncation, steps)
        if start_level > self.sched.n:
            raise DomainError(f"{steps} steps exceed the {self.sched.n}-step schedule")
        dtype = self.combine.fc1.weight.dtype
        c_visual = c_visual.data if isinstance(c_visual, Tensor) else np.asarray(c_visual)
        B = c_visual.shape[0]
        start = np.broadcast_to(self.start_candidates()[None], (B,) + self.start_candidates().shape)
        if noise is None:
            rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
            noise = rng.standard_normal(start.shape)
        elif noise.shape != start.shape:
            raise ShapeError(f"noise shape {noise.shape} != {start.shape}")
        tau = forward_diffuse(start, start_level, self.sched, noise)
        grid = inference_timesteps(start_level, steps)
        with no_grad():
            cond = self.build_condition(c_visual, ego)
            for i, j in zip(grid[:-1], grid[1:]):
                eps, logits = self.predict_noise(tau.astype(dtype), i, cond)
                tau = denoise_step(tau, eps.data.astype(np.float64), i, j, self.sched)
        conf = F.softmax(logits.detach(), axis=1).data.astype(np.float64)
        cands = self.normalizer.denormalize(tau)
        sel = select_candidate(conf)
        return PlanOutput(cands[np.arange(B), sel], cands, conf, sel)


def closed_form_zero_noise(start: np.ndarray, noise: np.ndarray, level: int, sched: NoiseSchedule) -> np.ndarray:
    """Result of the reverse process when the predictor always returns zero.

    Every hop rescales by sqrt(alpha_bar_j / alpha_bar_i), so the product
    telescopes to the noisy start divided by sqrt(alpha_bar_level).
    """
    return forward_diffuse(start, level, sched, noise) / np.sqrt(sched.alpha_bar(level))


__all__ = [
    "Condition", "DiffusionPlanner", "EGO_DIM", "GATE_GAIN", "NUM_COMMANDS", "PlanOutput", "PlannerConfig",
    "TrajectoryNormalizer", "closed_form_zero_noise", "ego_features", "select_candidate",
]
