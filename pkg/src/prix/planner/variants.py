"""Single-trajectory regression planners used as baselines in the head comparison."""
from __future__ import annotations

import numpy as np

from ..backbone import AttentionBlock
from ..tensor.nn import MLP, Linear, Module, Parameter
from ..tensor.tensor import Tensor, concat, no_grad, sigmoid, stack, tanh
from .diffusion import EGO_DIM, PlannerConfig, PlanOutput, TrajectoryNormalizer, _as_tensor


class RegressionPlanner(Module):
    """Base: maps (c_visual, ego) to one normalized [T, 3] trajectory."""

    uses_visual = True

    def __init__(self, cfg: PlannerConfig, visual_dim: int):
        cfg.validate()
        self.cfg = cfg
        self.visual_dim = visual_dim
        self.normalizer = TrajectoryNormalizer.identity(cfg.horizon)

    def set_anchors(self, anchors, normalizer: TrajectoryNormalizer) -> None:
        # anchors are unused by regression heads; only the normalization is kept
        self.normalizer = normalizer

    def context(self, c_visual, ego) -> Tensor:
        dtype = self.parameters()[0].dtype
        ego_t = Tensor(np.asarray(ego, dtype=dtype))
        if not self.uses_visual:
            return ego_t
        return concat([_as_tensor(c_visual, dtype), ego_t], axis=1)

    def regress(self, ctx: Tensor) -> Tensor:
        raise NotImplementedError

    def forward(self, c_visual, ego) -> Tensor:
        """Trajectory in meters, [B, T, 3]."""
        return self.normalizer.denormalize(self.regress(self.context(c_visual, ego)))

    def loss(self, c_visual, ego, gt: np.ndarray, rng: np.random.Generator) -> tuple[Tensor, dict]:
        from ..heads import loss_plan

        pred = self(c_visual, ego)
        l_plan = loss_plan(pred, gt.astype(pred.dtype))
        ade = float(np.linalg.norm(pred.data[..., :2] - gt[..., :2], axis=-1).mean())
        return l_plan, {"plan_l1": l_plan.item(), "ade": ade}

    def plan(self, c_visual, ego, rng=None, steps: int | None = None, noise=None) -> PlanOutput:
        with no_grad():
            traj = self(c_visual, ego).data.astype(np.float64)
        return PlanOutput(traj)


class MLPPlanner(RegressionPlanner):
    def __init__(self, cfg: PlannerConfig, visual_dim: int, rng: np.random.Generator):
        super().__init__(cfg, visual_dim)
        self.net = MLP(visual_dim + EGO_DIM, cfg.hidden, cfg.horizon * 3, rng)

    def regress(self, ctx: Tensor) -> Tensor:
        return self.net(ctx).reshape(ctx.shape[0], self.cfg.horizon, 3)


class EgoMLPPlanner(MLPPlanner):
    """Sees only the ego state; camera features never enter the computation."""

    uses_visual = False

    def __init__(self, cfg: PlannerConfig, visual_dim: int, rng: np.random.Generator):
        RegressionPlanner.__init__(self, cfg, visual_dim)
        self.net = MLP(EGO_DIM, cfg.hidden, cfg.horizon * 3, rng)


class TransformerPlanner(RegressionPlanner):
    """One learned query per waypoint attends jointly with a context token."""

    def __init__(self, cfg: PlannerConfig, visual_dim: int, rng: np.random.Generator, heads: int = 4):
        super().__init__(cfg, visual_dim)
        d = cfg.hidden
        self.ctx_proj = Linear(visual_dim + EGO_DIM, d, rng)
        self.queries = Parameter(rng.normal(0.0, 0.02, size=(cfg.horizon, d)))
        self.block = AttentionBlock(d, heads, rng)
        self.out = Linear(d, 3, rng)

    def regress(self, ctx: Tensor) -> Tensor:
        B = ctx.shape[0]
        c = self.ctx_proj(ctx).reshape(B, 1, -1)
        q = self.queries.reshape(1, self.cfg.horizon, -1) + Tensor(np.zeros((B, 1, 1), dtype=ctx.dtype))
        tokens = self.block(concat([c, q], axis=1))
        return self.out(tokens[:, 1:, :])


class LSTMPlanner(RegressionPlanner):
    """Autoregressive LSTM cell; each step consumes the context and the previous waypoint."""

    def __init__(self, cfg: PlannerConfig, visual_dim: int, rng: np.random.Generator):
        super().__init__(cfg, visual_dim)
        d = cfg.hidden
        self.init_h = Linear(visual_dim + EGO_DIM, d, rng)
        self.w_x = Linear(visual_dim + EGO_DIM + 3, 4 * d, rng)
        self.w_h = Linear(d, 4 * d, rng, bias=False)
        self.out = Linear(d, 3, rng)

    def regress(self, ctx: Tensor) -> Tensor:
        B, d = ctx.shape[0], self.cfg.hidden
        h = tanh(self.init_h(ctx))
        c = Tensor(np.zeros((B, d), dtype=ctx.dtype))
        prev = Tensor(np.zeros((B, 3), dtype=ctx.dtype))
        outs = []
        for _ in range(self.cfg.horizon):
            gates = self.w_x(concat([ctx, prev], axis=1)) + self.w_h(h)
            i, f, g, o = (gates[:, k * d:(k + 1) * d] for k in range(4))
            c = sigmoid(f) * c + sigmoid(i) * tanh(g)
            h = sigmoid(o) * tanh(c)
            prev = self.out(h)
            outs.append(prev)
        return stack(outs, axis=1)


def make_planner(cfg: PlannerConfig, visual_dim: int, rng: np.random.Generator) -> Module:
    from .diffusion import DiffusionPlanner

    cfg.validate()
    builders = {
        "diffusion": DiffusionPlanner,
        "mlp": MLPPlanner,
        "transformer": TransformerPlanner,
        "lstm": LSTMPlanner,
        "ego_mlp": EgoMLPPlanner,
    }
    return builders[cfg.head](cfg, visual_dim, rng)


def plan_variant(c_visual, ego, planner: RegressionPlanner) -> np.ndarray:
    """Single regressed trajectory [B, T, 3] in meters."""
    return planner.plan(c_visual, ego).trajectory
