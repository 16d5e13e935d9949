from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .tensor import Tensor


@dataclass
class ParamGroup:
    params: list[Tensor]
    lr_mult: float = 1.0
    names: list[str] = field(default_factory=list)


@dataclass
class OptimState:
    base_lr: float
    weight_decay: float
    milestones: tuple[int, ...] = ()
    gamma: float = 0.1
    step: int = 0
    epoch: int = 0
    first_moment: dict[int, np.ndarray] = field(default_factory=dict)
    second_moment: dict[int, np.ndarray] = field(default_factory=dict)

    def lr(self, lr_mult: float = 1.0) -> float:
        passed = sum(1 for m in self.milestones if self.epoch >= m)
        return self.base_lr * self.gamma ** passed * lr_mult


class AdamW:
    """AdamW with decoupled weight decay and a MultiStep learning-rate schedule.

    Parameters without a gradient are skipped entirely, weight decay included.
    """

    def __init__(self, groups: Sequence[ParamGroup] | Sequence[Tensor], lr: float = 1e-4,
                 weight_decay: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8,
                 milestones: Sequence[int] = (), gamma: float = 0.1):
        if groups and isinstance(groups[0], Tensor):
            groups = [ParamGroup(list(groups))]
        self.groups: list[ParamGroup] = list(groups)
        self.betas = betas
        self.eps = eps
        self.state = OptimState(lr, weight_decay, tuple(sorted(milestones)), gamma)

    def zero_grad(self) -> None:
        for g in self.groups:
            for p in g.params:
                p.grad = None

    def lr(self, group: ParamGroup | None = None) -> float:
        return self.state.lr(1.0 if group is None else group.lr_mult)

    def step(self) -> None:
        """Apply one update; nothing is written unless every new value is finite."""
        self._check_finite()
        st = self.state
        b1, b2 = self.betas
        c1 = 1.0 - b1 ** (st.step + 1)
        c2 = 1.0 - b2 ** (st.step + 1)
        staged = []
        for group in self.groups:
            lr = st.lr(group.lr_mult)
            for i, p in enumerate(group.params):
                if p.grad is None:
                    continue
                key = id(p)
                g = p.grad.astype(p.dtype, copy=False)
                m = st.first_moment.get(key, 0.0) * b1 + (1.0 - b1) * g
                v = st.second_moment.get(key, 0.0) * b2 + (1.0 - b2) * g * g
                with np.errstate(over="ignore", invalid="ignore"):
                    data = p.data * (1.0 - lr * st.weight_decay) if st.weight_decay else p.data
                    data = data - (lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.dtype, copy=False)
                if not np.all(np.isfinite(data)):
                    name = group.names[i] if i < len(group.names) else f"param[{i}]"
                    raise FloatingPointError(f"update of {name} is non-finite at step {st.step + 1}")
                staged.append((p, key, m, v, data))
        st.step += 1
        for p, key, m, v, data in staged:
            st.first_moment[key], st.second_moment[key] = m, v
            p.data = data.astype(p.dtype, copy=False)

    def epoch_step(self) -> None:
        """Advance the MultiStep schedule by one epoch."""
        self.state.epoch += 1

    def _check_finite(self) -> None:
        for group in self.groups:
            for i, p in enumerate(group.params):
                if p.grad is not None and not np.all(np.isfinite(p.grad)):
                    name = group.names[i] if i < len(group.names) else f"param[{i}]"
                    bad = int(np.sum(~np.isfinite(p.grad)))
                    raise FloatingPointError(
                        f"non-finite gradient in {name} (shape {p.shape}, {bad} bad entries) "
                        f"at step {self.state.step + 1}")
