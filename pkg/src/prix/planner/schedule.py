"""Noise schedule and the closed-form forward / deterministic reverse updates."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DomainError


@dataclass(frozen=True)
class NoiseSchedule:
    betas: np.ndarray
    alpha_bars: np.ndarray
    truncation: int

    @property
    def n(self) -> int:
        return len(self.betas)

    def alpha_bar(self, i: int) -> float:
        """Signal retention at step ``i``; step 0 is the clean trajectory."""
        if i == 0:
            return 1.0
        if not 1 <= i <= self.n:
            raise DomainError(f"diffusion step {i} outside [1, {self.n}]")
        return float(self.alpha_bars[i - 1])


def make_schedule(n: int, kind: str = "linear", beta_start: float = 1e-4, beta_end: float = 2e-2,
                  beta: float | None = None, truncation: int | None = None) -> NoiseSchedule:
    if n < 1:
        raise DomainError("schedule needs n >= 1")
    if kind == "linear":
        betas = np.linspace(beta_start, beta_end, n, dtype=np.float64)
    elif kind == "constant":
        betas = np.full(n, beta if beta is not None else beta_start, dtype=np.float64)
    elif kind == "explicit":
        betas = np.asarray(beta, dtype=np.float64)
        if betas.shape != (n,):
            raise DomainError(f"need {n} explicit betas")
    else:
        raise DomainError(f"unknown schedule kind {kind!r}")
    if np.any(betas < 0) or np.any(betas >= 1):
        raise DomainError("betas must lie in [0, 1)")
    alpha_bars = np.cumprod(1.0 - betas)
    trunc = n // 2 if truncation is None else int(truncation)
    if not 1 <= trunc <= n:
        raise DomainError(f"truncation {trunc} outside [1, {n}]")
    return NoiseSchedule(betas, alpha_bars, trunc)


def forward_diffuse(tau0, i: int, sched: NoiseSchedule, noise):
    """Sample of q(tau^i | tau^0) given the standard-normal draw ``noise``."""
    if not 1 <= i <= sched.n:
        raise DomainError(f"diffusion step {i} outside [1, {sched.n}]")
    if np.shape(noise) != np.shape(tau0):
        raise DomainError("noise and trajectory shapes differ")
    ab = sched.alpha_bar(i)
    return tau0 * np.sqrt(ab) + noise * np.sqrt(1.0 - ab)


def predict_clean(tau_i, eps_hat, i: int, sched: NoiseSchedule):
    ab = sched.alpha_bar(i)
    if ab <= 0.0:
        raise DomainError("alpha_bar is zero; reverse step is singular")
    return (tau_i - eps_hat * np.sqrt(1.0 - ab)) * (1.0 / np.sqrt(ab))


def denoise_step(tau_i, eps_hat, i: int, j: int, sched: NoiseSchedule):
    """Deterministic DDIM update from step ``i`` to step ``j < i``.

    Works on numpy arrays and on autograd Tensors alike.
    """
    if not j < i:
        raise DomainError(f"reverse step needs j < i, got i={i}, j={j}")
    x0 = predict_clean(tau_i, eps_hat, i, sched)
    if j == 0:
        return x0
    ab_j = sched.alpha_bar(j)
    return x0 * np.sqrt(ab_j) + eps_hat * np.sqrt(1.0 - ab_j)


def inference_timesteps(start: int, steps: int) -> list[int]:
    """Strictly decreasing integer grid ``start -> ... -> 0`` with ``steps`` hops."""
    if steps < 1:
        raise DomainError("need at least one denoising step")
    if steps > start:
        raise DomainError(f"cannot take {steps} distinct steps from level {start}")
    grid = [int(round(x)) for x in np.linspace(start, 0, steps + 1)]
    if len(set(grid)) != len(grid):
        raise AssertionError(f"degenerate timestep grid {grid}")
    return grid


def timestep_embedding(steps, dim: int = 32) -> np.ndarray:
    """Sinusoidal embedding, shape [len(steps), dim]."""
    steps = np.atleast_1d(np.asarray(steps, dtype=np.float64))
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / half)
    args = steps[:, None] * freqs[None, :]
    return np.concatenate([np.sin(args), np.cos(args)], axis=1)
