from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError


@dataclass
class AnchorSet:
    anchors: np.ndarray  # [K, T, 3]
    provenance: str = "kmeans"

    def __len__(self) -> int:
        return len(self.anchors)


def kmeans(points: np.ndarray, k: int, seed: int, iters: int = 100) -> np.ndarray:
    """Lloyd's algorithm with k-means++ seeding; returns [k, D] centroids."""
    rng = np.random.default_rng(seed)
    n = len(points)
    centers = [points[rng.integers(n)]]
    d2 = ((points - centers[0]) ** 2).sum(1)
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:
            # all remaining points coincide with a centre; take unused indices in order
            idx = next(i for i in range(n) if not any(np.array_equal(points[i], c) for c in centers))
        else:
            idx = rng.choice(n, p=d2 / total)
        centers.append(points[idx])
        d2 = np.minimum(d2, ((points - points[idx]) ** 2).sum(1))
    centers = np.array(centers, dtype=np.float64)
    for _ in range(iters):
        dist = ((points[:, None, :] - centers[None]) ** 2).sum(-1)
        label = dist.argmin(1)
        new = centers.copy()
        for c in range(k):
            members = points[label == c]
            if len(members):
                new[c] = members.mean(0)
        if np.allclose(new, centers, rtol=0, atol=1e-12):
            centers = new
            break
        centers = new
    return centers


def make_anchors(trajectories: np.ndarray, k: int, seed: int = 0) -> AnchorSet:
    trajectories = np.asarray(trajectories, dtype=np.float64)
    if k < 1:
        raise ConfigError("need K >= 1 anchors")
    if len(trajectories) == 0:
        raise ConfigError("anchor dataset is empty")
    if k > len(trajectories):
        raise ConfigError(f"K={k} exceeds dataset size {len(trajectories)}")
    shape = trajectories.shape[1:]
    centers = kmeans(trajectories.reshape(len(trajectories), -1), k, seed)
    # deterministic order: by final longitudinal then lateral position
    flat_end = centers.reshape((k,) + shape)[:, -1, :2]
    order = np.lexsort((flat_end[:, 1], flat_end[:, 0]))
    return AnchorSet(centers[order].reshape((k,) + shape), "kmeans")
