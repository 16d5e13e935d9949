"""Closed-form driving scores: per-metric sub-scores and their PDMS / EPDMS aggregates."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError, ContractError
from .geometry import box_overlap, points_in_polygon, project_to_polyline, segments_intersect, time_to_collision
from .scenes import EGO_LENGTH, EGO_WIDTH, Scene

log = logging.getLogger(__name__)

PDMS_METRICS = ("NC", "DAC", "TTC", "EP", "C")
EXTENDED_METRICS = ("DDC", "TL", "LK", "HC", "EC")


@dataclass
class MetricConfig:
    dt: float = 0.5
    ttc_threshold: float = 1.0
    accel_bound: float = 4.0
    jerk_bound: float = 8.0
    ec_factor: float = 0.75
    lk_bound: float = 0.75
    ddc_radius: float = 2.0
    ddc_min_speed: float = 0.5
    ep_min_progress: float = 5.0
    history_steps: int = 2
    ego_length: float = EGO_LENGTH
    ego_width: float = EGO_WIDTH
    pdms_penalty: tuple = ("NC", "DAC")
    pdms_weights: dict = field(default_factory=lambda: {"EP": 5.0, "TTC": 5.0, "C": 2.0})
    penalty: tuple = ("NC", "DAC", "DDC", "TL")
    weights: dict = field(default_factory=lambda: {"TTC": 5.0, "EP": 5.0, "LK": 2.0, "HC": 2.0, "EC": 2.0})

    def validate(self) -> None:
        for name, pen, w in (("pdms", self.pdms_penalty, self.pdms_weights), ("epdms", self.penalty, self.weights)):
            if set(pen) & set(w):
                raise ConfigError(f"{name}: penalty and averaged metric sets overlap")
            if not w or any(not (v > 0) for v in w.values()):
                raise ConfigError(f"{name}: averaged weights must be positive")
        if self.dt <= 0 or self.ttc_threshold < 0:
            raise ConfigError("dt must be positive and the TTC threshold non-negative")


@dataclass
class ScoreReport:
    scores: dict  # metric name -> value in [0, 1]
    pdms: float | None = None
    epdms: float | None = None


# ----------------------------------------------------------- sub-metrics


def _check(traj: np.ndarray, scene: Scene) -> np.ndarray:
    traj = np.asarray(traj, dtype=np.float64)
    if traj.ndim != 2 or traj.shape[1] != 3:
        raise ContractError(f"trajectory must be [T, 3], got {traj.shape}")
    if len(traj) != scene.horizon or any(len(a.script) != len(traj) for a in scene.agents):
        raise ContractError(f"trajectory horizon {len(traj)} != scene horizon {scene.horizon}")
    if not np.all(np.isfinite(traj)):
        raise ContractError("trajectory contains non-finite values")
    return traj


def _ego_box(pose, cfg: MetricConfig) -> np.ndarray:
    return np.array([pose[0], pose[1], cfg.ego_width, cfg.ego_length, pose[2]])


def _with_origin(traj: np.ndarray) -> np.ndarray:
    return np.concatenate([np.zeros((1, 3)), traj])


def comfortable(points: np.ndarray, dt: float, accel_bound: float, jerk_bound: float) -> bool:
    """Finite-difference acceleration and jerk magnitudes within bounds."""
    vel = np.diff(points, axis=0) / dt
    acc = np.diff(vel, axis=0) / dt
    jerk = np.diff(acc, axis=0) / dt
    ok_a = len(acc) == 0 or np.linalg.norm(acc, axis=1).max() <= accel_bound + 1e-9
    ok_j = len(jerk) == 0 or np.linalg.norm(jerk, axis=1).max() <= jerk_bound + 1e-9
    return bool(ok_a and ok_j)


def no_collision(traj: np.ndarray, scene: Scene, cfg: MetricConfig) -> float:
    for k, pose in enumerate(traj, 1):
        ego = _ego_box(pose, cfg)
        if any(box_overlap(ego, a.box_at(k)) for a in scene.agents):
            return 0.0
    return 1.0


def min_time_to_collision(traj: np.ndarray, scene: Scene, cfg: MetricConfig, horizon: float = math.inf) -> float:
    """Smallest constant-velocity projected contact time over plan steps, ignoring current overlaps."""
    path = _with_origin(traj)
    best = math.inf
    for k in range(len(traj)):
        ego = _ego_box(path[k], cfg)
        v_ego = (path[k + 1, :2] - path[k, :2]) / cfg.dt
        for a in scene.agents:
            box = a.box_at(k)
            if box_overlap(ego, box):
                continue
            best = min(best, time_to_collision(ego, v_ego, box, a.velocity_at(k, cfg.dt), horizon))
    return best


def route_progress(points: np.ndarray, route: np.ndarray) -> float:
    s, _, _ = project_to_polyline(np.vstack([[0.0, 0.0], points[-1:, :2]]), route)
    return float(s[1] - s[0])


def score_submetrics(traj, scene: Scene, cfg: MetricConfig | None = None) -> dict:
    """NC, DAC, TTC, EP and C for one planned trajectory."""
    cfg = cfg or MetricConfig()
    traj = _check(traj, scene)
    nc = no_collision(traj, scene, cfg)
    dac = float(points_in_polygon(traj[:, :2], scene.drivable).all())
    ttc = float(min_time_to_collision(traj, scene, cfg, 2 * cfg.ttc_threshold) >= cfg.ttc_threshold)
    gt_prog = route_progress(scene.ego_gt, scene.centerlines[0])
    if gt_prog < cfg.ep_min_progress:
        ep = 1.0
    else:
        ep = float(np.clip(route_progress(traj, scene.centerlines[0]) / gt_prog, 0.0, 1.0))
    c = float(comfortable(_with_origin(traj)[:, :2], cfg.dt, cfg.accel_bound, cfg.jerk_bound))
    return {"NC": nc, "DAC": dac, "TTC": ttc, "EP": ep, "C": c}


def direction_compliant(traj: np.ndarray, scene: Scene, cfg: MetricConfig) -> float:
    path = _with_origin(traj)[:, :2]
    for k in range(len(traj)):
        step = path[k + 1] - path[k]
        if np.linalg.norm(step) / cfg.dt < cfg.ddc_min_speed:
            continue
        mid = (path[k + 1] + path[k]) / 2
        near = []
        for line in scene.centerlines:
            _, dist, tan = project_to_polyline(mid[None], line)
            if dist[0] <= cfg.ddc_radius:
                near.append(float(tan[0] @ step))
        if near and max(near) < 0:
            return 0.0
    return 1.0


def light_compliant(traj: np.ndarray, scene: Scene) -> float:
    path = _with_origin(traj)[:, :2]
    for light in scene.lights:
        if light.state != "red":
            continue
        a, b = light.stopline
        if any(segments_intersect(path[k], path[k + 1], a, b) for k in range(len(path) - 1)):
            return 0.0
    return 1.0


def lane_keeping(traj: np.ndarray, scene: Scene, cfg: MetricConfig) -> float:
    dev = np.min([project_to_polyline(traj[:, :2], line)[1] for line in scene.centerlines], axis=0)
    return float(dev.max() <= cfg.lk_bound)


def extended_submetrics(traj, scene: Scene, cfg: MetricConfig | None = None) -> dict:
    """DDC, TL, LK, HC and EC under simplified rules."""
    cfg = cfg or MetricConfig()
    traj = _check(traj, scene)
    if not scene.centerlines:
        raise ConfigError("scene has no lane centerlines; lane direction unknown")
    history = scene.ego_history(cfg.history_steps, cfg.dt)
    with_hist = np.vstack([history, _with_origin(traj)[:, :2]])
    plan = _with_origin(traj)[:, :2]
    return {
        "DDC": direction_compliant(traj, scene, cfg),
        "TL": light_compliant(traj, scene),
        "LK": lane_keeping(traj, scene, cfg),
        "HC": float(comfortable(with_hist, cfg.dt, cfg.accel_bound, cfg.jerk_bound)),
        "EC": float(comfortable(plan, cfg.dt, cfg.ec_factor * cfg.accel_bound, cfg.ec_factor * cfg.jerk_bound)),
    }


# ----------------------------------------------------------- aggregation


def _scores(report) -> dict:
    return report.scores if isinstance(report, ScoreReport) else report


def _weighted(scores: dict, penalty, weights: dict) -> float:
    missing = [m for m in list(penalty) + list(weights) if m not in scores]
    if missing:
        raise ContractError(f"missing sub-scores {missing}")
    prod = 1.0
    for m in penalty:
        prod *= scores[m]
    avg = sum(weights[m] * scores[m] for m in weights) / sum(weights.values())
    return prod * avg


def pdms_aggregate(report, cfg: MetricConfig | None = None) -> float:
    """Product of penalty scores times the weighted mean of EP, TTC and C."""
    cfg = cfg or MetricConfig()
    return _weighted(_scores(report), cfg.pdms_penalty, cfg.pdms_weights)


def epdms_aggregate(agent, human, cfg: MetricConfig | None = None) -> float:
    """Human-filtered aggregate.

    A metric the human reference does not pass (score != 1) is neutral: a
    penalty becomes 1, an averaged metric is dropped and the remaining
    weights renormalize.
    """
    cfg = cfg or MetricConfig()
    a, h = _scores(agent), _scores(human)
    missing = [m for m in list(cfg.penalty) + list(cfg.weights) if m not in a or m not in h]
    if missing:
        raise ContractError(f"missing sub-scores {missing}")
    prod = 1.0
    for m in cfg.penalty:
        prod *= a[m] if h[m] == 1.0 else 1.0
    kept = {m: w for m, w in cfg.weights.items() if h[m] == 1.0}
    if not kept:
        log.warning("every averaged metric was filtered out by the human reference; EPDMS set to 0")
        return 0.0
    return prod * sum(w * a[m] for m, w in kept.items()) / sum(kept.values())


def score_scene(scene: Scene, traj, cfg: MetricConfig | None = None, human: dict | None = None) -> ScoreReport:
    """All ten sub-scores plus PDMS and EPDMS (human reference defaults to the ground truth)."""
    cfg = cfg or MetricConfig()
    scores = score_submetrics(traj, scene, cfg)
    scores.update(extended_submetrics(traj, scene, cfg))
    if human is None:
        if np.array_equal(np.asarray(traj, dtype=np.float64), scene.ego_gt):
            human = scores
        else:
            human = score_submetrics(scene.ego_gt, scene, cfg)
            human.update(extended_submetrics(scene.ego_gt, scene, cfg))
    return ScoreReport(scores, pdms_aggregate(scores, cfg), epdms_aggregate(scores, human, cfg))
