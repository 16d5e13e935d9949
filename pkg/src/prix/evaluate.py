"""Planning + scoring over a scene set, metrics export and throughput timing."""
from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import PrixModel
from .sim.render import RenderedScene, render_inputs
from .sim.scenes import Scene
from .sim.scoring import MetricConfig, score_scene
from .tensor.tensor import no_grad

# display names of the headline columns, keyed by the scorer's metric names
HEADLINE = {"NC": "NC", "DAC": "DAC", "TTC": "TTC", "C": "Comf.", "EP": "EP"}
EXTENDED = ("DDC", "TL", "LK", "HC", "EC")
CSV_COLUMNS = ("scene_id", "NC", "DAC", "TTC", "Comf.", "EP", "PDMS") + EXTENDED + ("EPDMS", "ADE", "error")


@dataclass
class SceneResult:
    scene_id: str
    scores: dict = field(default_factory=dict)
    pdms: float = float("nan")
    epdms: float = float("nan")
    ade: float = float("nan")
    error: str = ""


@dataclass
class EvalResult:
    rows: list[SceneResult]

    @property
    def ok(self) -> list[SceneResult]:
        return [r for r in self.rows if not r.error]

    @property
    def errors(self) -> list[SceneResult]:
        return [r for r in self.rows if r.error]

    def _mean(self, get) -> float:
        vals = [get(r) for r in self.ok]
        return float(np.mean(vals)) if vals else float("nan")

    def metrics(self) -> dict:
        """Mean headline columns: NC, DAC, TTC, Comf., EP, PDMS."""
        out = {name: self._mean(lambda r, m=m: r.scores[m]) for m, name in HEADLINE.items()}
        out["PDMS"] = self._mean(lambda r: r.pdms)
        return out

    def extended(self) -> dict:
        out = {m: self._mean(lambda r, m=m: r.scores[m]) for m in EXTENDED}
        out["EPDMS"] = self._mean(lambda r: r.epdms)
        out["ADE"] = self._mean(lambda r: r.ade)
        out["scenes"] = len(self.ok)
        out["errors"] = {r.scene_id: r.error for r in self.errors}
        return out

    def write(self, metrics_path) -> dict[str, Path]:
        """Write the headline JSON, a sibling ``.extended.json`` and a per-scene ``.csv``."""
        path = Path(metrics_path)
        path.parent.mkdir(parents=True, exist_ok=True)
        stem = path.with_suffix("") if path.suffix == ".json" else path
        paths = {"metrics": path, "extended": Path(f"{stem}.extended.json"), "scenes": Path(f"{stem}.csv")}
        paths["metrics"].write_text(json.dumps(self.metrics(), indent=2) + "\n")
        paths["extended"].write_text(json.dumps(self.extended(), indent=2, sort_keys=True) + "\n")
        with open(paths["scenes"], "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_COLUMNS)
            for r in self.rows:
                vals = [r.scores.get(m, float("nan")) for m in HEADLINE] + [r.pdms]
                vals += [r.scores.get(m, float("nan")) for m in EXTENDED] + [r.epdms, r.ade]
                w.writerow([r.scene_id] + [repr(float(v)) for v in vals] + [r.error])
        return paths


def score_one(scene: Scene, traj: np.ndarray, cfg: MetricConfig) -> SceneResult:
    traj = np.asarray(traj, dtype=np.float64)
    res = SceneResult(scene.scene_id)
    if traj.shape != scene.ego_gt.shape:
        res.error = f"trajectory shape {traj.shape} does not match scene horizon {scene.ego_gt.shape}"
        return res
    report = score_scene(scene, traj, cfg)
    res.scores, res.pdms, res.epdms = report.scores, report.pdms, report.epdms
    res.ade = float(np.linalg.norm(traj[:, :2] - scene.ego_gt[:, :2], axis=1).mean())
    return res


def score_trajectories(scenes: list[Scene], trajs: list[np.ndarray], cfg: MetricConfig) -> EvalResult:
    return EvalResult([score_one(s, t, cfg) for s, t in zip(scenes, trajs)])


def scene_noise(seed: int, index: int, shape) -> np.ndarray:
    """Start noise for scene ``index``; independent of batch composition."""
    return np.random.default_rng([int(seed), int(index)]).standard_normal(shape)


def plan_scenes(model: PrixModel, scenes: list[Scene], seed: int, inputs: list[RenderedScene] | None = None,
                steps: int | None = None, batch_size: int = 8) -> list[np.ndarray | str]:
    """Selected trajectory per scene, or an error string when the scene cannot be planned."""
    inputs = inputs if inputs is not None else [render_inputs(s) for s in scenes]
    horizon = model.cfg.planner.horizon
    out: list = [None] * len(scenes)
    todo = []
    for i, s in enumerate(scenes):
        if s.horizon != horizon:
            out[i] = f"scene horizon {s.horizon} != planner horizon {horizon}"
        else:
            todo.append(i)
    nshape = model.planner_noise_shape
    for start in range(0, len(todo), batch_size):
        idx = todo[start:start + batch_size]
        images = np.stack([inputs[i].images for i in idx])
        ego = np.stack([inputs[i].ego for i in idx])
        noise = None if nshape is None else np.stack([scene_noise(seed, i, nshape) for i in idx])
        plans = model.plan(images, ego, noise=noise, steps=steps)
        for k, i in enumerate(idx):
            out[i] = plans.trajectory[k]
    return out


def evaluate(model: PrixModel, scenes: list[Scene], metric_cfg: MetricConfig, seed: int,
             inputs: list[RenderedScene] | None = None, steps: int | None = None) -> EvalResult:
    plans = plan_scenes(model, scenes, seed, inputs, steps)
    rows = []
    for scene, p in zip(scenes, plans):
        if isinstance(p, str):
            rows.append(SceneResult(scene.scene_id, error=p))
        else:
            rows.append(score_one(scene, p, metric_cfg))
    return EvalResult(rows)


def measure_throughput(model: PrixModel, sample: RenderedScene, runs: int = 100, seed: int = 0,
                       steps: int | None = None) -> dict:
    """Median wall-clock milliseconds per scene: planner head alone and end to end."""
    if runs < 1:
        return {"planner_ms": float("nan"), "e2e_ms": float("nan")}
    images, ego = sample.images[None], sample.ego[None]
    nshape = model.planner_noise_shape
    noise = None if nshape is None else scene_noise(seed, 0, nshape)[None]
    with no_grad():
        _, c_visual = model.encode(images)
    planner_t, e2e_t = [], []
    model.eval()
    for _ in range(runs):
        t0 = time.perf_counter()
        model.planner.plan(c_visual, ego, noise=noise, steps=steps)
        planner_t.append(time.perf_counter() - t0)
        t0 = time.perf_counter()
        model.plan(images, ego, noise=noise, steps=steps)
        e2e_t.append(time.perf_counter() - t0)
    model.train()
    return {"planner_ms": 1e3 * float(np.median(planner_t)), "e2e_ms": 1e3 * float(np.median(e2e_t))}
