"""Training loop, dataset preparation and checkpoint conversion."""
from __future__ import annotations

import csv
import io
import logging
import math
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt_io
from .config import RunConfig, config_from_dict
from .errors import ConfigError, DataError
from .model import Batch, PrixModel
from .planner.anchors import AnchorSet, make_anchors
from .planner.diffusion import TrajectoryNormalizer
from .sim.render import RenderedScene, render_inputs
from .sim.scenes import Scene, generate_split, read_scenes
from .tensor.optim import AdamW, ParamGroup

log = logging.getLogger(__name__)

LOG_COLUMNS = ("epoch", "total", "plan", "det", "sem", "ade", "lr")
ANCHORS, NORM_MEAN, NORM_STD = "anchors", "norm.mean", "norm.std"


class TrainingDiverged(RuntimeError):
    """Raised when the loss turns non-finite; the last good checkpoint has been written."""


# ------------------------------------------------------------------- data


@dataclass
class Dataset:
    scenes: list[Scene]
    inputs: list[RenderedScene]

    @classmethod
    def from_scenes(cls, scenes: list[Scene]) -> "Dataset":
        if not scenes:
            raise DataError("dataset is empty")
        return cls(scenes, [render_inputs(s) for s in scenes])

    def __len__(self) -> int:
        return len(self.scenes)

    @property
    def trajectories(self) -> np.ndarray:
        return np.stack([s.ego_gt for s in self.scenes])

    def batch(self, idx) -> Batch:
        return Batch.stack([self.inputs[i] for i in idx], [self.scenes[i].ego_gt for i in idx])


def load_scenes(cfg: RunConfig, split: str) -> list[Scene]:
    d = cfg.data
    path = d.train_scenes if split == "train" else d.eval_scenes
    if path:
        return read_scenes(path)
    count, seed = (d.train_count, d.train_seed) if split == "train" else (d.eval_count, d.eval_seed)
    return generate_split(count, seed, d.kinds)


# ------------------------------------------------------------------ model


def build_model(cfg: RunConfig) -> PrixModel:
    return PrixModel(cfg.model, np.random.default_rng(cfg.seed), cfg.dtype)


def fit_targets(model: PrixModel, trajectories: np.ndarray, seed: int) -> None:
    """Fit the waypoint normalizer and k-means anchors on training trajectories."""
    normalizer = TrajectoryNormalizer.fit(trajectories)
    k = model.cfg.planner.num_anchors
    if k > len(trajectories):
        raise ConfigError(f"{k} anchors requested but only {len(trajectories)} training trajectories")
    model.planner.set_anchors(make_anchors(trajectories, k, seed), normalizer)


def param_groups(model: PrixModel, encoder_mult: float) -> list[ParamGroup]:
    enc = [(f"encoder.{n}", p) for n, p in model.encoder.named_parameters()]
    enc_ids = {id(p) for _, p in enc}
    rest = [(n, p) for n, p in model.named_parameters() if id(p) not in enc_ids]
    return [ParamGroup([p for _, p in enc], encoder_mult, [n for n, _ in enc]),
            ParamGroup([p for _, p in rest], 1.0, [n for n, _ in rest])]


def to_checkpoint(model: PrixModel, cfg: RunConfig, step: int) -> ckpt_io.Checkpoint:
    arrays = OrderedDict((n, np.array(p.data)) for n, p in model.named_parameters())
    planner = model.planner
    anchors = getattr(planner, "anchor_set", None)
    arrays[ANCHORS] = np.asarray(anchors.anchors if anchors is not None else
                                 np.zeros((0, cfg.model.planner.horizon, 3)), dtype=np.float64)
    arrays[NORM_MEAN] = np.asarray(planner.normalizer.mean, dtype=np.float64)
    arrays[NORM_STD] = np.asarray(planner.normalizer.std, dtype=np.float64)
    prov = anchors.provenance if anchors is not None else "none"
    return ckpt_io.Checkpoint(arrays, cfg.to_dict(), step, prov)


def from_checkpoint(ck: ckpt_io.Checkpoint) -> tuple[PrixModel, RunConfig]:
    cfg = config_from_dict(ck.config)
    model = build_model(cfg)
    arrays = dict(ck.arrays)
    try:
        anchors = arrays.pop(ANCHORS)
        norm = TrajectoryNormalizer(arrays.pop(NORM_MEAN), arrays.pop(NORM_STD))
        model.load_state_dict(arrays)
    except (KeyError, ValueError) as e:
        raise DataError(f"checkpoint does not match its config: {e}") from e
    if len(anchors):
        model.planner.set_anchors(AnchorSet(anchors, ck.anchor_provenance), norm)
    else:
        model.planner.normalizer = norm
    return model, cfg


def load_model(path) -> tuple[PrixModel, RunConfig]:
    return from_checkpoint(ckpt_io.load(path))


# ------------------------------------------------------------------- loop


@dataclass
class TrainResult:
    model: PrixModel
    history: list[dict] = field(default_factory=list)
    step: int = 0

    def csv_text(self) -> str:
        return format_log(self.history)


def format_log(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(LOG_COLUMNS)
    for r in rows:
        w.writerow([r["epoch"]] + [repr(float(r[k])) for k in LOG_COLUMNS[1:]])
    return buf.getvalue()


def _all_zero(w) -> bool:
    return w.plan == 0 and (w.det == 0 or (w.cls == 0 and w.reg == 0)) and w.sem == 0


def train(cfg: RunConfig, data: Dataset | None = None, ckpt_path=None, log_path=None,
          on_epoch=None) -> TrainResult:
    """Run the configured number of epochs; deterministic for a given config and seed.

    Writes the per-epoch CSV log and the final checkpoint when paths are
    given. A non-finite loss writes the last good checkpoint and raises
    ``TrainingDiverged``.
    """
    cfg.validate()
    data = data or Dataset.from_scenes(load_scenes(cfg, "train"))
    model = build_model(cfg)
    fit_targets(model, data.trajectories, cfg.seed)
    o = cfg.optim
    opt = AdamW(param_groups(model, o.encoder_lr_mult), lr=o.lr, weight_decay=o.weight_decay,
                milestones=o.milestones, gamma=o.gamma)
    rng = np.random.default_rng([cfg.seed, 1])
    model.encoder.seed_dropout(np.random.default_rng([cfg.seed, 2]))
    model.train()
    result = TrainResult(model)
    skip_backward = _all_zero(cfg.loss)
    n = len(data)
    for epoch in range(1, o.epochs + 1):
        order = rng.permutation(n)
        sums: dict[str, float] = {}
        count = 0
        lr = opt.lr()
        for start in range(0, n, o.batch_size):
            idx = order[start:start + o.batch_size]
            total, parts = model.loss(data.batch(idx), cfg.loss, rng)
            problem = None if math.isfinite(parts["total"]) else "non-finite loss"
            if problem is None and not skip_backward:
                opt.zero_grad()
                total.backward()
                try:
                    opt.step()  # checks gradients before touching any parameter
                except FloatingPointError as e:
                    problem = str(e)
            if problem is not None:
                if ckpt_path is not None:
                    ckpt_io.save(ckpt_path, to_checkpoint(model, cfg, result.step))
                _write_log(log_path, result.history)
                raise TrainingDiverged(f"{problem} at epoch {epoch}, step {result.step}")
            result.step += 1
            for k in ("total", "plan", "det", "sem", "ade"):
                sums[k] = sums.get(k, 0.0) + parts.get(k, 0.0) * len(idx)
            count += len(idx)
        row = {"epoch": epoch, "lr": lr, **{k: v / count for k, v in sums.items()}}
        result.history.append(row)
        log.info("epoch %d total %.4f plan %.4f det %.4f sem %.4f ade %.3f", epoch,
                 row["total"], row["plan"], row["det"], row["sem"], row["ade"])
        if on_epoch is not None:
            on_epoch(row)
        opt.epoch_step()
    if ckpt_path is not None:
        ckpt_io.save(ckpt_path, to_checkpoint(model, cfg, result.step))
    _write_log(log_path, result.history)
    return result


def _write_log(path, rows) -> None:
    if path is not None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(format_log(rows))
