"""Ablation studies: each variant trains and evaluates under the same seed and budget."""
from __future__ import annotations

import copy
import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

from .config import RunConfig
from .errors import ConfigError
from .evaluate import evaluate, measure_throughput
from .heads import LossWeights
from .train import Dataset, load_scenes, train

log = logging.getLogger(__name__)

STEP_SWEEP = (2, 5, 10, 20, 50)
ROW_COLUMNS = ("study", "variant", "params", "backbone_params", "PDMS", "EPDMS", "ADE", "planner_ms", "e2e_ms")

Edit = Callable[[RunConfig], None]


@dataclass
class Variant:
    name: str
    edit: Edit
    steps: int | None = None  # inference steps override (steps study)


def _cart(dim: int, sharing: str) -> Edit:
    def edit(cfg: RunConfig) -> None:
        cfg.model.backbone.cart.dim = dim
        cfg.model.backbone.cart.weight_sharing = sharing
    return edit


def _cart_enabled(on: bool) -> Edit:
    def edit(cfg: RunConfig) -> None:
        cfg.model.backbone.cart.enabled = on
    return edit


def _losses(box: bool, sem: bool, cls: bool) -> Edit:
    def edit(cfg: RunConfig) -> None:
        det_on = box or cls
        cfg.loss = LossWeights(plan=cfg.loss.plan, det=cfg.loss.det if det_on else 0.0,
                               cls=cfg.loss.cls if cls else 0.0, reg=cfg.loss.reg if box else 0.0,
                               sem=cfg.loss.sem if sem else 0.0)
    return edit


def _anchors(anchors: bool, endpoints: bool) -> Edit:
    def edit(cfg: RunConfig) -> None:
        cfg.model.planner.use_anchors = anchors
        cfg.model.planner.use_endpoints = endpoints
    return edit


def _head(name: str) -> Edit:
    def edit(cfg: RunConfig) -> None:
        cfg.model.planner.head = name
    return edit


def _noop(cfg: RunConfig) -> None:
    pass


def study_variants(study: str, base: RunConfig) -> list[Variant]:
    """Declared variants per study; the shared-SA widths scale the reference 256/512/768 by 1/8."""
    d = base.model.backbone.cart.dim
    studies = {
        "shared_sa": [
            Variant("separate", _cart(d, "separate")),
            Variant("shared-256", _cart(d // 2, "shared")),
            Variant("shared-512", _cart(d, "shared")),
            Variant("shared-768", _cart(d * 3 // 2, "shared")),
        ],
        "cart_presence": [Variant("with_cart", _cart_enabled(True)), Variant("no_cart", _cart_enabled(False))],
        "steps": [Variant(f"steps-{s}", _noop, s) for s in STEP_SWEEP],
        "losses": [
            Variant("plan", _losses(False, False, False)),
            Variant("plan+box", _losses(True, False, False)),
            Variant("plan+sem", _losses(False, True, False)),
            Variant("plan+box+sem", _losses(True, True, False)),
            Variant("full", _losses(True, True, True)),
        ],
        "anchors_endpoints": [
            Variant("anchors", _anchors(True, False)),
            Variant("endpoints", _anchors(False, True)),
            Variant("anchors+endpoints", _anchors(True, True)),
        ],
        "planners": [Variant(h, _head(h)) for h in ("diffusion", "mlp", "transformer", "lstm", "ego_mlp")],
    }
    if study not in studies:
        raise ConfigError(f"unknown study {study!r}; expected one of {sorted(studies)}")
    if study == "steps" and base.model.planner.train_steps < max(STEP_SWEEP):
        raise ConfigError(f"steps study needs train_steps >= {max(STEP_SWEEP)}")
    return studies[study]


STUDIES = ("shared_sa", "cart_presence", "steps", "losses", "anchors_endpoints", "planners")


def _key(cfg: RunConfig) -> str:
    return repr(cfg.to_dict())


def run_study(study: str, base: RunConfig, train_data: Dataset | None = None,
              eval_data: Dataset | None = None) -> list[dict]:
    """One row per declared variant. Variants sharing a config (the steps sweep) train once."""
    variants = study_variants(study, base)
    train_data = train_data or Dataset.from_scenes(load_scenes(base, "train"))
    eval_data = eval_data or Dataset.from_scenes(load_scenes(base, "eval"))
    trained: dict[str, object] = {}
    rows = []
    for v in variants:
        cfg = copy.deepcopy(base)
        v.edit(cfg)
        cfg.validate()
        key = _key(cfg)
        if key not in trained:
            log.info("%s/%s: training", study, v.name)
            trained[key] = train(cfg, train_data).model
        model = trained[key]
        res = evaluate(model, eval_data.scenes, cfg.eval, cfg.seed, eval_data.inputs, steps=v.steps)
        ext = res.extended()
        timing = measure_throughput(model, eval_data.inputs[0], cfg.timing_runs, cfg.seed, v.steps)
        rows.append({
            "study": study, "variant": v.name, "params": model.num_parameters(),
            "backbone_params": model.encoder.num_parameters(), "PDMS": res.metrics()["PDMS"],
            "EPDMS": ext["EPDMS"], "ADE": ext["ADE"], **timing,
        })
        log.info("%s/%s: PDMS %.4f", study, v.name, rows[-1]["PDMS"])
    return rows


def write_rows(path, rows: list[dict]) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=ROW_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(float(r[k])) if isinstance(r[k], float) else r[k]) for k in ROW_COLUMNS})
