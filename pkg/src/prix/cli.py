"""Command line entry point: train, eval, ablate, score and gen-scenes.

Exit codes: 0 success, 1 training diverged, 2 configuration or usage error,
3 data error (unreadable or malformed inputs, per-scene failures).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError

EXIT_OK, EXIT_DIVERGED, EXIT_CONFIG, EXIT_DATA = 0, 1, 2, 3

log = logging.getLogger("prix")


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse exits with 2 already; keep the message format
        self.print_usage(sys.stderr)
        raise SystemExit(f"prix: error: {message}") from None


def _cmd_train(args) -> int:
    from .config import load_config
    from .train import TrainingDiverged, train

    cfg = load_config(args.config)
    out = args.out or cfg.output.checkpoint
    log_path = args.log or cfg.output.train_log or f"{out}.csv"
    try:
        res = train(cfg, ckpt_path=out, log_path=log_path)
    except TrainingDiverged as e:
        log.error("%s; last good checkpoint written to %s", e, out)
        return EXIT_DIVERGED
    last = res.history[-1]
    print(f"trained {res.step} steps; final epoch total {last['total']:.4f}; checkpoint {out}; log {log_path}")
    return EXIT_OK


def _cmd_eval(args) -> int:
    from .config import load_config
    from .evaluate import evaluate
    from .sim.scenes import read_scenes
    from .train import load_model

    model, cfg = load_model(args.ckpt)
    if args.config:
        cfg.eval = load_config(args.config).eval
    seed = cfg.seed if args.seed is None else args.seed
    scenes = read_scenes(args.scenes)
    res = evaluate(model, scenes, cfg.eval, seed)
    paths = res.write(args.metrics)
    print(json.dumps(res.metrics()))
    for r in res.errors:
        log.error("scene %s: %s", r.scene_id, r.error)
    print(f"wrote {paths['metrics']}, {paths['extended']}, {paths['scenes']}")
    return EXIT_DATA if res.errors else EXIT_OK


def _cmd_ablate(args) -> int:
    from .ablate import run_study, study_variants, write_rows
    from .config import load_config

    cfg = load_config(args.config)
    study_variants(args.study, cfg)  # reject unknown studies before any work
    rows = run_study(args.study, cfg)
    write_rows(args.out, rows)
    for r in rows:
        print(f"{r['variant']:>18}  params {r['params']:>9}  PDMS {r['PDMS']:.4f}  EPDMS {r['EPDMS']:.4f}")
    return EXIT_OK


def read_submission(path) -> dict[str, np.ndarray]:
    """Parse a JSON-lines submission of {"scene_id", "waypoints"} records."""
    out: dict[str, np.ndarray] = {}
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as e:
        raise DataError(f"cannot read submission {path}: {e}") from e
    for n, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as e:
            raise DataError(f"{path}:{n}: malformed JSON: {e.msg}") from e
        if not isinstance(rec, dict) or set(rec) != {"scene_id", "waypoints"}:
            raise DataError(f"{path}:{n}: expected exactly the keys scene_id and waypoints")
        try:
            wp = np.asarray(rec["waypoints"], dtype=np.float64)
        except (TypeError, ValueError) as e:
            raise DataError(f"{path}:{n}: waypoints are not numeric: {e}") from e
        if wp.ndim != 2 or wp.shape[1] != 3 or not np.all(np.isfinite(wp)):
            raise DataError(f"{path}:{n}: waypoints must be finite [[x, y, yaw], ...]")
        sid = str(rec["scene_id"])
        if sid in out:
            raise DataError(f"{path}:{n}: duplicate scene_id {sid!r}")
        out[sid] = wp
    return out


def _cmd_score(args) -> int:
    from .config import load_config
    from .evaluate import score_trajectories
    from .sim.scenes import read_scenes

    metric_cfg = load_config(args.config).eval
    scenes = read_scenes(args.scenes)
    sub = read_submission(args.submission)
    missing = [s.scene_id for s in scenes if s.scene_id not in sub]
    if missing:
        raise DataError(f"submission lacks {len(missing)} scene_id(s): {', '.join(missing)}")
    extra = sorted(set(sub) - {s.scene_id for s in scenes})
    if extra:
        log.warning("ignoring %d unknown scene_id(s): %s", len(extra), ", ".join(extra))
    res = score_trajectories(scenes, [sub[s.scene_id] for s in scenes], metric_cfg)
    res.write(args.metrics)
    print(json.dumps(res.metrics()))
    for r in res.errors:
        log.error("scene %s: %s", r.scene_id, r.error)
    return EXIT_DATA if res.errors else EXIT_OK


def _cmd_gen(args) -> int:
    from .sim.scenes import KINDS, generate_scene, write_scenes

    kinds = KINDS if args.kind == "all" else (args.kind,)
    if args.kind != "all" and args.kind not in KINDS:
        raise ConfigError(f"unknown kind {args.kind!r}; expected one of {KINDS} or 'all'")
    if args.count < 1:
        raise ConfigError("--count must be >= 1")
    scenes = [generate_scene(kinds[i % len(kinds)], args.seed * 100003 + i) for i in range(args.count)]
    write_scenes(args.out, scenes)
    print(f"wrote {len(scenes)} scenes to {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="prix", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="train a model from a JSON config")
    t.add_argument("--config", help="JSON run config (defaults apply to missing keys)")
    t.add_argument("--out", help="checkpoint path (default: config output.checkpoint)")
    t.add_argument("--log", help="per-epoch CSV log (default: <out>.csv)")
    t.set_defaults(func=_cmd_train)

    e = sub.add_parser("eval", help="plan and score a scene file with a checkpoint")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--scenes", required=True)
    e.add_argument("--metrics", required=True, help="output JSON; siblings .extended.json and .csv")
    e.add_argument("--config", help="override the metric section from this config")
    e.add_argument("--seed", type=int, help="planning noise seed (default: checkpoint config seed)")
    e.set_defaults(func=_cmd_eval)

    a = sub.add_parser("ablate", help="run one ablation study, one CSV row per variant")
    a.add_argument("--study", required=True)
    a.add_argument("--config", help="base JSON run config")
    a.add_argument("--out", required=True)
    a.set_defaults(func=_cmd_ablate)

    s = sub.add_parser("score", help="score an external trajectory submission")
    s.add_argument("--scenes", required=True)
    s.add_argument("--submission", required=True)
    s.add_argument("--metrics", required=True)
    s.add_argument("--config", help="JSON run config whose eval section is used")
    s.set_defaults(func=_cmd_score)

    g = sub.add_parser("gen-scenes", help="generate synthetic scenes as JSON lines")
    g.add_argument("--kind", required=True, help="straight|curve|intersection|jam|all")
    g.add_argument("--count", type=int, required=True)
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--out", required=True)
    g.set_defaults(func=_cmd_gen)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        if e.code not in (0, None):
            if isinstance(e.code, str):
                print(e.code, file=sys.stderr)
            return EXIT_CONFIG
        return EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"prix: config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as e:
        print(f"prix: data error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
