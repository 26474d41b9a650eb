"""Command-line entry point: ``leapocc <command> [options]``.

Every command accepts ``--config`` (TOML), ``--seed``, ``--out`` and
``--force``; flags override the config.  Outputs are never overwritten
without ``--force``.  Exit status is 0 on success, 2 on usage errors and 1 on
runtime failures.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__

log = logging.getLogger("leapocc")

STAGE1_MESSAGE = "requires stage-1 checkpoint"


class CommandError(RuntimeError):
    pass


# ---------------------------------------------------------------- helpers


def _check_out(args, required: bool = True) -> Path | None:
    if args.out is None:
        if required:
            raise CommandError(f"{args.command} needs --out")
        return None
    out = Path(args.out)
    if out.exists() and not args.force:
        raise CommandError(f"refusing to overwrite {out} (pass --force)")
    out.parent.mkdir(parents=True, exist_ok=True)
    return out


def _config(args):
    from .io.config import load_config

    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg


def _write_json(path: Path | None, report: dict, force: bool) -> None:
    if path is None:
        return
    if path.exists() and not force:
        raise CommandError(f"refusing to overwrite {path} (pass --force)")
    path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")


def _log_path(args, out: Path) -> Path:
    path = Path(args.log) if args.log else out.with_name(out.name + ".metrics.jsonl")
    if path.exists() and not args.force:
        raise CommandError(f"refusing to overwrite {path} (pass --force)")
    return path


def _run_config(meta: dict, args):
    """Config stored in a checkpoint, overlaid by --config and --seed."""
    from .io.config import config_from_dict, load_config

    cfg = config_from_dict(meta["config"]) if "config" in meta else load_config(None)
    if args.config:
        override = load_config(args.config)
        cfg.eval, cfg.place = override.eval, override.place
        cfg.train = override.train
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg


def _load_model(args, stage: str):
    from .io.checkpoint import StageError, load_checkpoint

    if not args.checkpoint:
        raise CommandError(f"{args.command} needs --checkpoint")
    if not Path(args.checkpoint).exists():
        raise CommandError(f"checkpoint {args.checkpoint} not found")
    try:
        return load_checkpoint(args.checkpoint, require_stage=stage)
    except StageError as exc:
        raise CommandError(str(exc)) from exc


def _heldout(model, cfg, data_seed: int):
    from .training.dataset import build_dataset

    return build_dataset(model.body, cfg.data, data_seed, train=False)


# ---------------------------------------------------------------- commands


def cmd_gen_model(args) -> int:
    from .body import make_synthetic_model
    from .io.checkpoint import save_body_model

    cfg = _config(args)
    out = _check_out(args)
    seed = cfg.model.seed if args.seed is None else args.seed
    body = make_synthetic_model(seed, cfg.model.n_vertices, cfg.model.n_betas, cfg.model.n_joints)
    save_body_model(out, body, {"seed": seed}, overwrite=args.force)
    A = body.joint_shape_matrix
    print(f"body model: {body.n_vertices} vertices, {len(body.faces)} faces, "
          f"{body.n_joints} joints, {body.n_betas} shape coefficients, "
          f"cond(A) = {np.linalg.cond(A):.3g} -> {out}")
    return 0


def cmd_train_lbs(args) -> int:
    from .body import make_synthetic_model
    from .io.checkpoint import load_body_model, save_checkpoint
    from .occupancy import OccupancyModel
    from .training.dataset import build_dataset
    from .training.trainer import MetricLog, Trainer

    cfg = _config(args)
    if args.iters is not None:
        cfg.train.lbs_iters = args.iters
    out = _check_out(args)
    log_path = _log_path(args, out)
    if args.model:
        body = load_body_model(args.model)
    else:
        m = cfg.model
        body = make_synthetic_model(m.seed, m.n_vertices, m.n_betas, m.n_joints)
    t0 = time.perf_counter()
    data = build_dataset(body, cfg.data, cfg.seed)
    log.info("dataset: %d training, %d held-out poses in %.1fs", len(data.train),
             len(data.heldout), time.perf_counter() - t0)
    model = OccupancyModel(body, cfg.network, seed=cfg.seed, dtype=np.dtype(cfg.train.dtype))
    trainer = Trainer(model, data, cfg, MetricLog(log_path))
    trainer.train_lbs()
    last = trainer.metrics.records[-1]
    save_checkpoint(out, model, "lbs", {"config": cfg.to_dict()}, trainer.rng, overwrite=args.force)
    print(f"stage 1 done: {cfg.train.lbs_iters} iterations, held-out l1 inverse "
          f"{last['heldout_l1_inv']:.4f}, forward {last['heldout_l1_fwd']:.4f} "
          f"(uniform baseline {last['heldout_l1_uniform']:.4f}) -> {out}")
    return 0


def cmd_train_occ(args) -> int:
    from .io.checkpoint import load_checkpoint, save_checkpoint
    from .training.dataset import build_dataset
    from .training.trainer import MetricLog, Trainer

    if not args.checkpoint or not Path(args.checkpoint).exists():
        what = f" ({args.checkpoint} not found)" if args.checkpoint else ""
        raise CommandError(f"train-occ {STAGE1_MESSAGE}{what}; run train-lbs first and pass "
                           "its output with --checkpoint")
    model, meta = load_checkpoint(args.checkpoint)
    cfg = _run_config(meta, args)
    if args.iters is not None:
        cfg.train.occ_iters = args.iters
    out = _check_out(args)
    log_path = _log_path(args, out)
    data = build_dataset(model.body, cfg.data, meta["config"]["seed"] if "config" in meta
                         else cfg.seed)
    trainer = Trainer(model, data, cfg, MetricLog(log_path))
    if "rng_state" in meta and args.seed is None:
        trainer.rng.bit_generator.state = meta["rng_state"]
    trainer.train_occupancy()
    last = trainer.metrics.records[-1]
    meta_cfg = cfg.to_dict()
    meta_cfg["seed"] = meta["config"]["seed"] if "config" in meta else cfg.seed
    save_checkpoint(out, model, "occupancy", {"config": meta_cfg}, trainer.rng,
                    overwrite=args.force)
    print(f"stage 2 done: {cfg.train.occ_iters} iterations, held-out IOU "
          f"{last['heldout_iou']:.2f}% -> {out}")
    return 0


def _modes(cfg):
    t = cfg.train
    weights = "pseudo_gt" if t.deterministic_weights else "network"
    cycle = "zero" if t.deterministic_weights and t.deterministic_cycle == "zero" else "forward"
    return weights, cycle


def cmd_eval(args) -> int:
    from .training.evaluate import evaluate_heldout

    model, meta = _load_model(args, "occupancy")
    cfg = _run_config(meta, args)
    out = _check_out(args, required=False)
    data = _heldout(model, cfg, meta["config"]["seed"])
    weights, cycle = _modes(cfg)
    n = args.points or cfg.eval.n_points
    res = args.resolution or cfg.eval.resolution
    report = evaluate_heldout(model, data, n, cfg.seed, res, cfg.eval.chamfer_samples,
                              weights, cycle, reference=args.reference)
    report.update({"points": n, "resolution": res, "reference": args.reference})
    print(f"held-out IOU {report['iou']:.2f}%  Chamfer (x1e4, vs {args.reference}) "
          f"{report['chamfer']:.4f}  over {len(data.heldout)} poses")
    _write_json(out, report, args.force)
    return 0


def cmd_extract(args) -> int:
    from .io.obj import write_obj
    from .occupancy import extract_isosurface

    model, meta = _load_model(args, "occupancy")
    cfg = _run_config(meta, args)
    out = _check_out(args)
    data = _heldout(model, cfg, meta["config"]["seed"])
    if not 0 <= args.pose < len(data.heldout):
        raise CommandError(f"--pose must be in [0, {len(data.heldout)})")
    mesh = extract_isosurface(model, data.heldout[args.pose].bone_set(),
                              args.resolution or cfg.eval.resolution)
    if mesh.is_empty():
        raise CommandError("the occupancy field has no 0.5 crossing; nothing to extract")
    write_obj(out, mesh, overwrite=args.force)
    print(f"isosurface: {len(mesh.vertices)} vertices, {len(mesh.faces)} faces -> {out}")
    return 0


def cmd_place(args) -> int:
    from .io.obj import read_obj
    from .placement import place_two_bodies

    model, meta = _load_model(args, "occupancy")
    cfg = _run_config(meta, args)
    out = _check_out(args, required=False)
    data = _heldout(model, cfg, meta["config"]["seed"])
    i, j = cfg.place.poses
    if not (0 <= i < len(data.heldout) and 0 <= j < len(data.heldout)):
        raise CommandError(f"[place] poses must index the {len(data.heldout)} held-out poses")
    scene = read_obj(args.scene) if args.scene else None
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x91ACE]))
    rep = place_two_bodies(model, data.betas, data.heldout[i].rotations,
                           data.heldout[j].rotations, cfg.place.offset, cfg.place, rng, scene)
    names = ("human-scene", "scene-human", "human-human")
    for label, scores in (("before", rep.before), ("after", rep.after)):
        print(label + ": " + ", ".join(f"{n} {v:.2f}%" for n, v in zip(names, scores)))
    r = rep.result
    print(f"{r.iterations} steps, converged={r.converged}, translation "
          f"{np.array2string(r.translation, precision=4)}")
    _write_json(out, {"before": dict(zip(names, rep.before)), "after": dict(zip(names, rep.after)),
                      "iterations": r.iterations, "converged": r.converged,
                      "translation": r.translation.tolist(), "losses": r.losses}, args.force)
    return 0


def cmd_gradcheck(args) -> int:
    from .gradcheck import TOLERANCE, run_suite

    out = _check_out(args, required=False)
    base = 0 if args.seed is None else args.seed
    reports = run_suite(range(base, base + args.seeds), args.entries)
    ok = True
    for r in reports:
        passed = r.fraction >= 0.99
        ok &= passed
        print(f"seed {r.seed}: {r.passed}/{r.checked} entries with rel. err < {TOLERANCE:g} "
              f"({100 * r.fraction:.2f}%), max rel. err {r.max_rel_error:.3g} at {r.worst}"
              f" [{'ok' if passed else 'FAIL'}]")
    print("gradcheck " + ("passed" if ok else "FAILED"))
    _write_json(out, {"seeds": [r.__dict__ | {"fraction": r.fraction} for r in reports],
                      "passed": ok}, args.force)
    return 0 if ok else 1


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML run configuration")
    common.add_argument("--seed", type=int, help="override the configured seed")
    common.add_argument("--out", help="output path")
    common.add_argument("--force", action="store_true", help="overwrite existing outputs")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress")

    parser = argparse.ArgumentParser(prog="leapocc", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"leapocc {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="command")

    def add(name, fn, help_):
        p = sub.add_parser(name, parents=[common], help=help_)
        p.set_defaults(handler=fn)
        return p

    add("gen-model", cmd_gen_model, "write a synthetic body model")
    p = add("train-lbs", cmd_train_lbs, "stage 1: train the skinning-weight networks")
    p.add_argument("--model", help="body model file (default: generate from [model])")
    p.add_argument("--iters", type=int, help="override [train] lbs_iters")
    p.add_argument("--log", help="metric log (default: <out>.metrics.jsonl)")
    p = add("train-occ", cmd_train_occ, "stage 2: train encoders and occupancy decoder")
    p.add_argument("--checkpoint", help="stage-1 checkpoint from train-lbs")
    p.add_argument("--iters", type=int, help="override [train] occ_iters")
    p.add_argument("--log", help="metric log (default: <out>.metrics.jsonl)")
    p = add("eval", cmd_eval, "held-out IOU and Chamfer of a trained model")
    p.add_argument("--checkpoint", help="stage-2 checkpoint")
    p.add_argument("--points", type=int, help="override [eval] n_points")
    p.add_argument("--resolution", type=int, help="override [eval] resolution")
    p.add_argument("--reference", choices=("gt", "self"), default="gt",
                   help="Chamfer reference: ground-truth mesh or the model's own extraction")
    p = add("extract", cmd_extract, "write the isosurface of a held-out pose as OBJ")
    p.add_argument("--checkpoint", help="stage-2 checkpoint")
    p.add_argument("--pose", type=int, default=0, help="held-out pose index")
    p.add_argument("--resolution", type=int, help="override [eval] resolution")
    p = add("place", cmd_place, "resolve collisions of two bodies and a scene obstacle")
    p.add_argument("--checkpoint", help="stage-2 checkpoint")
    p.add_argument("--scene", help="obstacle mesh (OBJ); default: a box beside the bodies")
    p = add("gradcheck", cmd_gradcheck, "finite-difference check of the full pipeline")
    p.add_argument("--seeds", type=int, default=5, help="number of seeds")
    p.add_argument("--entries", type=int, default=2, help="checked entries per parameter tensor")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    try:
        return args.handler(args)
    except KeyboardInterrupt:
        print("leapocc: interrupted", file=sys.stderr)
        return 1
    except (CommandError, OSError, ValueError, RuntimeError, FloatingPointError,
            np.linalg.LinAlgError) as exc:
        print(f"leapocc {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
