"""Command-line entry point: dataset generation, staged training,
closed-/open-loop evaluation, ablation runners, and frame rendering.

Errors go to stderr as one structured line and exit nonzero; stdout
carries only data (paths, JSON summaries, CSV rows).
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import secrets
import sys

import numpy as np

from .config import RunConfig, config_to_dict, load_config
from .errors import LatentDriveError, UsageError
from .model.model import DriveModel
from .train import closed_loop_eval, open_loop_eval, selection_for_stage
from .train.checkpoint import load_checkpoint, save_checkpoint
from .train.evaluate import write_report
from .train.stages import (model_checkpoint, restore_model, restore_optimizer,
                           run_curriculum, run_stage, stage_step_budget)
from .world.dataset import read_dataset, write_dataset
from .world.generate import generate_episode
from .world.render import EXPERT_COLOR, PRED_COLOR, render_frame
from .world.scoring import ego_to_world


def _apply_thread_cap():
    cap = os.environ.get("DWVA_THREADS")
    if not cap:
        return
    try:
        n = max(1, int(cap))
    except ValueError as e:
        raise UsageError(f"DWVA_THREADS must be an integer: {cap!r}") from e
    try:
        import numba
        numba.set_num_threads(n)
    except ImportError:
        pass


def _resolve_seed(value):
    if value == "auto":
        return secrets.randbits(31)
    try:
        return int(value)
    except ValueError as e:
        raise UsageError(f"--seed must be an integer or 'auto', got {value!r}") from e


def _load_cfg(path) -> RunConfig:
    if path is None:
        return RunConfig().validate()
    return load_config(path)


def _echo_config(cfg, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "config.json"), "w") as f:
        json.dump(config_to_dict(cfg), f, indent=2)


def _gen_episodes(cfg, count, seed):
    return [generate_episode(cfg.world, [seed, i]) for i in range(count)]


def cmd_gen(args):
    cfg = _load_cfg(args.config)
    seed = _resolve_seed(args.seed)
    count = cfg.train_episodes if args.count is None else args.count
    episodes = _gen_episodes(cfg, count, seed)
    write_dataset(args.out, episodes)
    print(args.out)
    print(f"episodes={count} seed={seed}", file=sys.stderr)
    return 0


def _build_model(cfg) -> DriveModel:
    return DriveModel(cfg.world, cfg.model, seed=cfg.base_seed)


def cmd_train(args):
    cfg = _load_cfg(args.config)
    seed = _resolve_seed(args.seed) if args.seed is not None else cfg.base_seed
    episodes = read_dataset(args.data)
    model = _build_model(cfg)
    out_dir = os.path.dirname(os.path.abspath(args.ckpt_out)) or "."
    os.makedirs(out_dir, exist_ok=True)
    _echo_config(cfg, out_dir)

    if args.stage == "all":
        if args.ckpt_in:
            raise UsageError("--stage all starts from scratch; drop --ckpt-in")
        res = run_curriculum(cfg, model, episodes, out_dir, seed,
                             freeze_backbone=args.freeze_backbone,
                             flow_steps_train=args.train_flow_steps)
        final = res["checkpoints"]["3"]
        if os.path.abspath(final) != os.path.abspath(args.ckpt_out):
            import shutil
            shutil.copyfile(final, args.ckpt_out)
        print(args.ckpt_out)
        return 0

    stage = int(args.stage)
    scfg = cfg.stage(stage)
    start_step, opt = 0, None
    from .train.stages import set_stage_trainable
    if args.ckpt_in:
        ckpt = load_checkpoint(args.ckpt_in)
        if ckpt.stage == stage:          # mid-stage resume
            restore_model(model, ckpt)
            start_step = int(ckpt.meta.get("step", 0))
            seed = int(ckpt.meta.get("base_seed", seed))
            set_stage_trainable(model, stage, freeze_backbone=args.freeze_backbone)
            opt = restore_optimizer(model, ckpt, scfg.lr)
        elif ckpt.stage == stage - 1:
            restore_model(model, ckpt)
        else:
            raise UsageError(
                f"checkpoint stage {ckpt.stage} cannot feed stage {stage}")
    elif stage > 1:
        raise UsageError(f"--stage {stage} requires --ckpt-in from stage {stage - 1}")

    n_steps = args.steps if args.steps is not None else stage_step_budget(
        scfg, len(episodes))
    log_rows = []
    opt, _ = run_stage(model, stage, episodes, scfg, seed, n_steps=n_steps,
                       start_step=start_step, opt=opt,
                       freeze_backbone=args.freeze_backbone, log_rows=log_rows,
                       flow_steps_train=args.train_flow_steps)
    save_checkpoint(model_checkpoint(model, opt, stage, seed, n_steps),
                    args.ckpt_out)
    csv_path = os.path.splitext(args.ckpt_out)[0] + "_losses.csv"
    with open(csv_path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["stage", "step", "total", "components..."])
        w.writerows(log_rows)
    print(args.ckpt_out)
    return 0


def cmd_eval(args):
    cfg = _load_cfg(args.config)
    episodes = read_dataset(args.data)
    model = _build_model(cfg)
    ckpt = load_checkpoint(args.ckpt)
    restore_model(model, ckpt)
    selection = selection_for_stage(ckpt.stage)
    seed = int(ckpt.meta.get("base_seed", cfg.base_seed))
    if args.mode == "closed":
        records, summary = closed_loop_eval(
            model, episodes, selection=selection, base_seed=seed,
            noise_scale=args.noise_scale, flow_steps=cfg.eval.flow_steps)
    else:
        records, summary = open_loop_eval(model, episodes,
                                          selection=selection, base_seed=seed)
    write_report(args.out, records, summary)
    print(json.dumps(summary))
    return 0


def _seed_avg(rows_per_seed):
    keys = [k for k in rows_per_seed[0] if isinstance(rows_per_seed[0][k], float)]
    return {k: float(np.mean([r[k] for r in rows_per_seed])) for k in keys}


def _ablate_datasets(cfg, seed):
    train = _gen_episodes(cfg, cfg.train_episodes, seed)
    evale = _gen_episodes(cfg, cfg.eval.n_episodes, seed + 10_000_019)
    return train, evale


def cmd_ablate(args):
    cfg = _load_cfg(args.config)
    os.makedirs(args.out, exist_ok=True)
    _echo_config(cfg, args.out)
    seeds = cfg.eval.seeds
    variant = args.variant
    rows = {}

    def add(label, seed, summary):
        rows.setdefault(label, []).append(
            {"label": label, "seed": seed, **summary})

    for seed in seeds:
        train, evale = _ablate_datasets(cfg, seed)
        run_dir = os.path.join(args.out, f"seed{seed}")

        def eval_fn(model, stage_label):
            sel = selection_for_stage(stage_label if isinstance(stage_label, int) else 23)
            _, summary = closed_loop_eval(model, evale, selection=sel,
                                          base_seed=seed,
                                          flow_steps=cfg.eval.flow_steps)
            return summary

        if variant == "stages":
            model = _build_model(cfg)
            res = run_curriculum(cfg, model, train, run_dir, seed,
                                 eval_fn=eval_fn,
                                 flow_steps_train=args.train_flow_steps)
            for stage_label, summary in res["eval"].items():
                add(f"stage{stage_label}", seed, summary)
        elif variant == "non-progressive":
            for progressive in (True, False):
                model = _build_model(cfg)
                sub = os.path.join(run_dir, "prog" if progressive else "joint")
                res = run_curriculum(cfg, model, train, sub, seed,
                                     progressive=progressive, eval_fn=eval_fn,
                                     flow_steps_train=args.train_flow_steps)
                label = "progressive" if progressive else "non-progressive"
                final = "3" if progressive else "joint"
                add(label, seed, res["eval"][final])
        elif variant == "freeze-backbone":
            for freeze in (False, True):
                model = _build_model(cfg)
                sub = os.path.join(run_dir, "frozen" if freeze else "trainable")
                res = run_curriculum(cfg, model, train, sub, seed,
                                     freeze_backbone=freeze, eval_fn=eval_fn,
                                     flow_steps_train=args.train_flow_steps)
                label = "freeze-backbone" if freeze else "trainable-backbone"
                add(label, seed, res["eval"]["3"])
        elif variant == "feature-noise":
            model = _build_model(cfg)
            res = run_curriculum(cfg, model, train, run_dir, seed,
                                 flow_steps_train=args.train_flow_steps)
            restore_model(model, load_checkpoint(res["checkpoints"]["3"]))
            for scale, label in ((0.0, "clean"), (args.noise_scale, "noisy")):
                _, summary = closed_loop_eval(model, evale, selection="reward",
                                              base_seed=seed, noise_scale=scale,
                                              flow_steps=cfg.eval.flow_steps)
                add(label, seed, summary)
        else:
            raise UsageError(f"unknown ablation variant: {variant}")

    table_path = os.path.join(args.out, "table.csv")
    labels = list(rows)
    metric_keys = [k for k in _seed_avg(rows[labels[0]]) if k != "seed"]
    with open(table_path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["variant"] + metric_keys)
        for label in labels:
            avg = _seed_avg(rows[label])
            w.writerow([label] + [avg[k] for k in metric_keys])
    with open(os.path.join(args.out, "per_seed.json"), "w") as f:
        json.dump(rows, f, indent=2)
    print(table_path)
    return 0


def cmd_render(args):
    cfg = _load_cfg(args.config)
    episodes = read_dataset(args.data)
    if not 0 <= args.episode < len(episodes):
        raise UsageError(
            f"episode index {args.episode} out of range 0..{len(episodes) - 1}")
    ep = episodes[args.episode]
    overlays = [(ego_to_world(ep.expert_traj, ep.current.ego), EXPERT_COLOR)]
    if args.traj_source == "ckpt":
        if not args.ckpt:
            raise UsageError("--traj-source ckpt requires --ckpt")
        model = _build_model(cfg)
        ckpt = load_checkpoint(args.ckpt)
        restore_model(model, ckpt)
        from .train.evaluate import select_trajectories
        from .world.types import Trajectory
        picked, _, _ = select_trajectories(
            model, [ep], selection=selection_for_stage(ckpt.stage),
            base_seed=int(ckpt.meta.get("base_seed", 0)))
        overlays.append((ego_to_world(Trajectory(picked[0]), ep.current.ego),
                         PRED_COLOR))
    os.makedirs(args.out, exist_ok=True)
    paths = []
    for i, frame in enumerate(ep.frames):
        path = os.path.join(args.out, f"frame_{i:03d}.ppm")
        render_frame(frame, path, cell_size=ep.config.cell_size,
                     trajectories=overlays)
        paths.append(path)
    print("\n".join(paths))
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="latentdrive")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate an episode dataset")
    g.add_argument("--config")
    g.add_argument("--out", required=True)
    g.add_argument("--count", type=int)
    g.add_argument("--seed", default="0")
    g.set_defaults(fn=cmd_gen)

    t = sub.add_parser("train", help="run one curriculum stage or all three")
    t.add_argument("--stage", required=True, choices=["1", "2", "3", "all"])
    t.add_argument("--config")
    t.add_argument("--data", required=True)
    t.add_argument("--ckpt-in")
    t.add_argument("--ckpt-out", required=True)
    t.add_argument("--seed")
    t.add_argument("--steps", type=int, help="override the stage step budget")
    t.add_argument("--freeze-backbone", action="store_true")
    t.add_argument("--train-flow-steps", type=int,
                   help="Euler steps during stage-3 training (default: model setting)")
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("eval", help="closed- or open-loop evaluation")
    e.add_argument("--mode", required=True, choices=["closed", "open"])
    e.add_argument("--config")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--noise-scale", type=float, default=0.0)
    e.set_defaults(fn=cmd_eval)

    a = sub.add_parser("ablate", help="run an ablation against the default pipeline")
    a.add_argument("--variant", required=True,
                   choices=["stages", "non-progressive", "freeze-backbone",
                            "feature-noise"])
    a.add_argument("--config")
    a.add_argument("--out", required=True)
    a.add_argument("--noise-scale", type=float, default=5.0)
    a.add_argument("--train-flow-steps", type=int)
    a.set_defaults(fn=cmd_ablate)

    r = sub.add_parser("render", help="render episode frames to PPM images")
    r.add_argument("--config")
    r.add_argument("--data", required=True)
    r.add_argument("--episode", type=int, required=True)
    r.add_argument("--traj-source", default="expert", choices=["expert", "ckpt"])
    r.add_argument("--ckpt")
    r.add_argument("--out", required=True)
    r.set_defaults(fn=cmd_render)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _apply_thread_cap()
        return args.fn(args)
    except LatentDriveError as e:
        print(json.dumps({"error": type(e).__name__, "message": str(e)}),
              file=sys.stderr)
        return 2
    except OSError as e:
        print(json.dumps({"error": "IOError", "message": str(e)}),
              file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
