"""Command-line entry points.

Subcommands: gen-data, train, eval, infer, sweep-alpha, count. Outputs
are written atomically; failures print one line to stderr and exit
nonzero. Training prints one JSON loss line per log interval and leaves
a fully resolved config dump next to the checkpoint so a run can be
reproduced from its artifacts alone.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

from .checkpoint import CheckpointError, load_checkpoint
from .codec import BitMask, encode, shape_to_json
from .config import (ConfigInvalid, RunConfig, dump_config, load_config,
                     write_text_atomic)
from .counting import count_macs, count_params
from .evaluate import evaluate_model
from .inference import decode_detections, render_overlay
from .network import Model, ModelConfig
from .pgm import read_pgm, write_pgm, write_planes_pgm, write_ppm
from .synth import scene_for_index
from .train import Dataset, Divergence, train

EVAL_SEED_OFFSET = 104729  # keeps evaluation scenes disjoint from training


def _load(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if getattr(args, "seed", None) is not None:
        cfg = dataclasses.replace(cfg, run=dataclasses.replace(cfg.run, seed=args.seed))
    return cfg


def _apply_train_flags(cfg: RunConfig, args) -> RunConfig:
    model, loss, train_opts = cfg.model, cfg.loss, cfg.train
    variant = getattr(args, "variant", None)
    if variant == "coarse-only":
        model = dataclasses.replace(model, fine_enabled=False)
    elif variant == "implicit":
        loss = dataclasses.replace(loss, implicit_coarse=True)
    elif variant == "standard-reg":
        model = dataclasses.replace(model, standard_conv_regressor=True)
    if getattr(args, "levels", None):
        strides = tuple(int(s) for s in args.levels.split(","))
        model = dataclasses.replace(model, strides=strides)
    if getattr(args, "rays", None):
        model = dataclasses.replace(model, num_rays=args.rays)
    if getattr(args, "alpha", None) is not None:
        loss = dataclasses.replace(loss, alpha=args.alpha)
    if getattr(args, "hbb", False):
        model = dataclasses.replace(model, hbb_enabled=True)
        train_opts = dataclasses.replace(train_opts, with_hbb=True)
    if getattr(args, "steps", None):
        train_opts = dataclasses.replace(train_opts, steps=args.steps)
    return dataclasses.replace(cfg, model=model, loss=loss, train=train_opts)


def adapt_config_to_state(model_cfg: ModelConfig,
                          arrays: dict[str, np.ndarray]) -> ModelConfig:
    """Match optional-stage flags to what a checkpoint actually contains."""
    fine = "fine.w" in arrays
    standard = model_cfg.standard_conv_regressor
    if fine:
        standard = arrays["fine.w"].shape[1] != model_cfg.fpn_channels
    hbb = any(name.startswith("hbb.") for name in arrays)
    return dataclasses.replace(model_cfg, fine_enabled=fine,
                               standard_conv_regressor=standard,
                               hbb_enabled=hbb)


def _model_from_checkpoint(model_cfg: ModelConfig, path: str) -> Model:
    arrays = load_checkpoint(path)
    model = Model(adapt_config_to_state(model_cfg, arrays), seed=0)
    model.load_state(arrays)
    return model


def _cmd_gen_data(args) -> int:
    cfg = _load(args)
    count = args.count if args.count else cfg.run.train_scenes
    os.makedirs(args.out, exist_ok=True)
    for i in range(count):
        scene = scene_for_index(cfg.scene, cfg.run.seed, i)
        stem = os.path.join(args.out, f"scene_{i:04d}")
        write_pgm(stem + ".pgm", scene.image)
        if scene.masks:
            planes = np.stack([m.astype(np.float64) for m in scene.masks])
            write_planes_pgm(stem + ".masks.pgm", planes)
        meta = {"classes": scene.classes,
                "shapes": [json.loads(shape_to_json(encode(BitMask(m),
                                                           cfg.model.num_rays)))
                           for m in scene.masks]}
        write_text_atomic(stem + ".json", json.dumps(meta))
    print(json.dumps({"written": count, "dir": args.out}))
    return 0


def _cmd_train(args) -> int:
    cfg = _apply_train_flags(_load(args), args)
    seed = cfg.run.seed
    model = Model(cfg.model, seed=seed)
    dataset = Dataset(cfg.scene, seed, cfg.run.train_scenes)
    write_text_atomic(args.out + ".config.ini", dump_config(cfg))
    result = train(model, dataset, cfg.loss, cfg.train,
                   ckpt_path=args.out, log_fn=print)
    print(json.dumps({"done": result.steps_done, "checkpoint": args.out}))
    return 0


def _cmd_eval(args) -> int:
    cfg = _load(args)
    model = _model_from_checkpoint(cfg.model, args.ckpt)
    scenes = [scene_for_index(cfg.scene, cfg.run.seed + EVAL_SEED_OFFSET, i)
              for i in range(cfg.run.eval_scenes)]
    report = evaluate_model(model, scenes,
                            score_thresh=cfg.run.eval_score_thresh,
                            topk=cfg.run.topk, nms_iou=cfg.run.nms_iou)
    text = report.to_json()
    print(text)
    if args.out:
        write_text_atomic(args.out, text + "\n")
    return 0


def _cmd_infer(args) -> int:
    cfg = _load(args)
    model = _model_from_checkpoint(cfg.model, args.ckpt)
    image = read_pgm(args.image)
    dets = decode_detections(model, image, score_thresh=cfg.run.score_thresh,
                             topk=cfg.run.topk, nms_iou=cfg.run.nms_iou)
    write_ppm(args.out, render_overlay(image, dets))
    lines = "".join(d.to_json() + "\n" for d in dets)
    dets_path = args.dets if args.dets else args.out + ".jsonl"
    write_text_atomic(dets_path, lines)
    print(json.dumps({"detections": len(dets), "overlay": args.out,
                      "list": dets_path}))
    return 0


def _cmd_sweep_alpha(args) -> int:
    cfg = _apply_train_flags(_load(args), args)
    alphas = [float(a) for a in args.alphas.split(",")]
    lines = []
    for alpha in alphas:
        run_cfg = dataclasses.replace(
            cfg, loss=dataclasses.replace(cfg.loss, alpha=alpha))
        seed = run_cfg.run.seed
        model = Model(run_cfg.model, seed=seed)
        dataset = Dataset(run_cfg.scene, seed, run_cfg.run.train_scenes)
        train(model, dataset, run_cfg.loss, run_cfg.train)
        scenes = [scene_for_index(run_cfg.scene, seed + EVAL_SEED_OFFSET, i)
                  for i in range(run_cfg.run.eval_scenes)]
        report = evaluate_model(model, scenes,
                                score_thresh=run_cfg.run.eval_score_thresh,
                                topk=run_cfg.run.topk,
                                nms_iou=run_cfg.run.nms_iou)
        line = {"alpha": alpha, **report.as_dict()}
        lines.append(json.dumps(line))
        print(lines[-1])
    if args.out:
        write_text_atomic(args.out, "".join(line + "\n" for line in lines))
    return 0


def _cmd_count(args) -> int:
    cfg = _apply_train_flags(_load(args), args)
    model_cfg = cfg.model
    if args.hbb:
        model_cfg = dataclasses.replace(model_cfg, hbb_enabled=True)
    model = Model(model_cfg, seed=0)
    if args.size:
        h, w = (int(t) for t in args.size.lower().split("x"))
    else:
        h, w = cfg.scene.height, cfg.scene.width
    payload = {
        "params": {
            "total": count_params(model),
            "fine": count_params(model, "fine."),
            "hbb": count_params(model, "hbb."),
        },
        "macs_train": count_macs(model_cfg, (h, w),
                                 include_hbb=model_cfg.hbb_enabled),
        "macs_inference": count_macs(model_cfg, (h, w), include_hbb=False),
    }
    print(json.dumps(payload))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="polarfine",
        description="coarse-to-fine polar boundary instance segmentation")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seed=True):
        p.add_argument("--config", help="INI run configuration")
        if seed:
            p.add_argument("--seed", type=int, help="override [run] seed")

    p = sub.add_parser("gen-data", help="write synthetic scenes to a directory")
    common(p)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--count", type=int, help="number of scenes")
    p.set_defaults(fn=_cmd_gen_data)

    p = sub.add_parser("train", help="train a model and save a checkpoint")
    common(p)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--variant", choices=("full", "coarse-only", "implicit",
                                         "standard-reg"), default="full")
    p.add_argument("--hbb", action="store_true", help="train the box head too")
    p.add_argument("--alpha", type=float, help="coarse term weight")
    p.add_argument("--levels", help="pyramid strides, e.g. 4,8")
    p.add_argument("--rays", type=int, help="number of boundary rays")
    p.add_argument("--steps", type=int, help="override training steps")
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    common(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out", help="also write the JSON report here")
    p.set_defaults(fn=_cmd_eval)

    p = sub.add_parser("infer", help="run detection on one image")
    common(p, seed=False)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--image", required=True, help="input PGM")
    p.add_argument("--out", required=True, help="overlay PPM path")
    p.add_argument("--dets", help="detections JSONL path")
    p.set_defaults(fn=_cmd_infer)

    p = sub.add_parser("sweep-alpha", help="train and evaluate per alpha")
    common(p)
    p.add_argument("--alphas", required=True, help="comma-separated weights")
    p.add_argument("--steps", type=int, help="override training steps")
    p.add_argument("--out", help="JSONL results path")
    p.set_defaults(fn=_cmd_sweep_alpha)

    p = sub.add_parser("count", help="report parameter and MAC counts")
    common(p, seed=False)
    p.add_argument("--hbb", action="store_true", help="include the box head")
    p.add_argument("--size", help="image size HxW for MACs")
    p.set_defaults(fn=_cmd_count)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigInvalid, CheckpointError, Divergence) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
