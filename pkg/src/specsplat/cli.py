"""Command-line surface: scene generation, training, rendering, evaluation,
and the finite-difference gradient suite.

Exit codes: 0 success, 1 runtime failure (message on stderr), 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import io as sio
from .gradcheck import DEFAULT_SEED, run_gradcheck
from .metrics import eval_metrics
from .pipeline import render
from .scenegen import DEFAULT_RES, default_scene, make_dataset
from .train import TrainConfig, checkpoint_state_arrays, train


def _cmd_make_scene(args):
    scene = default_scene(args.kind, seed=args.seed)
    n_test = max(1, args.views // 5)
    make_dataset(scene, args.views, n_test, args.out, res=args.res)
    out = Path(args.out)
    # Ground truth beyond the rendered frames, for recovery-quality checks.
    sio.write_pfm(out / "env_gt.pfm", scene.env.data)
    meta = {"kind": args.kind, "seed": args.seed,
            "env_height": int(scene.env.data.shape[0])}
    (out / "scene.json").write_text(json.dumps(meta, indent=1) + "\n")
    print(f"wrote {args.views} train / {n_test} test views "
          f"at {args.res}x{args.res} to {out}")
    return 0


def _load_config(path, deferred_flag):
    overrides = sio.parse_config_text(Path(path).read_text()) if path else {}
    if deferred_flag is not None:
        overrides["deferred_mode"] = deferred_flag == "on"
    return TrainConfig.from_dict(overrides)


def _cmd_train(args):
    cfg = _load_config(args.config, args.deferred)
    dataset = sio.load_dataset(args.data)
    train_split = dataset.subset("train")
    if not len(train_split):
        raise ValueError(f"{args.data}: dataset has no train split")

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    log_path = out / "train_log.txt"

    with open(log_path, "w") as log_file:
        def log(line):
            print(line, flush=True)
            log_file.write(line + "\n")
            log_file.flush()

        result = train(train_split, cfg, seed=args.seed, n_threads=args.threads,
                       log_fn=log, log_interval=args.log_interval)

    sio.save_checkpoint(
        out, result.cloud, result.env,
        checkpoint_state_arrays(result.state, result.optimizer),
        config_dict=asdict(cfg), config_hash=cfg.config_hash(),
        data_dir=str(args.data))
    (out / "config.txt").write_text(sio.config_to_text(asdict(cfg)))
    print(f"checkpoint written to {out}")
    return 0


def _cmd_render(args):
    ck = sio.load_checkpoint(args.ckpt)
    data_dir = args.data or ck.data_dir
    if not data_dir:
        raise ValueError("checkpoint records no dataset path; pass --data DIR "
                         "to resolve --camera-index")
    dataset = sio.load_dataset(data_dir)
    if not 0 <= args.camera_index < len(dataset):
        raise ValueError(f"--camera-index {args.camera_index} out of range "
                         f"(dataset has {len(dataset)} frames)")
    cam = dataset.entries[args.camera_index][0]
    cfg = TrainConfig.from_dict(ck.config_dict)
    mode = "deferred" if cfg.deferred_mode else "forward"
    image, ctx = render(ck.cloud, cam, ck.env, background=cfg.background,
                        mode=mode, sh_degree=cfg.sh_degree_max,
                        n_threads=args.threads, want_ctx=True)
    sio.write_png(args.out, image)
    if args.dump_gbuffer:
        gdir = Path(args.dump_gbuffer)
        gdir.mkdir(parents=True, exist_ok=True)
        if mode != "deferred":
            raise ValueError("--dump-gbuffer requires a deferred-mode checkpoint")
        sc = ctx.shade_ctx
        alpha = ctx.blend_res.alpha
        sio.write_png(gdir / "base_color.png", sc.base)
        sio.write_pfm(gdir / "normal.pfm",
                      np.where(sc.valid[:, :, None], sc.normal_unit, 0.0))
        sio.write_png(gdir / "reflection.png",
                      np.repeat(sc.refl[:, :, None], 3, axis=2))
        sio.write_png(gdir / "alpha.png", np.repeat(alpha[:, :, None], 3, axis=2))
        sio.write_png(gdir / "final.png", image)
    print(f"rendered frame {args.camera_index} -> {args.out}")
    return 0


def _cmd_eval(args):
    ck = sio.load_checkpoint(args.ckpt)
    dataset = sio.load_dataset(args.data)
    split = dataset.subset(args.split)
    if not len(split):
        raise ValueError(f"{args.data}: no '{args.split}' frames to evaluate")
    cfg = TrainConfig.from_dict(ck.config_dict)
    mode = "deferred" if cfg.deferred_mode else "forward"

    renders, targets, gt_normals, masks, rendered_normals = [], [], [], [], []
    for cam, target, normals, mask in split.entries:
        image, ctx = render(ck.cloud, cam, ck.env, background=cfg.background,
                            mode=mode, sh_degree=cfg.sh_degree_max,
                            n_threads=args.threads, want_ctx=True)
        renders.append(image)
        targets.append(target)
        if args.normals and mode == "deferred" and normals is not None:
            sc = ctx.shade_ctx
            gt_normals.append(normals)
            masks.append((mask if mask is not None else np.ones(image.shape[:2], bool))
                         & sc.valid)
            rendered_normals.append(sc.normal_unit)
        else:
            gt_normals.append(None)
            masks.append(None)
            rendered_normals.append(None)

    report = eval_metrics(renders, targets, gt_normals, masks, rendered_normals)
    print(f"{'view':>4}  {'psnr':>7}  {'ssim':>7}  {'mae_deg':>8}")
    for i in range(len(renders)):
        mae = report["mae_deg"][i]
        mae_s = f"{mae:8.3f}" if mae is not None else f"{'-':>8}"
        print(f"{i:4d}  {report['psnr'][i]:7.3f}  {report['ssim'][i]:7.4f}  {mae_s}")
    mean_mae = report["mean_mae_deg"]
    mae_s = f"{mean_mae:8.3f}" if mean_mae is not None else f"{'-':>8}"
    print(f"{'mean':>4}  {report['mean_psnr']:7.3f}  {report['mean_ssim']:7.4f}  {mae_s}")
    print(f"mean reflection strength {float(ck.cloud.reflection.mean()):.4f}")
    return 0


def _cmd_gradcheck(args):
    ok, _ = run_gradcheck(seed=args.seed, n_gaussians=args.gaussians,
                          res=args.res, mode=args.mode, report_fn=print)
    print("gradcheck: all parameter classes pass" if ok
          else "gradcheck: FAILED", flush=True)
    return 0 if ok else 1


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="specsplat",
        description="Gaussian-splat renderer with environment reflections")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-scene", help="generate a synthetic dataset")
    p.add_argument("--kind", choices=("mirror", "diffuse"), required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--views", type=int, default=50, help="training views")
    p.add_argument("--res", type=int, default=DEFAULT_RES)
    p.set_defaults(func=_cmd_make_scene)

    p = sub.add_parser("train", help="optimize a cloud against a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None, help="key = value overrides")
    p.add_argument("--deferred", choices=("on", "off"), default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--log-interval", type=int, default=200)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("render", help="render one dataset camera from a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--camera-index", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--dump-gbuffer", default=None, metavar="DIR")
    p.add_argument("--data", default=None, help="override the recorded dataset path")
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=_cmd_render)

    p = sub.add_parser("eval", help="metrics table over a dataset split")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--normals", action="store_true",
                   help="include normal mean-angular-error where ground truth exists")
    p.add_argument("--split", choices=("train", "test"), default="test")
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--gaussians", type=int, default=8)
    p.add_argument("--res", type=int, default=24)
    p.add_argument("--mode", choices=("deferred", "forward"), default="deferred")
    p.set_defaults(func=_cmd_gradcheck)
    return parser


def main(argv=None):
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except KeyboardInterrupt:
        return 130
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
