"""Command-line entry point: ``xrayfield <subcommand> ...``.

Usage errors exit with status 2 (argparse), runtime failures with status 1.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from pathlib import Path

from . import harness, labeler, phantom, projector, storage, trainer
from .errors import XrayFieldError
from .geometry import Aabb, LpbCamera, fan_rig, perturb_pose

log = logging.getLogger("xrayfield")


def _json_number(x):
    if isinstance(x, float) and math.isinf(x):
        return "inf"
    return x


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_phantom(args) -> int:
    bounds = Aabb.cube(args.half_extent)
    scene = phantom.make_phantom(args.seed, args.n_objects, bounds)
    scene.save(args.out)
    log.info("wrote %d primitives to %s", len(scene.primitives), args.out)
    return 0


def cmd_synthesize(args) -> int:
    scene = phantom.SpectralScene.load(args.scene)
    w, h = args.width, args.height or args.width
    cams = fan_rig(n_views=args.views, spacing_deg=args.spacing, width=w, height=h, k1=args.k1, k2=args.k2)
    test = []
    if args.test_views > 0:
        test = fan_rig(n_views=args.test_views, spacing_deg=360.0 / args.test_views,
                       start_deg=args.test_offset, width=w, height=h, k1=args.k1, k2=args.k2)
    ds = projector.synthesize_dataset(scene, cams + test, noise_sigma=args.noise, seed=args.seed,
                                      grid_dims=(args.grid,) * 3, keep_transmittance=args.transmittance)
    storage.save_dataset(args.out, ds, ["train"] * len(cams) + ["test"] * len(test))
    if args.voxels:
        storage.save_voxels(Path(args.out) / "phantom.raw",
                            phantom.voxelize(scene, (args.grid,) * 3))
    log.info("wrote %d train and %d test views to %s", len(cams), len(test), args.out)
    return 0


def _train_config(args) -> trainer.TrainConfig:
    cfg = storage.load_json(args.config) if args.config else {}
    if args.iterations is not None:
        cfg["iterations"] = args.iterations
    if args.seed is not None:
        cfg["seed"] = args.seed
    return trainer.TrainConfig.from_json(cfg)


def cmd_train(args) -> int:
    cfg = _train_config(args)
    ds, _ = storage.load_dataset(args.data, split="train")
    out = storage.ensure_dir(args.out)
    gt = ds.cameras
    init = gt
    if args.perturb_rot > 0 or args.perturb_trans > 0:
        diag = ds.bounds.diagonal
        init = [perturb_pose(c, args.perturb_rot, args.perturb_trans, [cfg.seed, 101, k], diag)
                for k, c in enumerate(gt)]
    every = args.checkpoint_every

    def on_log(params, row):
        if every and row["iteration"] % every == 0 and row["iteration"] < cfg.iterations:
            storage.save_checkpoint(out / f"checkpoint_{row['iteration']:06d}.bin", params, cfg.model,
                                    row["iteration"], ds.bounds, cfg.render)

    params, history = trainer.train([im.pixels for im in ds.images], init, cfg, ds.bounds,
                                    gt_cameras=gt if args.pose_gt else None, callback=on_log)
    storage.save_checkpoint(out / "checkpoint.bin", params, cfg.model, cfg.iterations, ds.bounds, cfg.render)
    storage.save_history(out / "history.csv", history)
    storage.dump_json(cfg.to_json(), out / "config.json")
    storage.dump_json([c.to_json() for c in params.camera_list()], out / "cameras.json")
    storage.dump_json([c.to_json() for c in init], out / "initial_cameras.json")
    if history:
        log.info("final training psnr %.2f dB", history[-1]["psnr"])
    return 0


def _load_cameras(path) -> list:
    data = storage.load_json(path)
    return [LpbCamera.from_json(d) for d in data]


def cmd_render(args) -> int:
    params, header = storage.load_checkpoint(args.checkpoint)
    if args.cameras:
        cams = _load_cameras(args.cameras)
    elif args.data:
        ds, _ = storage.load_dataset(args.data, split=args.split)
        cams = ds.cameras
    elif args.orbit:
        cams = harness.orbit_cameras(params.camera_list(), args.orbit)
    else:
        cams = params.camera_list()
    size = (args.width, args.height or args.width) if args.width else None
    frames = harness.render_novel_views((params, header), cams, size, args.samples)
    out = storage.ensure_dir(args.out)
    for k, img in enumerate(frames):
        storage.save_image(out / f"view_{k:03d}.png", img)
    if args.voxels:
        grid = harness.export_voxels((params, header), (args.voxels,) * 3)
        storage.save_voxels(out / "field.raw", grid)
    log.info("rendered %d views to %s", len(frames), out)
    return 0


def cmd_eval(args) -> int:
    preds = storage.load_image_dir(args.pred)
    refs = storage.load_image_dir(args.ref)
    if not preds or not refs:
        raise ValueError("both image directories must contain PNG files")
    if [n for n, _ in preds] != [n for n, _ in refs]:
        raise ValueError("prediction and reference directories hold different file names")
    report = harness.evaluate_images([p for _, p in preds], [r for _, r in refs])
    pose = None
    if args.checkpoint and args.data:
        params, _ = storage.load_checkpoint(args.checkpoint)
        ds, _ = storage.load_dataset(args.data, split="train")
        errs = trainer.pose_errors(params.camera_list(), ds.cameras)
        pose = {"mean_rot_deg": float(errs[:, 0].mean()), "mean_trans": float(errs[:, 1].mean())}
    report["pose"] = pose
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    printable = dict(report, per_view=[{k: _json_number(v) for k, v in r.items()} for r in report["per_view"]],
                     mean_psnr=_json_number(report["mean_psnr"]))
    storage.dump_json(printable, out)
    with open(out.with_suffix(".csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["view", "psnr", "ssim"])
        for r in printable["per_view"]:
            w.writerow([r["view"], r["psnr"], r["ssim"]])
        w.writerow(["mean", printable["mean_psnr"], report["mean_ssim"]])
        if pose:
            w.writerow(["pose_mean_rot_deg", pose["mean_rot_deg"], ""])
            w.writerow(["pose_mean_trans", pose["mean_trans"], ""])
    print(f"mean PSNR {report['mean_psnr']:.3f} dB  mean SSIM {report['mean_ssim']:.4f}")
    return 0


def cmd_label(args) -> int:
    params, header = storage.load_checkpoint(args.checkpoint)
    ds, _ = storage.load_dataset(args.data, split="train")
    grid = harness.export_voxels((params, header), (args.dims,) * 3)
    density = labeler.density_from_field(grid.data)
    # refined cameras from the checkpoint, box labels from the dataset
    cams = params.camera_list()
    groups = labeler.group_boxes(ds.images)
    cuboids = labeler.label_objects(density, cams, groups, grid.bounds, args.tau)
    labeler.save_cuboids(args.out, cuboids)
    if args.mask_dir:
        mdir = storage.ensure_dir(args.mask_dir)
        for key in sorted(groups, key=str):
            hull = labeler.visual_hull((args.dims,) * 3, cams, groups[key], grid.bounds)
            region = labeler.region_grow(density, hull, args.tau)
            storage.save_voxels(mdir / f"object_{key}.raw", region.to_grid())
    log.info("wrote %d cuboids to %s", len(cuboids), args.out)
    return 0


def cmd_gradcheck(args) -> int:
    worst = harness.gradient_check(seed=args.seed, h=args.h)
    bad = {k: v for k, v in worst.items() if not v <= args.tol}
    for name, err in worst.items():
        print(f"{name:10s} max rel err {err:.3e}")
    if bad:
        print(f"FAILED: {sorted(bad)} above {args.tol:g}")
        return 1
    print(f"all gradients within {args.tol:g}")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="xrayfield", description="Multi-spectral X-ray neural field toolkit.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("phantom", help="generate a random spectral scene")
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--n-objects", type=int, default=3)
    s.add_argument("--half-extent", type=float, default=1.0, help="scene bounds are [-h, h]^3")
    s.add_argument("--out", required=True, help="scene JSON path")
    s.set_defaults(func=cmd_phantom)

    s = sub.add_parser("synthesize", help="render a dataset from a scene on the fan rig")
    s.add_argument("--scene", required=True)
    s.add_argument("--out", required=True, help="dataset directory")
    s.add_argument("--seed", type=int, required=True, help="noise seed")
    s.add_argument("--views", type=int, default=9)
    s.add_argument("--spacing", type=float, default=40.0, help="degrees between views")
    s.add_argument("--width", type=int, default=128)
    s.add_argument("--height", type=int, default=None)
    s.add_argument("--k1", type=float, default=0.0)
    s.add_argument("--k2", type=float, default=0.0)
    s.add_argument("--grid", type=int, default=128, help="voxels per axis for the forward model")
    s.add_argument("--noise", type=float, default=0.0, help="Gaussian RGB noise sigma")
    s.add_argument("--test-views", type=int, default=3, help="held-out views spread over the full circle")
    s.add_argument("--test-offset", type=float, default=20.0, help="degrees of the first held-out view")
    s.add_argument("--transmittance", action="store_true", help="also store raw transmittance")
    s.add_argument("--voxels", action="store_true", help="also store the voxelized phantom")
    s.set_defaults(func=cmd_synthesize)

    s = sub.add_parser("train", help="fit field, colour network and cameras")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True, help="run directory")
    s.add_argument("--config", help="training config JSON (TrainConfig keys)")
    s.add_argument("--iterations", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--perturb-rot", type=float, default=0.0, help="initial pose noise, degrees")
    s.add_argument("--perturb-trans", type=float, default=0.0, help="initial source offset, fraction of diagonal")
    s.add_argument("--no-pose-gt", dest="pose_gt", action="store_false",
                   help="do not log pose errors against the dataset cameras")
    s.add_argument("--checkpoint-every", type=int, default=0)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("render", help="render views from a checkpoint")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--out", required=True, help="output image directory")
    src = s.add_mutually_exclusive_group()
    src.add_argument("--cameras", help="JSON list of cameras")
    src.add_argument("--data", help="dataset directory whose cameras to render")
    src.add_argument("--orbit", type=int, help="render N fan-rig views")
    s.add_argument("--split", default="test", help="dataset split used with --data")
    s.add_argument("--width", type=int)
    s.add_argument("--height", type=int)
    s.add_argument("--samples", type=int, help="samples per ray (default: checkpoint setting)")
    s.add_argument("--voxels", type=int, help="also export the field on an N^3 grid")
    s.set_defaults(func=cmd_render)

    s = sub.add_parser("eval", help="PSNR/SSIM between image directories")
    s.add_argument("--pred", required=True)
    s.add_argument("--ref", required=True)
    s.add_argument("--out", required=True, help="metrics JSON path (a .csv twin is written beside it)")
    s.add_argument("--checkpoint", help="with --data: also report pose errors")
    s.add_argument("--data")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("label", help="cuboid labels from boxes and a trained field")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True, help="cuboid JSON path")
    s.add_argument("--dims", type=int, default=64)
    s.add_argument("--tau", type=float, default=None, help="density threshold (default: adaptive)")
    s.add_argument("--mask-dir", help="also write per-object masks")
    s.set_defaults(func=cmd_label)

    s = sub.add_parser("gradcheck", help="finite-difference gradient check")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--h", type=float, default=1e-4)
    s.add_argument("--tol", type=float, default=1e-4)
    s.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return int(args.func(args))
    except (XrayFieldError, ValueError, OSError, KeyError, json.JSONDecodeError) as exc:
        print(f"xrayfield {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
