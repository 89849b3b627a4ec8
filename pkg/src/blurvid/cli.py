"""Command-line entry point: ``blurvid <command> [options]``.

Exit codes: 0 success, 1 invalid input or configuration, 2 numerical failure.
"""
import argparse
import collections
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np
import torch

from . import blur_synth as bs
from .config import PROFILES, ConfigError, load_config
from .gradcheck import OPERATORS, TOLERANCE, run_gradcheck
from .network import check_input_size, load_checkpoint
from .trainer import (FrameDataset, NumericalError, build_model, cross_evaluate, evaluate,
                      train, write_eval_reports)

logger = logging.getLogger("blurvid")

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 1, 2
IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff"}


def _images_in(directory):
    return sorted(p for p in Path(directory).iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


def _seed(base, *index):
    return int(np.random.SeedSequence([base, *index]).generate_state(1)[0])


def _resolve(args):
    cfg = load_config(args.config, args.set or (), args.profile)
    return cfg


def _echo_config(cfg, out_dir):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = cfg.write(out_dir / "resolved_config.ini")
    logger.info("resolved config written to %s (hash %s)", path, cfg.config_hash())
    return path


def _histogram(samples):
    return dict(sorted(collections.Counter(s.n for s in samples).items()))


# -- data generation ----------------------------------------------------------

def cmd_gen_pano(args):
    cfg = _resolve(args)
    synth = dataclasses.replace(cfg.synth, mode="rotational")
    paths = _images_in(args.panoramas)
    samples = []
    for p_idx, path in enumerate(paths):
        pano = bs.load_image(path)
        h, w = pano.shape[:2]
        if w != 2 * h:
            logger.warning("skipping %s: %dx%d is not a 2:1 panorama", path, w, h)
            continue
        for s in range(synth.samples_per_source):
            samples.append(bs.generate_rotational_sample(
                pano, synth, _seed(synth.seed, p_idx, s), source=path.name))
    if not samples:
        raise bs.DatasetError(f"no usable panoramas in {args.panoramas}")
    bs.write_dataset(samples, args.out, mode="rotational", seed=synth.seed,
                     config=bs.config_dict(synth))
    _echo_config(cfg, args.out)
    print(f"wrote {len(samples)} samples to {args.out}")
    print("frame-count histogram: " + ", ".join(f"n={k}: {v}" for k, v in _histogram(samples).items()))
    return EXIT_OK


def _scenes(root):
    root = Path(root)
    if not root.is_dir():
        raise bs.DatasetError(f"frame directory not found: {root}")
    subdirs = sorted(d for d in root.iterdir() if d.is_dir())
    if subdirs:
        return [(d.name, _images_in(d)) for d in subdirs]
    return [(root.name, _images_in(root))]


def cmd_gen_video(args):
    cfg = _resolve(args)
    synth = dataclasses.replace(cfg.synth, mode="dynamic")
    scenes = _scenes(args.frames)
    if not any(frames for _, frames in scenes):
        raise bs.DatasetError(f"no frames found in {args.frames}")
    samples = []
    for s_idx, (name, paths) in enumerate(scenes):
        if len(paths) < synth.n_dynamic:
            logger.warning("skipping scene %s: %d frames, need %d", name, len(paths), synth.n_dynamic)
            continue
        frames = [bs.load_image(p) for p in paths]
        for start in bs.dynamic_windows(len(frames), synth.n_dynamic, synth.stride):
            samples.append(bs.generate_dynamic_sample(
                frames, synth, _seed(synth.seed, s_idx, start), start=start, source=name))
    if not samples:
        raise bs.DatasetError(f"every scene in {args.frames} is shorter than {synth.n_dynamic} frames")
    bs.write_dataset(samples, args.out, mode="dynamic", seed=synth.seed,
                     config=bs.config_dict(synth))
    _echo_config(cfg, args.out)
    print(f"wrote {len(samples)} samples from {len(scenes)} scenes to {args.out}")
    return EXIT_OK


# -- training and evaluation --------------------------------------------------

def _center_crop(img, size):
    h, w = img.shape[-3:-1]
    if h < size or w < size:
        raise bs.InputError(f"image {h}x{w} is smaller than the input size {size}")
    y0, x0 = (h - size) // 2, (w - size) // 2
    return img[..., y0:y0 + size, x0:x0 + size, :]


def load_frame_dataset(root, n, size=None, label=None):
    samples = bs.read_dataset(root)
    if size is not None:
        for s in samples:
            s.blurred = _center_crop(s.blurred, size)
            s.frames = _center_crop(s.frames, size)
    data = FrameDataset.from_samples(samples, n, label=label or Path(root).name)
    data.ids = [e["dir"] for e in bs.read_manifest(root)["samples"]]
    return data


def cmd_train(args):
    cfg = _resolve(args)
    run_dir = Path(args.run_dir)
    data = load_frame_dataset(args.data, cfg.network.n, cfg.train.input_size)
    eval_data = (load_frame_dataset(args.eval_data, cfg.network.n, cfg.train.input_size)
                 if args.eval_data else None)
    _echo_config(cfg, run_dir)
    print(f"run directory: {run_dir}")
    print(f"checkpoints:   {run_dir / 'checkpoints'}")
    print(f"run log:       {run_dir / 'runlog.csv'}")
    model = build_model(cfg.network, cfg.train.seed)
    _, log = train(data, model, cfg.train, run_dir=run_dir, eval_dataset=eval_data,
                   dry_run=args.dry_run)
    if args.dry_run:
        for epoch, lr in log.lr_trace.items():
            print(f"epoch {epoch:4d}  lr {lr:.3e}")
    else:
        print(f"final loss {log.steps[-1]['loss']:.5f} after {len(log.steps)} iterations")
    return EXIT_OK


def _load_model(args, cfg):
    expected = cfg.network if args.config or args.set else None
    model, _ = load_checkpoint(args.checkpoint, expected=expected)
    return model


def cmd_eval(args):
    cfg = _resolve(args)
    model = _load_model(args, cfg)
    data = load_frame_dataset(args.data, model.config.n)
    result = evaluate(data, model, batch_size=cfg.eval.batch_size, with_ssim=cfg.eval.ssim,
                      bin_edges=cfg.eval.rotation_bins)
    write_eval_reports(result, args.out, data.ids)
    _echo_config(cfg, args.out)
    for key, value in result.aggregate.items():
        print(f"{key:<20s} {value}")
    return EXIT_OK


def cmd_cross_eval(args):
    cfg = _resolve(args)
    model = _load_model(args, cfg)
    data = load_frame_dataset(args.data, model.config.n, label=args.eval_label)
    result = cross_evaluate(model, data, args.train_label, args.eval_label,
                            batch_size=cfg.eval.batch_size, with_ssim=cfg.eval.ssim,
                            bin_edges=cfg.eval.rotation_bins)
    write_eval_reports(result, args.out, data.ids)
    print(f"trained on {result.labels['train']}, evaluated on {result.labels['eval']}")
    print(f"psnr_mean {result.aggregate['psnr_mean']:.3f}")
    return EXIT_OK


def contact_sheet(blurred, frames, pad=4):
    """Blurred input on the left, then the predicted frames in output order."""
    tiles = [blurred] + list(frames)
    h, w = blurred.shape[:2]
    sheet = np.ones((h, len(tiles) * (w + pad) - pad, 3))
    for i, tile in enumerate(tiles):
        sheet[:, i * (w + pad):i * (w + pad) + w] = tile
    return sheet


def cmd_infer(args):
    model, _ = load_checkpoint(args.checkpoint)
    src = Path(args.input)
    paths = [src] if src.is_file() else _images_in(src)
    if not paths:
        raise bs.InputError(f"no images found at {src}")
    out_root = Path(args.out)
    k = model.config.k
    for path in paths:
        img = bs.load_image(path)
        h, w = img.shape[:2]
        check_input_size(h, w, k)
        x = torch.as_tensor(np.transpose(img, (2, 0, 1))[None].copy(), dtype=torch.float32)
        with torch.no_grad():
            frames = model.eval()(x).frames().clamp(0, 1)[0].permute(0, 2, 3, 1).numpy()
        out = out_root / path.stem if len(paths) > 1 else out_root
        out.mkdir(parents=True, exist_ok=True)
        for j, f in enumerate(frames):
            bs.save_image(out / f"frame_{j:02d}.png", f)
        bs.save_image(out / "contact_sheet.png", contact_sheet(img, frames))
        (out / "contact_sheet.json").write_text(json.dumps({
            "tiles": ["blurred"] + [f"frame_{j:02d}" for j in range(len(frames))],
            "direction": "as predicted; the temporal direction of a single blurred image is ambiguous",
        }, indent=2))
        print(f"{path.name}: wrote {len(frames)} frames to {out}")
    return EXIT_OK


def cmd_gradcheck(args):
    names = args.operators or list(OPERATORS)
    unknown = [n for n in names if n not in OPERATORS]
    if unknown:
        raise ConfigError(f"unknown operators {unknown}; available: {list(OPERATORS)}")
    report = run_gradcheck({n: OPERATORS[n] for n in names}, instances=args.instances,
                           seed=args.seed, tolerance=args.tolerance)
    for line in report.lines():
        print(line)
    print(f"{len(report.results)} operators, {args.instances} instances each, {report.seconds:.1f}s")
    return EXIT_OK if report.passed else EXIT_NUMERICAL


# -- argument parsing ---------------------------------------------------------

def _add_config_args(p):
    p.add_argument("--config", type=Path, help="INI file with [synth] [network] [train] [eval]")
    p.add_argument("--profile", choices=PROFILES, help="defaults to use before the config file")
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                   help="override one config value (repeatable)")


def build_parser():
    parser = argparse.ArgumentParser(prog="blurvid",
                                     description="Recover frame sequences from blurred images.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-pano", help="synthesize rotational blur from 2:1 panoramas")
    p.add_argument("--panoramas", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    _add_config_args(p)
    p.set_defaults(func=cmd_gen_pano)

    p = sub.add_parser("gen-video", help="synthesize blur by averaging video frames")
    p.add_argument("--frames", required=True, type=Path, help="directory of scene subdirectories")
    p.add_argument("--out", required=True, type=Path)
    _add_config_args(p)
    p.set_defaults(func=cmd_gen_video)

    p = sub.add_parser("train", help="train a model on a generated dataset")
    p.add_argument("--data", required=True, type=Path)
    p.add_argument("--run-dir", required=True, type=Path)
    p.add_argument("--eval-data", type=Path)
    p.add_argument("--dry-run", action="store_true", help="print the learning-rate schedule only")
    _add_config_args(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="order-invariant PSNR/SSIM on a dataset")
    p.add_argument("--checkpoint", required=True, type=Path)
    p.add_argument("--data", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    _add_config_args(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("cross-eval", help="evaluate a model on a dataset it was not trained on")
    p.add_argument("--checkpoint", required=True, type=Path)
    p.add_argument("--data", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--train-label", required=True)
    p.add_argument("--eval-label", required=True)
    _add_config_args(p)
    p.set_defaults(func=cmd_cross_eval)

    p = sub.add_parser("infer", help="predict frames for blurred images")
    p.add_argument("--checkpoint", required=True, type=Path)
    p.add_argument("--input", required=True, type=Path, help="image file or directory")
    p.add_argument("--out", required=True, type=Path)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("gradcheck", help="compare analytic and numerical gradients")
    p.add_argument("--operators", nargs="+")
    p.add_argument("--instances", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tolerance", type=float, default=TOLERANCE)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except NumericalError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ValueError, OSError) as e:
        # covers InputError, DatasetError, ConfigError and CheckpointMismatch
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
