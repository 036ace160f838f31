"""
omniforge command line.

Exit codes: 0 success, 1 usage error, 2 runtime failure.

Every subcommand takes ``--seed`` and ``--config``. The config is a JSON file
(default: $OMNIFORGE_CONFIG); a section named after the subcommand, with dashes
turned into underscores, supplies defaults for its flags. ``pipeline`` reads
its whole configuration from the file (top level or a "pipeline" section).
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from pathlib import Path

from . import __version__
from .errors import OmniforgeError
from .geometry import DEFAULT_FOV_DEG, DEFAULT_VIEW_RES, VIEW_NAMES, cube_layout
from .pipeline.records import CONFIG_ENV

log = logging.getLogger("omniforge")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; the contract reserves 2 for runtime failures
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _common(p: argparse.ArgumentParser, seed_help: str = "random seed (default: 0)") -> None:
    p.add_argument("--seed", type=int, default=0, help=seed_help)
    p.add_argument("--config", default=None, help=f"JSON config file (default: ${CONFIG_ENV})")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="omniforge", description="Panorama editing-pair tools and a toy omnidirectional diffusion core.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("split", help="split an ERP panorama into six perspective viewports")
    p.add_argument("--in", dest="input", required=True, help="input ERP PNG (width = 2 x height)")
    p.add_argument("--fov", type=float, default=DEFAULT_FOV_DEG, help="viewport field of view in degrees (default: 110)")
    p.add_argument("--res", type=int, default=DEFAULT_VIEW_RES, help="viewport size in pixels (default: 256)")
    p.add_argument("--out", required=True, help="output directory for front/right/back/left/top/bottom.png")
    p.add_argument("--bits", type=int, choices=(8, 16), default=8, help="PNG bit depth (default: 8)")
    _common(p)

    p = sub.add_parser("stitch", help="stitch six viewport PNGs back into an ERP panorama")
    p.add_argument("--in", dest="input", required=True, help="directory holding the six viewport PNGs")
    p.add_argument("--fov", type=float, default=DEFAULT_FOV_DEG, help="viewport field of view in degrees (default: 110)")
    p.add_argument("--out", required=True, help="output ERP PNG")
    p.add_argument("--width", type=int, default=None, help="ERP width (default: 4 x viewport size)")
    p.add_argument("--seam-report", action="store_true", help="print the wrap-seam metric of the result")
    p.add_argument("--reference", default=None, help="ERP to compare against; prints PSNR")
    p.add_argument("--bits", type=int, choices=(8, 16), default=8, help="PNG bit depth (default: 8)")
    _common(p)

    p = sub.add_parser("mask", help="generate a seeded binary mask PNG")
    p.add_argument("--kind", choices=("rect", "irregular", "view"), default="rect", help="mask family (default: rect)")
    p.add_argument("--width", type=int, default=1024, help="mask width (default: 1024)")
    p.add_argument("--height", type=int, default=512, help="mask height (default: 512)")
    p.add_argument("--area-min", type=float, default=None, help="lower area fraction (rect)")
    p.add_argument("--area-max", type=float, default=None, help="upper area fraction, exclusive (rect)")
    p.add_argument("--strokes", type=int, default=None, help="stroke count (irregular)")
    p.add_argument("--view-index", type=int, default=None, help="viewport index 0-5 (view)")
    p.add_argument("--invert", action="store_true", default=None, help="invert a view mask (outpainting)")
    p.add_argument("--fov", type=float, default=DEFAULT_FOV_DEG, help="field of view for view masks (default: 110)")
    p.add_argument("--out", required=True, help="output 1-bit PNG")
    _common(p)

    p = sub.add_parser("pipeline", help="build editing pairs and a JSONL manifest from a config")
    p.add_argument("--out-dir", default=None, help="override the config's output_dir")
    p.add_argument("--manifest", default=None, help="override the manifest path")
    _common(p, "base seed (default: the config's seed)")
    p.set_defaults(seed=None)

    p = sub.add_parser("train-toy", help="train the tiny velocity model on a fixed-target dataset")
    p.add_argument("--steps", type=int, default=500, help="optimizer steps (default: 500)")
    p.add_argument("--lr", type=float, default=1e-2, help="AdamW learning rate (default: 0.01)")
    p.add_argument("--batch-size", type=int, default=4, help="samples per step (default: 4)")
    p.add_argument("--lora-only", action="store_true", help="freeze everything except LoRA adapters")
    p.add_argument("--dim", type=int, default=16, help="model width (default: 16)")
    p.add_argument("--layers", type=int, default=2, help="transformer blocks (default: 2)")
    p.add_argument("--lora-rank", type=int, default=16, help="LoRA rank (default: 16)")
    p.add_argument("--samples", type=int, default=1, help="noise draws in the dataset (default: 1)")
    p.add_argument("--out", required=True, help="output directory for loss.csv and model.ckpt")
    _common(p)

    p = sub.add_parser("sample-toy", help="Euler-sample a panorama from the tiny model")
    p.add_argument("--task", default="text2odi", help="guidance-table task (default: text2odi)")
    p.add_argument("--gs", type=float, default=None, help="text guidance scale (default: per task)")
    p.add_argument("--igs", type=float, default=None, help="image guidance scale (default: per task)")
    p.add_argument("--steps", type=int, default=None, help="Euler steps (default: per task, 50)")
    p.add_argument("--prompt", default="a panorama of a living room", help="text condition")
    p.add_argument("--image", default=None, help="optional ERP PNG used as image condition")
    p.add_argument("--checkpoint", default=None, help="model checkpoint from train-toy (default: fresh model)")
    p.add_argument("--fov", type=float, default=DEFAULT_FOV_DEG, help="viewport field of view (default: 110)")
    p.add_argument("--width", type=int, default=256, help="output ERP width (default: 256)")
    p.add_argument("--out", required=True, help="output ERP PNG")
    _common(p)

    p = sub.add_parser("check", help="run the invariant suite; nonzero exit iff a property fails")
    p.add_argument("--quick", action="store_true", help="smaller problem sizes")
    p.add_argument("--only", action="append", default=None, help="run just this property (repeatable)")
    _common(p)
    return parser


def _load_config(path) -> dict:
    if not path:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise OmniforgeError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise OmniforgeError(f"config {path} is not valid JSON: {exc}") from exc


def parse_args(argv=None) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    args.config = args.config or os.environ.get(CONFIG_ENV) or None
    section = _load_config(args.config).get(args.command.replace("-", "_"), {}) if args.command != "pipeline" else {}
    if section:
        # config values become defaults; explicit flags still win
        sub = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest for a in sub._actions}
        unknown = set(section) - known
        if unknown:
            parser.error(f"unknown keys in config section {args.command!r}: {sorted(unknown)}")
        sub.set_defaults(**section)
        args = parser.parse_args(argv)
        args.config = args.config or os.environ.get(CONFIG_ENV) or None
    return args


def cmd_split(args) -> int:
    from .imagefile import read_erp, write_png
    from .projection import split

    erp = read_erp(args.input)
    layout = cube_layout(math.radians(args.fov), args.res)
    out = Path(args.out)
    for name, vp in zip(layout.names, split(erp, layout)):
        write_png(out / f"{name}.png", vp, args.bits)
    print(f"wrote {len(layout)} viewports to {out}")
    return EXIT_OK


def cmd_stitch(args) -> int:
    from .imagefile import read_erp, read_png, write_png
    from .projection import psnr, seam_metric, stitch

    src = Path(args.input)
    missing = [n for n in VIEW_NAMES if not (src / f"{n}.png").is_file()]
    if missing:
        raise OmniforgeError(f"missing viewport file(s): {', '.join(f'{n}.png' for n in missing)} in {src}")
    views = [read_png(src / f"{n}.png") for n in VIEW_NAMES]
    res = views[0].shape[0]
    if any(v.shape[:2] != (res, res) for v in views):
        raise OmniforgeError("viewport files must all be square and the same size")
    width = args.width or 4 * res
    layout = cube_layout(math.radians(args.fov), res)
    erp = stitch(views, layout, width, width // 2)
    write_png(args.out, erp, args.bits)
    # report on what was written, not on the float raster
    erp = read_png(args.out)
    print(f"wrote {args.out} ({width}x{width // 2})")
    if args.seam_report:
        print(f"seam_metric {seam_metric(erp):.6g}")
    if args.reference:
        ref = read_erp(args.reference)
        if ref.shape != erp.shape:
            raise OmniforgeError(f"reference is {ref.shape[1]}x{ref.shape[0]}, stitched ERP is {width}x{width // 2}")
        print(f"psnr_db {psnr(ref, erp):.2f}")
    return EXIT_OK


def cmd_mask(args) -> int:
    from .imagefile import write_mask_png
    from .masks import MaskParams, generate_mask

    base = _load_config(args.config).get("masks", {})
    params = {**base, "kind": args.kind, "seed": args.seed}
    if args.area_min is not None or args.area_max is not None:
        lo, hi = params.get("area_frac_range", MaskParams.area_frac_range)
        params["area_frac_range"] = (args.area_min if args.area_min is not None else lo, args.area_max if args.area_max is not None else hi)
    if args.strokes is not None:
        params["stroke_count"] = args.strokes
    if args.view_index is not None:
        params["view_index"] = args.view_index
    if args.invert is not None:
        params["invert"] = args.invert
    mp = MaskParams.from_dict(params)
    layout = cube_layout(math.radians(args.fov), max(args.height // 2, 8)) if mp.kind == "view" else None
    mask = generate_mask(args.width, args.height, mp, layout)
    write_mask_png(args.out, mask)
    print(f"wrote {args.out}: {mp.kind} mask, {mask.mean():.4f} area fraction")
    return EXIT_OK


def cmd_pipeline(args) -> int:
    from .pipeline import PipelineConfig, run_pipeline

    if not args.config:
        raise UsageError(f"pipeline needs --config or ${CONFIG_ENV}")
    cfg = PipelineConfig.load(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out_dir:
        cfg.output_dir = args.out_dir
    if args.manifest:
        cfg.manifest = args.manifest
    summary = run_pipeline(cfg)
    counts = ", ".join(f"{k} {v}" for k, v in summary["counts"].items())
    print(f"wrote {summary['records']} records to {summary['manifest']} ({counts})")
    for path in summary["skipped"]:
        print(f"skipped {path}")
    return EXIT_OK


def cmd_train_toy(args) -> int:
    from .diffusion import ModelConfig, TrainConfig, fixed_target_dataset, save_checkpoint, train_toy, write_loss_csv

    model_cfg = ModelConfig(dim=args.dim, layers=args.layers, lora_rank=args.lora_rank, lora_alpha=args.lora_rank, seed=args.seed)
    cfg = TrainConfig(steps=args.steps, lr=args.lr, batch_size=args.batch_size, lora_only=args.lora_only, seed=args.seed, model=model_cfg)
    dataset = fixed_target_dataset(args.samples, model_cfg.n_views, model_cfg.latent_hw, model_cfg.channels, seed=args.seed)
    res = train_toy(cfg, dataset)
    out = Path(args.out)
    write_loss_csv(out / "loss.csv", res.losses)
    save_checkpoint(res.model, out / "model.ckpt")
    ratio = res.final_loss / res.initial_loss
    print(f"initial_loss {res.initial_loss:.6g} final_loss {res.final_loss:.6g} ratio {ratio:.4f}")
    print(f"wrote {out / 'loss.csv'} and {out / 'model.ckpt'}")
    return EXIT_OK


def cmd_sample_toy(args) -> int:
    import torch

    from .diffusion import (
        Conditioning,
        GuidanceConfig,
        ModelConfig,
        TinyVelocityModel,
        decode_erp,
        encode_erp,
        euler_sample,
        load_checkpoint,
        task_guidance,
    )
    from .imagefile import read_erp, write_png

    defaults = task_guidance(args.task)
    guidance = GuidanceConfig(
        gs=args.gs if args.gs is not None else defaults.gs,
        igs=args.igs if args.igs is not None else defaults.igs,
        steps=args.steps if args.steps is not None else defaults.steps,
    )
    model = load_checkpoint(args.checkpoint) if args.checkpoint else TinyVelocityModel(ModelConfig(seed=args.seed))
    model.eval()
    cfg = model.config
    layout = cube_layout(math.radians(args.fov), args.width // 4)
    items = []
    if args.image:
        latents = encode_erp(read_erp(args.image), layout, cfg.latent_hw)
        items += [("image", lat[..., : cfg.channels]) for lat in latents]
    items.append(("text", args.prompt))
    shape = (cfg.n_views, cfg.latent_hw, cfg.latent_hw, cfg.channels)
    z = euler_sample(model.velocity, Conditioning(items), guidance, shape, args.seed, dtype=model.dtype)
    if cfg.n_views != len(layout):
        raise OmniforgeError(f"model produces {cfg.n_views} viewports, the cube layout needs {len(layout)}")
    pad = torch.zeros(shape[:-1] + (max(0, 3 - cfg.channels),), dtype=z.dtype)
    erp = decode_erp(torch.cat([z, pad], dim=-1), layout, args.width, args.width // 2)
    write_png(args.out, erp)
    igs = "none" if guidance.igs is None else f"{guidance.igs:g}"
    print(f"task {args.task} gs {guidance.gs:g} igs {igs} steps {guidance.steps}")
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_check(args) -> int:
    import torch

    from .verify import PROPERTIES, run_checks

    if args.only:
        names = {n for n, _ in PROPERTIES}
        bad = sorted(set(args.only) - names)
        if bad:
            raise UsageError(f"unknown properties {bad}; choose from {sorted(names)}")
    torch.manual_seed(args.seed)
    ok = run_checks(quick=args.quick, only=args.only, emit=lambda line: print(line, flush=True))
    return EXIT_OK if ok else EXIT_RUNTIME


COMMANDS = {
    "split": cmd_split,
    "stitch": cmd_stitch,
    "mask": cmd_mask,
    "pipeline": cmd_pipeline,
    "train-toy": cmd_train_toy,
    "sample-toy": cmd_sample_toy,
    "check": cmd_check,
}


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
    except OmniforgeError as exc:  # unreadable config
        print(f"omniforge: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"omniforge {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OmniforgeError, OSError, ValueError, KeyError) as exc:
        print(f"omniforge {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
