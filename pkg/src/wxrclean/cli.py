"""
Command line interface.

Every subcommand reads and writes the package's file formats. A JSON file
given with ``--config`` supplies defaults; flags given on the command line
win. Exit status: 0 on success, 1 on a domain error (bad input data,
numerical failure, unwritable output), 2 on a usage error.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import fields, replace
from pathlib import Path

import numpy as np

from . import io
from .correction import CorrectionConfig, build_correction_mask, correct_frame
from .fusion import DetectionConfig, FrameHistory, FusionConfig, build_artifact_mask
from .geometry import (
    RingDetectorConfig,
    ShadowSector,
    SpokeDetectorConfig,
    accumulate_sum,
    current_shadow_mask,
    derive_shadow_sectors,
)
from .grid import GridSpec, MaskRole, PixelMask, RadarStation, RadarStationConfig, union_masks
from .metrics import REGION_SIZES, overall_within_one, simulate_region_eval, within_one
from .morphology import StructuringElement
from .render import render
from .synth import (
    RingSpec,
    SpokeSpec,
    SyntheticSceneConfig,
    export_patches,
    library_scene,
    make_scene,
    random_artifact_specs,
    training_sites,
)
from .texture import GaborBankConfig, TextureLibrary, loocv

__all__ = ["main", "build_parser"]

DOMAIN_ERRORS = (ValueError, RuntimeError, ArithmeticError, OSError, KeyError)


class UsageError(Exception):
    pass


def _pick(flag, section: dict, key: str, default=None):
    """Explicit flag, else config value, else default."""
    if flag is not None:
        return flag
    return section.get(key, default)


def _dataclass_from(cls, values: dict, **overrides):
    names = {f.name for f in fields(cls)}
    unknown = set(values) - names
    if unknown:
        raise ValueError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    kw = dict(values)
    kw.update({k: v for k, v in overrides.items() if v is not None})
    for key in ("frequencies", "velocity"):
        if key in kw and isinstance(kw[key], list):
            kw[key] = tuple(kw[key])
    if "closing_se" in kw and isinstance(kw["closing_se"], int):
        kw["closing_se"] = StructuringElement.vertical_line(kw["closing_se"])
    if "se" in kw and isinstance(kw["se"], int):
        kw["se"] = StructuringElement.rect(kw["se"])
    return cls(**kw)


def _stations(args, cfg: dict, spec: GridSpec | None = None) -> RadarStationConfig:
    if getattr(args, "stations", None):
        return io.read_stations(args.stations)
    if "stations" in cfg:
        return RadarStationConfig.from_dict({"stations": cfg["stations"]})
    if spec is not None:
        return RadarStationConfig((RadarStation(spec.width / 2, spec.height / 2),))
    raise UsageError("--stations is required (or a 'stations' list in --config)")


def _write_json(data, path):
    if path is None:
        print(json.dumps(data, indent=2))
        return
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(data, fh, indent=2)
        fh.write("\n")


# subcommands


def cmd_synth(args, cfg):
    sect = cfg.get("synth", {})
    spec = GridSpec(int(_pick(args.width, sect, "width", 256)), int(_pick(args.height, sect, "height", 256)))
    stations = _stations(args, cfg, spec)
    seed = int(args.seed)
    base = SyntheticSceneConfig(
        seed=seed,
        spec=spec,
        stations=stations,
        blob_count=int(sect.get("blob_count", 6)),
        blob_scale=float(sect.get("blob_scale", 14.0)),
        intensity_gamma=float(sect.get("intensity_gamma", 1.5)),
        msg_noise_sigma=float(_pick(args.noise, sect, "msg_noise_sigma", 0.04)),
        velocity=tuple(sect.get("velocity", (0.8, 0.4))),
        shadow_specs=tuple(ShadowSector(**s) for s in sect.get("shadows", ())),
    )
    if "spokes" in sect or "rings" in sect:
        spokes = tuple(SpokeSpec(**s) for s in sect.get("spokes", ()))
        rings = tuple(RingSpec(**r) for r in sect.get("rings", ()))
    else:
        spokes, rings = random_artifact_specs(
            seed, base, int(_pick(args.spokes, sect, "n_spokes", 2)), int(_pick(args.rings, sect, "n_rings", 1)))
    config = replace(base, spoke_specs=spokes, ring_specs=rings)
    scene = make_scene(config)
    out = io.ensure_dir(args.output)
    io.write_frame(scene.dirty, out / "current.wxr")
    io.write_frame(scene.clean, out / "clean.wxr")
    for i, p in enumerate(scene.predecessors, 1):
        io.write_frame(p, out / f"prev{i}.wxr")
    io.write_msg(scene.msg, out / "current.msg")
    io.write_mask(scene.truth.artifact, out / "truth.msk")
    if config.shadow_specs:
        io.write_mask(scene.truth.shadow, out / "shadow.msk")
    io.write_stations(stations, out / "stations.json")
    n_patch = int(_pick(args.patch_scenes, sect, "patch_scenes", 4))
    if n_patch > 0:
        patch_dir = out / "patches"
        index = patch_dir / "index.txt"
        if index.exists():
            index.unlink()
        for i in range(n_patch):
            pseed = seed * 1000 + 100 + i
            pscene = library_scene(pseed, replace(base, msg_noise_sigma=0.0))
            export_patches(pscene.dirty, training_sites(pscene, int(sect.get("patches_per_class", 4)), pseed),
                           patch_dir, prefix=f"s{i:02d}")
    print(f"wrote scene seed {seed} to {out}")
    return 0


def cmd_texture_train(args, cfg):
    sect = cfg.get("texture", {})
    bank = _dataclass_from(GaborBankConfig, sect.get("bank", {}))
    window = int(_pick(args.window, sect, "window", 39))
    patches = io.read_patch_dir(args.patch_dir)
    if not patches:
        raise ValueError("patch index lists no patches")
    lib = TextureLibrary.from_patches(patches, bank, window)
    lib.save(args.output)
    n_art = int(lib.is_artifact.sum())
    print(f"library: {len(lib)} entries ({n_art} artifact, {len(lib) - n_art} precipitation) -> {args.output}")
    return 0


def cmd_texture_loocv(args, cfg):
    lib = TextureLibrary.load(args.library)
    acc = loocv(lib)
    print(json.dumps({"entries": len(lib), "loocv_accuracy": acc}))
    return 0


def _detection_config(args, cfg) -> DetectionConfig:
    sect = cfg.get("detect", {})
    return DetectionConfig(
        stride=int(_pick(args.stride, sect, "stride", 2)),
        spokes=_dataclass_from(SpokeDetectorConfig, sect.get("spoke", {})),
        rings=_dataclass_from(RingDetectorConfig, sect.get("ring", {})),
        fusion=_dataclass_from(FusionConfig, sect.get("fusion", {}),
                               temporal_tolerance=args.tolerance),
        workers=int(_pick(args.workers, sect, "workers", 1)),
    )


def cmd_detect(args, cfg):
    library = args.library or cfg.get("detect", {}).get("library")
    if not library:
        raise UsageError("detect requires --library")
    stations = _stations(args, cfg)
    current = io.read_frame(args.current)
    preds = sorted((io.read_frame(p) for p in args.prev or ()), key=lambda f: -f.timestamp)
    sect = cfg.get("detect", {})
    history = FrameHistory(current, preds, int(sect.get("nominal_interval", 300)),
                           int(_pick(args.max_gap, sect, "max_gap", 900)))
    mask, report = build_artifact_mask(history, TextureLibrary.load(library), stations,
                                       _detection_config(args, cfg))
    io.write_mask(mask, args.output)
    if args.report:
        _write_json(report.to_dict(), args.report)
    print(f"{mask.count} artifact pixels ({report.mode}) -> {args.output}")
    return 0


def cmd_shadow_sum(args, cfg):
    paths = io.list_frames(args.frame_dir)
    if not paths:
        raise ValueError(f"no .wxr frames in {args.frame_dir}")
    total = accumulate_sum(io.read_frame(p) for p in paths)
    io.write_sum(total, args.output)
    print(f"summed {total.frame_count} frames -> {args.output}")
    return 0


def cmd_shadow_derive(args, cfg):
    sect = cfg.get("shadow", {})
    sums = io.read_sum(args.sum)
    stations = io.read_stations(args.stations_file)
    sectors = derive_shadow_sectors(
        sums, stations,
        tau=float(_pick(args.tau, sect, "tau", 0.2)),
        r_inner=float(_pick(args.r_inner, sect, "r_inner", 10.0)),
    )
    io.write_sectors(sectors, args.output)
    for s in sectors:
        print(f"station {s.station}: {math.degrees(s.theta_start):.1f}-{math.degrees(s.theta_end):.1f} deg, "
              f"{s.r_start:g}-{s.r_end:g} km")
    print(f"{len(sectors)} sectors -> {args.output}")
    return 0


def _correction_config(args, cfg) -> CorrectionConfig:
    sect = dict(cfg.get("correction", {}))
    return _dataclass_from(CorrectionConfig, sect, k=args.k, workers=args.workers)


def cmd_correct(args, cfg):
    frame = io.read_frame(args.frame)
    msg = io.read_msg(args.msg)
    masks = [io.read_mask(m) for m in args.mask or ()]
    if args.sectors:
        stations = _stations(args, cfg)
        masks.append(current_shadow_mask(frame, io.read_sectors(args.sectors), stations))
    if not masks:
        raise UsageError("correct needs at least one --mask or --sectors")
    for m in masks:
        if m.spec.shape != frame.spec.shape:
            raise ValueError(f"mask grid {m.spec.shape} does not match frame {frame.spec.shape}")
    combined = union_masks([PixelMask(frame.spec, m.bits) for m in masks], MaskRole.CORRECTION)
    # pixels that were never valid are filled as well
    combined = build_correction_mask(combined, PixelMask(frame.spec, ~frame.valid, MaskRole.SHADOW))
    corrected, report = correct_frame(frame, combined, msg, _correction_config(args, cfg))
    io.write_frame(corrected, args.output)
    if args.report:
        _write_json(report.to_dict(), args.report)
    print(f"corrected {report.corrected_pixels} pixels, {report.uncorrectable_pixels} uncorrectable -> {args.output}")
    return 0


def cmd_eval_regions(args, cfg):
    sect = cfg.get("eval", {})
    frame = io.read_frame(args.frame)
    msg = io.read_msg(args.msg)
    size = _pick(args.size, sect, "size", "medium")
    if size not in REGION_SIZES:
        size = int(size)
    matrix = simulate_region_eval(
        frame, msg, size,
        trials=int(_pick(args.trials, sect, "trials", 30)),
        seed=int(_pick(args.seed, sect, "seed", 0)),
        config=_correction_config(args, cfg),
        exclude_background=bool(_pick(args.exclude_background, sect, "exclude_background", True)),
        workers=int(_pick(args.workers, sect, "workers", 1)),
    )
    per_class = within_one(matrix)
    result = {
        "region_size": size,
        "pixels": matrix.total,
        "skipped_background": matrix.skipped,
        "overall_within_one": overall_within_one(matrix),
        "mean_within_one": float(np.nanmean(per_class)) if np.any(matrix.sample_sizes) else None,
        "within_one_per_class": [None if np.isnan(v) else float(v) for v in per_class],
        "sample_sizes": matrix.sample_sizes.tolist(),
        "counts": matrix.counts.tolist(),
    }
    _write_json(result, args.output)
    return 0


def cmd_render(args, cfg):
    src = Path(args.input)
    if src.suffix == ".msk":
        item = io.read_mask(src)
    else:
        item = io.read_frame(src)
    overlays = [io.read_mask(m) for m in args.mask or ()]
    render(item, args.output, overlays)
    print(f"-> {args.output}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wxrclean", description=__doc__.strip().splitlines()[0])
    parser.add_argument("--config", help="JSON file with default settings")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    p = sub.add_parser("synth", help="write a synthetic scene")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("-o", "--output", required=True, help="output directory")
    p.add_argument("--width", type=int)
    p.add_argument("--height", type=int)
    p.add_argument("--stations")
    p.add_argument("--spokes", type=int, help="number of random spokes")
    p.add_argument("--rings", type=int, help="number of random rings")
    p.add_argument("--noise", type=float, help="satellite channel noise sigma")
    p.add_argument("--patch-scenes", type=int, help="extra scenes to export texture patches from")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("texture-train", help="build a texture library from patches")
    p.add_argument("patch_dir")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--window", type=int)
    p.set_defaults(func=cmd_texture_train)

    p = sub.add_parser("texture-loocv", help="leave-one-out accuracy of a library")
    p.add_argument("library")
    p.set_defaults(func=cmd_texture_loocv)

    p = sub.add_parser("detect", help="artifact mask for a frame")
    p.add_argument("current")
    p.add_argument("--prev", action="append", help="predecessor frame (up to two)")
    p.add_argument("--library")
    p.add_argument("--stations")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--report")
    p.add_argument("--stride", type=int)
    p.add_argument("--tolerance", type=int, help="temporal tolerance in pixels")
    p.add_argument("--max-gap", type=int)
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("shadow-sum", help="sum a directory of frames")
    p.add_argument("frame_dir")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_shadow_sum)

    p = sub.add_parser("shadow-derive", help="shadow sectors from a sum image")
    p.add_argument("sum")
    p.add_argument("stations_file")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--tau", type=float)
    p.add_argument("--r-inner", type=float)
    p.set_defaults(func=cmd_shadow_derive)

    p = sub.add_parser("correct", help="fill masked pixels from satellite data")
    p.add_argument("frame")
    p.add_argument("--mask", action="append")
    p.add_argument("--msg", required=True)
    p.add_argument("--sectors")
    p.add_argument("--stations")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--report")
    p.add_argument("--k", type=int)
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_correct)

    p = sub.add_parser("eval-regions", help="hide and refill random regions, report accuracy")
    p.add_argument("frame")
    p.add_argument("--msg", required=True)
    p.add_argument("--size", help="small, medium, large or a pixel count")
    p.add_argument("--trials", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--k", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--exclude-background", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_eval_regions)

    p = sub.add_parser("render", help="write a frame or mask as PGM/PPM")
    p.add_argument("input")
    p.add_argument("--mask", action="append", help="mask to overlay")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_render)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    cfg = {}
    try:
        if args.config:
            with open(args.config, encoding="utf-8") as fh:
                cfg = json.load(fh)
            if not isinstance(cfg, dict):
                raise ValueError("config file must hold a JSON object")
        return args.func(args, cfg)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"{parser.prog} {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except DOMAIN_ERRORS as exc:
        print(f"{parser.prog} {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
