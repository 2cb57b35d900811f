"""Command-line entry point wiring the whole pipeline together.

Subcommands: make-synthetic-corpus, make-masks, landmarks, train, infer,
evaluate. Every run resolves its configuration (config file first, then
command-line flags on top) and writes the resolved config next to its
outputs before any compute starts. Exit codes: 0 success, 2 configuration
error, 3 data error, 4 numerical abort.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .data import (
    CH_REFERENCE,
    BatchSampler,
    ClipManifest,
    MaskGeometry,
    MaskSequence,
    VideoClip,
    build_generator_input,
    generate_synthetic_corpus,
    load_clip,
    load_mask,
    make_hmd_mask,
    prepare_reference,
    save_clip,
    save_mask,
)
from .errors import CheckpointError, ConfigError, DataError, NumericalError
from .features import make_extractor
from .landmarks import LandmarkSet, rasterize_contours, read_landmark_file
from .metrics import MetricsReport, clip_metrics, render_report, save_plots
from .networks import composite_output
from .trainer import Trainer, TrainConfig

import torch

MASK_KEYS = ("top", "bottom", "left", "right", "corner_radius")


def _write_resolved_config(out_dir: Path, payload: dict) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "resolved_config.json").write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="ascii"
    )


def _load_config_file(path) -> dict:
    if path is None:
        return {}
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        payload = json.loads(path.read_text(encoding="ascii"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(payload, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    return payload


def _merge_train_config(file_payload: dict, args) -> tuple[TrainConfig, dict]:
    """Flag-over-file merge; returns the config and leftover run keys."""
    train_keys = {f.name for f in dataclasses.fields(TrainConfig)}
    run_keys = {"manifest", "out_dir", "mask_file", "mask_geometry"}
    unknown = set(file_payload) - train_keys - run_keys
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    merged = {k: v for k, v in file_payload.items() if k in train_keys}
    extras = {k: v for k, v in file_payload.items() if k in run_keys}
    for key in train_keys:
        value = getattr(args, key, None)
        if value is not None:
            merged[key] = value
    for key in ("manifest", "out_dir", "mask_file"):
        value = getattr(args, key, None)
        if value is not None:
            extras[key] = str(value)
    geom = dict(extras.get("mask_geometry", {}))
    for key in MASK_KEYS:
        value = getattr(args, f"mask_{key}", None)
        if value is not None:
            geom[key] = value
    if geom:
        extras["mask_geometry"] = geom
    return TrainConfig.from_dict(merged), extras


def _mask_from_extras(extras: dict, h: int, w: int) -> np.ndarray:
    if extras.get("mask_file"):
        path = Path(extras["mask_file"])
        if not path.exists():
            raise DataError(f"mask file not found: {path}")
        mask = load_mask(path)
        if mask.shape != (h, w):
            raise DataError(f"mask {path} is {mask.shape}, dataset frames are {(h, w)}")
        return mask
    geom_kwargs = {k: v for k, v in extras.get("mask_geometry", {}).items()}
    return make_hmd_mask(h, w, MaskGeometry(**geom_kwargs))


def _require_inputs(**paths) -> None:
    for name, path in paths.items():
        if path is None:
            raise DataError(f"missing required input: {name}")
        if not Path(path).exists():
            raise DataError(f"{name} not found: {path}")


def cmd_make_synthetic_corpus(args) -> int:
    out = Path(args.out)
    _write_resolved_config(
        out,
        {
            "command": "make-synthetic-corpus",
            "clips": args.clips,
            "frames": args.frames,
            "height": args.height,
            "width": args.width,
            "seed": args.seed,
            "test_fraction": args.test_fraction,
        },
    )
    manifest = generate_synthetic_corpus(
        out,
        n_clips=args.clips,
        n_frames=args.frames,
        height=args.height,
        width=args.width,
        seed=args.seed,
        test_fraction=args.test_fraction,
    )
    print(f"wrote {len(manifest.clips)} clips under {out}")
    return 0


def cmd_make_masks(args) -> int:
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    geom = MaskGeometry(
        top=args.mask_top if args.mask_top is not None else 0.25,
        bottom=args.mask_bottom if args.mask_bottom is not None else 0.55,
        left=args.mask_left if args.mask_left is not None else 0.15,
        right=args.mask_right if args.mask_right is not None else 0.85,
        corner_radius=args.mask_corner_radius if args.mask_corner_radius is not None else 0.15,
    )
    _write_resolved_config(
        out.parent,
        {"command": "make-masks", "height": args.height, "width": args.width,
         "geometry": dataclasses.asdict(geom), "out": str(out)},
    )
    mask = make_hmd_mask(args.height, args.width, geom)
    save_mask(mask, out)
    print(f"wrote {out} (occluded fraction {mask.mean():.3f})")
    return 0


def cmd_landmarks(args) -> int:
    _require_inputs(frames=args.frames)
    frames_dir = Path(args.frames)
    lm_path = Path(args.landmark_file) if args.landmark_file else frames_dir / "landmarks.txt"
    _require_inputs(landmark_file=lm_path)
    clip = load_clip(frames_dir)
    sets = read_landmark_file(lm_path)
    t, h, w, _ = clip.frames.shape
    if len(sets) < t:
        raise DataError(f"{lm_path} has {len(sets)} landmark lines for {t} frames")
    out = Path(args.out)
    _write_resolved_config(
        out, {"command": "landmarks", "frames": str(frames_dir), "landmark_file": str(lm_path)}
    )
    from PIL import Image

    for i in range(t):
        raster = rasterize_contours(sets[i], h, w)
        Image.fromarray((raster * 255).astype(np.uint8), mode="L").save(out / f"map_{i:05d}.png")
    print(f"wrote {t} landmark maps to {out}")
    return 0


def cmd_train(args) -> int:
    config, extras = _merge_train_config(_load_config_file(args.config), args)
    if "manifest" not in extras:
        raise ConfigError("training needs a dataset manifest (--manifest or config key)")
    out_dir = Path(extras.get("out_dir", "runs/train"))
    manifest = ClipManifest.load(extras["manifest"])
    manifest.validate(config.clip_len)
    probe = load_clip(manifest.clip_dirs()[0])
    h, w = probe.frames.shape[1:3]
    mask = _mask_from_extras(extras, h, w)

    resolved = dict(config.to_dict())
    resolved.update(extras)
    resolved["command"] = "train"
    _write_resolved_config(out_dir, resolved)

    sampler = BatchSampler(
        manifest,
        mask,
        clip_len=config.clip_len,
        batch_size=config.batch_size,
        seed=config.seed,
        reference_index=config.reference_index,
        use_landmarks=config.use_landmarks,
    )
    if args.resume:
        trainer = Trainer.load_checkpoint(args.resume, sampler=sampler)
        # budget and cadence may grow across resumes; everything else is pinned
        mismatched = [
            f.name
            for f in dataclasses.fields(TrainConfig)
            if f.name not in ("iterations", "checkpoint_every")
            and getattr(trainer.config, f.name) != getattr(config, f.name)
        ]
        if mismatched:
            raise ConfigError(f"resume checkpoint differs in config keys: {mismatched}")
        trainer.config.iterations = config.iterations
        trainer.config.checkpoint_every = config.checkpoint_every
    else:
        trainer = Trainer(config, sampler)
    trainer.fit(
        log_path=out_dir / "loss.log",
        checkpoint_dir=out_dir / "checkpoints",
        metrics_path=(out_dir / "loss.jsonl") if args.metrics_jsonl else None,
    )
    print(f"finished at iteration {trainer.iteration}; checkpoints under {out_dir / 'checkpoints'}")
    return 0


def cmd_infer(args) -> int:
    _require_inputs(checkpoint=args.checkpoint, frames=args.frames, mask=args.mask)
    if args.reference is None and args.reference_index is None:
        raise DataError("missing required input: reference (give --reference or --reference-index)")
    trainer = Trainer.load_checkpoint(args.checkpoint)
    generator = trainer.generator.eval()

    clip = load_clip(args.frames)
    t, h, w, _ = clip.frames.shape
    mask_frame = load_mask(args.mask)
    if mask_frame.shape != (h, w):
        raise DataError(f"mask is {mask_frame.shape}, frames are {(h, w)}")
    mask = MaskSequence.from_frame(mask_frame, t)

    if args.landmarks is not None:
        _require_inputs(landmarks=args.landmarks)
        sets = read_landmark_file(args.landmarks)
        if len(sets) < t:
            raise DataError(f"{args.landmarks} has {len(sets)} landmark lines for {t} frames")
        lmaps = np.stack([rasterize_contours(s, h, w) for s in sets[:t]])
    elif trainer.config.use_landmarks:
        raise DataError("missing required input: landmarks (checkpoint expects landmark maps)")
    else:
        lmaps = np.zeros((t, h, w), dtype=np.float32)
    if not trainer.config.use_landmarks:
        lmaps = np.zeros_like(lmaps)

    if args.reference is not None:
        from PIL import Image

        ref_img = np.asarray(Image.open(args.reference).convert("RGB"), dtype=np.float32) / 255.0
        if ref_img.shape[:2] != (h, w):
            raise DataError(f"reference is {ref_img.shape[:2]}, frames are {(h, w)}")
    else:
        if not (0 <= args.reference_index < t):
            raise DataError(f"reference index {args.reference_index} out of range for T={t}")
        ref_img = clip.frames[args.reference_index]
    reference = ref_img * mask_frame[..., None]

    out = Path(args.out)
    _write_resolved_config(
        out,
        {"command": "infer", "checkpoint": str(args.checkpoint), "frames": str(args.frames),
         "mask": str(args.mask), "landmarks": str(args.landmarks), "reference": str(args.reference),
         "reference_index": args.reference_index},
    )

    x = build_generator_input(clip, mask, lmaps)
    x[:, CH_REFERENCE] = reference.transpose(2, 0, 1)[None]
    with torch.no_grad():
        raw = generator(torch.from_numpy(x)[None])
    masked_input = torch.from_numpy(x[None, :, 0:3])
    mask_t = torch.from_numpy(mask.masks)[None, :, None]
    comp = composite_output(raw, masked_input, mask_t)[0]
    frames = comp.permute(0, 2, 3, 1).numpy()
    save_clip(VideoClip(frames=np.clip(frames, 0.0, 1.0)), out)
    print(f"wrote {t} inpainted frames to {out}")
    return 0


def _collect_clips(directory: Path) -> dict[str, Path]:
    directory = Path(directory)
    subdirs = sorted(d for d in directory.iterdir() if d.is_dir() and list(d.glob("frame_*.png")))
    if subdirs:
        return {d.name: d for d in subdirs}
    if list(directory.glob("frame_*.png")):
        return {"clip": directory}  # flat layout: the directory is the single clip
    raise DataError(f"no clips with frame_*.png files under {directory}")


def cmd_evaluate(args) -> int:
    _require_inputs(gt=args.gt)
    preds = []
    for item in args.pred:
        label, _, path = item.rpartition("=")
        label = label or "model"
        _require_inputs(**{f"pred ({label})": path})
        preds.append((label, Path(path)))
    if not preds:
        raise DataError("missing required input: at least one --pred directory")

    out = Path(args.out)
    _write_resolved_config(
        out.parent if out.suffix else out,
        {"command": "evaluate", "gt": str(args.gt),
         "pred": [f"{label}={path}" for label, path in preds],
         "region": args.region, "extractor_seed": args.extractor_seed,
         "extractor_stages": args.extractor_stages, "extractor_base": args.extractor_base,
         "mask": str(args.mask)},
    )

    gt_clips = _collect_clips(Path(args.gt))
    mask = load_mask(args.mask) if args.mask else None
    if args.region == "masked" and mask is None:
        raise ConfigError("masked-region scoring needs --mask")
    extractor = make_extractor(
        "random-projection",
        seed=args.extractor_seed,
        stages=args.extractor_stages,
        base_channels=args.extractor_base,
    )

    reports = []
    for label, pred_dir in preds:
        pred_clips = _collect_clips(pred_dir)
        missing = sorted(set(gt_clips) - set(pred_clips))
        if missing:
            raise DataError(f"prediction set {label!r} is missing clips: {missing}")
        report = MetricsReport(
            model=label,
            mask_descriptor=str(args.mask) if args.mask else "none",
            extractor=(
                f"random-projection(seed={args.extractor_seed}, "
                f"stages={args.extractor_stages}, base={args.extractor_base})"
            ),
            region=args.region,
        )
        for clip_id, gt_dir in gt_clips.items():
            gt_names = sorted(p.name for p in gt_dir.glob("frame_*.png"))
            pred_names = sorted(p.name for p in pred_clips[clip_id].glob("frame_*.png"))
            if gt_names != pred_names:
                offenders = sorted(set(gt_names) ^ set(pred_names))
                raise DataError(
                    f"clip {clip_id}: prediction frames do not align with ground truth "
                    f"(offending frames: {offenders})"
                )
            gt_frames = load_clip(gt_dir).frames
            pred_frames = load_clip(pred_clips[clip_id]).frames
            report.add_clip(clip_id, clip_metrics(pred_frames, gt_frames, extractor, mask, args.region))
        reports.append(report)

    table = render_report(reports)
    if out.suffix:
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(table, encoding="utf-8")
        json_path = out.with_suffix(".json")
    else:
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.txt").write_text(table, encoding="utf-8")
        json_path = out / "report.json"
    json_path.write_text(
        json.dumps([json.loads(r.to_json()) for r in reports], indent=2) + "\n", encoding="utf-8"
    )
    if args.plots:
        save_plots(reports, out.parent if out.suffix else out)
    print(table, end="")
    return 0


def _add_mask_geometry_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--mask-top", type=float, help="band top edge, fraction of height")
    parser.add_argument("--mask-bottom", type=float, help="band bottom edge, fraction of height")
    parser.add_argument("--mask-left", type=float, help="band left edge, fraction of width")
    parser.add_argument("--mask-right", type=float, help="band right edge, fraction of width")
    parser.add_argument("--mask-corner-radius", type=float, help="corner radius, fraction of band height")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hmdfill",
        description="Expression-aware video inpainting for static facial occlusions",
    )
    parser.add_argument("--version", action="version", version=f"hmdfill {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-synthetic-corpus", help="generate a cartoon-face test corpus")
    p.add_argument("--out", required=True, help="output corpus directory")
    p.add_argument("--clips", type=int, default=8, help="number of clips")
    p.add_argument("--frames", type=int, default=16, help="frames per clip")
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--test-fraction", type=float, default=0.25, help="fraction of clips held out")
    p.set_defaults(func=cmd_make_synthetic_corpus)

    p = sub.add_parser("make-masks", help="write a simulated headset occlusion mask")
    p.add_argument("--out", required=True, help="output mask PNG path")
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--width", type=int, default=64)
    _add_mask_geometry_flags(p)
    p.set_defaults(func=cmd_make_masks)

    p = sub.add_parser("landmarks", help="rasterize landmark files into contour-map images")
    p.add_argument("--frames", required=True, help="clip directory with frame_*.png")
    p.add_argument("--landmark-file", help="landmark file (default: <frames>/landmarks.txt)")
    p.add_argument("--out", required=True, help="output directory for map PNGs")
    p.set_defaults(func=cmd_landmarks)

    p = sub.add_parser("train", help="run adversarial training")
    p.add_argument("--config", help="JSON run config; flags override file values")
    p.add_argument("--manifest", help="dataset manifest path")
    p.add_argument("--out-dir", dest="out_dir", help="run output directory")
    p.add_argument("--mask-file", dest="mask_file", help="mask PNG (otherwise geometry is used)")
    p.add_argument("--resume", help="checkpoint directory to resume from")
    p.add_argument(
        "--metrics-jsonl", action="store_true",
        help="also write structured per-step loss records to loss.jsonl",
    )
    _add_mask_geometry_flags(p)
    for f in dataclasses.fields(TrainConfig):
        flag = "--" + f.name.replace("_", "-")
        if f.type == "bool":
            p.add_argument(flag, type=lambda s: s.lower() in ("1", "true", "yes"), metavar="BOOL")
        elif f.type == "int":
            p.add_argument(flag, type=int)
        elif f.type == "float":
            p.add_argument(flag, type=float)
        else:
            p.add_argument(flag, type=str)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="inpaint a clip with a trained checkpoint")
    p.add_argument("--checkpoint", required=True, help="checkpoint directory")
    p.add_argument("--frames", required=True, help="input clip directory")
    p.add_argument("--mask", required=True, help="occlusion mask PNG")
    p.add_argument("--landmarks", help="precomputed landmark file")
    p.add_argument("--reference", help="occlusion-free reference image")
    p.add_argument("--reference-index", type=int, help="use this input frame as the reference")
    p.add_argument("--out", required=True, help="output directory for inpainted frames")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("evaluate", help="score predictions against ground truth")
    p.add_argument("--gt", required=True, help="ground-truth directory of clips")
    p.add_argument(
        "--pred",
        action="append",
        default=[],
        metavar="[LABEL=]DIR",
        help="prediction directory, repeatable with labels for multi-model reports",
    )
    p.add_argument("--out", required=True, help="report path (.txt) or directory")
    p.add_argument("--mask", help="mask PNG for masked-region scoring")
    p.add_argument("--region", choices=["full", "masked"], default="full")
    p.add_argument("--extractor-seed", type=int, default=1234)
    p.add_argument("--extractor-stages", type=int, default=2)
    p.add_argument(
        "--extractor-base",
        type=int,
        default=4,
        help="extractor width; FID feature dimension must stay below the per-clip frame count",
    )
    p.add_argument("--plots", action="store_true", help="also write per-metric bar plots")
    p.set_defaults(func=cmd_evaluate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (DataError, CheckpointError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NumericalError as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return 4
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
