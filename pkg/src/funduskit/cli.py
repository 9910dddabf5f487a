"""Command-line front end: prep, build, eval, synth, emit-config.

Data goes to files, warnings and errors go to stderr, and stdout carries
only the summary lines scripts may want to scrape. Non-zero exits always
print a single machine-parseable ``funduskit: error: <category>: <msg>``
line: 1 for validation failures, 2 for I/O failures, 3 for anything else.
"""

import argparse
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .dataset import (DatasetManifest, ImageEntry, generate_synthetic_fundus,
                      read_manifest, shuffle_split, write_manifest)
from .errors import CapacityError, ParseError, ValidationError
from .evaluate import (EvalConfig, evaluate_dataset, read_predictions,
                       threshold_key, write_report_csv)
from .instances import build_annotations
from .modelconfig import default_paper_config, write_config
from .pngio import read_mask, read_raster, write_mask, write_raster
from .preprocess import PreprocessConfig, preprocess_pair
from .rng import stream_seed


def _warn(message: str) -> None:
    print(f"funduskit: warning: {message}", file=sys.stderr)


def _prep_one(task):
    """Process one image/mask pair; module-level so worker pools can pickle it."""
    img_path, mask_path, out_dir, cfg = task
    stem = Path(img_path).stem
    img = read_raster(img_path)
    mask = read_mask(mask_path)
    out_img, out_mask, transform = preprocess_pair(img, mask, cfg)
    out_dir = Path(out_dir)
    write_raster(out_dir / "images" / f"{stem}.png", out_img)
    write_mask(out_dir / "masks" / f"{stem}.png", out_mask)
    tpath = out_dir / "transforms" / f"{stem}.json"
    tpath.parent.mkdir(parents=True, exist_ok=True)
    tpath.write_text(json.dumps(transform.to_json_dict(), indent=2) + "\n", encoding="utf-8")
    return stem


def cmd_prep(args) -> int:
    in_dir = Path(args.in_dir)
    mask_dir = Path(args.mask_dir)
    cfg = PreprocessConfig.load(args.config) if args.config else PreprocessConfig()

    images = sorted(in_dir.glob("*.png"))
    if not images:
        raise ValidationError(f"no .png images in {in_dir}")
    masks = {p.stem: p for p in mask_dir.glob("*.png")}

    tasks = []
    for img_path in images:
        mask_path = masks.pop(img_path.stem, None)
        if mask_path is None:
            _warn(f"no mask for image {img_path.stem!r}, skipped")
            continue
        tasks.append((str(img_path), str(mask_path), str(args.out_dir), cfg))
    for stem in sorted(masks):
        _warn(f"no image for mask {stem!r}, skipped")

    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            done = list(pool.map(_prep_one, tasks))
    else:
        done = [_prep_one(t) for t in tasks]
    print(f"preprocessed {len(done)} image/mask pairs into {args.out_dir}")
    return 0


def cmd_build(args) -> int:
    prep_dir = Path(args.prep_dir)
    image_paths = sorted((prep_dir / "images").glob("*.png"))
    if not image_paths:
        raise ValidationError(f"no preprocessed images in {prep_dir / 'images'}")

    ids = [p.stem for p in image_paths]
    assignment = shuffle_split(ids, args.seed, tuple(args.counts))

    entries = []
    annotations = []
    for img_path in image_paths:
        stem = img_path.stem
        mask_path = prep_dir / "masks" / f"{stem}.png"
        if not mask_path.exists():
            raise ValidationError(f"preprocessed mask missing for {stem!r}")
        mask = read_mask(mask_path)
        h, w = mask.shape
        entries.append(ImageEntry(
            image_id=stem,
            file_name=f"images/{stem}.png",
            width=w,
            height=h,
            source_class_hint=args.class_id,
            split=assignment[stem],
        ))
        annotations.extend(build_annotations(mask, args.class_id, stem, args.connectivity))

    manifest = DatasetManifest(images=entries, annotations=annotations)
    write_manifest(manifest, args.out)
    print(f"wrote manifest with {len(entries)} images and {len(annotations)} annotations "
          f"to {args.out}")
    return 0


def cmd_eval(args) -> int:
    manifest = read_manifest(args.manifest)
    predictions = read_predictions(args.predictions)

    if args.config:
        try:
            doc = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ParseError(f"malformed JSON in {args.config}: {exc}") from exc
        cfg = EvalConfig.from_json_dict(doc)
    else:
        cfg = EvalConfig()
    overrides = {}
    if args.thresholds is not None:
        overrides["thresholds"] = tuple(args.thresholds)
    if args.min_score is not None:
        overrides["min_score"] = args.min_score
    if args.iou_mode is not None:
        overrides["iou_mode"] = args.iou_mode
    if args.no_type_filter:
        overrides["apply_type_filter"] = False
    if overrides:
        cfg = EvalConfig(**{**cfg.to_json_dict(), **overrides,
                            "thresholds": overrides.get("thresholds", cfg.thresholds)})

    rows = []
    for split in ("train", "val", "test"):
        sub = manifest.subset(split)
        if sub.images:
            sub_preds = [p for p in predictions
                         if p.image_id in {i.image_id for i in sub.images}]
            rows.append((split, evaluate_dataset(sub, sub_preds, cfg)))
    overall = evaluate_dataset(manifest, predictions, cfg)
    rows.append(("all", overall))

    out_report = Path(args.out_report)
    report_doc = {
        "config": cfg.to_json_dict(),
        "splits": {split: report.to_json_dict() for split, report in rows},
    }
    out_report.parent.mkdir(parents=True, exist_ok=True)
    out_report.write_text(json.dumps(report_doc, indent=2) + "\n", encoding="utf-8")
    write_report_csv(rows, cfg.thresholds, out_report.with_suffix(".csv"))

    if not args.no_figures:
        from . import figures
        stem = out_report.with_suffix("")
        figures.render_map_bars(rows, cfg.thresholds, Path(f"{stem}_map.png"))
        figures.render_ap_histograms(overall, cfg.thresholds, Path(f"{stem}_ap_hist.png"))

    for t in cfg.thresholds:
        print(f"mAP@{t:g}: {overall.map_per_threshold[threshold_key(t)]:.4f}")
    return 0


def cmd_synth(args) -> int:
    out_dir = Path(args.out_dir)
    for sub in ("images", "masks_exudate", "masks_ma"):
        (out_dir / sub).mkdir(parents=True, exist_ok=True)
    for i in range(args.n_images):
        image, exudate_mask, ma_mask = generate_synthetic_fundus(
            stream_seed(args.seed, i),
            side=args.side,
            n_exudates=args.n_exudates,
            n_mas=args.n_mas,
        )
        name = f"synth_{i:04d}.png"
        write_raster(out_dir / "images" / name, image)
        write_mask(out_dir / "masks_exudate" / name, exudate_mask)
        write_mask(out_dir / "masks_ma" / name, ma_mask)
    print(f"generated {args.n_images} synthetic images in {out_dir}")
    return 0


def cmd_emit_config(args) -> int:
    write_config(default_paper_config(), args.out)
    print(f"wrote model training config to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="funduskit",
        description="Fundus lesion preprocessing, dataset construction, and mAP evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prep", help="preprocess image/mask pairs")
    p.add_argument("--in-dir", required=True, help="directory of input PNG images")
    p.add_argument("--mask-dir", required=True, help="directory of mask PNGs paired by stem")
    p.add_argument("--out-dir", required=True, help="output directory")
    p.add_argument("--config", help="PreprocessConfig JSON file")
    p.add_argument("--jobs", type=int, default=1, help="parallel workers (default 1)")
    p.set_defaults(func=cmd_prep)

    p = sub.add_parser("build", help="build a dataset manifest from prep output")
    p.add_argument("--prep-dir", required=True, help="directory produced by `prep`")
    p.add_argument("--class-id", type=int, choices=(1, 2), required=True,
                   help="lesion class annotated in this cohort (1=exudate, 2=microaneurysm)")
    p.add_argument("--seed", type=int, default=0, help="shuffle seed")
    p.add_argument("--counts", type=int, nargs=3, required=True, metavar=("TRAIN", "VAL", "TEST"),
                   help="split sizes; must sum to the number of images")
    p.add_argument("--connectivity", type=int, choices=(4, 8), default=8)
    p.add_argument("--out", required=True, help="manifest JSON path")
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("eval", help="score predictions against a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--predictions", required=True, help="JSON list of detections")
    p.add_argument("--out-report", required=True, help="report JSON path (CSV written beside it)")
    p.add_argument("--config", help="EvalConfig JSON file")
    p.add_argument("--thresholds", type=float, nargs="+", help="IoU thresholds, ascending")
    p.add_argument("--min-score", type=float, help="minimum confidence to keep a prediction")
    p.add_argument("--iou-mode", choices=("mask", "bbox"))
    p.add_argument("--no-type-filter", action="store_true",
                   help="keep predictions of both classes on every image")
    p.add_argument("--no-figures", action="store_true", help="skip matplotlib figure output")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", help="generate a synthetic fundus dataset")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-images", type=int, required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--side", type=int, default=256)
    p.add_argument("--n-exudates", type=int, default=3)
    p.add_argument("--n-mas", type=int, default=5)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("emit-config", help="write the default training hyperparameters")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_emit_config)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 0 for --help; treat usage errors as validation failures
        return 0 if exc.code in (0, None) else 1
    try:
        return args.func(args)
    except CapacityError as exc:
        print(f"funduskit: error: validation: {_one_line(exc)}", file=sys.stderr)
        return 1
    except ValueError as exc:  # ParseError, ValidationError, bad arguments
        print(f"funduskit: error: validation: {_one_line(exc)}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"funduskit: error: io: {_one_line(exc)}", file=sys.stderr)
        return 2
    except Exception as exc:  # pragma: no cover - catch-all for exit code 3
        print(f"funduskit: error: internal: {_one_line(exc)}", file=sys.stderr)
        return 3


def _one_line(exc: Exception) -> str:
    return " ".join(str(exc).split())


if __name__ == "__main__":
    sys.exit(main())
