"""Command line entry point: ``pdacascade <command> [options]``.
"""

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

from . import __version__
from .checkpoint import load_checkpoint
from .cls_stage import predict_response
from .config import ExperimentConfig, load_config
from .constants import ABLATION_ROWS, MANIFEST_CSV, PREDICTIONS_CSV, RESPONSE_THRESHOLD, RESULTS_CSV, STAGE_SEG, STAGE_SLICE, SUMMARY_CSV
from .errors import CascadeError, EmptyPredictionError
from .ingest import load_mask, load_msd, load_volume, read_manifest, save_mask, save_volume, stratified_split, write_manifest
from .phantom import PhantomParams, generate_dataset
from .pipeline import (evaluate, load_classifier, load_row_pipeline, load_seg_model, load_slice_model, read_predictions,
                       run_ablation, summarize, train_upstream_stage)
from .seg_stage import informed_crop, predict_mask
from .slice_stage import fill_gaps, predict_slices, z_crop
from .utils import configure_logging
from .volume import BBox3, DatasetManifest

logger = logging.getLogger(__name__)


def _config(args):
    """Configuration file merged with the command line overrides."""
    config = load_config(args.config) if args.config else ExperimentConfig()
    changes, paths = {}, {}
    if getattr(args, "seed", None):
        changes["seeds"] = tuple(args.seed)
    if getattr(args, "row", None):
        changes["rows"] = tuple(args.row)
    if getattr(args, "no_cache", False):
        changes["use_cache"] = False
    if getattr(args, "eval_on_train", False):
        changes["eval_on_train"] = True
    for name in ("output_dir", "manifest", "dataset_root"):
        if getattr(args, name, None):
            paths[name] = str(getattr(args, name))
    if paths:
        changes["paths"] = dataclasses.replace(config.paths, **paths)
    return dataclasses.replace(config, **changes)


def cmd_prepare_phantoms(args):
    params = PhantomParams(shape=tuple(args.shape), pancreas_radius_range=tuple(args.pancreas_radius),
                           tumour_radius_range=tuple(args.tumour_radius), noise_sigma=args.noise,
                           label_rule_threshold=args.threshold)
    manifest = generate_dataset(params, args.n, args.out, seed=args.base_seed)
    print(f"{len(manifest)} phantoms in {args.out}, class counts {manifest.class_counts}")


def cmd_prepare_msd(args):
    manifest = load_msd(args.root)
    out = Path(args.out) if args.out else Path(args.root) / MANIFEST_CSV
    write_manifest(manifest, out)
    print(f"{len(manifest)} cases written to {out}")


def cmd_split(args):
    manifest = read_manifest(args.manifest)
    train, test = stratified_split(manifest, args.test_fraction, args.base_seed)
    assigned = {c.case_id: c for c in (*train.cases, *test.cases)}
    out = args.out or args.manifest
    write_manifest(DatasetManifest(manifest.name, tuple(assigned[c.case_id] for c in manifest)), out)
    print(f"train {len(train)} {train.class_counts}, test {len(test)} {test.class_counts} -> {out}")


def cmd_train_slice(args):
    print(train_upstream_stage(_config(args), STAGE_SLICE))


def cmd_train_seg(args):
    print(train_upstream_stage(_config(args), STAGE_SEG))


def cmd_crop_z(args):
    config = _config(args)
    model, spec = load_slice_model(load_checkpoint(args.checkpoint))
    volume = load_volume(args.volume, config.preprocess)
    sequence = fill_gaps(predict_slices(model, volume, spec))
    try:
        cropped, bbox = z_crop(volume, sequence, config.margins.z_margin)
    except EmptyPredictionError:
        logger.warning("No pancreas slice predicted in %s, keeping all %d slices", args.volume, volume.shape[0])
        cropped, bbox = volume, BBox3.full(volume.shape)
    save_volume(cropped, args.out)
    print(f"slices {bbox.lo[0]}..{bbox.hi[0]} of {volume.shape[0]} -> {args.out}")


def cmd_predict_seg(args):
    config = _config(args)
    model, spec = load_seg_model(load_checkpoint(args.checkpoint))
    volume = load_volume(args.volume, config.preprocess)
    truth = load_mask(args.truth, config.preprocess.target_spacing) if args.truth else None
    prediction = predict_mask(model, volume, spec, truth=truth)
    save_mask(prediction.mask, args.out, volume.spacing, volume.origin)
    for class_id, value in prediction.per_class_dice.items():
        print(f"dice class {class_id}: {value:.4f}")
    print(args.out)


def cmd_crop_informed(args):
    config = _config(args)
    model, spec = load_seg_model(load_checkpoint(args.checkpoint))
    volume = load_volume(args.volume, config.preprocess)
    result = informed_crop(volume, predict_mask(model, volume, spec), config.margins.bbox_margin,
                           config.center_crop_size, config.margins.foreground_classes, Path(args.volume).name)
    save_volume(result.volume, args.out)
    if args.mask_out:
        save_mask(result.mask, args.mask_out, result.volume.spacing, result.volume.origin)
    print(f"box {result.bbox.lo}..{result.bbox.hi}{' (center crop fallback)' if result.fallback else ''} -> {args.out}")


def _print_summary(report_summary):
    print(report_summary.to_string(index=False, float_format=lambda v: f"{v:.4f}"))


def cmd_train_cls(args):
    config = dataclasses.replace(_config(args), rows=(args.cls_row,))
    report = run_ablation(config)
    _print_summary(report.summary)


def cmd_run_ablation(args):
    report = run_ablation(_config(args))
    _print_summary(report.summary)
    print(f"results in {report.output_dir}")


def cmd_evaluate(args):
    results = evaluate(read_predictions(args.predictions), args.threshold)
    summary = summarize(results)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        results.to_csv(out / RESULTS_CSV, index=False, encoding="utf-8")
        summary.to_csv(out / SUMMARY_CSV, index=False, encoding="utf-8")
    _print_summary(summary)


def cmd_predict(args):
    checkpoint = load_checkpoint(args.checkpoint)
    model, _ = load_classifier(checkpoint)
    pipeline, config = load_row_pipeline(checkpoint, Path(args.checkpoint).parent, _config(args) if args.config else None)
    for path in args.volume:
        probability = predict_response(model, pipeline(load_volume(path, config.preprocess), Path(path).name))
        label = "progressive" if probability >= RESPONSE_THRESHOLD else "non-progressive"
        print(f"{path}\t{probability:.4f}\t{label}")


def _add_experiment_options(parser):
    parser.add_argument("--config", help="YAML experiment configuration")
    parser.add_argument("--manifest", help="classification manifest (CSV)")
    parser.add_argument("--dataset-root", help="MSD task folder for the slice and segmentation stages")
    parser.add_argument("--output-dir", help="checkpoints and reports")
    parser.add_argument("--no-cache", action="store_true", help="retrain upstream stages")
    parser.add_argument("--eval-on-train", action="store_true", help="evaluate on the training split")


def build_parser():
    parser = argparse.ArgumentParser(prog="pdacascade", description="Cascaded therapy response prediction from CT volumes")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-d", "--debug", action="count", default=0, help="debug level, repeat for more (-dd)")
    commands = parser.add_subparsers(dest="command", required=True)

    p = commands.add_parser("prepare-phantoms", help="generate a synthetic phantom dataset")
    p.add_argument("--out", required=True)
    p.add_argument("-n", type=int, default=60)
    p.add_argument("--shape", type=int, nargs=3, default=list(PhantomParams().shape), metavar=("Z", "Y", "X"))
    p.add_argument("--pancreas-radius", type=float, nargs=2, default=list(PhantomParams().pancreas_radius_range),
                   metavar=("LOW", "HIGH"))
    p.add_argument("--tumour-radius", type=float, nargs=2, default=list(PhantomParams().tumour_radius_range),
                   metavar=("LOW", "HIGH"))
    p.add_argument("--noise", type=float, default=PhantomParams().noise_sigma, help="noise standard deviation in HU")
    p.add_argument("--threshold", type=float, default=PhantomParams().label_rule_threshold,
                   help="tumour share of the foreground above which a case is progressive")
    p.add_argument("--base-seed", type=int, default=0)
    p.set_defaults(handler=cmd_prepare_phantoms)

    p = commands.add_parser("prepare-msd", help="index an MSD task folder into a manifest")
    p.add_argument("--root", required=True)
    p.add_argument("--out")
    p.set_defaults(handler=cmd_prepare_msd)

    p = commands.add_parser("split", help="stratified train/test split written into the manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--test-fraction", type=float, default=ExperimentConfig().test_fraction)
    p.add_argument("--base-seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(handler=cmd_split)

    for name, handler in (("train-slice", cmd_train_slice), ("train-seg", cmd_train_seg)):
        p = commands.add_parser(name, help=f"train the {name.split('-')[1]} stage")
        _add_experiment_options(p)
        p.set_defaults(handler=handler)

    for name, handler, text in (("crop-z", cmd_crop_z, "z crop a volume with a slice checkpoint"),
                                ("predict-seg", cmd_predict_seg, "segment a volume"),
                                ("crop-informed", cmd_crop_informed, "crop a volume to its predicted pancreas box")):
        p = commands.add_parser(name, help=text)
        p.add_argument("--config")
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--volume", required=True)
        p.add_argument("--out", required=True)
        if name == "predict-seg":
            p.add_argument("--truth", help="ground truth mask, prints per-class Dice")
        if name == "crop-informed":
            p.add_argument("--mask-out")
        p.set_defaults(handler=handler)

    p = commands.add_parser("train-cls", help="train and evaluate the classifier of one ablation row")
    _add_experiment_options(p)
    p.add_argument("--cls-row", choices=ABLATION_ROWS, required=True)
    p.add_argument("--seed", type=int, action="append")
    p.set_defaults(handler=cmd_train_cls)

    p = commands.add_parser("run-ablation", help="all ablation rows with all seeds")
    _add_experiment_options(p)
    p.add_argument("--row", choices=ABLATION_ROWS, action="append")
    p.add_argument("--seed", type=int, action="append")
    p.set_defaults(handler=cmd_run_ablation)

    p = commands.add_parser("evaluate", help=f"recompute metrics from {PREDICTIONS_CSV}")
    p.add_argument("--predictions", required=True)
    p.add_argument("--threshold", type=float, default=RESPONSE_THRESHOLD)
    p.add_argument("--out")
    p.set_defaults(handler=cmd_evaluate)

    p = commands.add_parser("predict", help="response probability of volumes with a classifier checkpoint")
    p.add_argument("--config", help="YAML configuration; its input settings are checked against the classifier")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--volume", action="append", required=True)
    p.set_defaults(handler=cmd_predict)

    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    configure_logging(args.debug)
    try:
        args.handler(args)
    except CascadeError as e:
        logger.error("%s", e)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
