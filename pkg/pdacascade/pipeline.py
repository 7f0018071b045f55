"""Cascade orchestration: per-row preprocessing, cached upstream stages and the ablation protocol.
"""

import json
import logging
import time
from dataclasses import dataclass, field, replace
from functools import partial
from pathlib import Path

import numpy as np
import pandas as pd
from matplotlib.figure import Figure

from .checkpoint import from_model, load_checkpoint, save_checkpoint
from .cls_stage import (RESNET, TRANSFERRED, ClassificationSample, ClassifierSpec, build_classifier,
                        predict_response, seg_spec_from_checkpoint, train_two_stage, transfer_encoder)
from .config import (dump_config, input_record, needs_seg_model, needs_slice_model, replay_inputs, row_features,
                     spec_from_dict, stage_config, stage_hash)
from .constants import (ABLATION_ROWS, BASELINE, BOXPLOT_PNG, CHECKPOINT_DIR, CONFIG_YAML, INFORMED_CROP, METRIC_NAMES,
                        PREDICTION_COLUMNS, PREDICTIONS_CSV, RESPONSE_THRESHOLD, RESULT_COLUMNS, RESULTS_CSV,
                        RESULTS_JSON, ROW_TITLES, SEG_FORWARD, SLICE_CROP, STAGE_CLS, STAGE_SEG, STAGE_SLICE,
                        SUMMARY_CSV, TEST, TIMING_COLUMNS, TIMINGS_CSV, TRAIN, TRANSFER, TRIPLET)
from .errors import ConfigurationError, EmptyPredictionError, OrchestrationError
from .geometry import center_crop, resize_array
from .ingest import load_case, load_msd, read_manifest, stratified_split
from .metrics import evaluate_predictions, summarize_runs
from .seg_stage import build_seg_model, forward_channels, informed_crop, predict_mask, train_segmentation
from .slice_stage import SliceModelSpec, build_slice_model, fill_gaps, predict_slices, train_slice_classifier, z_crop
from .utils import count_parameters, seed_everything, to_plain
from .volume import DatasetManifest

logger = logging.getLogger(__name__)


class CaseStore:
    """Loads each case once and keeps it in memory."""

    def __init__(self, spec):
        self.spec = spec
        self._cases = {}

    def get(self, record):
        if record.case_id not in self._cases:
            self._cases[record.case_id] = load_case(record, self.spec)
            logger.debug("Loaded %s, shape %s", record.case_id, self._cases[record.case_id][0].shape)
        return self._cases[record.case_id]


@dataclass
class UpstreamModels:
    slice_model: object = None
    seg_model: object = None
    seg_checkpoint: object = None
    metrics: dict = field(default_factory=dict)


@dataclass
class AblationReport:
    results: pd.DataFrame
    summary: pd.DataFrame
    predictions: pd.DataFrame
    timings: pd.DataFrame
    upstream: dict
    output_dir: Path


def preprocessing_kind(row):
    """Rows sharing a kind get identical classifier inputs."""
    features = row_features(row)
    for kind in (SEG_FORWARD, INFORMED_CROP, SLICE_CROP):
        if kind in features:
            return kind
    return BASELINE


def build_row_pipeline(row, config, slice_model=None, seg_model=None):
    """Compose the preprocessing of an ablation row.

    * ``baseline``: resample the whole volume to ``baseline_resolution``
    * ``slice_crop``: z crop from the gap-filled slice prediction, (y, x) center crop
    * ``informed_crop``: z crop, then crop to the predicted pancreas/tumour box
    * ``seg_forward`` and later rows: as ``informed_crop`` plus the one-hot predicted mask

    Cropped inputs are resampled to ``crop_resolution`` (masks with nearest neighbour).
    An empty slice prediction keeps every slice and logs a warning.

    :param str row: Ablation row
    :param ExperimentConfig config: Experiment settings
    :param SliceNet slice_model: Trained slice classifier, needed from ``slice_crop`` on
    :param SegUNet seg_model: Trained segmentation model, needed from ``informed_crop`` on

    :returns: Function ``(volume, case_id=None) -> numpy.ndarray`` of shape (C, z, y, x)
    :rtype: Callable

    :raises OrchestrationError: A required model is missing
    """
    features = row_features(row)
    if needs_slice_model(row) and slice_model is None:
        raise OrchestrationError(f"row '{row}' needs a trained slice model")
    if needs_seg_model(row) and seg_model is None:
        raise OrchestrationError(f"row '{row}' needs a trained segmentation model")
    margins = config.margins
    resolution = tuple(config.crop_resolution)

    def baseline(volume, case_id=None):
        return resize_array(volume.data, config.baseline_resolution)[np.newaxis].astype(np.float32)

    def cascade(volume, case_id=None):
        sequence = fill_gaps(predict_slices(slice_model, volume, config.slice_spec))
        try:
            volume, _ = z_crop(volume, sequence, margins.z_margin)
        except EmptyPredictionError:
            logger.warning("No pancreas slice predicted for %s, keeping all %d slices",
                           case_id or "volume", volume.shape[0])

        if INFORMED_CROP in features:
            prediction = predict_mask(seg_model, volume, config.seg_spec)
            cropped = informed_crop(volume, prediction, margins.bbox_margin, config.center_crop_size,
                                    margins.foreground_classes, case_id)
            volume, mask = cropped.volume, cropped.mask
        else:
            size = tuple(min(c, s) for c, s in zip(config.center_crop_size, volume.shape[1:]))
            volume, mask = center_crop(volume, size), None
        logger.debug("%s cropped to %s", case_id or "volume", volume.shape)

        if SEG_FORWARD not in features:
            return resize_array(volume.data, resolution)[np.newaxis].astype(np.float32)
        channels = forward_channels(volume, mask)
        return np.concatenate([
            resize_array(channels[:1], resolution),
            resize_array(channels[1:], resolution, mode="nearest"),
        ]).astype(np.float32)

    return baseline if row == BASELINE else cascade


def preprocess_cases(pipeline, records, store):
    """Run a row pipeline over manifest records that carry a response label."""
    samples = []
    for record in records:
        volume, _ = store.get(record)
        samples.append(ClassificationSample(record.case_id, pipeline(volume, record.case_id), record.response_label))
    return samples


def checkpoint_path(config, stage):
    return Path(config.paths.output_dir) / CHECKPOINT_DIR / f"{stage}-{stage_hash(config, stage)}.ckpt"


def classification_split(config):
    """Train and evaluation manifests for the classifier.

    A manifest with ``test`` records keeps its split, otherwise it is split stratified.
    With ``eval_on_train`` the evaluation set is the training set.

    :raises ConfigurationError: No manifest configured
    """
    if not config.paths.manifest:
        raise ConfigurationError("paths.manifest is required")
    manifest = read_manifest(config.paths.manifest)
    if any(c.split == TEST for c in manifest):
        train = manifest.subset([c.case_id for c in manifest if c.split == TRAIN], f"{manifest.name}-train")
        test = manifest.subset([c.case_id for c in manifest if c.split == TEST], f"{manifest.name}-test")
    else:
        train, test = stratified_split(manifest, config.test_fraction, config.split_seed)
    if config.eval_on_train:
        test = train
    return train, test


def _masked(records):
    return [r for r in records if r.mask_path is not None]


def check_mask_source(config, rows, train_manifest):
    """Make sure the upstream stages of ``rows`` have segmentation masks to learn from.

    :raises ConfigurationError: A row needs masks and neither an MSD root nor masked training cases exist
    """
    needing = [r for r in rows if needs_slice_model(r) or needs_seg_model(r)]
    if needing and not config.paths.dataset_root and not _masked(train_manifest):
        raise ConfigurationError(f"rows {needing} need segmentation masks but the dataset has none")


def segmentation_cases(config, train_manifest, test_manifest, store):
    """Training and held-out ``(volume, mask)`` pairs for the slice and segmentation stages."""
    if config.paths.dataset_root:
        return [store.get(r) for r in load_msd(config.paths.dataset_root)], None
    train = [store.get(r) for r in _masked(train_manifest)]
    held = [store.get(r) for r in _masked(test_manifest)] or None
    return train, held


def load_slice_model(checkpoint):
    spec = spec_from_dict(SliceModelSpec, checkpoint.config.get("slice_spec"))
    model = build_slice_model(replace(spec, encoder_weights=None))
    model.load_state_dict(checkpoint.tensors)
    return model, spec


def load_seg_model(checkpoint):
    spec = seg_spec_from_checkpoint(checkpoint)
    model = build_seg_model(spec)
    model.load_state_dict(checkpoint.tensors)
    return model, spec


def load_classifier(checkpoint):
    spec = spec_from_dict(ClassifierSpec, checkpoint.config.get("classifier"))
    model = build_classifier(spec, seg_spec_from_checkpoint(checkpoint))
    model.load_state_dict(checkpoint.tensors)
    return model, spec


def _cached(config, stage):
    path = checkpoint_path(config, stage)
    if config.use_cache and path.is_file():
        logger.info("Reusing %s checkpoint %s", stage, path)
        return load_checkpoint(path), path
    if not config.train_upstream:
        raise OrchestrationError(f"no {stage} checkpoint at {path} and upstream training is disabled")
    return None, path


def obtain_slice_checkpoint(config, cases):
    """Load the cached slice checkpoint for ``config`` or train and save one.

    :param ExperimentConfig config: Experiment settings
    :param Callable cases: Returns ``(train pairs, held-out pairs or None)`` when training is needed

    :rtype: Checkpoint

    :raises OrchestrationError: No cached checkpoint and upstream training disabled
    """
    checkpoint, path = _cached(config, STAGE_SLICE)
    if checkpoint is None:
        train, held = cases()
        params = replace(config.slice_train, seed=config.upstream_seed)
        model, report = train_slice_classifier(train, config.slice_spec, params, held)
        checkpoint = from_model(model, STAGE_SLICE, stage_config(config, STAGE_SLICE), config.upstream_seed,
                                extra={"report": report})
        save_checkpoint(checkpoint, path)
    return checkpoint


def obtain_seg_checkpoint(config, cases):
    """Load the cached segmentation checkpoint for ``config`` or train and save one.

    The checkpoint carries the encoder sub-state used for transfer.
    """
    checkpoint, path = _cached(config, STAGE_SEG)
    if checkpoint is None:
        train, held = cases()
        params = replace(config.seg_train, seed=config.upstream_seed)
        model, scores = train_segmentation(train, config.seg_spec, params, held)
        checkpoint = from_model(model, STAGE_SEG, stage_config(config, STAGE_SEG), config.upstream_seed,
                                encoder=model.encoder, extra={"dice": scores})
        save_checkpoint(checkpoint, path)
    return checkpoint


def prepare_upstream(config, rows, train_manifest, test_manifest, store):
    """Slice and segmentation models needed by ``rows``, trained once per configuration."""
    check_mask_source(config, rows, train_manifest)
    upstream = UpstreamModels()
    loaded = {}

    def cases():
        if "pairs" not in loaded:
            loaded["pairs"] = segmentation_cases(config, train_manifest, test_manifest, store)
        return loaded["pairs"]

    if any(needs_slice_model(r) for r in rows):
        checkpoint = obtain_slice_checkpoint(config, cases)
        upstream.slice_model, _ = load_slice_model(checkpoint)
        upstream.metrics[STAGE_SLICE] = checkpoint.extra
    if any(needs_seg_model(r) for r in rows):
        upstream.seg_checkpoint = obtain_seg_checkpoint(config, cases)
        upstream.seg_model, _ = load_seg_model(upstream.seg_checkpoint)
        upstream.metrics[STAGE_SEG] = upstream.seg_checkpoint.extra
    return upstream


def train_classifier(row, seed, config, samples, seg_checkpoint=None):
    """Train the classifier of one ablation row with one seed.

    :returns: Model, its spec, the training history, the triplet settings used and the training seconds
    :rtype: (ResponseClassifier, ClassifierSpec, TrainingHistory, TripletConfig, float)

    :raises OrchestrationError: A transfer row without segmentation checkpoint
    """
    features = row_features(row)
    in_channels = 4 if SEG_FORWARD in features else 1
    triplet = config.triplet if TRIPLET in features else replace(config.triplet, epochs_stage_a=0)
    params = replace(config.cls_train, seed=seed)

    seed_everything(seed)
    if TRANSFER in features:
        if seg_checkpoint is None:
            raise OrchestrationError(f"row '{row}' needs a segmentation checkpoint")
        spec = ClassifierSpec(TRANSFERRED, in_channels)
        model, _ = transfer_encoder(seg_checkpoint, spec)
    else:
        spec = ClassifierSpec(RESNET, in_channels, config.cls_block, tuple(config.cls_layers),
                              tuple(config.cls_block_inplanes))
        model = build_classifier(spec)

    started = time.perf_counter()
    model, history = train_two_stage(samples, spec, triplet, params, model=model)
    seconds = time.perf_counter() - started
    logger.info("Row %s seed %d: %d parameters, trained in %.1f s", row, seed, count_parameters(model), seconds)
    return model, spec, history, triplet, seconds


def evaluate(predictions, threshold=RESPONSE_THRESHOLD):
    """Per row and seed metrics recomputed from per-case predictions.

    :param pandas.DataFrame predictions: Columns ``row, seed, case_id, response_label, probability``

    :returns: Table with columns ``row, seed, mcc, accuracy, auc_roc`` in ablation order
    :rtype: pandas.DataFrame
    """
    order = {row: i for i, row in enumerate(ABLATION_ROWS)}
    records = []
    for (row, seed), group in sorted(predictions.groupby(["row", "seed"]), key=lambda g: (order[g[0][0]], g[0][1])):
        metrics = evaluate_predictions(group["probability"].to_numpy(), group["response_label"].to_numpy(), threshold)
        records.append({"row": row, "seed": int(seed), **metrics})
    return pd.DataFrame(records, columns=list(RESULT_COLUMNS))


def summarize(results):
    """Mean and sample standard deviation of every metric per row.

    With a single seed the standard deviation is NaN.
    """
    records = []
    for row, group in results.groupby("row", sort=False):
        entry = {"row": row, "title": ROW_TITLES[row], "n_seeds": len(group)}
        if len(group) < 2:
            logger.warning("Row %s has a single seed, standard deviations are undefined", row)
        for metric in METRIC_NAMES:
            values = group[metric].to_numpy()
            if len(values) >= 2:
                summary = summarize_runs(values)
                entry[f"{metric}_mean"], entry[f"{metric}_std"] = summary.mean, summary.std
            else:
                entry[f"{metric}_mean"], entry[f"{metric}_std"] = float(values[0]), float("nan")
        records.append(entry)
    return pd.DataFrame(records)


def plot_mcc_boxplot(results, path):
    """Box-and-whisker plot of the per-seed MCC of every row."""
    rows = list(dict.fromkeys(results["row"]))
    figure = Figure(figsize=(1.8 * len(rows) + 2, 4.5))
    ax = figure.subplots()
    ax.boxplot([results.loc[results["row"] == row, "mcc"].to_numpy() for row in rows])
    ax.set_xticks(range(1, len(rows) + 1))
    ax.set_xticklabels([ROW_TITLES[row] for row in rows], rotation=20, ha="right")
    ax.set_ylabel("MCC")
    ax.axhline(0.0, color="grey", linewidth=0.8, linestyle="--")
    ax.grid(axis="y", alpha=0.3)
    figure.tight_layout()
    figure.savefig(path, dpi=150)
    logger.info("Wrote %s", path)


def _records(table):
    return to_plain(table.astype(object).where(table.notna(), None).to_dict("records"))


def write_report(report):
    """Write the tables, the JSON summary and the box plot into ``report.output_dir``."""
    out = report.output_dir
    out.mkdir(parents=True, exist_ok=True)
    report.results.to_csv(out / RESULTS_CSV, index=False, encoding="utf-8")
    report.summary.to_csv(out / SUMMARY_CSV, index=False, encoding="utf-8")
    report.predictions.to_csv(out / PREDICTIONS_CSV, index=False, encoding="utf-8")
    report.timings.to_csv(out / TIMINGS_CSV, index=False, encoding="utf-8")
    document = {
        "runs": _records(report.results),
        "summary": _records(report.summary),
        "upstream": to_plain(report.upstream),
    }
    (out / RESULTS_JSON).write_text(json.dumps(document, indent=2, sort_keys=True, allow_nan=False), encoding="utf-8")
    plot_mcc_boxplot(report.results, out / BOXPLOT_PNG)


def read_predictions(path):
    return pd.read_csv(path, dtype={"row": str, "case_id": str}, float_precision="round_trip", encoding="utf-8")


def run_ablation(config):
    """Run every configured ablation row with every seed.

    Upstream models are trained once per configuration and cached by configuration hash.
    Inputs are preprocessed once per preprocessing kind. For each row and seed the classifier
    is trained on the training split and scored on the evaluation split.

    :param ExperimentConfig config: Experiment settings

    :rtype: AblationReport

    :raises ConfigurationError: Missing manifest, or a row needs masks the dataset lacks
    :raises OrchestrationError: Upstream checkpoint missing with upstream training disabled
    """
    out = Path(config.paths.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    dump_config(config, out / CONFIG_YAML)
    rows = config.ordered_rows

    train_manifest, test_manifest = classification_split(config)
    store = CaseStore(config.preprocess)
    upstream = prepare_upstream(config, rows, train_manifest, test_manifest, store)

    inputs = {}
    predictions, timings = [], []
    for row in rows:
        kind = preprocessing_kind(row)
        if kind not in inputs:
            pipeline = build_row_pipeline(row, config, upstream.slice_model, upstream.seg_model)
            inputs[kind] = (preprocess_cases(pipeline, train_manifest, store),
                            preprocess_cases(pipeline, test_manifest, store))
            logger.info("Preprocessed %d + %d cases for %s", len(inputs[kind][0]), len(inputs[kind][1]), kind)
        train_samples, test_samples = inputs[kind]

        for seed in config.seeds:
            model, spec, history, triplet, seconds = train_classifier(row, seed, config, train_samples,
                                                                      upstream.seg_checkpoint)
            for sample in test_samples:
                predictions.append({
                    "row": row,
                    "seed": int(seed),
                    "case_id": sample.case_id,
                    "response_label": int(sample.response_label),
                    "probability": predict_response(model, sample.inputs),
                })
            timings.append({"row": row, "seed": int(seed), "n_parameters": count_parameters(model),
                            "train_seconds": seconds})
            snapshot = {"row": row, "classifier": spec, "triplet": triplet,
                        "cls_train": replace(config.cls_train, seed=seed), **input_record(config, row)}
            save_checkpoint(from_model(model, STAGE_CLS, snapshot, seed, extra={"history": history}),
                            out / CHECKPOINT_DIR / f"{STAGE_CLS}-{row}-seed{seed}.ckpt")

    predictions = pd.DataFrame(predictions, columns=list(PREDICTION_COLUMNS))
    results = evaluate(predictions)
    report = AblationReport(
        results=results,
        summary=summarize(results),
        predictions=predictions,
        timings=pd.DataFrame(timings, columns=list(TIMING_COLUMNS)),
        upstream=upstream.metrics,
        output_dir=out,
    )
    write_report(report)
    for entry in report.summary.to_dict("records"):
        logger.info("%-28s MCC %.3f +- %.3f", entry["title"], entry["mcc_mean"], entry["mcc_std"])
    return report


def load_row_pipeline(checkpoint, directory, config=None):
    """Preprocessing a saved classifier was trained with.

    Input settings come from the classifier checkpoint; the upstream checkpoints it names are
    read from ``directory``.

    :param Checkpoint checkpoint: Classifier checkpoint written by :func:`run_ablation`
    :param Union[str, Path] directory: Folder holding the upstream checkpoints
    :param ExperimentConfig config: Base configuration; settings differing from the record are logged

    :returns: Row pipeline and the configuration it was built from
    :rtype: (Callable, ExperimentConfig)

    :raises ConfigurationError: The checkpoint does not record its input settings
    :raises OrchestrationError: A named upstream checkpoint is missing
    """
    record = checkpoint.config
    config = replay_inputs(record, config)
    upstream = {}
    for stage, digest in record["upstream"].items():
        path = Path(directory) / f"{stage}-{digest}.ckpt"
        if not path.is_file():
            raise OrchestrationError(f"classifier needs the {stage} checkpoint {path}")
        upstream[stage] = load_checkpoint(path)
    slice_model = load_slice_model(upstream[STAGE_SLICE])[0] if STAGE_SLICE in upstream else None
    seg_model = load_seg_model(upstream[STAGE_SEG])[0] if STAGE_SEG in upstream else None
    return build_row_pipeline(record["row"], config, slice_model, seg_model), config


def train_upstream_stage(config, stage):
    """Train the slice or segmentation stage of ``config`` without looking at the cache.

    :returns: Path of the written checkpoint
    :rtype: Path
    """
    config = replace(config, use_cache=False, train_upstream=True)
    store = CaseStore(config.preprocess)
    if config.paths.dataset_root:
        train_manifest = test_manifest = DatasetManifest("unused", ())
    else:
        train_manifest, test_manifest = classification_split(config)
        check_mask_source(config, [SLICE_CROP if stage == STAGE_SLICE else INFORMED_CROP], train_manifest)
    cases = partial(segmentation_cases, config, train_manifest, test_manifest, store)
    if stage == STAGE_SLICE:
        obtain_slice_checkpoint(config, cases)
    else:
        obtain_seg_checkpoint(config, cases)
    return checkpoint_path(config, stage)
