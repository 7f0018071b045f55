"""Experiment configuration.

Every setting lives in a frozen dataclass; :func:`load_config` merges a YAML file onto the
defaults. See :doc:`/configuration` for the file format.
"""

import dataclasses
import logging
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .cls_stage import RESNET, ClassifierSpec, ClsTrainParams, TripletConfig
from .constants import (ABLATION_ROWS, BBOX_MARGIN, FOREGROUND_CLASSES, INFORMED_CROP, SEG_FORWARD, SLICE_CROP,
                        STAGE_SEG, STAGE_SLICE, TRANSFER, TRIPLET, Z_MARGIN)
from .errors import ConfigurationError
from .ingest import PreprocessSpec
from .seg_stage import SegModelSpec, SegTrainParams
from .slice_stage import SliceModelSpec, SliceTrainParams
from .utils import config_hash, to_plain

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Margins:
    z_margin: int = Z_MARGIN
    bbox_margin: tuple = BBOX_MARGIN
    foreground_classes: tuple = FOREGROUND_CLASSES

    def __post_init__(self):
        if self.z_margin < 0 or min(self.bbox_margin) < 0:
            raise ConfigurationError(f"margins must be >= 0, got z={self.z_margin} bbox={self.bbox_margin}")


@dataclass(frozen=True)
class Paths:
    """Data locations.

    :param str dataset_root: MSD-style task folder used to train the slice and segmentation
        models; ``None`` trains them on the manifest's training cases that carry masks
    :param str manifest: Classification manifest (CSV)
    :param str output_dir: Checkpoints, tables and figures
    """

    dataset_root: str | None = None
    manifest: str | None = None
    output_dir: str = "runs"


@dataclass(frozen=True)
class ExperimentConfig:
    rows: tuple = ABLATION_ROWS
    seeds: tuple = (0, 1, 2, 3, 4)
    baseline_resolution: tuple = (256, 256, 256)
    crop_resolution: tuple = (32, 64, 64)
    center_crop_size: tuple = (64, 64)
    test_fraction: float = 57 / 477
    split_seed: int = 0
    upstream_seed: int = 0
    eval_on_train: bool = False
    use_cache: bool = True
    train_upstream: bool = True
    preprocess: PreprocessSpec = field(default_factory=PreprocessSpec)
    margins: Margins = field(default_factory=Margins)
    paths: Paths = field(default_factory=Paths)
    slice_spec: SliceModelSpec = field(default_factory=SliceModelSpec)
    slice_train: SliceTrainParams = field(default_factory=SliceTrainParams)
    seg_spec: SegModelSpec = field(default_factory=SegModelSpec)
    seg_train: SegTrainParams = field(default_factory=SegTrainParams)
    cls_block: str = "basic"
    cls_layers: tuple = (1, 1, 1, 1)
    cls_block_inplanes: tuple = (16, 32, 64, 128)
    cls_train: ClsTrainParams = field(default_factory=ClsTrainParams)
    triplet: TripletConfig = field(default_factory=TripletConfig)

    def __post_init__(self):
        for row in self.rows:
            if row not in ABLATION_ROWS:
                raise ConfigurationError(f"unknown ablation row '{row}', expected one of {list(ABLATION_ROWS)}")
        if len(set(self.rows)) != len(self.rows):
            raise ConfigurationError(f"duplicate ablation rows {list(self.rows)}")
        if not self.seeds:
            raise ConfigurationError("at least one seed is needed")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigurationError(f"duplicate seeds {list(self.seeds)}")
        if not 0 < self.test_fraction < 1:
            raise ConfigurationError(f"test_fraction must be in (0, 1), got {self.test_fraction}")
        for name in ("baseline_resolution", "crop_resolution"):
            value = getattr(self, name)
            if len(value) != 3 or min(value) < 1:
                raise ConfigurationError(f"{name} must be 3 positive extents, got {value}")
        if len(self.center_crop_size) != 2 or min(self.center_crop_size) < 1:
            raise ConfigurationError(f"center_crop_size must be 2 positive extents, got {self.center_crop_size}")
        try:
            ClassifierSpec(RESNET, 1, self.cls_block, tuple(self.cls_layers), tuple(self.cls_block_inplanes))
        except ValueError as e:
            raise ConfigurationError(f"classifier settings: {e}") from e

    @property
    def ordered_rows(self):
        """Configured rows in ablation order."""
        return tuple(r for r in ABLATION_ROWS if r in self.rows)


def row_features(row):
    """Features enabled by an ablation row; every row adds one feature to the previous row.

    :param str row: Row name

    :rtype: frozenset[str]

    :raises ConfigurationError: Unknown row
    """
    if row not in ABLATION_ROWS:
        raise ConfigurationError(f"unknown ablation row '{row}'")
    return frozenset(ABLATION_ROWS[1:ABLATION_ROWS.index(row) + 1])


def needs_slice_model(row):
    return SLICE_CROP in row_features(row)


def needs_seg_model(row):
    return bool({INFORMED_CROP, SEG_FORWARD, TRANSFER, TRIPLET} & row_features(row))


def stage_config(config, stage):
    """Configuration slice that determines an upstream stage's model.

    :param ExperimentConfig config: Experiment
    :param str stage: ``"slice"`` or ``"seg"``

    :rtype: dict
    """
    data = {
        "dataset_root": config.paths.dataset_root,
        "manifest": config.paths.manifest,
        "test_fraction": config.test_fraction,
        "split_seed": config.split_seed,
        "eval_on_train": config.eval_on_train,
        "seed": config.upstream_seed,
        "preprocess": to_plain(config.preprocess),
    }
    if stage == STAGE_SLICE:
        data.update(slice_spec=to_plain(config.slice_spec), slice_train=to_plain(config.slice_train))
    elif stage == STAGE_SEG:
        data.update(seg_spec=to_plain(config.seg_spec), seg_train=to_plain(config.seg_train))
    else:
        raise ValueError(f"No upstream configuration for stage '{stage}'")
    return data


def stage_hash(config, stage):
    return config_hash(stage_config(config, stage))


INPUT_FIELDS = ("preprocess", "baseline_resolution", "crop_resolution", "center_crop_size", "margins", "slice_spec",
                "seg_spec")


def input_record(config, row):
    """Settings that shape the classifier inputs of ``row``, saved with every classifier.

    ``upstream`` maps each upstream stage the row runs to the hash of its checkpoint.

    :rtype: dict
    """
    record = {name: to_plain(getattr(config, name)) for name in INPUT_FIELDS}
    stages = [stage for stage, needed in ((STAGE_SLICE, needs_slice_model(row)), (STAGE_SEG, needs_seg_model(row)))
              if needed]
    record["upstream"] = {stage: stage_hash(config, stage) for stage in stages}
    return record


def replay_inputs(record, config=None):
    """Configuration reproducing the classifier inputs described by ``record``.

    Recorded settings replace the ones of ``config``; every overridden setting is logged.

    :param dict record: Classifier checkpoint configuration holding an :func:`input_record`
    :param ExperimentConfig config: Base configuration, the defaults when ``None``

    :rtype: ExperimentConfig

    :raises ConfigurationError: The record lacks an input setting
    """
    missing = [name for name in (*INPUT_FIELDS, "upstream") if name not in record]
    if missing:
        raise ConfigurationError(f"classifier checkpoint does not record {missing}, retrain it")
    if config is not None:
        for name in INPUT_FIELDS:
            if to_plain(getattr(config, name)) != record[name]:
                logger.warning("Using the trained %s %s instead of the configured %s",
                               name, record[name], to_plain(getattr(config, name)))
    return merge_config(config or ExperimentConfig(), {name: record[name] for name in INPUT_FIELDS})


def _coerce(default, value, where):
    if dataclasses.is_dataclass(default):
        if not isinstance(value, dict):
            raise ConfigurationError(f"'{where}' must be a mapping")
        return _merge(default, value, where)
    if isinstance(default, tuple) and isinstance(value, list):
        return tuple(tuple(v) if isinstance(v, list) else v for v in value)
    if default is None and isinstance(value, list):
        return tuple(value)
    return value


def _merge(default, mapping, where=""):
    names = {f.name for f in dataclasses.fields(default)}
    changes = {}
    for key, value in mapping.items():
        if key not in names:
            raise ConfigurationError(f"unknown key '{where}{key}'")
        changes[key] = _coerce(getattr(default, key), value, f"{where}{key}.")
    try:
        return dataclasses.replace(default, **changes)
    except (TypeError, ValueError) as e:
        raise ConfigurationError(f"invalid value in '{where or 'root'}': {e}") from e


def merge_config(config, mapping):
    """Merge a nested mapping onto ``config``.

    :raises ConfigurationError: Unknown key or invalid value
    """
    return _merge(config, mapping or {})


def config_from_dict(mapping):
    """Merge a nested mapping onto the default :class:`ExperimentConfig`."""
    return merge_config(ExperimentConfig(), mapping)


def load_config(path):
    """Read an experiment configuration from a YAML file.

    :param Union[str, Path] path: YAML file holding a (possibly partial) nested mapping

    :rtype: ExperimentConfig

    :raises ConfigurationError: Unreadable file, unknown key or invalid value
    """
    path = Path(path)
    try:
        mapping = yaml.safe_load(path.read_text(encoding="utf-8"))
    except (OSError, yaml.YAMLError) as e:
        raise ConfigurationError(f"cannot read {path}: {e}") from e
    if mapping is not None and not isinstance(mapping, dict):
        raise ConfigurationError(f"{path} must hold a mapping")
    config = config_from_dict(mapping)
    logger.info("Loaded configuration from %s", path)
    return config


def dump_config(config, path):
    """Write a configuration as YAML; :func:`load_config` reads it back equal."""
    Path(path).write_text(yaml.safe_dump(to_plain(config), sort_keys=False), encoding="utf-8")


def spec_from_dict(cls, mapping):
    """Rebuild a spec dataclass from its plain (JSON or YAML) form."""
    return _merge(cls(), mapping or {})
