import dataclasses

import pytest

from pdacascade.config import (ExperimentConfig, Margins, config_from_dict, dump_config, load_config, needs_seg_model,
                               needs_slice_model, row_features, spec_from_dict, stage_hash)
from pdacascade.constants import ABLATION_ROWS, BASELINE, SEG_FORWARD, STAGE_SEG, STAGE_SLICE, TRIPLET
from pdacascade.errors import ConfigurationError
from pdacascade.seg_stage import SegModelSpec


def test_defaults():
    config = ExperimentConfig()
    assert config.rows == ABLATION_ROWS
    assert len(config.seeds) == 5
    assert config.triplet.margin == 1.0
    assert config.preprocess.hu_window == (-150.0, 250.0)


def test_load_partial_yaml(tmp_path):
    path = tmp_path / "experiment.yaml"
    path.write_text(
        "seeds: [3, 4]\n"
        "rows: [baseline, triplet]\n"
        "crop_resolution: [16, 32, 32]\n"
        "margins:\n"
        "  bbox_margin: [1, 2, 3]\n"
        "seg_spec:\n"
        "  channels: [4, 8, 16]\n"
        "cls_layers: [2, 2, 2, 2]\n"
        "triplet:\n"
        "  epochs_stage_a: 0\n",
        encoding="utf-8",
    )
    config = load_config(path)
    assert config.seeds == (3, 4)
    assert config.rows == (BASELINE, TRIPLET)
    assert config.crop_resolution == (16, 32, 32)
    assert config.margins == Margins(bbox_margin=(1, 2, 3))
    assert config.seg_spec.channels == (4, 8, 16)
    assert config.cls_layers == (2, 2, 2, 2)
    assert config.triplet.epochs_stage_a == 0
    assert config.triplet.epochs_stage_b == ExperimentConfig().triplet.epochs_stage_b


def test_empty_yaml(tmp_path):
    path = tmp_path / "empty.yaml"
    path.write_text("", encoding="utf-8")
    assert load_config(path) == ExperimentConfig()


@pytest.mark.parametrize("text", [
    "unknown: 1\n",
    "margins:\n  z_margins: 2\n",
    "triplet: 3\n",
    "- a\n- b\n",
    "rows: [baseline, nope]\n",
    "seeds: []\n",
    "test_fraction: 1.5\n",
    "triplet:\n  margin: -1\n",
    "margins:\n  z_margin: -1\n",
    "center_crop_size: [64]\n",
    "seeds: [1, 1]\n",
    "seg_spec:\n  patch_size: [20, 40, 40]\n",
    "seg_spec:\n  channels: [4, 8, 16]\n  patch_size: [10, 16, 16]\n",
    "seg_spec:\n  channels: [4, 8]\n  patch_size: [8, 16, 16]\n",
    "cls_layers: [1, 1]\n",
    "cls_block: wide\n",
])
def test_invalid_yaml(tmp_path, text):
    path = tmp_path / "bad.yaml"
    path.write_text(text, encoding="utf-8")
    with pytest.raises(ConfigurationError):
        load_config(path)


def test_unreadable_file(tmp_path):
    with pytest.raises(ConfigurationError):
        load_config(tmp_path / "missing.yaml")


def test_dump_and_load(tmp_path):
    config = config_from_dict({"seeds": [7, 8], "center_crop_size": [40, 48], "paths": {"manifest": "m.csv"}})
    dump_config(config, tmp_path / "config.yaml")
    assert load_config(tmp_path / "config.yaml") == config


def test_rows_are_cumulative():
    previous = frozenset()
    for row in ABLATION_ROWS:
        features = row_features(row)
        assert previous < features or row == BASELINE
        previous = features
    assert row_features(BASELINE) == frozenset()
    assert SEG_FORWARD in row_features(TRIPLET)
    with pytest.raises(ConfigurationError):
        row_features("everything")


def test_models_needed_per_row():
    assert not needs_slice_model(BASELINE) and not needs_seg_model(BASELINE)
    assert needs_slice_model("slice_crop") and not needs_seg_model("slice_crop")
    assert all(needs_slice_model(row) and needs_seg_model(row) for row in ABLATION_ROWS[2:])


def test_ordered_rows():
    config = ExperimentConfig(rows=(TRIPLET, BASELINE))
    assert config.ordered_rows == (BASELINE, TRIPLET)


def test_stage_hash_tracks_stage_settings():
    config = ExperimentConfig()
    slice_hash, seg_hash = stage_hash(config, STAGE_SLICE), stage_hash(config, STAGE_SEG)
    assert slice_hash != seg_hash
    assert stage_hash(ExperimentConfig(), STAGE_SEG) == seg_hash

    other_seg = dataclasses.replace(config, seg_spec=SegModelSpec(channels=(4, 8, 16)))
    assert stage_hash(other_seg, STAGE_SEG) != seg_hash
    assert stage_hash(other_seg, STAGE_SLICE) == slice_hash

    classifier_only = dataclasses.replace(config, seeds=(9,), cls_block_inplanes=(8, 8, 8, 8))
    assert stage_hash(classifier_only, STAGE_SEG) == seg_hash
    with pytest.raises(ValueError):
        stage_hash(config, "cls")


def test_spec_from_dict():
    spec = spec_from_dict(SegModelSpec, {"channels": [4, 8, 16], "patch_size": [8, 16, 16]})
    assert spec == SegModelSpec(channels=(4, 8, 16), patch_size=(8, 16, 16))
    assert spec_from_dict(SegModelSpec, None) == SegModelSpec()
