import logging

import numpy as np
import pandas as pd
import pytest
import torch

from pdacascade import __version__, cli
from pdacascade.checkpoint import from_model, save_checkpoint
from pdacascade.cli import build_parser, main
from pdacascade.cls_stage import RESNET, ClassifierSpec, build_classifier
from pdacascade.config import ExperimentConfig, input_record
from pdacascade.constants import BASELINE, MANIFEST_CSV, RESULTS_CSV, STAGE_CLS, STAGE_SLICE, SUMMARY_CSV, TEST, TRIPLET
from pdacascade.ingest import load_volume, read_manifest, save_volume
from pdacascade.slice_stage import SliceModelSpec, build_slice_model
from pdacascade.utils import to_plain
from pdacascade.volume import Volume


def test_version(capsys):
    with pytest.raises(SystemExit):
        build_parser().parse_args(["--version"])
    assert __version__ in capsys.readouterr().out


def test_parser_collects_rows_and_seeds():
    args = build_parser().parse_args(["-dd", "run-ablation", "--row", BASELINE, "--row", TRIPLET,
                                      "--seed", "1", "--seed", "2", "--no-cache"])
    assert args.debug == 2
    assert args.row == [BASELINE, TRIPLET]
    assert args.seed == [1, 2]
    assert args.no_cache


def test_parser_rejects_unknown_row():
    with pytest.raises(SystemExit):
        build_parser().parse_args(["run-ablation", "--row", "everything"])


def test_prepare_phantoms_and_split(tmp_path, capsys):
    out = tmp_path / "phantoms"
    assert main(["prepare-phantoms", "--out", str(out), "-n", "8", "--shape", "24", "40", "40",
                 "--pancreas-radius", "9", "9.5", "--tumour-radius", "0.8", "3.8", "--noise", "5",
                 "--threshold", "0.06"]) == 0
    manifest = read_manifest(out / MANIFEST_CSV)
    assert len(manifest) == 8
    assert "8 phantoms" in capsys.readouterr().out

    split_path = tmp_path / "split.csv"
    assert main(["split", "--manifest", str(out / MANIFEST_CSV), "--test-fraction", "0.25",
                 "--out", str(split_path)]) == 0
    split = read_manifest(split_path)
    assert [c.case_id for c in split] == [c.case_id for c in manifest]
    assert sum(c.split == TEST for c in split) == 2


def test_evaluate_command(tmp_path, capsys):
    predictions = tmp_path / "predictions.csv"
    pd.DataFrame({
        "row": [BASELINE] * 4,
        "seed": [0, 0, 1, 1],
        "case_id": ["a", "b", "a", "b"],
        "response_label": [1, 0, 1, 0],
        "probability": [0.9, 0.2, 0.3, 0.6],
    }).to_csv(predictions, index=False)
    assert main(["evaluate", "--predictions", str(predictions), "--out", str(tmp_path / "report")]) == 0
    results = pd.read_csv(tmp_path / "report" / RESULTS_CSV)
    assert list(results["mcc"]) == [1.0, -1.0]
    assert (tmp_path / "report" / SUMMARY_CSV).is_file()
    assert BASELINE in capsys.readouterr().out


def test_errors_become_exit_code(tmp_path):
    assert main(["split", "--manifest", str(tmp_path / "missing.csv")]) == 1


def test_bad_config_file(tmp_path):
    config = tmp_path / "bad.yaml"
    config.write_text("unknown_key: 1\n", encoding="utf-8")
    assert main(["run-ablation", "--config", str(config)]) == 1


def _silent_slice_checkpoint(path):
    spec = SliceModelSpec(encoder_channels=(4,), hidden=4, slice_size=(16, 16))
    model = build_slice_model(spec)
    with torch.no_grad():
        model.head.weight.zero_()
        model.head.bias.fill_(-50.0)
    model.mark_trained()
    save_checkpoint(from_model(model, STAGE_SLICE, {"slice_spec": to_plain(spec)}, 0), path)


def test_crop_z_keeps_all_slices_without_prediction(tmp_path, capsys, caplog, monkeypatch):
    monkeypatch.setattr("pdacascade.cli.configure_logging", lambda debug: None)
    _silent_slice_checkpoint(tmp_path / "slice.ckpt")
    data = np.random.default_rng(0).uniform(-150, 250, size=(7, 16, 16)).astype(np.float32)
    save_volume(Volume(data), tmp_path / "ct.nii.gz")
    out = tmp_path / "cropped.nii.gz"
    with caplog.at_level(logging.WARNING, logger="pdacascade.cli"):
        assert main(["crop-z", "--checkpoint", str(tmp_path / "slice.ckpt"), "--volume", str(tmp_path / "ct.nii.gz"),
                     "--out", str(out)]) == 0
    assert load_volume(out).shape == (7, 16, 16)
    assert "slices 0..6 of 7" in capsys.readouterr().out
    assert "keeping all 7 slices" in caplog.text


def test_predict_uses_the_trained_preprocessing(tmp_path, capsys, monkeypatch):
    trained = ExperimentConfig(baseline_resolution=(16, 16, 16))
    spec = ClassifierSpec(RESNET, 1, "basic", (1, 1, 1, 1), (4, 4, 4, 4))
    model = build_classifier(spec)
    model.mark_trained()
    snapshot = {"row": BASELINE, "classifier": spec, **input_record(trained, BASELINE)}
    checkpoint = tmp_path / "checkpoints" / f"cls-{BASELINE}-seed0.ckpt"
    save_checkpoint(from_model(model, STAGE_CLS, snapshot, 0), checkpoint)
    save_volume(Volume(np.zeros((20, 30, 30), dtype=np.float32)), tmp_path / "ct.nii.gz")

    seen = []
    score = cli.predict_response
    monkeypatch.setattr(cli, "predict_response", lambda m, inputs: seen.append(inputs.shape) or score(m, inputs))
    assert main(["predict", "--checkpoint", str(checkpoint), "--volume", str(tmp_path / "ct.nii.gz")]) == 0
    assert seen == [(1, 16, 16, 16)]
    assert "ct.nii.gz" in capsys.readouterr().out
