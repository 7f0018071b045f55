import numpy as np
import pytest

from pdacascade.cls_stage import ClsTrainParams, TripletConfig
from pdacascade.config import ExperimentConfig, Margins, Paths
from pdacascade.phantom import PhantomParams, generate_dataset
from pdacascade.seg_stage import SegModelSpec, SegTrainParams
from pdacascade.slice_stage import SliceModelSpec, SliceTrainParams
from pdacascade.volume import LabelMask, Volume


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_params():
    """Phantoms small enough for CPU training in tests.

    With these radii the lower tumour half stays below the threshold and almost every
    upper-half tumour is above it.
    """
    return PhantomParams(
        shape=(24, 40, 40),
        pancreas_radius_range=(9.0, 9.5),
        tumour_radius_range=(0.8, 3.8),
        noise_sigma=5.0,
        label_rule_threshold=0.06,
    )


@pytest.fixture
def phantom_dir(tmp_path, small_params):
    root = tmp_path / "phantoms"
    generate_dataset(small_params, 12, root, seed=0)
    return root


@pytest.fixture
def tiny_specs():
    return {
        "slice_spec": SliceModelSpec(encoder_channels=(4, 8, 8), hidden=8, slice_size=(32, 32)),
        "seg_spec": SegModelSpec(channels=(4, 8, 16), patch_size=(16, 32, 32)),
    }


@pytest.fixture
def tiny_config(tmp_path, phantom_dir, tiny_specs):
    return ExperimentConfig(
        seeds=(0, 1),
        baseline_resolution=(16, 24, 24),
        crop_resolution=(16, 24, 24),
        center_crop_size=(28, 28),
        test_fraction=0.25,
        margins=Margins(z_margin=1, bbox_margin=(2, 2, 2)),
        paths=Paths(manifest=str(phantom_dir / "manifest.csv"), output_dir=str(tmp_path / "runs")),
        slice_train=SliceTrainParams(epochs=2),
        seg_train=SegTrainParams(epochs=2, batch_size=2),
        cls_block_inplanes=(4, 4, 8, 8),
        cls_train=ClsTrainParams(batch_size=4),
        triplet=TripletConfig(epochs_stage_a=1, epochs_stage_b=1, triplets_per_step=4),
        **tiny_specs,
    )


def blob_mask(shape, lo, hi, value=1):
    """Mask with one box of ``value`` between inclusive bounds."""
    data = np.zeros(shape, dtype=np.uint8)
    data[lo[0]:hi[0] + 1, lo[1]:hi[1] + 1, lo[2]:hi[2] + 1] = value
    return LabelMask(data)


def ramp_volume(shape):
    return Volume(np.arange(np.prod(shape), dtype=np.float32).reshape(shape))
