"""Synthetic abdominal phantoms with pancreas/tumour masks and a response label.

The label rule makes the target visible in the image: a case is progressive when the
tumour occupies at least ``label_rule_threshold`` of the pancreas region (pancreas plus
tumour voxels).
"""

import json
import logging
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .constants import DATASET_JSON, IMAGES_DIR, LABELS_DIR, MANIFEST_CSV, NIFTI_SUFFIX, PANCREAS, TUMOUR
from .errors import GenerationError
from .ingest import save_mask, save_volume, write_manifest
from .volume import CaseRecord, DatasetManifest, LabelMask, Volume

logger = logging.getLogger(__name__)

AIR_HU = -1000.0
BODY_HU = 40.0
PANCREAS_HU = 130.0
TUMOUR_HU = 60.0

# Pancreas semi-axes as fractions of the drawn radius (z, y, x): flat and elongated along x.
PANCREAS_AXES = (0.5, 0.6, 1.0)


@dataclass(frozen=True)
class PhantomParams:
    """Geometry and noise of the generated phantoms.

    :param tuple[int, int, int] shape: Volume extents (z, y, x)
    :param tuple[float, float] pancreas_radius_range: Interval the pancreas radius is drawn from (voxels)
    :param tuple[float, float] tumour_radius_range: Interval the tumour radius is drawn from (voxels)
    :param float noise_sigma: Gaussian noise standard deviation in HU
    :param float label_rule_threshold: Tumour / pancreas-region volume ratio at which a case is progressive
    :param tuple[float, float, float] spacing: Voxel size written to disk (mm)
    """

    shape: tuple = (64, 96, 96)
    pancreas_radius_range: tuple = (14.0, 20.0)
    tumour_radius_range: tuple = (2.0, 6.0)
    noise_sigma: float = 10.0
    label_rule_threshold: float = 0.04
    spacing: tuple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        half = min(self.shape) / 2
        for name in ("pancreas_radius_range", "tumour_radius_range"):
            low, high = getattr(self, name)
            if not 0 < low <= high < half:
                raise ValueError(f"{name} must satisfy 0 < low <= high < {half}, got {(low, high)}")
        if not 0 < self.label_rule_threshold < 1:
            raise ValueError(f"label_rule_threshold must be in (0, 1), got {self.label_rule_threshold}")
        if self.noise_sigma < 0:
            raise ValueError(f"noise_sigma must be >= 0, got {self.noise_sigma}")


def _ellipsoid(grid, center, semi_axes):
    return sum(((g - c) / a) ** 2 for g, c, a in zip(grid, center, semi_axes)) <= 1.0


def tumour_ratio(mask):
    """Tumour voxels divided by pancreas-region (pancreas + tumour) voxels of a mask."""
    data = mask.data if isinstance(mask, LabelMask) else np.asarray(mask)
    tumour = int((data == TUMOUR).sum())
    region = int(np.isin(data, (PANCREAS, TUMOUR)).sum())
    return tumour / region if region else 0.0


def response_from_mask(mask, threshold):
    """Label oracle: 1 iff the mask's tumour ratio reaches ``threshold``."""
    return int(tumour_ratio(mask) >= threshold)


def generate_case(params, seed):
    """Generate one phantom.

    :param PhantomParams params: Generator parameters
    :param int seed: Random seed, the output is a deterministic function of ``(params, seed)``

    :returns: Volume in HU, its mask and the response label
    :rtype: (Volume, LabelMask, int)

    :raises GenerationError: The tumour does not fit into the pancreas
    """
    rng = np.random.default_rng(seed)
    shape = params.shape
    grid = np.ogrid[tuple(slice(0, s) for s in shape)]
    center = np.array([(s - 1) / 2 for s in shape])

    pancreas_r = rng.uniform(*params.pancreas_radius_range)
    tumour_r = rng.uniform(*params.tumour_radius_range)
    pancreas_axes = tuple(pancreas_r * f for f in PANCREAS_AXES)
    if tumour_r >= min(pancreas_axes):
        raise GenerationError(f"tumour radius {tumour_r:.2f} does not fit in pancreas semi-axes {pancreas_axes}")

    # Body: an elliptic cylinder filling most of the y/x plane, pancreas placed near its center.
    body = _ellipsoid(grid[1:], center[1:], (0.42 * shape[1], 0.46 * shape[2]))
    pancreas_center = center + rng.uniform(-2.0, 2.0, size=3)
    pancreas = _ellipsoid(grid, pancreas_center, pancreas_axes)

    slack = pancreas_axes[2] - tumour_r
    tumour_center = pancreas_center + np.array([0.0, 0.0, rng.uniform(-0.5, 0.5) * slack])
    tumour = _ellipsoid(grid, tumour_center, (tumour_r,) * 3) & pancreas

    labels = np.zeros(shape, dtype=np.uint8)
    labels[pancreas] = PANCREAS
    labels[tumour] = TUMOUR

    data = np.full(shape, AIR_HU, dtype=np.float32)
    data[np.broadcast_to(body, shape)] = BODY_HU
    data[pancreas] = PANCREAS_HU
    data[tumour] = TUMOUR_HU
    if params.noise_sigma > 0:
        data += rng.normal(0.0, params.noise_sigma, size=shape).astype(np.float32)

    mask = LabelMask(labels)
    label = response_from_mask(mask, params.label_rule_threshold)
    return Volume(data, params.spacing), mask, label


def _half_range(interval, upper):
    low, high = interval
    mid = (low + high) / 2
    return (mid, high) if upper else (low, mid)


def generate_dataset(params, n, root, seed=0):
    """Generate ``n`` phantoms and write them in the MSD layout plus a classification manifest.

    Case ``i`` uses seed ``seed + i``; its tumour radius is drawn from the lower half of the
    configured range for even ``i`` and the upper half for odd ``i``, so both labels appear
    whenever the threshold lies between the two halves.

    :param PhantomParams params: Generator parameters
    :param int n: Number of cases (>= 2)
    :param Union[str, Path] root: Output directory
    :param int seed: Base seed

    :returns: Manifest of the written cases (masks and labels set)
    :rtype: DatasetManifest

    :raises GenerationError: All generated cases share one label
    :raises OSError: Files cannot be written
    """
    if n < 2:
        raise ValueError(f"At least 2 cases are needed, got {n}")
    root = Path(root)
    (root / IMAGES_DIR).mkdir(parents=True, exist_ok=True)
    (root / LABELS_DIR).mkdir(parents=True, exist_ok=True)

    cases, training = [], []
    for i in range(n):
        case_params = replace(params, tumour_radius_range=_half_range(params.tumour_radius_range, i % 2 == 1))
        volume, mask, label = generate_case(case_params, seed + i)
        case_id = f"phantom_{i:04d}"
        image_rel = f"{IMAGES_DIR}/{case_id}{NIFTI_SUFFIX}"
        label_rel = f"{LABELS_DIR}/{case_id}{NIFTI_SUFFIX}"
        save_volume(volume, root / image_rel)
        save_mask(mask, root / label_rel, volume.spacing, volume.origin)
        training.append({"image": f"./{image_rel}", "label": f"./{label_rel}"})
        cases.append(CaseRecord(case_id, str((root / image_rel).resolve()),
                                mask_path=str((root / label_rel).resolve()), response_label=label))
        logger.debug("Phantom %s: label=%d ratio=%.4f", case_id, label, tumour_ratio(mask))

    manifest = DatasetManifest(root.name, tuple(cases))
    if len(manifest.class_counts) < 2:
        raise GenerationError(f"all {n} cases have label {next(iter(manifest.class_counts))}, adjust label_rule_threshold")

    description = {
        "name": root.name,
        "description": "Synthetic pancreas phantoms",
        "tensorImageSize": "3D",
        "labels": {"0": "background", "1": "pancreas", "2": "tumour"},
        "numTraining": n,
        "training": training,
        "test": [],
    }
    (root / DATASET_JSON).write_text(json.dumps(description, indent=2), encoding="utf-8")
    write_manifest(manifest, root / MANIFEST_CSV)
    logger.info("Wrote %d phantoms to %s (class counts %s)", n, root, manifest.class_counts)
    return manifest
