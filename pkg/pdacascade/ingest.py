"""Dataset ingestion: MSD task folders, classification manifests, volume loading and splitting.

NIfTI arrays are stored (x, y, z); everything returned here is transposed to (z, y, x).
"""

import json
import logging
import math
from dataclasses import dataclass, replace
from pathlib import Path

import nibabel as nib
import numpy as np
import pandas as pd
from scipy import ndimage

from .constants import DATASET_JSON, HU_WINDOW, MANIFEST_COLUMNS, TEST, TRAIN
from .errors import MissingFileError, StratificationError, VolumeFormatError
from .volume import CaseRecord, DatasetManifest, LabelMask, Volume

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PreprocessSpec:
    """Intensity and spacing normalization applied by :func:`load_volume`.

    :param tuple[float, float] hu_window: Clamp window (low, high)
    :param tuple[float, float, float] target_spacing: Resample to this spacing in mm, ``None`` keeps the native grid
    :param str normalize: Only ``"minmax"`` (window mapped to [0, 1]) is supported
    """

    hu_window: tuple = HU_WINDOW
    target_spacing: tuple | None = None
    normalize: str = "minmax"

    def __post_init__(self):
        low, high = self.hu_window
        if not low < high:
            raise ValueError(f"hu_window low must be below high, got {self.hu_window}")
        if self.normalize != "minmax":
            raise ValueError(f"Unsupported normalization '{self.normalize}'")
        if self.target_spacing is not None and min(self.target_spacing) <= 0:
            raise ValueError(f"target_spacing must be positive, got {self.target_spacing}")


def _read_nifti(path):
    path = Path(path)
    if not path.is_file():
        raise MissingFileError(str(path))
    try:
        image = nib.load(str(path))
        data = np.asanyarray(image.dataobj)
    except Exception as e:
        raise VolumeFormatError(str(path), str(e)) from e

    if data.ndim == 4 and data.shape[3] == 1:
        data = data[..., 0]
    if data.ndim != 3:
        raise VolumeFormatError(str(path), f"expected a 3-D volume, got shape {data.shape}")

    zooms = image.header.get_zooms()[:3]
    spacing = tuple(float(s) for s in reversed(zooms))
    origin = tuple(float(o) for o in reversed(image.affine[:3, 3]))
    return np.transpose(data, (2, 1, 0)), spacing, origin


def _resample(data, spacing, target_spacing, order):
    factors = [s / t for s, t in zip(spacing, target_spacing)]
    out = ndimage.zoom(data, factors, order=order, mode="nearest", grid_mode=True)
    new_spacing = tuple(s * n / m for s, n, m in zip(spacing, data.shape, out.shape))
    return out, new_spacing


def normalize_intensities(data, hu_window=HU_WINDOW):
    """Clamp to ``hu_window`` and map it linearly onto [0, 1]."""
    low, high = hu_window
    data = np.clip(np.asarray(data, dtype=np.float32), low, high)
    return ((data - low) / (high - low)).astype(np.float32)


def load_volume(path, spec=PreprocessSpec()):
    """Read a NIfTI CT volume, clamp, rescale and optionally resample it.

    :param Union[str, Path] path: NIfTI file
    :param PreprocessSpec spec: Preprocessing to apply

    :returns: Volume with intensities in [0, 1]
    :rtype: Volume

    :raises MissingFileError: The file does not exist
    :raises VolumeFormatError: The file is not a readable 3-D volume
    """
    data, spacing, origin = _read_nifti(path)
    data = np.nan_to_num(data.astype(np.float32), nan=spec.hu_window[0])
    data = normalize_intensities(data, spec.hu_window)
    if spec.target_spacing is not None:
        data, spacing = _resample(data, spacing, spec.target_spacing, order=1)
        data = np.clip(data, 0.0, 1.0)
    logger.debug("Loaded volume %s shape=%s spacing=%s", path, data.shape, spacing)
    return Volume(data, spacing, origin)


def load_mask(path, target_spacing=None):
    """Read a NIfTI label file. Resampling uses nearest neighbour, so no new class id appears.

    :param Union[str, Path] path: NIfTI file
    :param tuple[float, float, float] target_spacing: Optional target spacing in mm

    :rtype: LabelMask

    :raises MissingFileError: The file does not exist
    :raises VolumeFormatError: The file is not a readable 3-D volume
    """
    data, spacing, _ = _read_nifti(path)
    data = np.rint(data).astype(np.int64)
    if target_spacing is not None:
        data, _ = _resample(data, spacing, target_spacing, order=0)
    return LabelMask(data)


def _affine(spacing, origin):
    affine = np.diag([*reversed(spacing), 1.0])
    affine[:3, 3] = list(reversed(origin))
    return affine


def save_volume(volume, path):
    """Write a volume as NIfTI (float32)."""
    image = nib.Nifti1Image(np.transpose(volume.data, (2, 1, 0)).astype(np.float32), _affine(volume.spacing, volume.origin))
    nib.save(image, str(path))


def save_mask(mask, path, spacing=(1.0, 1.0, 1.0), origin=(0.0, 0.0, 0.0)):
    """Write a label mask as NIfTI (uint8)."""
    image = nib.Nifti1Image(np.transpose(mask.data, (2, 1, 0)).astype(np.uint8), _affine(spacing, origin))
    nib.save(image, str(path))


def _case_id(path):
    name = Path(path).name
    for suffix in (".nii.gz", ".nii"):
        if name.endswith(suffix):
            return name[: -len(suffix)]
    return name


def load_msd(root):
    """Read an MSD task folder (``dataset.json`` plus ``imagesTr``/``labelsTr``).

    :param Union[str, Path] root: Task root directory

    :returns: One case per listed training pair, with ``mask_path`` set and no response label
    :rtype: DatasetManifest

    :raises VolumeFormatError: ``dataset.json`` is missing or malformed
    :raises MissingFileError: A listed image or label file is absent
    """
    root = Path(root)
    description = root / DATASET_JSON
    if not description.is_file():
        raise VolumeFormatError(str(description), "missing dataset description")
    try:
        meta = json.loads(description.read_text(encoding="utf-8"))
        pairs = meta["training"]
    except (json.JSONDecodeError, KeyError, TypeError) as e:
        raise VolumeFormatError(str(description), f"cannot read training list ({e})") from e

    cases = []
    for index, pair in enumerate(pairs):
        try:
            image = (root / pair["image"]).resolve()
            label = (root / pair["label"]).resolve()
        except (KeyError, TypeError) as e:
            raise VolumeFormatError(str(description), f"training entry {index} lacks an image/label pair ({e})") from e
        for path in (image, label):
            if not path.is_file():
                raise MissingFileError(str(path))
        cases.append(CaseRecord(_case_id(image), str(image), mask_path=str(label)))

    name = meta.get("name", root.name)
    logger.info("MSD dataset '%s': %d training cases", name, len(cases))
    return DatasetManifest(name, tuple(cases))


def _optional(value):
    if value is None or (isinstance(value, float) and math.isnan(value)) or value == "":
        return None
    return value


def read_manifest(path):
    """Read a classification manifest table.

    Required columns are ``case_id``, ``volume_path`` and ``response_label``; ``mask_path`` and
    ``split`` are optional. Relative paths are resolved against the manifest's directory.

    :param Union[str, Path] path: CSV file

    :rtype: DatasetManifest

    :raises MissingFileError: The manifest does not exist
    :raises VolumeFormatError: A required column is missing
    """
    path = Path(path)
    if not path.is_file():
        raise MissingFileError(str(path))
    table = pd.read_csv(path, dtype={"case_id": str}, keep_default_na=True, encoding="utf-8")
    missing = {"case_id", "volume_path", "response_label"} - set(table.columns)
    if missing:
        raise VolumeFormatError(str(path), f"missing columns {sorted(missing)}")

    base = path.parent
    cases = []
    for row in table.to_dict("records"):
        label = _optional(row.get("response_label"))
        mask = _optional(row.get("mask_path"))
        cases.append(CaseRecord(
            case_id=str(row["case_id"]),
            volume_path=str((base / row["volume_path"]).resolve()),
            mask_path=str((base / mask).resolve()) if mask is not None else None,
            response_label=int(label) if label is not None else None,
            split=_optional(row.get("split")) or TRAIN,
        ))
    return DatasetManifest(path.stem, tuple(cases))


def write_manifest(manifest, path):
    """Write a manifest table, storing paths relative to the table's directory when possible."""
    path = Path(path)
    base = path.parent.resolve()

    def rel(p):
        if p is None:
            return None
        p = Path(p).resolve()
        return str(p.relative_to(base)) if p.is_relative_to(base) else str(p)

    rows = [{
        "case_id": c.case_id,
        "volume_path": rel(c.volume_path),
        "response_label": c.response_label,
        "mask_path": rel(c.mask_path),
        "split": c.split,
    } for c in manifest.cases]
    table = pd.DataFrame(rows, columns=list(MANIFEST_COLUMNS))
    table["response_label"] = table["response_label"].astype("Int64")
    table.to_csv(path, index=False, encoding="utf-8")


def load_case(record, spec=PreprocessSpec()):
    """Load the volume of a case and its mask when it has one.

    :rtype: (Volume, Optional[LabelMask])
    """
    volume = load_volume(record.volume_path, spec)
    mask = None
    if record.mask_path is not None:
        mask = load_mask(record.mask_path, spec.target_spacing)
        mask.check_aligned(volume)
    return volume, mask


def _round_half_up(x):
    return int(math.floor(x + 0.5))


def stratified_split(manifest, test_fraction, seed):
    """Split a labeled manifest into train and test, class by class.

    Every class but the largest gets ``round(count * test_fraction)`` test cases, the largest
    class takes what is left of ``round(N * test_fraction)``.

    :param DatasetManifest manifest: Labeled cases
    :param float test_fraction: Share of cases going to test, in (0, 1)
    :param int seed: Random seed

    :returns: (train manifest, test manifest) with ``split`` set on every record
    :rtype: (DatasetManifest, DatasetManifest)

    :raises StratificationError: A case has no label, or a class has no member
    """
    if not 0 < test_fraction < 1:
        raise ValueError(f"test_fraction must be in (0, 1), got {test_fraction}")
    unlabeled = [c.case_id for c in manifest.cases if c.response_label is None]
    if unlabeled:
        raise StratificationError(f"cases without response label: {unlabeled[:5]}")
    for label in (0, 1):
        if manifest.class_counts.get(label, 0) == 0:
            raise StratificationError(f"class {label} has no member")

    counts = manifest.class_counts
    total_test = _round_half_up(len(manifest) * test_fraction)
    largest = max(counts, key=lambda k: (counts[k], k))
    quota = {k: _round_half_up(n * test_fraction) for k, n in counts.items() if k != largest}
    quota[largest] = total_test - sum(quota.values())

    rng = np.random.default_rng(seed)
    test_ids = set()
    for label in sorted(counts):
        ids = sorted(c.case_id for c in manifest.cases if c.response_label == label)
        order = rng.permutation(len(ids))
        test_ids.update(ids[i] for i in order[: max(quota[label], 0)])

    train_cases, test_cases = [], []
    for case in manifest.cases:
        if case.case_id in test_ids:
            test_cases.append(replace(case, split=TEST))
        else:
            train_cases.append(replace(case, split=TRAIN))

    logger.info("Split '%s': %d train / %d test (test per class %s)",
                manifest.name, len(train_cases), len(test_cases), dict(sorted(quota.items())))
    return (DatasetManifest(f"{manifest.name}-train", tuple(train_cases)),
            DatasetManifest(f"{manifest.name}-test", tuple(test_cases)))
