"""Canonical data types shared by all stages.

All arrays are indexed (z, y, x).
"""

from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .constants import CLASS_NAMES, SPLITS, TRAIN
from .errors import InvalidLabelError, ShapeMismatchError


@dataclass(frozen=True, eq=False)
class Volume:
    """A 3-D grid of CT intensities.

    :param numpy.ndarray data: Intensities indexed (z, y, x)
    :param tuple[float, float, float] spacing: Voxel size in mm per axis
    :param tuple[float, float, float] origin: Physical offset in mm per axis
    """

    data: np.ndarray
    spacing: tuple = (1.0, 1.0, 1.0)
    origin: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3 or min(data.shape) < 1:
            raise ShapeMismatchError("Volume data", "3-D array with all extents >= 1", data.shape)
        spacing = tuple(float(s) for s in self.spacing)
        if len(spacing) != 3 or min(spacing) <= 0:
            raise ValueError(f"Spacing must be 3 strictly positive values, got {self.spacing}")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "origin", tuple(float(o) for o in self.origin))

    @property
    def shape(self):
        return self.data.shape


@dataclass(frozen=True, eq=False)
class LabelMask:
    """Per-voxel class ids aligned to a :class:`Volume`.

    :param numpy.ndarray data: Integer class ids indexed (z, y, x)
    :param tuple[str] classes: Ordered class names
    """

    data: np.ndarray
    classes: tuple = CLASS_NAMES

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3 or min(data.shape) < 1:
            raise ShapeMismatchError("LabelMask data", "3-D array with all extents >= 1", data.shape)
        if not np.issubdtype(data.dtype, np.integer):
            if not np.array_equal(data, np.round(data)):
                raise InvalidLabelError("non-integer value", len(self.classes))
            data = data.astype(np.int64)
        if data.size and (data.min() < 0 or data.max() >= len(self.classes)):
            bad = data.min() if data.min() < 0 else data.max()
            raise InvalidLabelError(int(bad), len(self.classes))
        object.__setattr__(self, "data", data.astype(np.uint8, copy=False))

    @property
    def shape(self):
        return self.data.shape

    def check_aligned(self, volume):
        """Raise :class:`ShapeMismatchError` unless the mask has the volume's shape."""
        if self.shape != volume.shape:
            raise ShapeMismatchError("Mask/volume shape", volume.shape, self.shape)


@dataclass(frozen=True)
class BBox3:
    """Axis-aligned box with inclusive (z, y, x) bounds."""

    lo: tuple
    hi: tuple

    def __post_init__(self):
        lo = tuple(int(v) for v in self.lo)
        hi = tuple(int(v) for v in self.hi)
        if len(lo) != 3 or len(hi) != 3:
            raise ValueError(f"BBox3 needs 3 lower and 3 upper bounds, got {self.lo}, {self.hi}")
        if any(l > h for l, h in zip(lo, hi)):
            raise ValueError(f"BBox3 lower bound {lo} exceeds upper bound {hi}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def full(cls, shape):
        """Box covering a whole array of ``shape``."""
        return cls((0, 0, 0), tuple(s - 1 for s in shape))

    @property
    def shape(self):
        return tuple(h - l + 1 for l, h in zip(self.lo, self.hi))

    def fits(self, shape):
        return all(0 <= l and h < s for l, h, s in zip(self.lo, self.hi, shape))

    def slices(self):
        return tuple(slice(l, h + 1) for l, h in zip(self.lo, self.hi))


@dataclass(frozen=True)
class CaseRecord:
    """One study.

    ``response_label`` is 1 for progressive disease and 0 for stable or regressive disease.
    """

    case_id: str
    volume_path: str
    mask_path: str | None = None
    response_label: int | None = None
    split: str = TRAIN

    def __post_init__(self):
        if self.split not in SPLITS:
            raise ValueError(f"Unknown split '{self.split}' for case {self.case_id}")
        if self.response_label is not None and self.response_label not in (0, 1):
            raise ValueError(f"Response label of {self.case_id} must be 0 or 1, got {self.response_label}")


@dataclass(frozen=True)
class DatasetManifest:
    """A named list of cases. ``class_counts`` is derived from the labeled records."""

    name: str
    cases: tuple
    class_counts: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        cases = tuple(self.cases)
        ids = [c.case_id for c in cases]
        duplicates = sorted(i for i, n in Counter(ids).items() if n > 1)
        if duplicates:
            raise ValueError(f"Duplicate case ids in manifest '{self.name}': {duplicates}")
        counts = Counter(c.response_label for c in cases if c.response_label is not None)
        object.__setattr__(self, "cases", cases)
        object.__setattr__(self, "class_counts", dict(sorted(counts.items())))

    def __len__(self):
        return len(self.cases)

    def __iter__(self):
        return iter(self.cases)

    def by_id(self):
        return {c.case_id: c for c in self.cases}

    def subset(self, case_ids, name=None):
        """Manifest restricted to ``case_ids``, keeping the original order."""
        keep = set(case_ids)
        return DatasetManifest(name or self.name, tuple(c for c in self.cases if c.case_id in keep))
