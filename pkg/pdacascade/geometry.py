"""Pure geometric operations on volumes and masks.

Everything here is side-effect free and works in (z, y, x) index space.
"""

import numpy as np
import torch
import torch.nn.functional as F

from .constants import BBOX_MARGIN, FOREGROUND_CLASSES, N_CLASSES
from .errors import EmptyForegroundError, InvalidLabelError, ShapeMismatchError
from .utils import as_triple
from .volume import BBox3, LabelMask, Volume


def one_hot_mask(mask, n_classes=N_CLASSES):
    """Encode a label mask as a stack of binary channels.

    :param LabelMask mask: Mask to encode
    :param int n_classes: Number of channels

    :returns: Array of shape ``(n_classes, z, y, x)``, channel ``c`` is 1 exactly where ``mask == c``
    :rtype: numpy.ndarray

    :raises InvalidLabelError: A voxel value is ``>= n_classes``
    """
    data = mask.data
    if data.max() >= n_classes:
        raise InvalidLabelError(int(data.max()), n_classes)
    return (data[np.newaxis] == np.arange(n_classes).reshape(-1, 1, 1, 1)).astype(np.uint8)


def bbox_from_mask(mask, foreground_classes=FOREGROUND_CLASSES, margin=BBOX_MARGIN):
    """Tightest box around the foreground, dilated by ``margin`` and clipped to the mask.

    :param LabelMask mask: Mask
    :param Iterable[int] foreground_classes: Classes counted as foreground
    :param Union[int, tuple[int, int, int]] margin: Dilation per axis in voxels

    :rtype: BBox3

    :raises EmptyForegroundError: No voxel belongs to ``foreground_classes``
    """
    margin = as_triple(margin)
    if min(margin) < 0:
        raise ValueError(f"Margin must be non-negative, got {margin}")
    foreground = np.isin(mask.data, tuple(foreground_classes))
    if not foreground.any():
        raise EmptyForegroundError(foreground_classes)

    lo, hi = [], []
    for axis, (extent, m) in enumerate(zip(mask.shape, margin)):
        others = tuple(a for a in range(3) if a != axis)
        occupied = np.flatnonzero(foreground.any(axis=others))
        lo.append(max(int(occupied[0]) - m, 0))
        hi.append(min(int(occupied[-1]) + m, extent - 1))
    return BBox3(tuple(lo), tuple(hi))


def _check_bbox(bbox, shape):
    if not bbox.fits(shape):
        raise IndexError(f"Bounding box {bbox.lo}..{bbox.hi} exceeds array shape {shape}")


def crop(volume, bbox):
    """Crop a volume to an inclusive box.

    Spacing is kept, the origin moves by ``lo * spacing``.

    :param Volume volume: Source volume
    :param BBox3 bbox: Box in index space

    :rtype: Volume

    :raises IndexError: The box is out of the volume
    """
    _check_bbox(bbox, volume.shape)
    origin = tuple(o + l * s for o, l, s in zip(volume.origin, bbox.lo, volume.spacing))
    return Volume(volume.data[bbox.slices()].copy(), volume.spacing, origin)


def crop_mask(mask, bbox):
    """Crop a label mask to an inclusive box.

    :param LabelMask mask: Source mask
    :param BBox3 bbox: Box in index space

    :rtype: LabelMask

    :raises IndexError: The box is out of the mask
    """
    _check_bbox(bbox, mask.shape)
    return LabelMask(mask.data[bbox.slices()].copy(), mask.classes)


def center_crop_bbox(shape, out_size):
    """Box for a centered (y, x) window keeping all slices. Ties go to the lower index.

    :param tuple[int, int, int] shape: Source shape
    :param tuple[int, int] out_size: Window extents (y, x)

    :rtype: BBox3

    :raises ShapeMismatchError: The window is larger than the source
    """
    out_y, out_x = (int(v) for v in out_size)
    z, y, x = shape
    if out_y > y or out_x > x or out_y < 1 or out_x < 1:
        raise ShapeMismatchError("Center crop size", f"1..{(y, x)}", (out_y, out_x))
    y0 = (y - out_y) // 2
    x0 = (x - out_x) // 2
    return BBox3((0, y0, x0), (z - 1, y0 + out_y - 1, x0 + out_x - 1))


def center_crop(volume, out_size):
    """Crop a centered (y, x) window, keeping the z extent.

    :param Volume volume: Source volume
    :param tuple[int, int] out_size: Window extents (y, x)

    :rtype: Volume

    :raises ShapeMismatchError: ``out_size`` is larger than the volume
    """
    return crop(volume, center_crop_bbox(volume.shape, out_size))


def resize_array(data, shape, mode="trilinear"):
    """Resample a (C, z, y, x) or (z, y, x) array to an exact spatial shape.

    ``mode="nearest"`` keeps the set of values, use it for masks and one-hot channels.
    """
    squeeze = data.ndim == 3
    tensor = torch.as_tensor(np.ascontiguousarray(data), dtype=torch.float32)
    tensor = tensor.unsqueeze(0) if squeeze else tensor
    kwargs = {"align_corners": False} if mode == "trilinear" else {}
    out = F.interpolate(tensor.unsqueeze(0), size=tuple(int(s) for s in shape), mode=mode, **kwargs)[0]
    out = out[0] if squeeze else out
    return out.numpy()


def resize(volume, shape):
    """Resample a volume to ``shape`` with trilinear interpolation, adjusting spacing.

    :param Volume volume: Source volume
    :param tuple[int, int, int] shape: Target extents

    :rtype: Volume
    """
    shape = as_triple(shape)
    if shape == volume.shape:
        return volume
    spacing = tuple(sp * s / t for sp, s, t in zip(volume.spacing, volume.shape, shape))
    return Volume(resize_array(volume.data, shape), spacing, volume.origin)
