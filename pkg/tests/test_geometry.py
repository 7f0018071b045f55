import numpy as np
import pytest

from conftest import blob_mask, ramp_volume
from pdacascade.errors import EmptyForegroundError, InvalidLabelError, ShapeMismatchError
from pdacascade.geometry import (bbox_from_mask, center_crop, center_crop_bbox, crop, crop_mask, one_hot_mask,
                                 resize, resize_array)
from pdacascade.volume import BBox3, LabelMask, Volume


def test_one_hot_single_voxel():
    channels = one_hot_mask(LabelMask(np.zeros((1, 1, 1), dtype=np.uint8)), 3)
    assert channels.shape == (3, 1, 1, 1)
    assert channels[:, 0, 0, 0].tolist() == [1, 0, 0]


def test_one_hot_all_background():
    channels = one_hot_mask(LabelMask(np.zeros((4, 4, 4), dtype=np.uint8)))
    assert channels[0].all()
    assert not channels[1:].any()


def test_one_hot_argmax_reproduces_mask(rng):
    for _ in range(500):
        data = rng.integers(0, 3, size=tuple(rng.integers(1, 6, size=3)))
        channels = one_hot_mask(LabelMask(data))
        assert channels.sum(axis=0).max() == 1
        assert np.array_equal(channels.argmax(axis=0), data)


def test_one_hot_rejects_large_label():
    with pytest.raises(InvalidLabelError):
        one_hot_mask(LabelMask(np.full((2, 2, 2), 2, dtype=np.uint8)), 2)


def test_label_mask_rejects_out_of_range():
    with pytest.raises(InvalidLabelError):
        LabelMask(np.full((2, 2, 2), 3))
    with pytest.raises(InvalidLabelError):
        LabelMask(np.full((2, 2, 2), -1))


def test_bbox_single_voxel():
    data = np.zeros((10, 10, 10), dtype=np.uint8)
    data[3, 4, 5] = 1
    bbox = bbox_from_mask(LabelMask(data), margin=(0, 0, 0))
    assert bbox == BBox3((3, 4, 5), (3, 4, 5))


def test_bbox_two_voxels_and_margin_clipping():
    data = np.zeros((10, 10, 10), dtype=np.uint8)
    data[1, 1, 1] = 1
    data[6, 2, 9] = 2
    mask = LabelMask(data)
    assert bbox_from_mask(mask, margin=0) == BBox3((1, 1, 1), (6, 2, 9))
    assert bbox_from_mask(mask, margin=(2, 2, 2)) == BBox3((0, 0, 0), (8, 4, 9))


def test_bbox_ignores_classes_outside_foreground():
    data = np.zeros((6, 6, 6), dtype=np.uint8)
    data[0, 0, 0] = 2
    data[3, 3, 3] = 1
    assert bbox_from_mask(LabelMask(data), foreground_classes=(1,), margin=0) == BBox3((3, 3, 3), (3, 3, 3))


def test_bbox_empty_foreground():
    with pytest.raises(EmptyForegroundError):
        bbox_from_mask(LabelMask(np.zeros((4, 4, 4), dtype=np.uint8)))


def test_bbox_matches_brute_force(rng):
    for _ in range(500):
        shape = tuple(rng.integers(1, 9, size=3))
        data = (rng.random(shape) < 0.05).astype(np.uint8) * rng.integers(1, 3, size=shape).astype(np.uint8)
        if not data.any():
            data[tuple(rng.integers(0, s) for s in shape)] = 1
        margin = tuple(int(m) for m in rng.integers(0, 4, size=3))
        coords = np.argwhere(data > 0)
        lo = np.maximum(coords.min(axis=0) - margin, 0)
        hi = np.minimum(coords.max(axis=0) + margin, np.array(shape) - 1)
        assert bbox_from_mask(LabelMask(data), margin=margin) == BBox3(tuple(lo), tuple(hi))


def test_crop_full_extent_is_identity():
    volume = ramp_volume((3, 4, 5))
    cropped = crop(volume, BBox3.full(volume.shape))
    assert np.array_equal(cropped.data, volume.data)
    assert cropped.origin == volume.origin


def test_crop_matches_slicing_and_moves_origin():
    volume = Volume(ramp_volume((8, 8, 8)).data, spacing=(2.0, 1.0, 0.5))
    cropped = crop(volume, BBox3((2, 2, 2), (5, 5, 5)))
    assert cropped.shape == (4, 4, 4)
    assert np.array_equal(cropped.data, volume.data[2:6, 2:6, 2:6])
    assert cropped.origin == (4.0, 2.0, 1.0)
    assert cropped.spacing == volume.spacing


def test_crop_is_idempotent_under_full_box():
    once = crop(ramp_volume((8, 8, 8)), BBox3((1, 2, 3), (6, 5, 7)))
    twice = crop(once, BBox3.full(once.shape))
    assert np.array_equal(once.data, twice.data)


def test_crop_out_of_range():
    with pytest.raises(IndexError):
        crop(ramp_volume((4, 4, 4)), BBox3((0, 0, 0), (4, 3, 3)))


def test_crop_matches_brute_force(rng):
    for _ in range(500):
        shape = tuple(int(s) for s in rng.integers(1, 9, size=3))
        volume = Volume(rng.random(shape))
        lo = tuple(int(rng.integers(0, s)) for s in shape)
        hi = tuple(int(rng.integers(l, s)) for l, s in zip(lo, shape))
        expected = np.array([[[volume.data[z, y, x] for x in range(lo[2], hi[2] + 1)]
                              for y in range(lo[1], hi[1] + 1)] for z in range(lo[0], hi[0] + 1)])
        assert np.array_equal(crop(volume, BBox3(lo, hi)).data, expected)


def test_crop_mask_keeps_classes():
    mask = blob_mask((6, 6, 6), (1, 1, 1), (2, 3, 4), value=2)
    cropped = crop_mask(mask, BBox3((1, 1, 1), (2, 3, 4)))
    assert cropped.shape == (2, 3, 4)
    assert (cropped.data == 2).all()


def test_center_crop_identity():
    volume = ramp_volume((2, 6, 6))
    assert np.array_equal(center_crop(volume, (6, 6)).data, volume.data)


def test_center_crop_window_positions():
    assert center_crop_bbox((1, 6, 6), (4, 4)) == BBox3((0, 1, 1), (0, 4, 4))
    # Odd leftover goes to the high side.
    assert center_crop_bbox((1, 5, 5), (4, 4)) == BBox3((0, 0, 0), (0, 3, 3))


def test_center_crop_keeps_all_slices(rng):
    for _ in range(500):
        shape = tuple(int(s) for s in rng.integers(1, 12, size=3))
        size = tuple(int(rng.integers(1, s + 1)) for s in shape[1:])
        volume = Volume(rng.random(shape))
        y0 = (shape[1] - size[0]) // 2
        x0 = (shape[2] - size[1]) // 2
        out = center_crop(volume, size)
        assert out.shape == (shape[0], *size)
        assert np.array_equal(out.data, volume.data[:, y0:y0 + size[0], x0:x0 + size[1]])


def test_center_crop_too_large():
    with pytest.raises(ShapeMismatchError):
        center_crop(ramp_volume((2, 4, 4)), (5, 4))


def test_resize_array_nearest_keeps_values(rng):
    data = rng.integers(0, 3, size=(5, 7, 9)).astype(np.float32)
    out = resize_array(data, (8, 8, 8), mode="nearest")
    assert out.shape == (8, 8, 8)
    assert set(np.unique(out)) <= {0.0, 1.0, 2.0}


def test_resize_array_channels():
    out = resize_array(np.ones((4, 3, 5, 5), dtype=np.float32), (6, 10, 10))
    assert out.shape == (4, 6, 10, 10)
    assert np.allclose(out, 1.0)


def test_resize_adjusts_spacing():
    volume = Volume(np.zeros((4, 8, 8), dtype=np.float32), spacing=(2.0, 1.0, 1.0))
    out = resize(volume, (8, 4, 4))
    assert out.shape == (8, 4, 4)
    assert out.spacing == (1.0, 2.0, 2.0)
