"""Stage II: 3-D pancreas/tumour segmentation, informed cropping and mask forwarding.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
import torch
import torch.nn.functional as F
from monai.inferers import sliding_window_inference
from monai.losses import DiceCELoss

from .constants import BBOX_MARGIN, FOREGROUND_CLASSES, N_CLASSES, PANCREAS, TUMOUR, WINDOW_OVERLAP
from .errors import ConfigurationError, DegenerateDatasetError, EmptyForegroundError, ShapeMismatchError
from .geometry import bbox_from_mask, center_crop_bbox, crop, crop_mask, one_hot_mask
from .networks import SegUNet
from .utils import seed_everything
from .volume import LabelMask

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SegModelSpec:
    """Segmentation architecture.

    :param int in_channels: Input channels
    :param tuple[int] channels: Stage widths (at least 3); the encoder stages are reused by the classifier
    :param int out_classes: Output classes (background, pancreas, tumour)
    :param tuple[int, int, int] patch_size: Training patch and sliding-window extents
    """

    in_channels: int = 1
    channels: tuple = (8, 16, 32, 64)
    out_classes: int = N_CLASSES
    patch_size: tuple = (32, 64, 64)

    def __post_init__(self):
        if len(self.channels) < 3:
            raise ConfigurationError(f"seg_spec.channels needs at least 3 stages, got {tuple(self.channels)}")
        divisor = 2 ** (len(self.channels) - 1)
        if len(self.patch_size) != 3 or any(int(p) % divisor for p in self.patch_size):
            raise ConfigurationError(f"seg_spec.patch_size {tuple(self.patch_size)} must be three extents "
                                     f"divisible by {divisor} for {len(self.channels)} encoder stages")


@dataclass(frozen=True)
class SegTrainParams:
    epochs: int = 40
    learning_rate: float = 2e-3
    batch_size: int = 2
    foreground_patch_ratio: float = 0.5
    seed: int = 0


@dataclass(frozen=True, eq=False)
class SegPrediction:
    """Predicted mask, with per-class Dice when the ground truth was given."""

    mask: LabelMask
    per_class_dice: dict = field(default_factory=dict)

    def __post_init__(self):
        for class_id, value in self.per_class_dice.items():
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"Dice of class {class_id} out of [0, 1]: {value}")


class InformedCrop(NamedTuple):
    volume: object
    mask: LabelMask
    bbox: object
    fallback: bool


def dice(pred, truth, class_id):
    """Dice overlap ``2|P & T| / (|P| + |T|)`` of one class; 1.0 when both are empty.

    :param LabelMask pred: Prediction
    :param LabelMask truth: Ground truth
    :param int class_id: Class to score

    :rtype: float
    """
    if pred.shape != truth.shape:
        raise ShapeMismatchError("Dice mask shapes", truth.shape, pred.shape)
    p = pred.data == class_id
    t = truth.data == class_id
    denominator = int(p.sum()) + int(t.sum())
    if denominator == 0:
        return 1.0
    return 2.0 * int((p & t).sum()) / denominator


def build_seg_model(spec):
    return SegUNet(spec.in_channels, tuple(spec.channels), spec.out_classes)


def _pad_to(tensor, shape):
    """Zero-pad the trailing three axes of ``tensor`` at their end up to ``shape``."""
    pads = []
    for current, target in zip(reversed(tensor.shape[-3:]), reversed(shape)):
        pads += [0, max(target - current, 0)]
    return F.pad(tensor, pads) if any(pads) else tensor


def _divisible(shape, divisor):
    return tuple(int(math.ceil(s / divisor) * divisor) for s in shape)


def _sample_patch(image, labels, patch_size, rng, foreground_ratio):
    shape = image.shape[-3:]
    foreground = np.argwhere(np.isin(labels[0], FOREGROUND_CLASSES))
    if foreground.size and rng.random() < foreground_ratio:
        center = foreground[rng.integers(len(foreground))]
    else:
        center = np.array([rng.integers(s) for s in shape])
    start = [int(np.clip(c - p // 2, 0, s - p)) for c, p, s in zip(center, patch_size, shape)]
    window = tuple(slice(s, s + p) for s, p in zip(start, patch_size))
    return image[(slice(None), *window)], labels[(slice(None), *window)]


def predict_logits(model, volume, spec):
    """Class logits (C, z, y, x) for a volume, padded internally and cropped back."""
    image = torch.from_numpy(np.ascontiguousarray(volume.data, dtype=np.float32))[None, None]
    shape = volume.shape
    padded = _pad_to(image, _divisible(shape, model.divisor))
    model.eval()
    with torch.no_grad():
        if all(s <= p for s, p in zip(padded.shape[-3:], spec.patch_size)):
            logits = model(padded)
        else:
            logits = sliding_window_inference(padded, tuple(spec.patch_size), sw_batch_size=1,
                                              predictor=model, overlap=WINDOW_OVERLAP, mode="constant")
    return logits[0, :, :shape[0], :shape[1], :shape[2]]


def predict_mask(model, volume, spec=SegModelSpec(), truth=None):
    """Segment a volume by per-voxel argmax over the class logits.

    :param SegUNet model: Trained segmentation model
    :param Volume volume: Normalized volume of any shape
    :param SegModelSpec spec: Spec the model was built with
    :param LabelMask truth: Optional ground truth, fills ``per_class_dice``

    :returns: Mask with the input's shape
    :rtype: SegPrediction

    :raises ModelStateError: The model is not trained
    """
    model.check_trained()
    mask = LabelMask(predict_logits(model, volume, spec).argmax(0).numpy())
    scores = {}
    if truth is not None:
        scores = {c: dice(mask, truth, c) for c in (PANCREAS, TUMOUR)}
    return SegPrediction(mask, scores)


def train_segmentation(cases, spec=SegModelSpec(), params=SegTrainParams(), eval_cases=None):
    """Train the segmentation model on random patches with a Dice + cross-entropy loss.

    Half of the patches (``foreground_patch_ratio``) are centered on a foreground voxel.

    :param Sequence[(Volume, LabelMask)] cases: Training volumes with masks
    :param SegModelSpec spec: Architecture
    :param SegTrainParams params: Optimization settings
    :param Sequence[(Volume, LabelMask)] eval_cases: Held-out cases, defaults to the training cases

    :returns: Trained model and mean held-out Dice per foreground class
    :rtype: (SegUNet, dict[int, float])

    :raises DegenerateDatasetError: Pancreas or tumour never appears in the training masks
    """
    cases = list(cases)
    for class_id in (PANCREAS, TUMOUR):
        if not any((mask.data == class_id).any() for _, mask in cases):
            raise DegenerateDatasetError(f"class {class_id} is absent from all training masks")

    patch = tuple(spec.patch_size)
    images, labels = [], []
    for volume, mask in cases:
        images.append(_pad_to(torch.from_numpy(np.ascontiguousarray(volume.data, dtype=np.float32))[None], patch).numpy())
        labels.append(_pad_to(torch.from_numpy(mask.data.astype(np.int64))[None], patch).numpy())

    seed_everything(params.seed)
    model = build_seg_model(spec)
    optimizer = torch.optim.Adam(model.parameters(), lr=params.learning_rate)
    criterion = DiceCELoss(to_onehot_y=True, softmax=True)
    rng = np.random.default_rng(params.seed)
    steps = max(1, math.ceil(len(cases) / params.batch_size))

    for epoch in range(params.epochs):
        model.train()
        order = rng.permutation(len(cases))
        losses = []
        for step in range(steps):
            batch = order[step * params.batch_size:(step + 1) * params.batch_size]
            if len(batch) == 0:
                batch = rng.integers(len(cases), size=params.batch_size)
            pairs = [_sample_patch(images[i], labels[i], patch, rng, params.foreground_patch_ratio) for i in batch]
            x = torch.from_numpy(np.stack([p[0] for p in pairs]))
            y = torch.from_numpy(np.stack([p[1] for p in pairs]))
            optimizer.zero_grad()
            loss = criterion(model(x), y)
            loss.backward()
            optimizer.step()
            losses.append(loss.item())
            logger.debug("seg epoch %d step %d loss %.5f", epoch, step, losses[-1])
        logger.info("Segmentation epoch %d/%d: loss %.5f", epoch + 1, params.epochs, float(np.mean(losses)))

    model.mark_trained()
    scores = {PANCREAS: [], TUMOUR: []}
    for volume, mask in (eval_cases if eval_cases is not None else cases):
        prediction = predict_mask(model, volume, spec, truth=mask)
        for class_id, value in prediction.per_class_dice.items():
            scores[class_id].append(value)
    mean_dice = {c: float(np.mean(v)) for c, v in scores.items()}
    logger.info("Segmentation Dice: pancreas %.4f, tumour %.4f", mean_dice[PANCREAS], mean_dice[TUMOUR])
    return model, mean_dice


def informed_crop(volume, pred, margin=BBOX_MARGIN, center_crop_size=(64, 64),
                  foreground_classes=FOREGROUND_CLASSES, case_id=None):
    """Crop a volume and its predicted mask to the predicted foreground box.

    With an empty prediction, falls back to a center crop of ``center_crop_size`` (full z)
    and an all-background mask, and sets ``fallback``.

    :param Volume volume: Volume the prediction was made on
    :param SegPrediction pred: Segmentation of ``volume``
    :param Union[int, tuple[int, int, int]] margin: Box dilation per axis
    :param tuple[int, int] center_crop_size: Fallback window (y, x)
    :param Iterable[int] foreground_classes: Classes defining the box
    :param str case_id: Used in the fallback warning

    :rtype: InformedCrop
    """
    pred.mask.check_aligned(volume)
    try:
        bbox = bbox_from_mask(pred.mask, foreground_classes, margin)
    except EmptyForegroundError:
        size = tuple(min(c, s) for c, s in zip(center_crop_size, volume.shape[1:]))
        bbox = center_crop_bbox(volume.shape, size)
        logger.warning("Empty segmentation%s, falling back to a %s center crop",
                       f" for {case_id}" if case_id else "", size)
        cropped = crop(volume, bbox)
        return InformedCrop(cropped, LabelMask(np.zeros(cropped.shape, dtype=np.uint8)), bbox, True)
    return InformedCrop(crop(volume, bbox), crop_mask(pred.mask, bbox), bbox, False)


def forward_channels(volume, pred_mask):
    """Stack intensities and the one-hot predicted mask.

    :param Volume volume: Intensities
    :param LabelMask pred_mask: Predicted mask, same shape

    :returns: Array (4, z, y, x): intensities then background/pancreas/tumour channels
    :rtype: numpy.ndarray

    :raises ShapeMismatchError: Shapes differ
    """
    pred_mask.check_aligned(volume)
    channels = one_hot_mask(pred_mask, N_CLASSES).astype(np.float32)
    return np.concatenate([volume.data[np.newaxis].astype(np.float32), channels], axis=0)
