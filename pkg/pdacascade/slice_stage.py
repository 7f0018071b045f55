"""Stage I: per-slice pancreas detection and z cropping.
"""

import logging
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .constants import FOREGROUND_CLASSES, SLICE_THRESHOLD, Z_MARGIN
from .errors import DegenerateDatasetError, EmptyPredictionError
from .geometry import crop, resize_array
from .networks import SliceNet
from .utils import seed_everything
from .volume import BBox3

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class SliceLabelSequence:
    """Binary per-slice labels along z.

    :param numpy.ndarray values: 0/1 per slice
    :param float threshold: Probability cutoff that produced the values
    """

    values: np.ndarray
    threshold: float = SLICE_THRESHOLD

    def __post_init__(self):
        values = np.asarray(self.values).astype(np.uint8).reshape(-1)
        if values.size and values.max() > 1:
            raise ValueError("Slice labels must be 0 or 1")
        if not 0 < self.threshold < 1:
            raise ValueError(f"Threshold must be in (0, 1), got {self.threshold}")
        object.__setattr__(self, "values", values)

    def __len__(self):
        return len(self.values)

    def __eq__(self, other):
        return isinstance(other, SliceLabelSequence) and np.array_equal(self.values, other.values)

    def positives(self):
        return np.flatnonzero(self.values)


@dataclass(frozen=True)
class SliceModelSpec:
    """Architecture of the 2.5-D slice classifier.

    :param tuple[int] encoder_channels: 2-D encoder widths
    :param int hidden: LSTM hidden width
    :param bool bidirectional: Bidirectional LSTM
    :param tuple[int, int] slice_size: Each slice is resampled to (y, x) before the encoder
    :param str encoder_weights: Optional file with pre-trained 2-D encoder weights (a state dict)
    """

    encoder_channels: tuple = (16, 32, 64)
    hidden: int = 64
    bidirectional: bool = False
    slice_size: tuple = (64, 64)
    encoder_weights: str | None = None


@dataclass(frozen=True)
class SliceTrainParams:
    epochs: int = 30
    learning_rate: float = 1e-3
    seed: int = 0


@dataclass(frozen=True)
class SliceReport:
    """Held-out per-slice accuracy before and after gap filling."""

    accuracy_raw: float
    accuracy_filled: float
    n_slices: int


def derive_slice_labels(mask):
    """Slice ``z`` is positive iff it holds at least one pancreas or tumour voxel.

    :param LabelMask mask: Mask

    :rtype: SliceLabelSequence
    """
    return SliceLabelSequence(np.isin(mask.data, FOREGROUND_CLASSES).any(axis=(1, 2)))


def fill_gaps(seq):
    """Set every slice between the first and the last positive slice to positive.

    :param SliceLabelSequence seq: Raw prediction

    :rtype: SliceLabelSequence
    """
    positives = seq.positives()
    values = seq.values.copy()
    if positives.size:
        values[positives[0]:positives[-1] + 1] = 1
    return SliceLabelSequence(values, seq.threshold)


def z_crop(volume, seq, margin=Z_MARGIN):
    """Keep slices from the first to the last positive one, widened by ``margin``.

    :param Volume volume: Volume to crop
    :param SliceLabelSequence seq: Slice labels, same length as the z extent
    :param int margin: Extra slices on both ends (clipped to the volume)

    :returns: Cropped volume and the box used
    :rtype: (Volume, BBox3)

    :raises EmptyPredictionError: No positive slice
    """
    if len(seq) != volume.shape[0]:
        raise ValueError(f"Slice sequence length {len(seq)} differs from z extent {volume.shape[0]}")
    positives = seq.positives()
    if not positives.size:
        raise EmptyPredictionError()
    z, y, x = volume.shape
    lo = max(int(positives[0]) - margin, 0)
    hi = min(int(positives[-1]) + margin, z - 1)
    bbox = BBox3((lo, 0, 0), (hi, y - 1, x - 1))
    return crop(volume, bbox), bbox


def build_slice_model(spec):
    """Instantiate the slice classifier, loading injected encoder weights when configured."""
    model = SliceNet(spec.encoder_channels, spec.hidden, spec.bidirectional)
    if spec.encoder_weights:
        state = torch.load(spec.encoder_weights, map_location="cpu", weights_only=True)
        model.encoder.load_state_dict(state)
        logger.info("Loaded pre-trained slice encoder from %s", spec.encoder_weights)
    return model


def _slice_input(volume, slice_size):
    shape = (volume.shape[0], *slice_size)
    return torch.from_numpy(resize_array(volume.data, shape)).unsqueeze(0)


def _probabilities(model, volume, slice_size):
    model.eval()
    with torch.no_grad():
        return torch.sigmoid(model(_slice_input(volume, slice_size)))[0].numpy()


def predict_slices(model, volume, spec=SliceModelSpec(), threshold=SLICE_THRESHOLD):
    """Classify every slice of a volume.

    :param SliceNet model: Trained slice classifier
    :param Volume volume: Normalized volume
    :param SliceModelSpec spec: Spec the model was built with (for the slice size)
    :param float threshold: Probability cutoff

    :rtype: SliceLabelSequence

    :raises ModelStateError: The model is not trained
    """
    model.check_trained()
    probabilities = _probabilities(model, volume, spec.slice_size)
    return SliceLabelSequence(probabilities >= threshold, threshold)


def evaluate_slice_classifier(model, cases, spec=SliceModelSpec(), threshold=SLICE_THRESHOLD):
    """Per-slice accuracy over ``(volume, mask)`` pairs, before and after gap filling.

    Runs in inference mode whether or not the model was trained.

    :rtype: SliceReport
    """
    raw_hits = filled_hits = total = 0
    for volume, mask in cases:
        truth = derive_slice_labels(mask).values
        raw = SliceLabelSequence(_probabilities(model, volume, spec.slice_size) >= threshold, threshold)
        filled = fill_gaps(raw)
        raw_hits += int((raw.values == truth).sum())
        filled_hits += int((filled.values == truth).sum())
        total += truth.size
    return SliceReport(raw_hits / total, filled_hits / total, total)


def train_slice_classifier(cases, spec=SliceModelSpec(), params=SliceTrainParams(), eval_cases=None):
    """Train the slice classifier with per-slice binary cross-entropy.

    :param Sequence[(Volume, LabelMask)] cases: Training volumes with masks
    :param SliceModelSpec spec: Architecture
    :param SliceTrainParams params: Optimization settings
    :param Sequence[(Volume, LabelMask)] eval_cases: Held-out cases, defaults to the training cases

    :returns: Trained model and its held-out slice accuracy
    :rtype: (SliceNet, SliceReport)

    :raises DegenerateDatasetError: No positive slice in the training data
    """
    cases = list(cases)
    targets = [torch.from_numpy(derive_slice_labels(mask).values.astype(np.float32)).unsqueeze(0) for _, mask in cases]
    if not any(t.any() for t in targets):
        raise DegenerateDatasetError("no slice contains pancreas or tumour")
    inputs = [_slice_input(volume, spec.slice_size) for volume, _ in cases]

    seed_everything(params.seed)
    model = build_slice_model(spec)
    optimizer = torch.optim.Adam(model.parameters(), lr=params.learning_rate)
    criterion = nn.BCEWithLogitsLoss()
    rng = np.random.default_rng(params.seed)

    for epoch in range(params.epochs):
        model.train()
        losses = []
        for i in rng.permutation(len(cases)):
            optimizer.zero_grad()
            loss = criterion(model(inputs[i]), targets[i])
            loss.backward()
            optimizer.step()
            losses.append(loss.item())
            logger.debug("slice epoch %d case %d loss %.5f", epoch, i, losses[-1])
        logger.info("Slice classifier epoch %d/%d: loss %.5f", epoch + 1, params.epochs, float(np.mean(losses)))

    model.mark_trained()
    report = evaluate_slice_classifier(model, eval_cases if eval_cases is not None else cases, spec)
    logger.info("Slice accuracy: %.4f raw, %.4f after gap filling", report.accuracy_raw, report.accuracy_filled)
    return model, report
