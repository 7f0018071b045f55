"""Stage III: response classifier, encoder transfer and triplet-then-cross-entropy training.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from .constants import TRIPLET_MARGIN, TRIPLETS_PER_STEP
from .errors import DegenerateDatasetError, SamplingError, ShapeMismatchError, TransferError
from .networks import BLOCK_EXPANSION, ResNetBackbone, ResponseClassifier
from .seg_stage import SegModelSpec, build_seg_model
from .utils import seed_everything

logger = logging.getLogger(__name__)

RESNET = "resnet"
TRANSFERRED = "transferred"


@dataclass(frozen=True)
class ClassifierSpec:
    """Classifier architecture.

    :param str backbone: ``"resnet"`` (standalone) or ``"transferred"`` (segmentation encoder)
    :param int in_channels: 1 (intensities) or 4 (intensities + forwarded one-hot mask)
    :param str block: ResNet block, ``"basic"`` or ``"bottleneck"``, standalone backbone only
    :param tuple[int] layers: Blocks in each of the four ResNet stages, standalone backbone only
    :param tuple[int] block_inplanes: Widths of the four ResNet stages, standalone backbone only
    :param str embed_point: Where embeddings are read; only ``"pool"`` (after global pooling, before the head)
    """

    backbone: str = RESNET
    in_channels: int = 1
    block: str = "basic"
    layers: tuple = (1, 1, 1, 1)
    block_inplanes: tuple = (16, 32, 64, 128)
    embed_point: str = "pool"

    def __post_init__(self):
        if self.backbone not in (RESNET, TRANSFERRED):
            raise ValueError(f"Unknown backbone '{self.backbone}'")
        if self.in_channels not in (1, 4):
            raise ValueError(f"in_channels must be 1 or 4, got {self.in_channels}")
        if self.block not in BLOCK_EXPANSION:
            raise ValueError(f"Unknown ResNet block '{self.block}', expected one of {sorted(BLOCK_EXPANSION)}")
        if len(self.layers) != 4 or len(self.block_inplanes) != 4 or min(*self.layers, *self.block_inplanes) < 1:
            raise ValueError(f"ResNet needs 4 positive layer counts and widths, got {self.layers}, {self.block_inplanes}")
        if self.embed_point != "pool":
            raise ValueError(f"Unknown embedding point '{self.embed_point}'")


@dataclass(frozen=True)
class TripletConfig:
    """Two-phase training schedule.

    :param float margin: Hinge margin (> 0)
    :param str distance: ``"squared_l2"`` or ``"l2"``
    :param int epochs_stage_a: Triplet-only epochs (0 disables the phase)
    :param int epochs_stage_b: Cross-entropy epochs
    :param int triplets_per_step: Independent triplets per optimizer step
    """

    margin: float = TRIPLET_MARGIN
    distance: str = "squared_l2"
    epochs_stage_a: int = 10
    epochs_stage_b: int = 20
    triplets_per_step: int = TRIPLETS_PER_STEP

    def __post_init__(self):
        if self.margin <= 0:
            raise ValueError(f"Triplet margin must be > 0, got {self.margin}")
        if self.distance not in ("squared_l2", "l2"):
            raise ValueError(f"Unknown distance '{self.distance}'")
        if self.epochs_stage_a < 0 or self.epochs_stage_b < 0:
            raise ValueError("Epoch counts must be >= 0")


@dataclass(frozen=True)
class ClsTrainParams:
    learning_rate: float = 1e-3
    batch_size: int = 4
    weight_decay: float = 1e-5
    seed: int = 0


@dataclass(frozen=True, eq=False)
class ClassificationSample:
    """A preprocessed classifier input (C, z, y, x) with its label."""

    case_id: str
    inputs: np.ndarray
    response_label: int


@dataclass
class TransferManifest:
    transferred: list = field(default_factory=list)
    fresh: list = field(default_factory=list)


@dataclass
class TrainingHistory:
    stage_a: list = field(default_factory=list)
    stage_b: list = field(default_factory=list)


def build_classifier(spec, seg_spec=None):
    """Instantiate a classifier. A transferred backbone needs the segmentation spec."""
    if spec.backbone == RESNET:
        backbone = ResNetBackbone(spec.in_channels, spec.block, tuple(spec.layers), tuple(spec.block_inplanes))
    else:
        backbone = build_seg_model(seg_spec or SegModelSpec()).encoder
    return ResponseClassifier(backbone, spec.in_channels)


def seg_spec_from_checkpoint(checkpoint):
    snapshot = dict(checkpoint.config.get("seg_spec", {}))
    for key in ("channels", "patch_size"):
        if key in snapshot:
            snapshot[key] = tuple(snapshot[key])
    return SegModelSpec(**snapshot)


def transfer_encoder(seg_checkpoint, spec=ClassifierSpec(backbone=TRANSFERRED)):
    """Initialize a classifier whose backbone is the segmentation encoder.

    :param Checkpoint seg_checkpoint: Segmentation checkpoint with an encoder sub-state
    :param ClassifierSpec spec: Classifier spec (its backbone is forced to ``"transferred"``)

    :returns: Classifier and the list of transferred and freshly initialized tensors
    :rtype: (ResponseClassifier, TransferManifest)

    :raises TransferError: Missing encoder sub-state, or a tensor missing or with another shape
    """
    if not seg_checkpoint.encoder:
        raise TransferError("<encoder>", "checkpoint has no encoder sub-state")
    model = build_classifier(ClassifierSpec(TRANSFERRED, spec.in_channels), seg_spec_from_checkpoint(seg_checkpoint))

    target = model.backbone.state_dict()
    source = seg_checkpoint.encoder
    for name, tensor in target.items():
        if name not in source:
            raise TransferError(name, "missing from checkpoint")
        if tuple(source[name].shape) != tuple(tensor.shape):
            raise TransferError(name, f"checkpoint shape {tuple(source[name].shape)}, classifier shape {tuple(tensor.shape)}")
    unexpected = sorted(set(source) - set(target))
    if unexpected:
        raise TransferError(unexpected[0], "not part of the classifier encoder")

    model.backbone.load_state_dict(source, strict=True)
    manifest = TransferManifest(
        transferred=[f"backbone.{name}" for name in target],
        fresh=[name for name in model.state_dict() if not name.startswith("backbone.")],
    )
    logger.info("Transferred %d encoder tensors, %d fresh tensors", len(manifest.transferred), len(manifest.fresh))
    return model, manifest


def export_encoder(model):
    """Copy of the classifier's backbone tensors, keyed like the segmentation encoder."""
    return {name: tensor.detach().clone() for name, tensor in model.backbone.state_dict().items()}


def sample_triplet(cases, seed):
    """Draw (anchor, positive, negative).

    The anchor is uniform over cases whose class has at least two members, the positive is
    uniform over the other members of that class and the negative uniform over the other class.

    :param Sequence cases: Items with ``case_id`` and ``response_label``
    :param Union[int, numpy.random.Generator] seed: Seed or generator

    :rtype: tuple

    :raises SamplingError: No class can supply an anchor and a positive, or a class is empty
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    groups = {0: [], 1: []}
    for case in cases:
        groups[int(case.response_label)].append(case)
    if not groups[0] or not groups[1]:
        raise SamplingError("both classes need at least one case")
    anchors = [c for label, members in groups.items() if len(members) >= 2 for c in members]
    if not anchors:
        raise SamplingError("no class has two cases to form an anchor/positive pair")

    anchor = anchors[rng.integers(len(anchors))]
    label = int(anchor.response_label)
    positives = [c for c in groups[label] if c.case_id != anchor.case_id]
    positive = positives[rng.integers(len(positives))]
    negative = groups[1 - label][rng.integers(len(groups[1 - label]))]
    return anchor, positive, negative


def triplet_loss(za, zp, zn, cfg=TripletConfig()):
    """Hinge triplet loss ``max(0, d(a, p) - d(a, n) + margin)``.

    Accepts single embeddings (D,) or batches (B, D); batches are averaged.

    :param torch.Tensor za: Anchor embedding(s)
    :param torch.Tensor zp: Positive embedding(s)
    :param torch.Tensor zn: Negative embedding(s)
    :param TripletConfig cfg: Margin and distance

    :rtype: torch.Tensor

    :raises ShapeMismatchError: The embeddings differ in shape
    """
    za, zp, zn = (torch.as_tensor(z) for z in (za, zp, zn))
    if za.shape != zp.shape or za.shape != zn.shape:
        raise ShapeMismatchError("Triplet embedding shapes", tuple(za.shape), (tuple(zp.shape), tuple(zn.shape)))
    d_ap = ((za - zp) ** 2).sum(-1)
    d_an = ((za - zn) ** 2).sum(-1)
    if cfg.distance == "l2":
        d_ap, d_an = d_ap.sqrt(), d_an.sqrt()
    return torch.clamp(d_ap - d_an + cfg.margin, min=0.0).mean()


def _as_channels(inputs):
    inputs = np.asarray(inputs, dtype=np.float32)
    return inputs[np.newaxis] if inputs.ndim == 3 else inputs


def _check_samples(samples, spec):
    shapes = set()
    for sample in samples:
        inputs = _as_channels(sample.inputs)
        if inputs.shape[0] != spec.in_channels:
            raise ShapeMismatchError(f"Input channels of {sample.case_id}", spec.in_channels, inputs.shape[0])
        shapes.add(inputs.shape)
    if len(shapes) > 1:
        raise ShapeMismatchError("Classifier input shapes", "one common shape", sorted(shapes))


def _stack(samples):
    return torch.from_numpy(np.stack([_as_channels(s.inputs) for s in samples]))


def _run_triplet_phase(model, samples, cfg, params, rng, history):
    parameters = list(model.backbone.parameters())
    if model.adapter is not None:
        parameters += list(model.adapter.parameters())
    optimizer = torch.optim.Adam(parameters, lr=params.learning_rate, weight_decay=params.weight_decay)
    steps = max(1, math.ceil(len(samples) / cfg.triplets_per_step))
    for epoch in range(cfg.epochs_stage_a):
        model.train()
        losses = []
        for _ in range(steps):
            triplets = [sample_triplet(samples, rng) for _ in range(cfg.triplets_per_step)]
            za = model.embed(_stack([t[0] for t in triplets]))
            zp = model.embed(_stack([t[1] for t in triplets]))
            zn = model.embed(_stack([t[2] for t in triplets]))
            optimizer.zero_grad()
            loss = triplet_loss(za, zp, zn, cfg)
            loss.backward()
            optimizer.step()
            losses.append(loss.item())
            logger.debug("triplet epoch %d step %d loss %.5f", epoch, len(losses), losses[-1])
        history.stage_a.append(float(np.mean(losses)))
        logger.info("Triplet phase epoch %d/%d: loss %.5f", epoch + 1, cfg.epochs_stage_a, history.stage_a[-1])


def _run_cross_entropy_phase(model, samples, cfg, params, rng, history):
    labels = np.array([s.response_label for s in samples])
    n_pos = int(labels.sum())
    pos_weight = torch.tensor((len(labels) - n_pos) / n_pos, dtype=torch.float32)
    criterion = nn.BCEWithLogitsLoss(pos_weight=pos_weight)
    optimizer = torch.optim.Adam(model.parameters(), lr=params.learning_rate, weight_decay=params.weight_decay)
    for epoch in range(cfg.epochs_stage_b):
        model.train()
        order = rng.permutation(len(samples))
        losses = []
        for start in range(0, len(order), params.batch_size):
            batch = [samples[i] for i in order[start:start + params.batch_size]]
            target = torch.tensor([s.response_label for s in batch], dtype=torch.float32)
            optimizer.zero_grad()
            loss = criterion(model(_stack(batch)), target)
            loss.backward()
            optimizer.step()
            losses.append(loss.item())
            logger.debug("cross-entropy epoch %d step %d loss %.5f", epoch, len(losses), losses[-1])
        history.stage_b.append(float(np.mean(losses)))
        logger.info("Cross-entropy phase epoch %d/%d: loss %.5f", epoch + 1, cfg.epochs_stage_b, history.stage_b[-1])


def train_two_stage(samples, spec=ClassifierSpec(), cfg=TripletConfig(), params=ClsTrainParams(), model=None):
    """Train a classifier: triplet loss on the embeddings first, then binary cross-entropy.

    The head is re-initialized when the cross-entropy phase starts after a triplet phase.
    With ``cfg.epochs_stage_a == 0`` this is plain cross-entropy training. Positive cases
    are weighted by ``N_neg / N_pos``.

    :param Sequence[ClassificationSample] samples: Training inputs, one common shape
    :param ClassifierSpec spec: Architecture, used when ``model`` is not given
    :param TripletConfig cfg: Phase schedule and triplet settings
    :param ClsTrainParams params: Optimization settings
    :param ResponseClassifier model: Pre-initialized model (e.g. from :func:`transfer_encoder`)

    :returns: Trained model and per-epoch losses of both phases
    :rtype: (ResponseClassifier, TrainingHistory)

    :raises DegenerateDatasetError: One class is missing
    :raises SamplingError: Triplets cannot be formed
    """
    samples = list(samples)
    if len({s.response_label for s in samples}) < 2:
        raise DegenerateDatasetError("both response classes are needed")
    _check_samples(samples, spec if model is None else ClassifierSpec(in_channels=model.in_channels))

    seed_everything(params.seed)
    rng = np.random.default_rng(params.seed)
    model = model if model is not None else build_classifier(spec)
    history = TrainingHistory()

    if cfg.epochs_stage_a > 0:
        _run_triplet_phase(model, samples, cfg, params, rng, history)
        model.reset_head()
    _run_cross_entropy_phase(model, samples, cfg, params, rng, history)
    model.mark_trained()
    return model, history


def predict_response(model, inputs):
    """Probability of progressive disease for one input.

    :param ResponseClassifier model: Trained classifier
    :param numpy.ndarray inputs: (C, z, y, x), or (z, y, x) for a single channel

    :returns: Sigmoid of the logit
    :rtype: float

    :raises ShapeMismatchError: Channel count differs from the model's
    :raises ModelStateError: The model is not trained
    """
    model.check_trained()
    inputs = _as_channels(inputs)
    if inputs.shape[0] != model.in_channels:
        raise ShapeMismatchError("Input channels", model.in_channels, inputs.shape[0])
    model.eval()
    with torch.no_grad():
        return float(torch.sigmoid(model(torch.from_numpy(inputs)[None]))[0])


def embed_samples(model, samples):
    """Embeddings (N, D) of samples in inference mode."""
    model.eval()
    with torch.no_grad():
        return np.concatenate([model.embed(_stack([s])).numpy() for s in samples])
