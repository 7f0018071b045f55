"""Versioned, checksummed checkpoint files.

File layout::

    MAGIC (8 bytes) | format version (uint32, little endian) | sha256 of payload (32 bytes) | payload

The payload is a ``torch.save`` of a plain dict, read back with ``weights_only=True``.
"""

import hashlib
import io
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import torch

from .constants import CHECKPOINT_MAGIC, CHECKPOINT_VERSION
from .errors import CheckpointIntegrityError, CheckpointVersionError
from .utils import to_plain

logger = logging.getLogger(__name__)

_HEADER = struct.Struct("<8sI32s")


@dataclass
class Checkpoint:
    """Saved state of one stage.

    :param str stage: Stage tag (``slice``, ``seg`` or ``cls``)
    :param dict[str, torch.Tensor] tensors: Full model state
    :param dict config: Snapshot of the configuration that produced the model
    :param int seed: Training seed
    :param dict[str, torch.Tensor] encoder: Transferable encoder sub-state (segmentation only)
    :param dict extra: Free-form metadata (metrics, transfer manifest, ...)
    """

    stage: str
    tensors: dict
    config: dict = field(default_factory=dict)
    seed: int = 0
    encoder: dict | None = None
    extra: dict = field(default_factory=dict)
    version: int = CHECKPOINT_VERSION


def _detach(state):
    return {k: v.detach().cpu().clone() for k, v in state.items()}


def from_model(model, stage, config, seed, encoder=None, extra=None):
    """Build a :class:`Checkpoint` from a torch module.

    :param torch.nn.Module model: Model to save
    :param str stage: Stage tag
    :param Any config: Configuration snapshot (dataclass or dict)
    :param int seed: Training seed
    :param torch.nn.Module encoder: Sub-module saved as the encoder sub-state
    :param dict extra: Metadata
    """
    return Checkpoint(
        stage=stage,
        tensors=_detach(model.state_dict()),
        config=to_plain(config),
        seed=int(seed),
        encoder=_detach(encoder.state_dict()) if encoder is not None else None,
        extra=to_plain(extra or {}),
    )


def save_checkpoint(checkpoint, path):
    """Write a checkpoint.

    :param Checkpoint checkpoint: State to save
    :param Union[str, Path] path: Output file, parent directories are created
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    buffer = io.BytesIO()
    torch.save({
        "stage": checkpoint.stage,
        "tensors": checkpoint.tensors,
        "config": checkpoint.config,
        "seed": checkpoint.seed,
        "encoder": checkpoint.encoder,
        "extra": checkpoint.extra,
    }, buffer)
    payload = buffer.getvalue()
    header = _HEADER.pack(CHECKPOINT_MAGIC, checkpoint.version, hashlib.sha256(payload).digest())
    path.write_bytes(header + payload)
    logger.info("Saved %s checkpoint to %s", checkpoint.stage, path)


def load_checkpoint(path):
    """Read a checkpoint written by :func:`save_checkpoint`.

    :param Union[str, Path] path: Checkpoint file

    :rtype: Checkpoint

    :raises CheckpointIntegrityError: Bad magic, truncated file or checksum mismatch
    :raises CheckpointVersionError: Unsupported format version
    """
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise CheckpointIntegrityError(path, "file shorter than header")
    magic, version, digest = _HEADER.unpack_from(raw)
    if magic != CHECKPOINT_MAGIC:
        raise CheckpointIntegrityError(path, "not a checkpoint file")
    if version != CHECKPOINT_VERSION:
        raise CheckpointVersionError(CHECKPOINT_VERSION, version)
    payload = raw[_HEADER.size:]
    if hashlib.sha256(payload).digest() != digest:
        raise CheckpointIntegrityError(path, "checksum mismatch")

    state = torch.load(io.BytesIO(payload), map_location="cpu", weights_only=True)
    return Checkpoint(
        stage=state["stage"],
        tensors=state["tensors"],
        config=state["config"],
        seed=state["seed"],
        encoder=state["encoder"],
        extra=state["extra"],
        version=version,
    )
