"""Utilities functions module.
"""

import dataclasses
import hashlib
import json
import logging
import random
from pathlib import Path

import numpy as np
import torch

DEBUG_LEVELS = {
    0: logging.WARNING,
    1: logging.INFO,
    2: logging.DEBUG,
}


def configure_logging(debug=0):
    """Configure the root logger from a :doc:`debug level </debug_levels>`.

    Levels above 2 are treated as 2.

    :param int debug: Debug level (0, 1 or 2)
    """
    level = DEBUG_LEVELS[min(max(debug, 0), 2)]
    logging.basicConfig(
        level=level,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        force=True,
    )


def seed_everything(seed):
    """Seed python, numpy and torch, and ask torch for deterministic kernels.

    :param int seed: Random seed
    """
    random.seed(seed)
    np.random.seed(seed % 2**32)
    torch.manual_seed(seed)
    torch.use_deterministic_algorithms(True, warn_only=True)


def to_plain(obj):
    """Convert dataclasses, paths, tuples and numpy scalars into JSON-compatible values.

    :param Any obj: Object to convert

    :returns: Nested dicts, lists, strings and numbers
    :rtype: Any
    """
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: to_plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, dict):
        return {str(k): to_plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_plain(v) for v in obj]
    if isinstance(obj, Path):
        return str(obj)
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def config_hash(obj):
    """Hash a configuration slice.

    The hash is taken over the canonical JSON form (sorted keys), so equal configurations
    always give the same digest.

    :param Any obj: Configuration object (dataclass, dict, ...)

    :returns: Hexadecimal sha256 digest, first 16 characters
    :rtype: str
    """
    canonical = json.dumps(to_plain(obj), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


def count_parameters(model):
    """Count the trainable parameters of a torch module.

    :param torch.nn.Module model: Model

    :rtype: int
    """
    return sum(p.numel() for p in model.parameters() if p.requires_grad)


def as_triple(value):
    """Broadcast an int to a (z, y, x) triple.

    :param Union[int, Sequence[int]] value: Scalar or 3 values
    :rtype: tuple[int, int, int]
    """
    if isinstance(value, (int, np.integer)):
        return (int(value),) * 3
    value = tuple(int(v) for v in value)
    if len(value) != 3:
        raise ValueError(f"Expected 3 values for (z, y, x), got {value}")
    return value
