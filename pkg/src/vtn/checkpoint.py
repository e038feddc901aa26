"""Model checkpoints: the record format plus a model config snapshot."""

from __future__ import annotations

from pathlib import Path
from typing import Optional

import numpy as np

from . import records
from .config import ModelConfig, model_config_from_dict, model_config_to_dict
from .model import VTN

KIND = "vtn-checkpoint"


class CheckpointError(records.RecordError):
    pass


def checkpoint_bytes(model: VTN) -> bytes:
    meta = {"kind": KIND, "model": model_config_to_dict(model.cfg),
            "dtype": np.dtype(model.dtype).name}
    return records.encode(model.state_dict(), meta)


def save_checkpoint(model: VTN, path) -> None:
    Path(path).write_bytes(checkpoint_bytes(model))


def _decode(blob: bytes) -> tuple[dict, ModelConfig, np.dtype]:
    tensors, meta = records.decode(blob)
    if meta.get("kind") != KIND or "model" not in meta:
        raise CheckpointError("record file is not a model checkpoint")
    return tensors, model_config_from_dict(meta["model"]), np.dtype(meta.get("dtype", "float32"))


def load_checkpoint(path, cfg: Optional[ModelConfig] = None) -> VTN:
    """Rebuild the saved model.

    With ``cfg`` the tensors are loaded into a model built from ``cfg``
    instead of the stored snapshot; a shape disagreement raises a
    ``ValueError`` naming the tensor. Nothing is returned on failure.
    """
    tensors, stored, dtype = _decode(Path(path).read_bytes())
    model = VTN(cfg or stored, dtype=dtype.type)
    model.load_state_dict(tensors)
    model.eval()
    return model


def load_into(model: VTN, path) -> VTN:
    tensors, _, _ = _decode(Path(path).read_bytes())
    model.load_state_dict(tensors)
    return model
