"""
Checkpoint utilities for Ord2Seq.
Saves and loads model parameters as a versioned JSON map
name -> {shape, row-major values}, plus content hashes for run manifests.
"""

import hashlib
import json
import os
import tempfile
from pathlib import Path
from typing import Dict, Optional, Union

import torch

from utils.errors import CheckpointFormatError
from utils.numerics import DTYPE

CHECKPOINT_FORMAT = "ord2seq-ckpt-v1"

PathLike = Union[str, Path]


def compute_file_hash(file_path: PathLike) -> str:
    """Compute SHA-256 hash of file contents (8KB chunked reads)."""
    sha256 = hashlib.sha256()
    with open(file_path, "rb") as f:
        for chunk in iter(lambda: f.read(8192), b""):
            sha256.update(chunk)
    return sha256.hexdigest()


def atomic_write_text(path: PathLike, text: str) -> str:
    """Write text to path via a temp file in the same directory and os.replace."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return str(path)


def write_json(path: PathLike, payload: Dict, indent: Optional[int] = 2) -> str:
    return atomic_write_text(path, json.dumps(payload, indent=indent, default=str) + "\n")


def state_dict_to_payload(state_dict: Dict[str, torch.Tensor]) -> Dict[str, Dict]:
    return {
        name: {
            "shape": list(t.shape),
            "values": t.detach().to(DTYPE).reshape(-1).tolist(),
        }
        for name, t in state_dict.items()
    }


def payload_to_state_dict(params: Dict[str, Dict]) -> Dict[str, torch.Tensor]:
    state = {}
    for name, entry in params.items():
        values = torch.tensor(entry["values"], dtype=DTYPE)
        shape = tuple(entry["shape"])
        if values.numel() != int(torch.Size(shape).numel()):
            raise CheckpointFormatError(
                f"parameter {name}: {values.numel()} values do not fill shape {shape}"
            )
        state[name] = values.reshape(shape)
    return state


def save_checkpoint(
    path: PathLike,
    model: torch.nn.Module,
    config: Dict,
    extra: Optional[Dict] = None,
) -> str:
    """
    Save model parameters with the config needed to rebuild the model.

    Args:
        path: Target JSON file
        model: Module whose state_dict is saved
        config: Serializable model/training config
        extra: Optional metadata (metrics, tree document, ...)

    Returns:
        Path written, as string
    """
    payload = {
        "format": CHECKPOINT_FORMAT,
        "config": config,
        "extra": extra or {},
        "params": state_dict_to_payload(model.state_dict()),
    }
    # float repr round-trips float64 exactly, so no indentation to keep files small
    return atomic_write_text(path, json.dumps(payload) + "\n")


def load_checkpoint(path: PathLike) -> Dict:
    """
    Load a checkpoint written by save_checkpoint.

    Returns:
        Dict with: format, config, extra, state_dict
    """
    with open(path, "r", encoding="utf-8") as f:
        payload = json.load(f)

    header = payload.get("format")
    if header != CHECKPOINT_FORMAT:
        raise CheckpointFormatError(
            f"{path}: expected format {CHECKPOINT_FORMAT!r}, found {header!r}"
        )
    return {
        "format": header,
        "config": payload.get("config", {}),
        "extra": payload.get("extra", {}),
        "state_dict": payload_to_state_dict(payload["params"]),
    }
