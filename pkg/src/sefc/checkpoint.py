"""Checkpoints: a zip holding a JSON manifest and one double-precision matrix file per parameter."""

from __future__ import annotations

import json
import zipfile
from pathlib import Path

import numpy as np

from . import matrix_io
from .config import parse_config, to_text

FORMAT = "sefc-checkpoint"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, model, extra=None):
    """Write ``model`` (config, seed, every parameter) to ``path``."""
    state = model.state_dict()
    manifest = {
        "format": FORMAT,
        "version": VERSION,
        "seed": int(model.seed),
        "trained": bool(model.trained),
        "dtype": str(model.dtype),
        "config": to_text(model.cfg),
        "shapes": {name: list(v.shape) for name, v in state.items()},
        "extra": extra or {},
    }
    path = Path(path)
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_DEFLATED) as zf:
        zf.writestr("manifest.json", json.dumps(manifest, indent=2, sort_keys=True))
        for name, value in state.items():
            flat = value.reshape(1, -1) if value.ndim < 2 else value.reshape(value.shape[0], -1)
            zf.writestr(f"params/{name}.selm", matrix_io.encode_matrix(flat, version=2))
    return path


def read_manifest(path):
    try:
        with zipfile.ZipFile(path) as zf:
            manifest = json.loads(zf.read("manifest.json"))
    except (zipfile.BadZipFile, KeyError, json.JSONDecodeError, FileNotFoundError) as exc:
        raise CheckpointError(f"{path}: not a readable checkpoint ({exc})") from None
    if manifest.get("format") != FORMAT or manifest.get("version") != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint format {manifest.get('format')!r} v{manifest.get('version')}")
    return manifest


def load_checkpoint(path):
    """Rebuild the model from the stored config and seed, then load every parameter bit-exactly."""
    from .model import SeLLM

    manifest = read_manifest(path)
    cfg = parse_config(manifest["config"]).validate()
    model = SeLLM(cfg, seed=manifest["seed"])
    state = {}
    with zipfile.ZipFile(path) as zf:
        for name, shape in manifest["shapes"].items():
            try:
                blob = zf.read(f"params/{name}.selm")
            except KeyError:
                raise CheckpointError(f"{path}: parameter {name} missing") from None
            state[name] = matrix_io.decode_matrix(blob).reshape(shape)
    model.load_state_dict(state)
    model.astype(np.dtype(manifest["dtype"]))
    model.trained = manifest["trained"]
    return model, manifest
