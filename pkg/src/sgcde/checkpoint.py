"""JSON checkpoints for :class:`~sgcde.model.CdeModel`."""

from __future__ import annotations

import json
import math
from dataclasses import asdict
from pathlib import Path
from typing import Optional

import torch

from .errors import CheckpointError, IoError
from .model import CdeModel, ModelConfig

FORMAT_VERSION = 1


def to_dict(model: CdeModel, extra: Optional[dict] = None) -> dict:
    params = {}
    shapes = {}
    for name, p in model.state_dict().items():
        params[name] = p.detach().double().reshape(-1).tolist()
        shapes[name] = list(p.shape)
    return {
        "format_version": FORMAT_VERSION,
        "model_config": asdict(model.cfg),
        "shapes": shapes,
        "params": params,
        "sg_raw_weights": model.sg_raw.detach().double().tolist(),
        "config": extra or {},
    }


def save(model: CdeModel, path, extra: Optional[dict] = None) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(to_dict(model, extra)))
    except OSError as exc:
        raise IoError(f"cannot write checkpoint {path}: {exc}") from exc
    return path


def from_dict(d: dict) -> CdeModel:
    if d.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format {d.get('format_version')!r}")
    try:
        cfg = ModelConfig(**d["model_config"])
        model = CdeModel(cfg)
        state = {}
        for name, ref in model.state_dict().items():
            flat = d["params"][name]
            shape = d["shapes"][name]
            if list(ref.shape) != list(shape) or len(flat) != ref.numel():
                raise CheckpointError(f"shape mismatch for {name}: {shape} vs {list(ref.shape)}")
            if not all(math.isfinite(v) for v in flat):
                raise CheckpointError(f"non-finite values in {name}")
            state[name] = torch.tensor(flat, dtype=ref.dtype).reshape(ref.shape)
    except (KeyError, TypeError) as exc:
        raise CheckpointError(f"malformed checkpoint: {exc}") from exc
    model.load_state_dict(state)
    return model


def load(path) -> CdeModel:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise IoError(f"cannot read checkpoint {path}: {exc}") from exc
    try:
        # json accepts NaN/Infinity literals, so corruption surfaces in from_dict
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"checkpoint {path} is not valid JSON: {exc}") from exc
    return from_dict(d)
