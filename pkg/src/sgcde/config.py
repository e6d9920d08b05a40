"""Experiment configuration: TOML file, environment and JSON overrides."""

from __future__ import annotations

import dataclasses
import json
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Optional, Sequence

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .dynamics import DatasetSpec, Scenario
from .errors import ConfigError
from .evaluate import EvalSettings
from .model import ModelConfig
from .training import TrainConfig

ENV_PREFIX = "SGCDE_"
SECTIONS = {"data": DatasetSpec, "model": ModelConfig, "train": TrainConfig, "eval": EvalSettings}


@dataclass
class ExperimentConfig:
    data: DatasetSpec = field(default_factory=DatasetSpec)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalSettings = field(default_factory=EvalSettings)
    seed: int = 0
    out: str = "runs"
    baselines: tuple = ("cv", "sg", "conservational")

    def to_dict(self) -> dict:
        d = {}
        for name in SECTIONS:
            sec = dataclasses.asdict(getattr(self, name))
            d[name] = {k: (v.value if isinstance(v, Scenario) else list(v) if isinstance(v, tuple) else v) for k, v in sec.items()}
        d.update(seed=self.seed, out=self.out, baselines=list(self.baselines))
        return d


def _coerce(cls, values: Mapping[str, Any], section: str):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(values) - names
    if unknown:
        raise ConfigError(f"unknown keys in [{section}]: {sorted(unknown)}")
    try:
        kw = {k: tuple(v) if isinstance(v, list) else v for k, v in values.items()}
        return cls(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid [{section}] settings: {exc}") from exc


def merge(base: dict, updates: Mapping[str, Any]) -> dict:
    out = dict(base)
    for k, v in updates.items():
        if isinstance(v, Mapping) and isinstance(out.get(k), Mapping):
            out[k] = merge(out[k], v)
        else:
            out[k] = v
    return out


def parse_override(text: str) -> dict:
    """``section.key=<json>`` (bare strings are accepted) to a nested dict."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form key=value")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    node: dict = {}
    cur = node
    parts = key.strip().split(".")
    for p in parts[:-1]:
        cur = cur.setdefault(p, {})
    cur[parts[-1]] = value
    return node


def env_overrides(environ: Optional[Mapping[str, str]] = None) -> dict:
    """``SGCDE_TRAIN__STEPS=50`` sets ``train.steps``; ``SGCDE_SEED=3`` sets ``seed``."""
    environ = os.environ if environ is None else environ
    out: dict = {}
    for k, v in environ.items():
        if not k.startswith(ENV_PREFIX):
            continue
        key = k[len(ENV_PREFIX):].lower().replace("__", ".")
        out = merge(out, parse_override(f"{key}={v}"))
    return out


def load_config(
    path: Optional[str] = None,
    overrides: Sequence[str] = (),
    environ: Optional[Mapping[str, str]] = None,
    cli: Optional[dict] = None,
) -> ExperimentConfig:
    """Defaults < TOML file < environment < ``--set`` overrides < explicit CLI flags."""
    raw: dict = {}
    if path is not None:
        try:
            with open(path, "rb") as fh:
                raw = tomllib.load(fh)
        except FileNotFoundError as exc:
            raise ConfigError(f"config file {path} not found") from exc
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from exc
    raw = merge(raw, env_overrides(environ))
    for o in overrides:
        raw = merge(raw, parse_override(o))
    raw = merge(raw, cli or {})
    unknown = set(raw) - set(SECTIONS) - {"seed", "out", "baselines"}
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    seed = int(raw.get("seed", 0))
    sections = {}
    for name, cls in SECTIONS.items():
        values = dict(raw.get(name, {}))
        if "seed" in {f.name for f in dataclasses.fields(cls)}:
            values.setdefault("seed", seed)
        sections[name] = _coerce(cls, values, name)
    return ExperimentConfig(
        **sections,
        seed=seed,
        out=str(raw.get("out", "runs")),
        baselines=tuple(raw.get("baselines", ("cv", "sg", "conservational"))),
    )


def write_echo(cfg: ExperimentConfig, path: Path, extra: Optional[dict] = None) -> Path:
    d = cfg.to_dict()
    if extra:
        d["command"] = extra
    path.write_text(json.dumps(d, indent=2, sort_keys=True) + "\n")
    return path
