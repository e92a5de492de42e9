"""Run configuration: one JSON key/value tree covering every sub-config.

Two profiles exist.  ``full`` carries the full-scale hyperparameters;
``desk`` shrinks sizes so a full run takes seconds on one CPU core.
Unknown keys anywhere in the tree are rejected.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from .inference import MixConfig
from .model import EncoderConfig
from .sampling import ClipSpec
from .synthdata import SOURCE_DOMAIN, TARGET_DOMAIN, DomainConfig, GenConfig
from .trainer import DESK_TRAIN, FULL_TRAIN, TrainConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    gen: GenConfig = GenConfig()
    source_domain: DomainConfig = SOURCE_DOMAIN
    target_domain: DomainConfig = TARGET_DOMAIN
    encoder: EncoderConfig = EncoderConfig()
    train: TrainConfig = DESK_TRAIN
    mix: MixConfig = MixConfig()
    n_source: int = 120
    n_target: int = 60
    M: int = 10

    @property
    def clips(self) -> ClipSpec:
        return self.train.clip_spec

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


PROFILES = {
    "desk": RunConfig(),
    "full": RunConfig(
        gen=GenConfig(L=144),
        encoder=EncoderConfig(d=256, hidden=512, l=12),
        train=FULL_TRAIN,
    ),
}


def _build(cls, data: Any, path: str):
    if not dataclasses.is_dataclass(cls):
        return data
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'}: expected a table, got {type(data).__name__}")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(fields))
    if unknown:
        raise ConfigError(f"unknown config key(s) at {path or 'top level'}: {', '.join(unknown)}")
    return data


def _merge(base, data: dict, path: str = ""):
    """Overlay ``data`` onto the dataclass instance ``base``, recursing into sub-configs."""
    _build(type(base), data, path)
    updates = {}
    for k, v in data.items():
        cur = getattr(base, k)
        sub = f"{path}.{k}" if path else k
        if dataclasses.is_dataclass(cur):
            updates[k] = _merge(cur, v, sub)
        else:
            updates[k] = v
    try:
        return dataclasses.replace(base, **updates)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path or 'config'}: {exc}") from exc


def load_config(path: str | Path | None = None, profile: str = "desk", overrides: dict | None = None) -> RunConfig:
    if profile not in PROFILES:
        raise ConfigError(f"unknown profile {profile!r}; choose from {sorted(PROFILES)}")
    cfg = PROFILES[profile]
    if path is not None:
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        cfg = _merge(cfg, data)
    if overrides:
        cfg = _merge(cfg, overrides)
    return cfg


def config_from_dict(data: dict) -> RunConfig:
    return _merge(RunConfig(), data)
