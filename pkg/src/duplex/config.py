"""Global configuration: one JSON document, every field overridable."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, is_dataclass, replace
from pathlib import Path
from typing import Any, Optional

from .backchannel import INVENTORY
from .features import FbankConfig
from .neural.train import DEFAULT_LR, TrainConfig
from .simulator.corpus import ScenarioConfig
from .turnpolicy import ConfigError, EngineConfig


@dataclass
class TaskConfig:
    """Model and training hyperparameters for one task."""

    hidden: int = 32
    widths: tuple = (2, 3, 4)
    n_filters: int = 32
    emb_dim: int = 32
    modality: str = "both"
    use_bot_text: bool = True
    use_timing: bool = False
    lr: Optional[float] = None
    batch_size: int = 32
    epochs: int = 10
    unlabeled_ratio: int = 3
    alpha: float = 0.25
    p_threshold: float = 0.95
    semi_weight: float = 1.0
    mda: bool = True
    ssl: bool = True
    ssl_warmup_epochs: int = 0

    def train_config(self, task: str, seed: int) -> TrainConfig:
        return TrainConfig(epochs=self.epochs, batch_size=self.batch_size, unlabeled_ratio=self.unlabeled_ratio,
                           lr=self.lr if self.lr is not None else DEFAULT_LR[task], alpha=self.alpha,
                           p_threshold=self.p_threshold, semi_weight=self.semi_weight, mda=self.mda,
                           ssl=self.ssl, ssl_warmup_epochs=self.ssl_warmup_epochs, seed=seed)


def _default_tasks() -> dict:
    return {
        "state": TaskConfig(),
        "bargein": TaskConfig(use_timing=True, ssl=False),
        "backchannel": TaskConfig(modality="text", use_bot_text=False, ssl=False, mda=False,
                                  epochs=20, lr=2e-3, batch_size=16),
    }


@dataclass
class BackchannelConfig:
    inventory: tuple = INVENTORY
    cluster_threshold: float = 0.35
    select_threshold: float = 0.5
    n_pairs: int = 1200


@dataclass
class GlobalConfig:
    seed: int = 0
    engine: EngineConfig = field(default_factory=EngineConfig)
    fbank: FbankConfig = field(default_factory=FbankConfig)
    tasks: dict = field(default_factory=_default_tasks)
    backchannel: BackchannelConfig = field(default_factory=BackchannelConfig)
    bargein_threshold: float = 0.5
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    embeddings: Optional[str] = None  # pretrained text-format embeddings

    def validate(self) -> None:
        self.engine.validate()
        self.fbank.validate()
        self.scenario.validate()
        if set(self.tasks) != {"state", "bargein", "backchannel"}:
            raise ConfigError("tasks must configure exactly state, bargein and backchannel")
        if len(self.backchannel.inventory) != 10:
            raise ConfigError("backchannel inventory must hold exactly 10 responses")
        if not 0.0 <= self.bargein_threshold <= 1.0:
            raise ConfigError("bargein_threshold must lie in [0, 1]")
        for name, t in self.tasks.items():
            if not 0.0 < t.p_threshold < 1.0:
                raise ConfigError(f"tasks.{name}.p_threshold must lie in (0, 1)")
            if t.alpha <= 0:
                raise ConfigError(f"tasks.{name}.alpha must be positive")
        if self.embeddings is not None and not Path(self.embeddings).exists():
            raise ConfigError(f"embeddings file {self.embeddings} does not exist")

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)


def _merge(obj, data: Any, path: str):
    """Copy of dataclass ``obj`` with fields from ``data``; unknown keys fail."""
    where = path or "config"
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object")
    unknown = set(data) - {f.name for f in fields(obj)}
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    updates = {}
    for k, v in data.items():
        cur = getattr(obj, k)
        sub = f"{path}.{k}" if path else k
        if is_dataclass(cur):
            updates[k] = _merge(cur, v, sub)
        elif isinstance(cur, dict) and cur and all(is_dataclass(x) for x in cur.values()):
            if not isinstance(v, dict) or set(v) - set(cur):
                raise ConfigError(f"{sub}: expected an object with keys from {sorted(cur)}")
            updates[k] = {name: _merge(cur[name], v.get(name, {}), f"{sub}.{name}") for name in cur}
        elif isinstance(cur, tuple):
            updates[k] = tuple(v)
        else:
            updates[k] = v
    try:
        return replace(obj, **updates)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def from_dict(data: dict) -> GlobalConfig:
    cfg = _merge(GlobalConfig(), data, "")
    cfg.validate()
    return cfg


def load_config(path) -> GlobalConfig:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file {p} does not exist")
    try:
        data = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{p}: invalid JSON ({exc})") from exc
    return from_dict(data)


def parse_override(text: str) -> tuple[list[str], Any]:
    """``a.b.c=value``; the value is JSON when it parses, else a string."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} must look like key.path=value")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip().split("."), value


def apply_overrides(cfg: GlobalConfig, overrides: list[str]) -> GlobalConfig:
    data = cfg.to_dict()
    for text in overrides:
        keys, value = parse_override(text)
        node = data
        for k in keys[:-1]:
            if not isinstance(node, dict) or k not in node:
                raise ConfigError(f"unknown config key {'.'.join(keys)}")
            node = node[k]
        if not isinstance(node, dict) or keys[-1] not in node:
            raise ConfigError(f"unknown config key {'.'.join(keys)}")
        node[keys[-1]] = value
    return from_dict(data)
