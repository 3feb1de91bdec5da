# agents/config_agent.py
from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, fields, replace
from pathlib import Path
from typing import Any, Dict, Optional

from dotenv import load_dotenv

from models.config import PHASE_DURATIONS, PipelineConfig, SyntheticCorpusSpec
from models.features import ReceptiveFieldMode, backbone
from models.lstm import TrainConfig
from models.pooling import DistanceMetric, PoolingMode
from models.saliency import LogGaborBankConfig
from utils.errors import ConfigError

ENV_PREFIX = "SHOTPHASE_"
LOCATION_KEYS = ("dataset_root", "frames_root", "out_dir", "threads")


class ConfigAgent:
    """
    Validates/normalizes pipeline settings into PipelineConfig.
    Works with either a raw dict OR an already built PipelineConfig.
    Precedence: command-line flags > config file > .env > defaults.
    """

    def normalize(self, raw: Any) -> PipelineConfig:
        if isinstance(raw, PipelineConfig):
            config = raw
        elif isinstance(raw, dict):
            config = self._from_dict(raw)
        else:
            raise ConfigError("ConfigAgent.normalize expects PipelineConfig or dict")

        # Defaults & fixes
        if not config.dataset_root:
            config = replace(config, dataset_root="data")
        if not config.out_dir:
            config = replace(config, out_dir="out")
        config = replace(config, backbone=config.backbone.lower(), threads=max(1, int(config.threads)))

        self.validate(config)
        return config

    def validate(self, config: PipelineConfig) -> PipelineConfig:
        backbone(config.backbone)
        for enum, value, what in (
            (ReceptiveFieldMode, config.mode, "mode"),
            (PoolingMode, config.pooling, "pooling"),
            (DistanceMetric, config.metric, "metric"),
        ):
            try:
                enum(value)
            except ValueError:
                raise ConfigError(
                    f"invalid {what} {value!r}; choose from {[e.value for e in enum]}"
                ) from None

        if config.provider != "mock" and not config.provider.startswith("runtime:"):
            raise ConfigError(f"invalid provider {config.provider!r}; use 'mock' or 'runtime:<model file>'")
        if config.time_scale not in ("auto", "raw-minutes"):
            try:
                if float(config.time_scale) <= 0:
                    raise ValueError
            except ValueError:
                raise ConfigError(f"invalid time_scale {config.time_scale!r}") from None
        for name in ("pooling_stride", "lstm_stride", "shot_seconds", "per_video_per_phase", "per_phase_target"):
            if int(getattr(config, name)) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if config.fps <= 0:
            raise ConfigError("fps must be positive")

        t = config.train
        for name in ("hidden_size", "batch_size", "epochs", "cycles", "train_per_class"):
            if int(getattr(t, name)) < 1:
                raise ConfigError(f"train.{name} must be >= 1")
        if t.learning_rate < 0 or not (0 <= t.adam_beta1 < 1 and 0 <= t.adam_beta2 < 1) or t.adam_epsilon <= 0:
            raise ConfigError("invalid Adam settings in train")
        config.saliency.validate()
        return config

    def env_defaults(self) -> Dict[str, Any]:
        """Lowest-precedence values from the environment / .env file."""
        load_dotenv()
        out: Dict[str, Any] = {}
        if os.getenv(ENV_PREFIX + "DATASET_ROOT"):
            out["dataset_root"] = os.getenv(ENV_PREFIX + "DATASET_ROOT")
        if os.getenv(ENV_PREFIX + "OUT_DIR"):
            out["out_dir"] = os.getenv(ENV_PREFIX + "OUT_DIR")
        threads = os.getenv(ENV_PREFIX + "THREADS")
        if threads:
            try:
                out["threads"] = int(threads)
            except ValueError:
                raise ConfigError(f"{ENV_PREFIX}THREADS must be an integer, got {threads!r}") from None
        return out

    def resolve(self, path: Optional[str | Path] = None, overrides: Optional[Dict[str, Any]] = None) -> PipelineConfig:
        """Defaults, then .env, then the JSON file, then non-None overrides."""
        merged: Dict[str, Any] = self.env_defaults()
        if path:
            merged = _deep_merge(merged, self._read_json(path))
        for key, value in (overrides or {}).items():
            if value is not None:
                merged = _deep_merge(merged, _dotted(key, value))
        return self.normalize(merged)

    def load(self, path: str | Path) -> PipelineConfig:
        return self.normalize(self._read_json(path))

    def save(self, config: PipelineConfig, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(config), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return path

    def to_dict(self, config: PipelineConfig) -> Dict[str, Any]:
        return asdict(config)

    def config_hash(self, config: PipelineConfig) -> str:
        """SHA-256 over the settings that shape results; locations and thread count are left out."""
        settings = {k: v for k, v in self.to_dict(config).items() if k not in LOCATION_KEYS}
        canonical = json.dumps(settings, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def synthetic_spec(self, raw: Optional[Dict[str, Any]] = None) -> SyntheticCorpusSpec:
        raw = dict(raw or {})
        known = {f.name for f in fields(SyntheticCorpusSpec)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown synthetic corpus keys: {sorted(unknown)}")
        if "durations" in raw:
            raw["durations"] = {**PHASE_DURATIONS, **{k: tuple(v) for k, v in raw["durations"].items()}}
        return SyntheticCorpusSpec(**raw)

    # ----------------------
    # helpers
    # ----------------------

    def _read_json(self, path: str | Path) -> Dict[str, Any]:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
        except ValueError as e:
            raise ConfigError(f"config file {path} is not valid JSON: {e}") from e
        if not isinstance(doc, dict):
            raise ConfigError(f"config file {path} must hold a JSON object")
        return doc

    def _from_dict(self, d: Dict[str, Any]) -> PipelineConfig:
        d = dict(d)
        known = {f.name for f in fields(PipelineConfig)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            train = d.pop("train", None)
            saliency = d.pop("saliency", None)
            if isinstance(train, dict):
                d["train"] = TrainConfig.from_dict(train)
            if isinstance(saliency, dict):
                d["saliency"] = LogGaborBankConfig(**saliency)
            if "time_scale" in d:
                d["time_scale"] = str(d["time_scale"])
            return PipelineConfig(**d)
        except TypeError as e:
            raise ConfigError(f"invalid config: {e}") from e


def _dotted(key: str, value: Any) -> Dict[str, Any]:
    """'train.cycles' -> {'train': {'cycles': value}}."""
    out: Dict[str, Any] = {}
    node = out
    parts = key.split(".")
    for part in parts[:-1]:
        node = node.setdefault(part, {})
    node[parts[-1]] = value
    return out


def _deep_merge(base: Dict[str, Any], extra: Dict[str, Any]) -> Dict[str, Any]:
    merged = dict(base)
    for key, value in extra.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged
