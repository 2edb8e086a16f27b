"""Run configuration with flags > environment > file > defaults precedence."""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Optional

from .errors import ConfigError
from .gateway import GatewayConfig
from .pipeline import PipelineOptions

ENV_KEYS = {"GLAVE_API_KEY": "api_key", "GLAVE_ENDPOINT": "endpoint"}


@dataclass
class RunConfig:
    endpoint: str = ""
    api_key: str = ""
    model_name: str = "gpt-4o"
    transport: str = "replay"
    fixtures_dir: str = "fixtures"
    embed_endpoint: str = ""
    shot_threshold: float = 27.0
    min_shot_len: int = 15
    similarity_threshold: float = 0.85
    max_gap: int = 0  # 0 = derive from the frame manifest
    overlap_threshold: float = 0.5
    visual_prompt: bool = True
    overview_caption: bool = True
    dual_stream: bool = True
    adaptive_scene_split: bool = True
    fan_out: int = 4
    seed: int = 0
    max_tokens: int = 2048
    max_retries: int = 3
    image_max_side: int = 1024

    def __post_init__(self):
        if self.transport not in ("live", "record", "replay"):
            raise ConfigError(f"transport must be live, record, or replay, "
                              f"not {self.transport!r}")
        if not 0 < self.overlap_threshold < 1:
            raise ConfigError(f"overlap_threshold {self.overlap_threshold} "
                              "must lie in (0, 1)")
        if not 0 < self.similarity_threshold < 1:
            raise ConfigError(f"similarity_threshold {self.similarity_threshold} "
                              "must lie in (0, 1)")
        if self.shot_threshold <= 0:
            raise ConfigError("shot_threshold must be positive")
        if self.min_shot_len < 1:
            raise ConfigError("min_shot_len must be >= 1")
        if self.max_gap < 0:
            raise ConfigError("max_gap must be >= 0")
        if self.fan_out < 1:
            raise ConfigError("fan_out must be >= 1")
        if self.max_retries < 0:
            raise ConfigError("max_retries must be >= 0")

    def to_json(self) -> dict:
        doc = dataclasses.asdict(self)
        doc["api_key"] = "***" if self.api_key else ""
        return doc

    def gateway_config(self) -> GatewayConfig:
        return GatewayConfig(
            endpoint=self.endpoint,
            api_key=self.api_key,
            model_name=self.model_name,
            transport=self.transport,
            fixtures_dir=Path(self.fixtures_dir),
            max_retries=self.max_retries,
            max_inflight=self.fan_out,
            image_max_side=self.image_max_side,
        )

    def pipeline_options(self) -> PipelineOptions:
        return PipelineOptions(
            model_name=self.model_name,
            visual_prompt=self.visual_prompt,
            overview_caption=self.overview_caption,
            dual_stream=self.dual_stream,
            adaptive_scene_split=self.adaptive_scene_split,
            fan_out=self.fan_out,
            max_tokens=self.max_tokens,
            image_max_side=self.image_max_side,
        )


_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(RunConfig)}


def _coerce(key: str, value):
    target = _FIELD_TYPES[key]
    if target == "bool" and not isinstance(value, bool):
        raise ConfigError(f"{key} must be a boolean, not {value!r}")
    if target == "int" and not isinstance(value, int):
        raise ConfigError(f"{key} must be an integer, not {value!r}")
    if target == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key} must be a number, not {value!r}")
        return float(value)
    if target == "str" and not isinstance(value, str):
        raise ConfigError(f"{key} must be a string, not {value!r}")
    return value


def load_config(path: Optional[Path] = None,
                env: Optional[Mapping[str, str]] = None,
                overrides: Optional[dict] = None) -> RunConfig:
    """Resolve one RunConfig; unknown keys and out-of-range values fail with
    the offending key named."""
    values: dict = {}

    if path is not None:
        try:
            doc = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file {path} not found")
        except json.JSONDecodeError as err:
            raise ConfigError(f"config file {path} is not valid JSON: {err}")
        if not isinstance(doc, dict):
            raise ConfigError("config file must hold a JSON object")
        for key, value in doc.items():
            if key not in _FIELD_TYPES:
                raise ConfigError(f"unknown config key {key!r}")
            values[key] = _coerce(key, value)

    env = os.environ if env is None else env
    for env_key, field_name in ENV_KEYS.items():
        if env.get(env_key):
            values[field_name] = env[env_key]

    for key, value in (overrides or {}).items():
        if key not in _FIELD_TYPES:
            raise ConfigError(f"unknown config key {key!r}")
        if value is not None:
            values[key] = _coerce(key, value)

    return RunConfig(**values)
