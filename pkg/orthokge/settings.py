# Copyright 2025 The orthogonal-kge Authors.
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#   http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
from __future__ import annotations

from pathlib import Path
from typing import Any

from dotenv import dotenv_values
from pydantic import Field, ValidationError
from pydantic_settings import BaseSettings, SettingsConfigDict

from orthokge.exceptions import ConfigError
from orthokge.model import ModelConfig


class TrainingConfig(ModelConfig):
    """Model config plus the training loop's evaluation and early-stopping knobs."""

    eval_every: int = Field(default=10, ge=1)
    patience: int = Field(default=50, ge=1)


class RuntimeSettings(BaseSettings):
    """Process-level knobs read from ORTHOKGE_* environment variables or .env."""

    model_config = SettingsConfigDict(
        env_prefix="ORTHOKGE_",
        env_file=".env",
        env_file_encoding="utf-8",
        extra="ignore",
    )

    threads: int = Field(default=1, ge=1)
    log_level: str = "INFO"
    eval_chunk_size: int = Field(default=256, ge=1)
    loss_chunk_size: int = Field(default=64, ge=1)


def _validation_message(e: ValidationError) -> str:
    return "; ".join(
        f"{'.'.join(str(p) for p in err['loc']) or 'config'}: {err['msg']}"
        for err in e.errors()
    )


def parse_training_config(
    values: dict[str, Any], source: str = "config"
) -> TrainingConfig:
    try:
        return TrainingConfig.model_validate(values)
    except ValidationError as e:
        raise ConfigError(f"invalid {source}: {_validation_message(e)}") from e


def load_training_config(
    path: str | Path, overrides: dict[str, Any] | None = None
) -> TrainingConfig:
    """Read a flat key=value config file.

    Keys are exactly the TrainingConfig fields; unknown keys, keys without a
    value and invalid values are errors.
    """
    config_path = Path(path)
    if not config_path.is_file():
        raise ConfigError(f"config file not found: {config_path}")
    raw = dotenv_values(config_path)
    missing = [key for key, value in raw.items() if value is None]
    if missing:
        raise ConfigError(f"keys without a value in {config_path}: {missing}")
    values: dict[str, Any] = dict(raw)
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return parse_training_config(values, source=str(config_path))
