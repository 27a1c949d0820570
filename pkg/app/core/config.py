import json
from pathlib import Path
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from app.core.errors import ConfigError

MAX_HISTORY = 50
LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR")


class Settings(BaseSettings):
    model_config = SettingsConfigDict(env_file=".env", env_prefix="DCDR_", case_sensitive=False, extra="ignore")

    log_level: str = "INFO"
    threads: int = 1
    seed: int = 7

    data_dir: str = "data"
    out_dir: str = "runs"

    transition_cache_size: int = 16


settings = Settings()


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class SequenceConfig(_Section):
    l_o: int = Field(6, ge=1, le=8)
    l_s: int | None = Field(None, ge=1)

    @model_validator(mode="after")
    def _check_lengths(self):
        if self.l_s is None:
            self.l_s = self.l_o
        if "l_o" not in self.model_fields_set:
            self.l_o = min(self.l_o, self.l_s)
        if self.l_s < self.l_o:
            raise ValueError(f"l_s={self.l_s} must be >= l_o={self.l_o}")
        return self


class NoiseConfig(_Section):
    beta: float = Field(0.3, gt=0.0, lt=1.0)
    steps: int = Field(5, ge=1, le=50)


class ModelConfig(_Section):
    dim: int = Field(32, ge=2)
    hidden: int = Field(64, ge=1)
    tau: float = Field(0.1, gt=0.0)
    init_scale: float = Field(0.05, gt=0.0)


class TrainConfig(_Section):
    op: Literal["perm", "token"] = "perm"
    epochs: int = Field(10, ge=1)
    evaluator_epochs: int | None = Field(None, ge=1)
    batch_size: int = Field(32, ge=1)
    learning_rate: float = Field(1e-3, gt=0.0)
    optimizer: Literal["adam", "sgd"] = "adam"
    adam_betas: tuple[float, float] = (0.9, 0.999)
    eval_every: int = Field(1, ge=1)
    warm_start: bool = True


class InferenceConfig(_Section):
    beam: int = Field(6, ge=1)
    max_steps: int = Field(5, ge=1)
    epsilon: float = Field(1e-3, ge=0.0)
    condition_policy: Literal["all-positive", "mask"] = "all-positive"
    condition_mask: list[int] | None = None
    token_top_m: int = Field(4, ge=1)

    @model_validator(mode="after")
    def _check_mask(self):
        if self.condition_policy == "mask":
            if not self.condition_mask:
                raise ValueError("condition_policy=mask needs condition_mask")
            if any(v not in (0, 1) for v in self.condition_mask):
                raise ValueError("condition_mask entries must be 0 or 1")
        return self


class WorldConfig(_Section):
    n_users: int = Field(100, ge=1)
    n_items: int = Field(500, ge=2)
    n_sessions: int = Field(2000, ge=1)
    n_topics: int = Field(8, ge=1)
    position_bias: list[float] | None = None
    redundancy_penalty: float = Field(3.0, ge=0.0)
    noise: float = Field(0.5, ge=0.0)
    affinity_scale: float = Field(3.0, ge=0.0)
    logging_temperature: float = Field(1.0, gt=0.0)
    history_len: int = Field(20, ge=0, le=MAX_HISTORY)
    test_fraction: float = Field(0.2, gt=0.0, lt=1.0)

    @model_validator(mode="after")
    def _check_bias(self):
        if self.position_bias is not None and any(not 0.0 <= b <= 1.0 for b in self.position_bias):
            raise ValueError("position_bias entries must lie in [0, 1]")
        return self


class PathsConfig(_Section):
    data_dir: str = "data"
    out_dir: str = "runs"
    checkpoint: str | None = None
    session: str | None = None


class RunConfig(_Section):
    seed: int = 7
    threads: int = Field(1, ge=1)
    log_level: str = "INFO"

    sequence: SequenceConfig = SequenceConfig()
    noise: NoiseConfig = NoiseConfig()
    model: ModelConfig = ModelConfig()
    train: TrainConfig = TrainConfig()
    inference: InferenceConfig = InferenceConfig()
    world: WorldConfig = WorldConfig()
    paths: PathsConfig = PathsConfig()

    @field_validator("log_level")
    @classmethod
    def _check_level(cls, v: str) -> str:
        level = v.upper()
        if level not in LOG_LEVELS:
            raise ValueError(f"log_level must be one of {LOG_LEVELS}")
        return level

    @model_validator(mode="after")
    def _check_cross(self):
        l_o = self.sequence.l_o
        if self.world.position_bias is not None and len(self.world.position_bias) != l_o:
            raise ValueError(f"position_bias must have length l_o={l_o}")
        mask = self.inference.condition_mask
        if self.inference.condition_policy == "mask" and mask is not None and len(mask) != l_o:
            raise ValueError(f"condition_mask must have length l_o={l_o}")
        return self


def _deep_merge(base: dict, extra: dict) -> dict:
    merged = dict(base)
    for key, value in extra.items():
        if value is None:
            continue
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def _defaults_from_settings() -> dict:
    return {
        "seed": settings.seed,
        "threads": settings.threads,
        "log_level": settings.log_level,
        "paths": {"data_dir": settings.data_dir, "out_dir": settings.out_dir},
    }


def build_run_config(config_path: str | None = None, overrides: dict | None = None) -> RunConfig:
    """Flags > --config JSON file > environment/.env > field defaults."""
    data = _defaults_from_settings()
    if config_path:
        path = Path(config_path)
        try:
            file_data = json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}")
        except json.JSONDecodeError as e:
            raise ConfigError(f"config file {path} is not valid JSON: {e}")
        if not isinstance(file_data, dict):
            raise ConfigError(f"config file {path} must hold a JSON object")
        data = _deep_merge(data, file_data)
    if overrides:
        data = _deep_merge(data, overrides)
    try:
        return RunConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(str(e), {"errors": e.errors(include_url=False)})
