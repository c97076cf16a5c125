import hashlib
import json
from pathlib import Path
from typing import Any, Literal, Optional

from pydantic import BaseModel, Field, ValidationError, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from models.video import AugmentKind

from .errors import ConfigError


class Settings(BaseSettings):
    '''
    Service-level settings for the inference API. \n
    Defaults keep the app usable without a .env file; in deployment the .env
    file or AQA_* environment variables take over.
    '''
    DATABASE_URL: str = "sqlite:///predictions.db"
    RUN_DIR: str = "runs/default"
    LOG_LEVEL: str = "INFO"
    DB_ECHO: bool = False
    API_USERNAME: str = "admin"
    API_PASSWORD: str = "password"
    CORS_ORIGINS: list[str] = []

    model_config = SettingsConfigDict(env_file=".env", env_prefix="AQA_", extra="ignore")


settings = Settings()


ActivityName = Literal["diving", "vault", "custom"]
ExpertMode = Literal["best", "worst", "constant"]
BalanceLevel = Literal["none", "partial", "full"]


class ActivityProfile(BaseModel):
    name: ActivityName = "diving"
    score_min: float = 0.0
    score_max: float = 100.0
    n_clips: int = Field(default=9, gt=0)
    threshold: float = Field(default=5.0, gt=0)
    allow_truncation: bool = False
    splits: int = Field(default=10, gt=0)

    @classmethod
    def preset(cls, name: ActivityName) -> "ActivityProfile":
        if name == "diving":
            return cls(name="diving", score_max=100.0, n_clips=9, threshold=5.0)
        if name == "vault":
            # th scaled by score range: 5 * 20 / 100
            return cls(name="vault", score_max=20.0, n_clips=5, threshold=1.0, splits=5)
        raise ConfigError("custom activity needs score_max, n_clips and threshold in the config file")

    @model_validator(mode="after")
    def _check_range(self) -> "ActivityProfile":
        if self.score_max <= self.score_min:
            raise ValueError("score_max must exceed score_min")
        return self


class ModelConfig(BaseModel):
    feature_dim: int = Field(default=4096, gt=0)
    embedding_dim: int = Field(default=256, gt=0)
    d1_width: int = Field(default=128, gt=0)
    d2_width: int = Field(default=64, gt=0)
    activation: Literal["relu", "identity"] = "relu"
    use_bias: bool = True
    forget_bias: float = 1.0


class OptimizerConfig(BaseModel):
    algorithm: Literal["adam", "sgd"] = "adam"
    learning_rate: float = Field(default=1e-4, gt=0)
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


class DmlTrainConfig(BaseModel):
    epochs: int = Field(default=30, gt=0)
    batch_size: int = Field(default=32, gt=0)
    seed: int = 0
    symmetrize: bool = True
    patience: int = Field(default=5, gt=0)
    holdout_fraction: float = Field(default=0.1, ge=0, lt=1)
    balance: BalanceLevel = "full"
    max_pairs_per_epoch: Optional[int] = Field(default=8000, gt=0)
    augment_kinds: list[AugmentKind] = Field(default=["feature_jitter"], min_length=1)
    optimizer: OptimizerConfig = OptimizerConfig()


class ScoreTrainConfig(BaseModel):
    epochs: int = Field(default=300, gt=0)
    batch_size: int = Field(default=64, gt=0)
    seed: int = 0
    optimizer: OptimizerConfig = OptimizerConfig(learning_rate=1e-2)


class SyntheticConfig(BaseModel):
    num_types: int = Field(default=3, gt=0)
    videos_per_type: int = Field(default=200, gt=0)
    n_clips: int = Field(default=9, gt=0)
    feature_dim: int = Field(default=64, gt=0)
    prototype_scale: float = Field(default=0.5, gt=0)
    deviation_sigma: float = Field(default=0.1, ge=0)
    fault_probability: float = Field(default=0.15, ge=0, le=1)
    fault_magnitude: float = Field(default=5.0, ge=0)
    score_max: float = Field(default=100.0, gt=0)
    penalty_scale: float = Field(default=2.0, ge=0)
    test_fraction: float = Field(default=0.15, ge=0, lt=1)
    seed: int = 0


class FeedbackConfig(BaseModel):
    threshold: float = Field(default=0.5, gt=0, lt=1)


class RunConfig(BaseSettings):
    '''
    Everything one pipeline run needs. Loaded from a JSON file, then
    AQA_RUN_* environment variables, then CLI overrides on top.
    '''
    activity: ActivityProfile = ActivityProfile()
    model: ModelConfig = ModelConfig()
    dml: DmlTrainConfig = DmlTrainConfig()
    score: ScoreTrainConfig = ScoreTrainConfig()
    synthetic: SyntheticConfig = SyntheticConfig()
    feedback: FeedbackConfig = FeedbackConfig()
    expert_mode: ExpertMode = "best"
    expert_constant_type: Optional[int] = None
    seed: int = 0
    run_dir: str = "runs/default"
    manifest: Optional[str] = None

    model_config = SettingsConfigDict(env_prefix="AQA_RUN_", env_nested_delimiter="__", extra="forbid")

    def model_hash(self) -> str:
        canonical = json.dumps(self.model.model_dump(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def echo(self, path: Path) -> None:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.model_dump(), indent=2, sort_keys=True))


def _deep_merge(base: dict[str, Any], override: dict[str, Any]) -> dict[str, Any]:
    merged = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def load_run_config(path: Optional[str] = None, overrides: Optional[dict[str, Any]] = None) -> RunConfig:
    """Build a RunConfig from an optional JSON file plus CLI overrides."""
    data: dict[str, Any] = {}
    if path:
        try:
            data = json.loads(Path(path).read_text())
        except FileNotFoundError as e:
            raise ConfigError(f"config file not found: {path}") from e
        except json.JSONDecodeError as e:
            raise ConfigError(f"config file {path} is not valid JSON: {e}") from e
    overrides = overrides or {}

    # an activity preset fills whatever the file leaves unset
    activity_name = overrides.get("activity", {}).get("name") or data.get("activity", {}).get("name")
    if activity_name in ("diving", "vault"):
        preset = ActivityProfile.preset(activity_name).model_dump()
        data["activity"] = _deep_merge(preset, data.get("activity", {}))
    elif activity_name == "custom":
        given = set(data.get("activity", {})) | set(overrides.get("activity", {}))
        missing = {"score_max", "n_clips", "threshold"} - given
        if missing:
            raise ConfigError(f"custom activity is missing {sorted(missing)}")

    try:
        return RunConfig(**_deep_merge(data, overrides))
    except ValidationError as e:
        raise ConfigError(f"invalid configuration: {e}") from e
