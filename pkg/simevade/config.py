"""Application configuration using Pydantic v2 settings."""

import os
from functools import lru_cache
from pathlib import Path

from pydantic import Field, computed_field, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from simevade.core.oracle import MODEL_NAMES
from simevade.models.attack import CorrectionStrategy


class Settings(BaseSettings):
    """Defaults for every CLI knob; overridable via SIMEVADE_* variables."""

    model_config = SettingsConfigDict(
        env_file=".env",
        env_file_encoding="utf-8",
        env_prefix="SIMEVADE_",
        case_sensitive=False,
        extra="ignore",
    )

    # Application
    app_name: str = Field(default="simevade", description="Application name")
    app_version: str = Field(default="0.1.0", description="Application version")
    debug: bool = Field(default=False, description="Debug mode")

    # Logging
    log_level: str = Field(default="INFO", description="Logging level")
    log_format: str = Field(
        default="<green>{time:YYYY-MM-DD HH:mm:ss}</green> | "
        "<level>{level: <8}</level> | "
        "<cyan>{name}</cyan>:<cyan>{function}</cyan>:<cyan>{line}</cyan> - "
        "<level>{message}</level>",
        description="Log format",
    )
    log_file: Path | None = Field(default=None, description="Optional rotating log file")

    # Attack
    model: str = Field(default="walk", description="Surrogate similarity model")
    top_k: int = Field(default=5, description="Top-k retrieval cut-off")
    epsilon: float = Field(default=0.8, description="Minimum length similarity")
    num_candidates: int = Field(default=200, description="Adversarial candidate cap")
    inverse_m: int = Field(default=10, description="Least-similar source functions")
    probe_copy_factor: float = Field(
        default=0.2, description="Probe copies as a fraction of function length"
    )
    score_threshold: int | None = Field(
        default=None, description="Minimum candidate score (defaults to top_k)"
    )
    seed: int = Field(default=42, description="Base random seed")
    correction_strategy: CorrectionStrategy = Field(
        default=CorrectionStrategy.SPILL, description="spill or inverse"
    )
    max_iteration_factor: int = Field(
        default=10, description="Insertion-loop guard, in multiples of length"
    )
    workers: int = Field(default=1, description="Parallel attacks")

    # Emulator
    max_steps: int = Field(default=100_000, description="Execution step limit")
    equivalence_trials: int = Field(default=100, description="Trials per equivalence check")
    overhead_trials: int = Field(default=10, description="Trials for dynamic overhead")
    zone_cursor_stride: int = Field(default=64, description="Bumper-zone cursor step")

    # Random-walk model
    walk_count: int = Field(default=16, description="Walks per function")
    walk_length: int = Field(default=32, description="Blocks per walk")
    walk_dim: int = Field(default=1024, description="Hashed feature dimension")
    walk_seed: int = Field(default=7, description="Walk sampling seed")
    opcode_weight: float = Field(
        default=4.0, gt=0.0, description="Opcode-count weight in the bigram and walk models"
    )

    # Corpus
    corpus_count: int = Field(default=200, description="Functions per corpus")
    corpus_min_length: int = Field(default=40, description="Minimum instructions")
    corpus_max_length: int = Field(default=120, description="Maximum instructions")
    corpus_min_blocks: int = Field(default=1, description="Minimum basic blocks")
    corpus_max_blocks: int = Field(default=8, description="Maximum basic blocks")
    corpus_families: int = Field(default=25, description="Template families")

    @field_validator("epsilon")
    @classmethod
    def validate_epsilon(cls, v: float) -> float:
        if not 0.0 < v <= 1.0:
            raise ValueError("epsilon must be in (0, 1]")
        return v

    @field_validator("top_k", "num_candidates", "inverse_m", "workers", "max_steps")
    @classmethod
    def validate_positive(cls, v: int) -> int:
        if v < 1:
            raise ValueError("must be at least 1")
        return v

    @field_validator("model")
    @classmethod
    def validate_model(cls, v: str) -> str:
        v = v.lower()
        if v not in MODEL_NAMES:
            raise ValueError(f"model must be one of {', '.join(MODEL_NAMES)}")
        return v

    @computed_field  # type: ignore[prop-decorator]
    @property
    def effective_score_threshold(self) -> int:
        """Candidate score threshold; top_k unless set explicitly."""
        return self.top_k if self.score_threshold is None else self.score_threshold


class DevelopmentSettings(Settings):
    """Development environment settings."""

    debug: bool = True
    log_level: str = "DEBUG"


class ProductionSettings(Settings):
    """Production environment settings."""

    debug: bool = False
    log_level: str = "INFO"


class TestingSettings(Settings):
    """Testing environment settings: small, fast runs."""

    debug: bool = True
    log_level: str = "WARNING"
    equivalence_trials: int = 10
    overhead_trials: int = 2


@lru_cache
def get_settings() -> Settings:
    """Get application settings with caching."""
    environment = os.getenv("ENVIRONMENT", "development").lower()

    if environment == "production":
        return ProductionSettings()
    elif environment == "testing":
        return TestingSettings()
    else:
        return DevelopmentSettings()


settings = get_settings()
