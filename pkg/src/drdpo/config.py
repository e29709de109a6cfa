"""
Process-wide settings, read from DRDPO_* environment variables or a .env file
"""

from functools import lru_cache
from pathlib import Path

from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Defaults shared by the CLI commands."""

    model_config = SettingsConfigDict(env_prefix="DRDPO_", env_file=".env", extra="ignore")

    log_level: str = Field("WARNING", description="Root logging level for the CLI.")
    jobs: int = Field(1, ge=1, description="Default worker count for sweeps.")
    verify_seed: int = Field(0, description="Seed of the random instances drawn by `verify`.")
    bound_h_floor: float = Field(
        -50.0, description="Clamp for the estimated lower end of h_DPO when bounding."
    )
    bound_delta: float = Field(
        0.05, gt=0.0, lt=1.0, description="Failure probability of the bound reported by Dr. DPO runs."
    )
    output_dir: Path = Field(Path("runs"), description="Where commands write when no path is given.")


@lru_cache(maxsize=1)
def get_settings() -> Settings:
    return Settings()
