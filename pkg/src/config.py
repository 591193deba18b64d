"""
Configuration management using pydantic-settings.
Loads process-level defaults from SGMPC_* environment variables and .env file.
"""
from pathlib import Path

from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Application settings loaded from environment variables."""

    # Application environment
    environment: str = "development"

    # Logging configuration
    log_level: str = "INFO"

    # Default directory for CLI artifacts
    output_dir: Path = Path("output")

    # Basis construction
    gram_tol: float = 1e-8

    # Quadrature generation
    exactness_tol: float = 1e-8
    bcd_max_iters: int = 500

    # Optimizer
    feasibility_tol: float = 1e-6

    # Monte Carlo oracle sizes
    mc_samples: int = 100_000
    timing_samples: int = 5000

    model_config = SettingsConfigDict(
        env_file=".env",
        env_file_encoding="utf-8",
        env_prefix="SGMPC_",
        case_sensitive=False
    )


# Global settings instance
settings = Settings()
