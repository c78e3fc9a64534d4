from functools import lru_cache
from pathlib import Path
from typing import Optional, Tuple

from pydantic_settings import BaseSettings, SettingsConfigDict

# Shipped "reasonable starting point" hyperparameters
DEFAULT_HYPERPARAMS_PATH = Path(__file__).resolve().parent.parent / "config" / "default_hyperparams.json"


class Settings(BaseSettings):
    APP_NAME: str = "FlowForge"
    GENERATOR_VERSION: str = "0.1.0"
    LOG_LEVEL: str = "INFO"

    # Hyperparameter file used when no --config flag is given (FLOWFORGE_CONFIG)
    CONFIG: Optional[str] = None

    DEFAULT_WORKERS: int = 1
    DEFAULT_RESOLUTION: Tuple[int, int] = (1280, 720) # 720p appearance resolution

    # External evaluator processes
    EVALUATOR_TIMEOUT_S: Optional[float] = None # None waits for the trainer indefinitely
    EVALUATOR_LAUNCH_RETRIES: int = 3

    # Define a model_config to load from .env file for local dev
    model_config = SettingsConfigDict(
        env_prefix="FLOWFORGE_", env_file=".env", env_file_encoding="utf-8", extra="ignore"
    )

    def resolve_config_path(self, cli_value: Optional[str] = None) -> Path:
        """--config flag, then FLOWFORGE_CONFIG, then the shipped defaults."""
        if cli_value:
            return Path(cli_value)
        if self.CONFIG:
            return Path(self.CONFIG)
        return DEFAULT_HYPERPARAMS_PATH


@lru_cache() # Cache the settings object
def get_settings() -> Settings:
    return Settings()


settings = get_settings() # Global settings object accessible via import
