"""Environment settings (log verbosity and log file location)."""

from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    # Logging
    LOG_LEVEL: str = "INFO"
    LOG_FILE: str = "logs/adareg.log"
    LOG_MAX_BYTES: int = 5242880  # 5MB
    LOG_BACKUP_COUNT: int = 5

    model_config = SettingsConfigDict(
        env_prefix="ADAREG_",
        env_file=".env",
        case_sensitive=True,
        extra="ignore",
    )


def get_settings() -> Settings:
    """Read settings from the environment (and `.env` if present)."""
    return Settings()
