from typing import Optional

from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    log_level: str = Field(default="INFO")
    log_file: Optional[str] = Field(default=None)

    # Defaults for the pipeline; CLI flags and the JSON config take precedence
    workers: int = Field(default=1, ge=1)
    seed: int = Field(default=0)
    out_dir: str = Field(default="out")

    model_config = SettingsConfigDict(
        env_prefix="HUBMOB_",
        env_file=".env",
        env_file_encoding="utf-8",
        extra="ignore",
    )


settings = Settings()
