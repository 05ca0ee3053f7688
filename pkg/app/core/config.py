from functools import lru_cache

from pydantic import Field, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    model_config = SettingsConfigDict(env_file=".env", env_file_encoding="utf-8", extra="ignore")

    # Worker pool size for realizations (sweep) and ray chunks (trace).
    threads: int = Field(1, alias="FOLIAGE_THREADS", ge=1)
    log_level: str = Field("INFO", alias="FOLIAGE_LOG_LEVEL")
    output_dir: str = Field("out", alias="FOLIAGE_OUTPUT_DIR")

    # Tuning point: rays per tracing work item. Results do not depend on it.
    ray_chunk: int = Field(8192, alias="FOLIAGE_RAY_CHUNK", ge=1)

    # Switches the tracer to 2e6 candidate rays / depth 25.
    full_scale: bool = Field(False, alias="FOLIAGE_FULL_SCALE")

    @field_validator("log_level", mode="before")
    @classmethod
    def _upper_level(cls, value):
        if isinstance(value, str):
            return value.strip().upper()
        return value


@lru_cache
def get_settings() -> Settings:
    return Settings()
