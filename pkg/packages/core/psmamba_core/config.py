"""
psmamba_core.config
~~~~~~~~~~~~~~~~~~~
Process-level settings for psmamba.

All values can be supplied via environment variables with the ``PSMAMBA_``
prefix (case-insensitive) or a local ``.env`` file. Run-level
hyperparameters live in :mod:`psmamba_core.models` instead.
"""

from __future__ import annotations

from typing import Literal

from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    model_config = SettingsConfigDict(
        env_prefix="PSMAMBA_",
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=False,
        extra="ignore",
    )

    # Observability
    LOG_LEVEL: str = "INFO"

    # Numerics
    PRECISION: Literal["float32", "float64"] = "float32"
    DETERMINISTIC: bool = False

    # Thread count for the JIT kernels; 0 keeps the library default.
    NUM_THREADS: int = 0


settings = Settings()
