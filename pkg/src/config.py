"""
Head Scan Segmentation - Configuration Module
"""
from pydantic_settings import BaseSettings, SettingsConfigDict
from pydantic import Field


class Settings(BaseSettings):
    """Application settings loaded from environment variables (prefix SCANSEG_)"""

    model_config = SettingsConfigDict(
        env_prefix="SCANSEG_",
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=False,
        extra="ignore",
    )

    # Logging
    log_level: str = Field(default="INFO")

    # Parallelism
    threads: int = Field(default=0, ge=0, description="Worker threads, 0 = logical cores")
    torch_threads: int = Field(default=1, ge=1, description="Intra-op threads used by torch")

    # Cache layout
    cache_dir_name: str = Field(default="cache")

    # Geometry defaults
    eig_k: int = Field(default=128, gt=1, description="Default spectral basis size for PipelineConfig")
    hks_count: int = Field(default=16, gt=0)
    sigma_neighbors: int = Field(default=30, gt=2)
    label_threshold_mm: float = Field(default=1.5, gt=0)

    # Multi-view defaults
    num_views: int = Field(default=13, gt=0)
    depth_epsilon_mm: float = Field(default=2.0, ge=0)


# Global settings instance
settings = Settings()
