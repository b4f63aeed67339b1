from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Ambient settings loaded from environment variables (prefix ENVADAPT_)"""

    model_config = SettingsConfigDict(
        env_prefix="ENVADAPT_",
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=False,
        extra="ignore",
    )

    # Logging
    log_level: str = "INFO"

    # Interpreter: iterations allowed per execution of a while loop, or of a
    # for loop whose body writes its variable or its limit
    step_budget: int = 100_000_000

    # Search
    brute_force_cap: int = 20
    ga_workers: int = 1
    min_trip_count: int = 0

    # Placement
    placement_search_cap: int = 1_000_000
    retry_budget: int = 3

    # Runtime operation
    window_size: int = 20
    min_gain: float = 0.10
    fpga_slots: int = 1
    penalty_resource_amount: float = 0.0
    penalty_placement: float = 1.0
    penalty_soft_logic: float = 0.5
    penalty_hard_logic: float = 2.0

    # Artifacts
    schema_version: int = 1


# Global settings instance
settings = Settings()


# Validation on import
if settings.step_budget < 1:
    raise ValueError("ENVADAPT_STEP_BUDGET must be positive")

if not 0.0 <= settings.min_gain < 1.0:
    raise ValueError("ENVADAPT_MIN_GAIN must be in [0, 1)")
