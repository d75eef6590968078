from typing import Annotated
from typing import Literal

from pydantic import Field
from pydantic_settings import BaseSettings
from pydantic_settings import SettingsConfigDict


class Settings(BaseSettings):
    """Workbench settings loaded from environment variables."""

    model_config = SettingsConfigDict(env_file=".env", env_file_encoding="utf-8")

    # Server settings
    app_host: str = Field(default="0.0.0.0")
    app_port: Annotated[int, Field(ge=1, le=65535)] = Field(default=8000)
    log_level: str = Field(default="INFO")

    # Enclosure arithmetic
    default_precision: Annotated[int, Field(ge=0)] = Field(default=20)
    guard_bits: Annotated[int, Field(ge=8)] = Field(default=24)
    refine_step: Annotated[int, Field(gt=0)] = Field(default=16)
    max_refinements: Annotated[int, Field(gt=0)] = Field(default=12)
    max_exponent_precision: Annotated[int, Field(gt=0)] = Field(default=256)

    # Search budgets
    default_budget: Annotated[int, Field(ge=0)] = Field(default=4)
    default_strategy: Literal["whitebox", "dovetail"] = Field(default="whitebox")
    seed: int = Field(default=0)
    seed_scan_budget: Annotated[int, Field(gt=0)] = Field(default=64)
    extend_max_rounds: Annotated[int, Field(gt=0)] = Field(default=96)
    witness_iterations: Annotated[int, Field(ge=0)] = Field(default=60)
    witness_grid_budget: Annotated[int, Field(ge=0)] = Field(default=4096)
    dovetail_max_new_nodes: Annotated[int, Field(ge=1)] = Field(default=2)
    dovetail_generators: Annotated[int, Field(ge=1)] = Field(default=4)
    isometry_extra_levels: Annotated[int, Field(ge=0)] = Field(default=4)
    express_max_generators: Annotated[int, Field(gt=0)] = Field(default=127)
    max_ring_sets: Annotated[int, Field(gt=0)] = Field(default=13)

    # Verification
    verify_probes: Annotated[int, Field(ge=0)] = Field(default=50)
    probe_terms: Annotated[int, Field(gt=0)] = Field(default=4)

    # Stage dump cache
    cache_enabled: bool = Field(default=True)
    cache_dir: str = Field(default="./data/stages")
    cache_ttl_s: Annotated[int, Field(ge=0)] = Field(default=0)


# Create settings singleton instance
settings = Settings()
