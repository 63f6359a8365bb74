from dotenv import load_dotenv
from pydantic_settings import BaseSettings, SettingsConfigDict

load_dotenv()


class Settings(BaseSettings):
    """Application settings"""

    model_config = SettingsConfigDict(
        env_prefix="BUBBLESPECTRA_",
        env_file=".env",
        env_file_encoding="utf-8",
        extra="ignore",
    )

    # Output
    output_dir: str = "results"

    # Mesh cache
    mesh_cache_dir: str = ".mesh_cache"
    mesh_cache_enabled: bool = True

    # Logging
    log_level: str = "INFO"
    log_format: str = "%(asctime)s %(levelname)s %(name)s: %(message)s"

    # Eigensolver
    dense_dof_limit: int = 3000
    iterative_enabled: bool = True
    tau_mesh_factor: float = 0.5

    # Resource guards
    max_mesh_level: int = 6
    max_general_vertices: int = 2000

    # Runs
    workers: int = 1
    default_seed: int = 0


settings = Settings()
