"""Environment configuration for the certirand lab."""

import os
from pathlib import Path
from typing import Optional
from pydantic import BaseModel, ConfigDict, Field
from dotenv import load_dotenv

# Load environment variables
load_dotenv()


class Config(BaseModel):
    """Process-level settings with environment variable support.

    Protocol constants (alpha, gamma, margins, ...) are not here; they live
    in constants files loaded by ``src.params.load_constants``. This model
    only holds where things go and how strict the numerics are.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True)

    # Paths
    default_consts: Path = Field(default=Path("configs/test.consts"))
    out_dir: Path = Field(default=Path("runs"))

    # Simulation
    rng_seed: int = Field(default=0, ge=0)
    max_qubits: int = Field(default=20, ge=2, le=24)

    # Numerical tolerances
    tolerance: float = Field(default=1e-10, gt=0.0, le=1e-3)
    eigen_floor: float = Field(default=1e-12, gt=0.0, le=1e-6)
    cert_slack: float = Field(default=1e-6, gt=0.0, le=1e-2)
    solver_gap: float = Field(default=1e-6, gt=0.0, le=1e-2)
    solver_max_iter: int = Field(default=20000, ge=10)

    # Logging
    log_level: str = Field(default="INFO")
    log_file: Optional[str] = Field(default=None)

    @classmethod
    def from_env(cls) -> "Config":
        """Load configuration from environment variables."""
        return cls(
            default_consts=Path(os.getenv("CERTIRAND_CONSTS", "configs/test.consts")),
            out_dir=Path(os.getenv("CERTIRAND_OUT_DIR", "runs")),
            rng_seed=int(os.getenv("CERTIRAND_RNG_SEED", "0")),
            max_qubits=int(os.getenv("CERTIRAND_MAX_QUBITS", "20")),
            tolerance=float(os.getenv("CERTIRAND_TOLERANCE", "1e-10")),
            eigen_floor=float(os.getenv("CERTIRAND_EIGEN_FLOOR", "1e-12")),
            cert_slack=float(os.getenv("CERTIRAND_CERT_SLACK", "1e-6")),
            solver_gap=float(os.getenv("CERTIRAND_SOLVER_GAP", "1e-6")),
            solver_max_iter=int(os.getenv("CERTIRAND_SOLVER_MAX_ITER", "20000")),
            log_level=os.getenv("LOG_LEVEL", "INFO"),
            log_file=os.getenv("LOG_FILE") or None,
        )


# Global config instance
config = Config.from_env()
