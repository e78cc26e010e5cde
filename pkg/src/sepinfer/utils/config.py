"""Configuration settings for sepinfer."""
import os
from pathlib import Path

from dotenv import load_dotenv

# Base directory of the project
BASE_DIR = Path(__file__).resolve().parent.parent.parent.parent

load_dotenv(BASE_DIR / ".env")


class Config:
    """Base configuration class."""

    # Numerical tolerances
    EPS_NORM = float(os.getenv("SEPINFER_EPS_NORM", 1e-9))
    EPS_CONSISTENCY = float(os.getenv("SEPINFER_EPS_CONSISTENCY", 1e-9))
    EPS_SEP = float(os.getenv("SEPINFER_EPS_SEP", 1e-9))
    PIVOT_TOL = float(os.getenv("SEPINFER_PIVOT_TOL", 1e-10))

    # Size caps
    ORACLE_CAP = int(os.getenv("SEPINFER_ORACLE_CAP", 4096))  # joint parent assignments
    JOINT_CAP = int(os.getenv("SEPINFER_JOINT_CAP", 2 ** 20))  # joint state assignments

    # Reproducibility
    DEFAULT_SEED = int(os.getenv("SEPINFER_DEFAULT_SEED", 0))

    # Application settings
    LOG_LEVEL = os.getenv("SEPINFER_LOG_LEVEL", "INFO")


class DevelopmentConfig(Config):
    """Development environment configuration."""

    LOG_LEVEL = "DEBUG"


class TestingConfig(Config):
    """Testing environment configuration."""

    LOG_LEVEL = "WARNING"
    DEFAULT_SEED = 0


# Configuration dictionary
config = {
    "development": DevelopmentConfig,
    "production": Config,
    "testing": TestingConfig,
    "default": Config,
}


def get_config(env=None):
    """Get configuration based on environment."""
    if env is None:
        env = os.getenv("SEPINFER_ENV", "default")
    return config.get(env, config["default"])
