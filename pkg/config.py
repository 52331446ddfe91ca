"""Runtime settings for the mortgage default benchmark.

Loads settings from environment variables with support for .env files.
Priority: environment variables > .env file > defaults

Experiment settings (data source, cutoffs, ratios, learners) live in the YAML
file read by ``run_experiment.load_experiment_config``.
"""

import logging
import os
from pathlib import Path

LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL")


def load_env_file(env_file: str = ".env") -> None:
    """Load environment variables from .env file if it exists."""
    env_path = Path(env_file)
    if not env_path.exists():
        return

    with open(env_path) as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith('#'):
                continue
            if '=' in line:
                key, value = line.split('=', 1)
                key, value = key.strip(), value.strip().strip('"').strip("'")
                # Only set if not already in environment
                if key not in os.environ:
                    os.environ[key] = value


class Config:
    """Benchmark runtime settings."""

    def __init__(self, load_dotenv: bool = True):
        if load_dotenv:
            load_env_file()

    # Execution
    @property
    def n_jobs(self) -> int:
        return int(os.environ.get('BENCH_N_JOBS', '1'))

    @property
    def log_level(self) -> str:
        return os.environ.get('BENCH_LOG_LEVEL', 'INFO').upper()

    @property
    def output_dir(self) -> str:
        return os.environ.get('BENCH_OUTPUT_DIR', 'outputs')

    # MLflow Configuration
    @property
    def enable_mlflow(self) -> bool:
        return os.environ.get('ENABLE_MLFLOW', 'false').lower() == 'true'

    @property
    def mlflow_tracking_uri(self) -> str:
        return os.environ.get('MLFLOW_TRACKING_URI', 'file:./mlruns')

    @property
    def mlflow_experiment_name(self) -> str:
        return os.environ.get('MLFLOW_EXPERIMENT_NAME', 'mortgage-default-benchmark')

    def validate(self) -> list[str]:
        """Validate settings.

        Returns:
            List of problems, empty when every setting is usable
        """
        problems = []
        try:
            if self.n_jobs == 0:
                problems.append('BENCH_N_JOBS must not be 0')
        except ValueError:
            problems.append(f"BENCH_N_JOBS is not an integer: {os.environ.get('BENCH_N_JOBS')!r}")
        if self.log_level not in LOG_LEVELS:
            problems.append(f"BENCH_LOG_LEVEL must be one of {', '.join(LOG_LEVELS)}")
        return problems

    def logging_level(self) -> int:
        return getattr(logging, self.log_level, logging.INFO)

    def __repr__(self) -> str:
        return (
            f"Config(n_jobs={os.environ.get('BENCH_N_JOBS', '1')}, "
            f"log_level={self.log_level}, "
            f"output_dir={self.output_dir}, "
            f"mlflow={self.enable_mlflow})"
        )


# Global config instance
config = Config()
