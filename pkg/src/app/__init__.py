"""App module exports."""
from src.app.config import RunConfig, load_run_config, validate_run_config, write_snapshot

__all__ = ['RunConfig', 'load_run_config', 'validate_run_config', 'write_snapshot']
