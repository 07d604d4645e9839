"""Run configuration and environment settings."""

from adareg.config.run_config import RunConfig, load_run_config

__all__ = ['RunConfig', 'load_run_config']
