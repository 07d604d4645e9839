"""Pytest configuration and fixtures.

This module sets up common test fixtures and configuration used across tests.
"""
import os

os.environ.setdefault('ADAREG_LOG_FILE', '')

from pathlib import Path

import numpy as np
import pytest

from adareg.config.run_config import RunConfig, load_run_config
from adareg.data.synth import Dataset, generate
from adareg.model.topology import ReIDModel

CONFIG_DIR = Path(__file__).resolve().parent.parent / 'config'
SMOKE_CONFIG = CONFIG_DIR / 'smoke.env'
DESK_CONFIG = CONFIG_DIR / 'desk.env'


def pytest_addoption(parser):
    parser.addoption('--run-slow', action='store_true', default=False,
                     help='run desk-scale experiments marked slow')


def pytest_configure(config):
    config.addinivalue_line('markers', 'slow: desk-scale experiment, skipped without --run-slow')


def pytest_collection_modifyitems(config, items):
    if config.getoption('--run-slow'):
        return
    skip_slow = pytest.mark.skip(reason='needs --run-slow')
    for item in items:
        if 'slow' in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture(scope='session')
def smoke_config() -> RunConfig:
    """The seconds-long configuration shipped in config/smoke.env."""
    return load_run_config(str(SMOKE_CONFIG))


@pytest.fixture(scope='session')
def smoke_dataset(smoke_config: RunConfig) -> Dataset:
    return generate(smoke_config.data)


@pytest.fixture
def small_model(smoke_config: RunConfig) -> ReIDModel:
    return ReIDModel.build(smoke_config.model, smoke_config.reg, 4, np.random.default_rng(7))


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)
