"""Shared fixtures."""

import logging
from pathlib import Path
from typing import Any, Callable

import numpy as np
import pytest

from src.config import ExperimentConfig
from src.utils.logger import ROOT_LOGGER
from src.utils.rng import make_stream


@pytest.fixture
def rng() -> np.random.Generator:
    return make_stream(20240601, "tests")


@pytest.fixture
def small_config(tmp_path: Path) -> Callable[..., ExperimentConfig]:
    """Factory for fast experiment configs writing under ``tmp_path``."""

    def build(name: str, **overrides: Any) -> ExperimentConfig:
        values = dict(
            name=name,
            seed=7,
            out_dir=str(tmp_path / "results"),
            replicates=400,
            chunk_size=100,
            n_mc=2000,
            truncation=200,
            bootstrap_resamples=20,
            min_survivors=1,
            require_trend=False,
            log_level="WARNING",
        )
        values.update(overrides)
        return ExperimentConfig(**values)

    return build


@pytest.fixture(autouse=True)
def _release_log_handlers():
    yield
    logger = logging.getLogger(ROOT_LOGGER)
    for handler in list(logger.handlers):
        handler.close()
        logger.removeHandler(handler)
