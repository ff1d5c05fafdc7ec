import numpy as np
import pytest

from metastab.cli import RunConfig, bundled_config_path, run_pipeline


def _pipeline(name):
    cfg = RunConfig.from_file(bundled_config_path(name))
    return cfg, run_pipeline(cfg)


@pytest.fixture(scope="session")
def pipe_symmetric():
    return _pipeline("symmetric_quartic_1d")


@pytest.fixture(scope="session")
def pipe_tilted():
    return _pipeline("tilted_quartic_1d")


@pytest.fixture(scope="session")
def pipe_touching():
    return _pipeline("touching_quartic_1d")


@pytest.fixture(scope="session")
def pipe_2d():
    return _pipeline("twocontact_2d")
