# CPNet test fixtures
# Copyright 2025 sysmocom - s.f.m.c. GmbH <info@sysmocom.de>
# Copyright 2026 CPNet Contributors
# SPDX-License-Identifier: AGPL-3.0-or-later
import os
from pathlib import Path

import pytest

from baseModels import TrainConfig
from cpnet_config import load_train_config
from data_pipeline import make_toy_dataset
from logtool import LogTool

top_dir = Path(Path(__file__) / "../..").resolve()
cpnet_env = {
    "PATH": os.environ["PATH"],
    "CPNET_CONFIG": os.environ["CPNET_CONFIG"],
    "PYTHONPATH": os.path.join(top_dir, "lib"),
    "PYTHONUNBUFFERED": "1",
}


def pytest_collection_modifyitems(session, config, items):
    def by_slow(item):
        return 0 if item.get_closest_marker("slow") is None else 1

    # Run slow tests at the end
    items.sort(key=by_slow, reverse=False)


def small_config(**updates) -> TrainConfig:
    """tests/config.yaml with nested overrides applied on top."""
    data = load_train_config().model_dump()
    for key, value in updates.items():
        if isinstance(value, dict):
            data[key] = {**data[key], **value}
        else:
            data[key] = value
    return TrainConfig.model_validate(data)


@pytest.fixture(scope="session")
def toy_clip():
    return make_toy_dataset(seed=0, num_clips=1, frames_per_clip=16, resolution=32)[0]


@pytest.fixture(scope="session")
def toy_clips():
    return make_toy_dataset(seed=1, num_clips=3, frames_per_clip=12, resolution=32)


@pytest.fixture
def log_tool():
    return LogTool(config={'logging': {'level': 'ERROR'}})
