# Copyright 2025 sysmocom - s.f.m.c. GmbH <info@sysmocom.de>
# Copyright 2026 CPNet Contributors
# SPDX-License-Identifier: AGPL-3.0-or-later
import os
import sys
import yaml
from pathlib import Path

from pydantic import ValidationError

from baseModels import TrainConfig
from utils import ConfigError

config = None


def read_yaml(path) -> dict:
    try:
        with open(path, "r") as stream:
            data = yaml.safe_load(stream)
    except (OSError, yaml.YAMLError) as e:
        raise ConfigError(f"Unable to read config file {path}: {e}") from e
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"Config file {path} must contain a mapping at the top level")
    return data


def load_config():
    global config

    if "CPNET_CONFIG" in os.environ:
        paths = [os.environ["CPNET_CONFIG"]]
        if not os.path.exists(paths[0]):
            print(f"ERROR: CPNET_CONFIG is set, but file does not exist: {paths[0]}")
            sys.exit(2)
    else:
        paths = [
            "/etc/cpnet/config.yaml",
            "/usr/share/cpnet/config.yaml",
            Path(__file__).resolve().parent.parent / "config.yaml",
        ]

    for path in paths:
        if os.path.exists(path):
            config = read_yaml(path)
            return

    print("ERROR: failed to find CPNet config, tried these paths:")
    for path in paths:
        print(f" * {path}")
    sys.exit(2)


def train_config_from(data: dict) -> TrainConfig:
    """
    Validates a raw config dict into a TrainConfig. Unknown top-level sections
    (logging, data, ...) are tolerated so one file can drive every service.
    """
    try:
        return TrainConfig.model_validate(data or {})
    except ValidationError as e:
        raise ConfigError(f"Invalid training configuration: {e}") from e


def load_train_config(path=None) -> TrainConfig:
    if path is None:
        return train_config_from(config)
    return train_config_from(read_yaml(path))


load_config()
