# Copyright 2026 CPNet Contributors
# SPDX-License-Identifier: AGPL-3.0-or-later
"""
Checkpoint container.

A checkpoint is an uncompressed zip archive with fixed timestamps and sorted
entries: metadata.json (format version, iteration, config snapshot, the list
of stored networks, optimizer hyper-parameters) followed by one .npy file per
tensor. Saving a loaded checkpoint reproduces it byte for byte.
"""

import io
import json
import os
import zipfile
from collections import OrderedDict
from typing import Any, Dict, Iterable, List, Optional

import numpy as np
import torch
from pydantic import BaseModel, ConfigDict

from baseModels import TrainConfig
from utils import CheckpointError

FORMAT_VERSION = 1
NAMESPACES = ('generator', 'condenser', 'disc_frame', 'disc_seq', 'predictor')
METADATA_NAME = "metadata.json"
ARRAY_PREFIX = "arrays/"
OPTIMIZER_PREFIX = "optim/"
ZIP_EPOCH = (1980, 1, 1, 0, 0, 0)


class Checkpoint(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    metadata: Dict[str, Any]
    arrays: Dict[str, np.ndarray]

    @property
    def iteration(self) -> int:
        return int(self.metadata['iteration'])

    @property
    def namespaces(self) -> List[str]:
        return list(self.metadata.get('namespaces', []))

    def config(self) -> TrainConfig:
        return TrainConfig.model_validate(self.metadata['config'])

    def state_dict(self, namespace: str) -> "OrderedDict[str, torch.Tensor]":
        if namespace not in self.namespaces:
            raise CheckpointError(f"checkpoint holds no '{namespace}' network", missing=[namespace])
        prefix = f"{namespace}/"
        return OrderedDict(
            (name[len(prefix):], torch.from_numpy(array.copy()))
            for name, array in sorted(self.arrays.items()) if name.startswith(prefix)
        )

    def optimizer_state(self, namespace: str) -> Optional[dict]:
        groups = self.metadata.get('optimizers', {}).get(namespace)
        if groups is None:
            return None
        prefix = f"{OPTIMIZER_PREFIX}{namespace}/"
        state: Dict[int, Dict[str, Any]] = {}
        for name, array in self.arrays.items():
            if not name.startswith(prefix):
                continue
            index, key = name[len(prefix):].split('/', 1)
            state.setdefault(int(index), {})[key] = torch.from_numpy(array.copy())
        for index, scalars in groups.get('scalars', {}).items():
            state.setdefault(int(index), {}).update(scalars)
        return {'state': state, 'param_groups': [dict(group) for group in groups['param_groups']]}


def _to_array(tensor: torch.Tensor) -> np.ndarray:
    return np.ascontiguousarray(tensor.detach().cpu().numpy())


def build_checkpoint(networks: Dict[str, torch.nn.Module], optimizers: Dict[str, torch.optim.Optimizer],
                     config: TrainConfig, iteration: int) -> Checkpoint:
    arrays: Dict[str, np.ndarray] = {}
    for namespace, network in networks.items():
        for name, tensor in network.state_dict().items():
            arrays[f"{namespace}/{name}"] = _to_array(tensor)

    optimizer_meta = {}
    for namespace, optimizer in optimizers.items():
        state = optimizer.state_dict()
        scalars: Dict[str, Dict[str, Any]] = {}
        for index, entries in state['state'].items():
            for key, value in entries.items():
                if isinstance(value, torch.Tensor):
                    arrays[f"{OPTIMIZER_PREFIX}{namespace}/{index}/{key}"] = _to_array(value)
                else:
                    scalars.setdefault(str(index), {})[key] = value
        optimizer_meta[namespace] = {'param_groups': state['param_groups'], 'scalars': scalars}

    metadata = {
        'format_version': FORMAT_VERSION,
        'iteration': int(iteration),
        'namespaces': sorted(networks),
        'config': config.model_dump(mode='json'),
        'optimizers': optimizer_meta,
    }
    # normalise tuples and other JSON-equivalent values so a reload compares equal
    return Checkpoint(metadata=json.loads(json.dumps(metadata)), arrays=arrays)


def _zip_entry(name: str) -> zipfile.ZipInfo:
    info = zipfile.ZipInfo(name, date_time=ZIP_EPOCH)
    info.compress_type = zipfile.ZIP_STORED
    info.external_attr = 0o644 << 16
    return info


def save_checkpoint(checkpoint: Checkpoint, path: str) -> str:
    tmp_path = f"{path}.tmp"
    try:
        directory = os.path.dirname(os.path.abspath(path))
        os.makedirs(directory, exist_ok=True)
        with zipfile.ZipFile(tmp_path, "w") as archive:
            archive.writestr(_zip_entry(METADATA_NAME), json.dumps(checkpoint.metadata, sort_keys=True, indent=2))
            for name in sorted(checkpoint.arrays):
                buffer = io.BytesIO()
                np.lib.format.write_array(buffer, checkpoint.arrays[name], allow_pickle=False)
                archive.writestr(_zip_entry(f"{ARRAY_PREFIX}{name}.npy"), buffer.getvalue())
        os.replace(tmp_path, path)
    except OSError as e:
        raise CheckpointError(f"Unable to write checkpoint {path}: {e}", path=path) from e
    return path


def load_checkpoint(path: str, required: Iterable[str] = NAMESPACES) -> Checkpoint:
    try:
        with zipfile.ZipFile(path, "r") as archive:
            metadata = json.loads(archive.read(METADATA_NAME))
            arrays = {}
            for name in archive.namelist():
                if not (name.startswith(ARRAY_PREFIX) and name.endswith(".npy")):
                    continue
                arrays[name[len(ARRAY_PREFIX):-len(".npy")]] = np.lib.format.read_array(
                    io.BytesIO(archive.read(name)), allow_pickle=False)
    except (OSError, zipfile.BadZipFile, KeyError, ValueError) as e:
        raise CheckpointError(f"Unable to read checkpoint {path}: {e}", path=path) from e

    if metadata.get('format_version') != FORMAT_VERSION:
        raise CheckpointError(f"Checkpoint {path} has format version {metadata.get('format_version')}, "
                              f"expected {FORMAT_VERSION}", path=path)
    missing = [namespace for namespace in required if namespace not in metadata.get('namespaces', [])]
    if missing:
        raise CheckpointError(f"Checkpoint {path} is missing networks: {', '.join(missing)}", path=path, missing=missing)
    return Checkpoint(metadata=metadata, arrays=arrays)


def restore_network(checkpoint: Checkpoint, namespace: str, network: torch.nn.Module):
    """load_state_dict with every key mismatch reported as a CheckpointError."""
    state = checkpoint.state_dict(namespace)
    expected = set(network.state_dict())
    missing = sorted(expected - set(state))
    unexpected = sorted(set(state) - expected)
    if missing or unexpected:
        raise CheckpointError(f"'{namespace}' weights do not fit the configured network: "
                              f"missing {missing}, unexpected {unexpected}", missing=[namespace])
    try:
        network.load_state_dict(state)
    except RuntimeError as e:
        raise CheckpointError(f"'{namespace}' weights do not fit the configured network: {e}",
                              missing=[namespace]) from e
