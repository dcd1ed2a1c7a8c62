# Copyright 2025 sysmocom - s.f.m.c. GmbH <info@sysmocom.de>
# Copyright 2026 CPNet Contributors
# SPDX-License-Identifier: AGPL-3.0-or-later
import math


class CPNetError(Exception):
    """Base class for every error raised by the CPNet library"""


class ConfigError(CPNetError, ValueError):
    """Configuration file missing, unreadable or failing validation"""


class ShapeMismatch(CPNetError, ValueError):
    """Tensor or array shapes do not match what an operation expects"""


class WindowRangeError(CPNetError, ValueError):
    """A conditioning window was requested outside the clip"""


class InvalidKernel(CPNetError, ValueError):
    """Gaussian kernel parameters are out of range"""


class ProviderLoadError(CPNetError):
    """A pretrained backend (CLIP, VGG) could not be loaded"""


class CheckpointError(CPNetError):
    """Checkpoint could not be written or read"""

    def __init__(self, message: str, path=None, missing=None):
        super().__init__(message)
        self.path = path
        self.missing = list(missing or [])


class NonFiniteLoss(CPNetError):
    """A loss term became NaN or infinite during training"""

    def __init__(self, term: str, value: float, iteration: int):
        super().__init__(f"Loss term {term} is not finite ({value}) at iteration {iteration}")
        self.term = term
        self.value = value
        self.iteration = iteration


def require_shape(name: str, actual, expected):
    if tuple(actual) != tuple(expected):
        raise ShapeMismatch(f"{name}: expected shape {tuple(expected)}, got {tuple(actual)}")


def check_finite(terms: dict, iteration: int):
    for term, value in terms.items():
        if not math.isfinite(float(value)):
            raise NonFiniteLoss(term, float(value), iteration)
