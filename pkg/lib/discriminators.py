# Copyright 2026 CPNet Contributors
# SPDX-License-Identifier: AGPL-3.0-or-later
"""
Patch discriminators. The frame discriminator sees one landmark window next
to one candidate frame; the sequence discriminator sees T consecutive
(window, frame) pairs stacked along the channel axis.
"""

from typing import Sequence, Union

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from baseModels import DiscriminatorConfig
from data_pipeline import ConditioningWindow, WINDOW_SIZE
from utils import ShapeMismatch

FRAME_CHANNELS = 3


class PatchDiscriminator(nn.Module):

    def __init__(self, config: DiscriminatorConfig = DiscriminatorConfig(), landmark_channels: int = WINDOW_SIZE):
        super().__init__()
        self.config = config
        self.landmark_channels = landmark_channels
        steps = config.sequence_length if config.kind == 'sequence' else 1
        self.in_channels = steps * (landmark_channels + FRAME_CHANNELS)
        self.levels = nn.ModuleList()
        channels = self.in_channels
        for level in range(config.levels):
            width = config.base_width * 2 ** level
            self.levels.append(nn.Conv2d(channels, width, 4, stride=2, padding=1))
            channels = width
        self.head = nn.Conv2d(channels, 1, 3, padding=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() != 4 or x.shape[1] != self.in_channels:
            raise ShapeMismatch(f"{self.config.kind} discriminator expects {self.in_channels} channels, got {tuple(x.shape)}")
        h = x
        for level, conv in enumerate(self.levels):
            h = conv(h)
            if level > 0:
                h = F.instance_norm(h)
            h = F.leaky_relu(h, 0.2)
        return self.head(h)


def _landmark_tensor(x, like: torch.nn.Module) -> torch.Tensor:
    dtype = next(like.parameters()).dtype
    if isinstance(x, ConditioningWindow):
        return torch.from_numpy(x.landmark_images).to(dtype).unsqueeze(0)
    if isinstance(x, np.ndarray):
        return torch.from_numpy(x).to(dtype)
    return x


def _frame_tensor(candidate, like: torch.nn.Module) -> torch.Tensor:
    dtype = next(like.parameters()).dtype
    if isinstance(candidate, np.ndarray):
        array = candidate[None] if candidate.ndim == 3 else candidate
        return torch.from_numpy(np.ascontiguousarray(array.transpose(0, 3, 1, 2))).to(dtype)
    return candidate


def score_frame(discriminator: PatchDiscriminator, x: Union[ConditioningWindow, torch.Tensor],
                candidate: Union[np.ndarray, torch.Tensor]) -> torch.Tensor:
    """Patch logits (B, 1, h, w) for landmarks (B, 7, H, W) and frames (B, 3, H, W)."""
    landmarks = _landmark_tensor(x, discriminator)
    frames = _frame_tensor(candidate, discriminator)
    if landmarks.shape[0] != frames.shape[0] or landmarks.shape[-2:] != frames.shape[-2:] \
            or frames.shape[1] != FRAME_CHANNELS:
        raise ShapeMismatch(f"landmarks {tuple(landmarks.shape)} do not pair with frames {tuple(frames.shape)}")
    return discriminator(torch.cat([landmarks, frames], dim=1))


def score_sequence(discriminator: PatchDiscriminator,
                   xs: Union[Sequence[ConditioningWindow], torch.Tensor],
                   candidates: Union[np.ndarray, torch.Tensor]) -> torch.Tensor:
    """Patch logits for landmarks (B, T, 7, H, W) and frames (B, T, 3, H, W)."""
    if not isinstance(xs, torch.Tensor):
        xs = torch.stack([_landmark_tensor(window, discriminator)[0] for window in xs]).unsqueeze(0)
    if isinstance(candidates, np.ndarray):
        candidates = _frame_tensor(candidates, discriminator).unsqueeze(0)
    steps = discriminator.config.sequence_length
    if xs.dim() != 5 or candidates.dim() != 5 or xs.shape[:2] != candidates.shape[:2] or xs.shape[1] != steps:
        raise ShapeMismatch(
            f"sequence discriminator expects {steps} paired steps, got landmarks {tuple(xs.shape)} "
            f"and frames {tuple(candidates.shape)}")
    pairs = torch.cat([xs, candidates], dim=2)
    return discriminator(pairs.flatten(1, 2))
