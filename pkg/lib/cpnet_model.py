# Copyright 2026 CPNet Contributors
# SPDX-License-Identifier: AGPL-3.0-or-later
"""
The full frame generator: backbone, condenser head and the frozen embedding
provider, plus the numpy <-> tensor conversions around it.
"""

from itertools import chain
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn as nn

from baseModels import GeneratorConfig
from clip_condenser import CondenserHead, EmbeddingProvider, gating_weights
from data_pipeline import ConditioningWindow, WINDOW_RADIUS
from generator import GeneratorBackbone
from utils import ShapeMismatch


def windows_to_tensors(windows: Sequence[ConditioningWindow], dtype=torch.float32) \
        -> Tuple[torch.Tensor, Optional[torch.Tensor]]:
    """Landmarks (B, 7, H, W) and, when every window carries them, prior frames (B, 9, H, W)."""
    landmarks = torch.from_numpy(np.stack([w.landmark_images for w in windows])).to(dtype)
    if any(w.prior_rgb is None for w in windows):
        return landmarks, None
    prior = np.stack([w.prior_rgb for w in windows])                      # (B, 3, H, W, 3)
    prior = prior.transpose(0, 1, 4, 2, 3).reshape(len(windows), -1, *prior.shape[2:4])
    return landmarks, torch.from_numpy(np.ascontiguousarray(prior)).to(dtype)


def frames_to_tensor(frames: np.ndarray, dtype=torch.float32) -> torch.Tensor:
    """(..., H, W, 3) float frames to (..., 3, H, W)."""
    frames = np.asarray(frames)
    return torch.from_numpy(np.ascontiguousarray(np.moveaxis(frames, -1, -3))).to(dtype)


def tensor_to_frames(tensor: torch.Tensor) -> np.ndarray:
    return np.ascontiguousarray(np.moveaxis(tensor.detach().cpu().float().numpy(), -3, -1))


class TalkingFaceGenerator:
    """
    G(x) = backbone(x, gating(v)) with v the embedding of the centre landmark
    image. The provider stays outside every optimizer and checkpoint.
    """

    def __init__(self, config: GeneratorConfig, provider: Optional[EmbeddingProvider] = None):
        self.config = config
        self.backbone = GeneratorBackbone(config)
        self.provider = provider if config.condenser_enabled else None
        if config.condenser_enabled and provider is None:
            raise ValueError("the condenser is enabled but no embedding provider was given")
        self.head = CondenserHead(provider.dim, self.backbone.hooked_channels) if self.provider is not None \
            else CondenserHead(1, [])

    def networks(self) -> Dict[str, nn.Module]:
        return {'generator': self.backbone, 'condenser': self.head}

    def parameters(self) -> Iterator[nn.Parameter]:
        return chain(self.backbone.parameters(), self.head.parameters())

    def to(self, *args, **kwargs) -> "TalkingFaceGenerator":
        self.backbone.to(*args, **kwargs)
        self.head.to(*args, **kwargs)
        if self.provider is not None and not any(isinstance(a, torch.dtype) for a in args) and 'dtype' not in kwargs:
            self.provider.to(*args, **kwargs)
        return self

    def train(self, mode: bool = True) -> "TalkingFaceGenerator":
        self.backbone.train(mode)
        self.head.train(mode)
        return self

    def eval(self) -> "TalkingFaceGenerator":
        return self.train(False)

    @property
    def dtype(self) -> torch.dtype:
        return next(self.backbone.parameters()).dtype

    def gating(self, landmarks: torch.Tensor) -> Optional[List[torch.Tensor]]:
        if self.provider is None:
            return None
        with torch.no_grad():
            vector = self.provider(landmarks[:, WINDOW_RADIUS:WINDOW_RADIUS + 1])
        return gating_weights(self.head, vector.to(self.dtype))

    def __call__(self, landmarks: torch.Tensor, prior: Optional[torch.Tensor] = None) -> torch.Tensor:
        if landmarks.dim() != 4 or landmarks.shape[1] != self.config.landmark_channels:
            raise ShapeMismatch(f"expected (B, {self.config.landmark_channels}, H, W) landmarks, got {tuple(landmarks.shape)}")
        if self.config.use_prior_frames:
            if prior is None:
                raise ShapeMismatch("this generator is conditioned on prior frames but none were given")
            x = torch.cat([landmarks, prior], dim=1)
        else:
            x = landmarks
        return self.backbone(x, gating=self.gating(landmarks))

    def generate(self, window: ConditioningWindow) -> np.ndarray:
        """One (H, W, 3) frame for one window, inference mode."""
        landmarks, prior = windows_to_tensors([window], self.dtype)
        device = next(self.backbone.parameters()).device
        landmarks = landmarks.to(device)
        prior = prior.to(device) if prior is not None else None
        was_training = self.backbone.training
        self.eval()
        with torch.no_grad():
            frame = self(landmarks, prior)
        self.train(was_training)
        return tensor_to_frames(frame)[0]
