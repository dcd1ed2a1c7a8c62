# Copyright 2026 CPNet Contributors
# SPDX-License-Identifier: AGPL-3.0-or-later
"""
Landmark-embedding condenser.

A frozen image-embedding provider maps the centre landmark image to a vector v,
a per-layer linear head turns v into sigmoid gating weights, and those weights
rescale the channels of every hooked generator layer.
"""

import os
import threading
from abc import ABC, abstractmethod
from typing import List, Optional, Sequence, Union

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from baseModels import CondenserConfig
from utils import ProviderLoadError, ShapeMismatch

CLIP_MEAN = (0.48145466, 0.4578275, 0.40821073)
CLIP_STD = (0.26862954, 0.26130258, 0.27577711)
CLIP_EMBEDDING_DIMS = {'RN50': 1024, 'RN101': 512, 'ViT-B/32': 512, 'ViT-B/16': 512, 'ViT-L/14': 768}


def _freeze(module: nn.Module) -> nn.Module:
    for parameter in module.parameters():
        parameter.requires_grad_(False)
    return module.eval()


def _as_landmark_batch(landmark_image: Union[np.ndarray, torch.Tensor]) -> torch.Tensor:
    """(H, W), (B, H, W) or (B, 1, H, W) to a (B, 1, H, W) tensor."""
    x = torch.from_numpy(np.asarray(landmark_image)) if not isinstance(landmark_image, torch.Tensor) else landmark_image
    if x.dim() == 2:
        x = x[None, None]
    elif x.dim() == 3:
        x = x[:, None]
    if x.dim() != 4 or x.shape[1] != 1:
        raise ShapeMismatch(f"landmark image must be single-channel, got shape {tuple(x.shape)}")
    return x


class EmbeddingProvider(nn.Module, ABC):
    """Frozen landmark-image encoder. Never registered with an optimizer."""

    dim: int

    @abstractmethod
    def encode(self, x: torch.Tensor) -> torch.Tensor:
        ...

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.encode(x)


class StubEmbeddingProvider(EmbeddingProvider):
    """
    Seeded random projection of the 32x32 downsampled landmark image,
    normalized to unit length. Deterministic, needs no download.
    """

    GRID = 32

    def __init__(self, dim: int = 64, seed: int = 0):
        super().__init__()
        self.dim = dim
        generator = torch.Generator().manual_seed(seed)
        projection = torch.randn(dim, self.GRID * self.GRID, generator=generator, dtype=torch.float64) / self.GRID
        self.register_buffer('projection', projection.float())
        _freeze(self)

    def encode(self, x: torch.Tensor) -> torch.Tensor:
        x = x.to(self.projection.dtype)
        if tuple(x.shape[-2:]) != (self.GRID, self.GRID):
            x = F.interpolate(x, size=(self.GRID, self.GRID), mode='bilinear', align_corners=False, antialias=True)
        return F.normalize(x.flatten(1) @ self.projection.T, dim=1)


class ClipVitEmbeddingProvider(EmbeddingProvider):
    """
    Pretrained CLIP image tower. The landmark image is repeated to three
    channels, resized to the tower input and CLIP-normalized.
    """

    def __init__(self, variant: str = 'ViT-B/32', weights_path: Optional[str] = None, device: str = 'cpu'):
        super().__init__()
        try:
            import clip
        except ImportError as e:
            raise ProviderLoadError("the clip_vit provider needs the optional 'clip' extra installed") from e
        try:
            if weights_path and os.path.isfile(weights_path):
                model, _ = clip.load(weights_path, device=device, jit=False)
            else:
                model, _ = clip.load(variant, device=device, jit=False, download_root=weights_path)
        except (RuntimeError, OSError) as e:
            raise ProviderLoadError(f"unable to load CLIP {variant}: {e}") from e
        self.model = _freeze(model.float())
        self.dim = int(model.visual.output_dim)
        expected = CLIP_EMBEDDING_DIMS.get(variant)
        if expected is not None and expected != self.dim:
            raise ProviderLoadError(f"CLIP {variant} produced {self.dim}-d embeddings, expected {expected}")
        self.input_resolution = int(model.visual.input_resolution)
        self.register_buffer('mean', torch.tensor(CLIP_MEAN).view(1, 3, 1, 1))
        self.register_buffer('std', torch.tensor(CLIP_STD).view(1, 3, 1, 1))
        self._lock = threading.Lock()

    def encode(self, x: torch.Tensor) -> torch.Tensor:
        x = x.to(self.mean.dtype).repeat(1, 3, 1, 1)
        x = F.interpolate(x, size=(self.input_resolution, self.input_resolution), mode='bicubic', align_corners=False)
        x = (x.clamp(0, 1) - self.mean) / self.std
        with self._lock, torch.no_grad():
            return self.model.encode_image(x).float()


def build_provider(config: CondenserConfig, device: str = 'cpu') -> EmbeddingProvider:
    if config.provider == 'clip_vit':
        return ClipVitEmbeddingProvider(config.clip_variant, config.weights_path, device)
    return StubEmbeddingProvider(config.stub_dim, config.stub_seed).to(device)


def embed(provider: EmbeddingProvider, landmark_image: Union[np.ndarray, torch.Tensor]) -> torch.Tensor:
    """Embedding vector(s) of the centre landmark image, shape (B, d)."""
    with torch.no_grad():
        vector = provider(_as_landmark_batch(landmark_image))
    if not torch.all(torch.isfinite(vector)):
        raise ValueError("embedding provider returned non-finite values")
    return vector


class CondenserHead(nn.Module):
    """One bias-free linear map from the embedding to each hooked layer's channel count."""

    def __init__(self, embedding_dim: int, layer_channels: Sequence[int]):
        super().__init__()
        self.embedding_dim = embedding_dim
        self.layer_channels = list(layer_channels)
        self.linears = nn.ModuleList(nn.Linear(embedding_dim, channels, bias=False) for channels in self.layer_channels)

    def forward(self, v: torch.Tensor) -> List[torch.Tensor]:
        return gating_weights(self, v)


def gating_weights(head: CondenserHead, v: torch.Tensor) -> List[torch.Tensor]:
    """w_l = sigmoid(W_l v); every entry lies strictly inside (0, 1)."""
    if v.shape[-1] != head.embedding_dim:
        raise ShapeMismatch(f"condenser head expects {head.embedding_dim}-d embeddings, got {v.shape[-1]}")
    return [torch.sigmoid(linear(v)) for linear in head.linears]


def recalibrate(x_l: torch.Tensor, w_l: torch.Tensor) -> torch.Tensor:
    """Channel-wise x_l * w_l for w_l of shape (C,) or (B, C)."""
    channels = x_l.shape[1]
    if w_l.shape[-1] != channels:
        raise ShapeMismatch(f"gating of width {w_l.shape[-1]} cannot scale a {channels}-channel layer")
    if w_l.dim() == 1:
        return x_l * w_l.view(1, channels, 1, 1)
    return x_l * w_l.view(w_l.shape[0], channels, 1, 1)
