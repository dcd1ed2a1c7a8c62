# Copyright 2026 CPNet Contributors
# SPDX-License-Identifier: AGPL-3.0-or-later
"""
Densely-connected encoder / transition / decoder generator.

Every transition block and every decoder level is a hooked layer: its input
x_l first receives the projected, spatially aligned encoder features e_1..e_3
(dense fusion) and is then scaled channel-wise by the condenser gating.
"""

from typing import List, NamedTuple, Optional, Sequence, Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from baseModels import GeneratorConfig
from clip_condenser import recalibrate
from utils import ShapeMismatch

FUSED_LEVELS = 3


class FeatureMapSet(NamedTuple):
    e1: torch.Tensor
    e2: torch.Tensor
    e3: torch.Tensor


def align_spatial(feature: torch.Tensor, size: Tuple[int, int]) -> torch.Tensor:
    """Adaptive average pooling down to size, bilinear resize when size is larger."""
    if tuple(feature.shape[-2:]) == tuple(size):
        return feature
    if feature.shape[-2] >= size[0] and feature.shape[-1] >= size[1]:
        return F.adaptive_avg_pool2d(feature, size)
    return F.interpolate(feature, size=size, mode='bilinear', align_corners=False)


def dense_fuse(x_l: torch.Tensor, features: FeatureMapSet, projections: Sequence[nn.Conv2d]) -> torch.Tensor:
    """x_l + sum_i Pool(H_i(e_i)) with H_i a 1x1 convolution per encoder level."""
    if len(projections) != len(features):
        raise ShapeMismatch(f"dense fusion needs {len(features)} projections, got {len(projections)}")
    fused = x_l
    for e_i, projection in zip(features, projections):
        if projection.in_channels != e_i.shape[1] or projection.out_channels != x_l.shape[1]:
            raise ShapeMismatch(
                f"projection {projection.in_channels}->{projection.out_channels} cannot map "
                f"{e_i.shape[1]} encoder channels onto {x_l.shape[1]} layer channels")
        fused = fused + align_spatial(projection(e_i), tuple(x_l.shape[-2:]))
    return fused


class ResidualBlock(nn.Module):

    def __init__(self, channels: int, normalize: bool = True):
        super().__init__()
        self.conv1 = nn.Conv2d(channels, channels, 3, padding=1)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1)
        self.normalize = normalize

    def _norm(self, x):
        return F.instance_norm(x) if self.normalize else x

    def forward(self, x):
        return x + self._norm(self.conv2(F.relu(self._norm(self.conv1(x)))))


class GeneratorBackbone(nn.Module):

    def __init__(self, config: GeneratorConfig = GeneratorConfig()):
        super().__init__()
        self.config = config
        widths = [config.base_width * 2 ** level for level in range(config.encoder_levels)]
        self.encoder_widths = widths
        self.normalize = config.normalization == 'instance'

        self.encoder = nn.ModuleList()
        in_channels = config.input_channels
        for width in widths:
            self.encoder.append(nn.Conv2d(in_channels, width, 4, stride=2, padding=1))
            in_channels = width

        self.transition = nn.ModuleList(ResidualBlock(widths[-1], self.normalize) for _ in range(config.transition_blocks))

        # deepest level first; every level but the first also takes its encoder skip
        self.decoder = nn.ModuleList()
        decoder_inputs = []
        for level in reversed(range(config.encoder_levels)):
            in_channels = widths[-1] if level == config.encoder_levels - 1 else 2 * widths[level]
            out_channels = widths[level - 1] if level > 0 else config.output_channels
            self.decoder.append(nn.ConvTranspose2d(in_channels, out_channels, 4, stride=2, padding=1))
            decoder_inputs.append(in_channels)

        self.hooked_channels: List[int] = [widths[-1]] * config.transition_blocks + decoder_inputs
        self.fusion = nn.ModuleList(
            nn.ModuleList(nn.Conv2d(widths[i], channels, 1) for i in range(FUSED_LEVELS))
            for channels in self.hooked_channels
        )

    def _norm(self, x):
        return F.instance_norm(x) if self.normalize else x

    def encode(self, x: torch.Tensor):
        """Returns (e_1..e_3, deepest feature, every encoder output)."""
        if x.dim() != 4 or x.shape[1] != self.config.input_channels:
            raise ShapeMismatch(f"generator expects {self.config.input_channels} input channels, got shape {tuple(x.shape)}")
        scale = 2 ** self.config.encoder_levels
        if x.shape[-2] % scale or x.shape[-1] % scale:
            raise ShapeMismatch(f"input size {tuple(x.shape[-2:])} is not divisible by {scale}")
        outputs = []
        h = x
        for level, conv in enumerate(self.encoder):
            h = conv(h)
            if level > 0:
                h = self._norm(h)
            h = F.leaky_relu(h, 0.2)
            outputs.append(h)
        return FeatureMapSet(*outputs[:FUSED_LEVELS]), outputs[-1], outputs

    def _check_gating(self, gating, batch: int):
        if len(gating) != len(self.hooked_channels):
            raise ShapeMismatch(f"gating supplies {len(gating)} weight vectors for {len(self.hooked_channels)} hooked layers")
        for index, (weights, channels) in enumerate(zip(gating, self.hooked_channels)):
            if weights.shape[-1] != channels or (weights.dim() == 2 and weights.shape[0] != batch):
                raise ShapeMismatch(f"gating for hooked layer {index} has shape {tuple(weights.shape)}, expected {channels} channels")

    def _hook(self, h, index, features, gating):
        if self.config.dense_fusion_enabled:
            h = dense_fuse(h, features, self.fusion[index])
        if gating is not None:
            h = recalibrate(h, gating[index])
        return h

    def forward(self, x: torch.Tensor, gating: Optional[Sequence[torch.Tensor]] = None) -> torch.Tensor:
        if gating is not None:
            self._check_gating(gating, x.shape[0])
        features, h, skips = self.encode(x)
        hook = 0
        for block in self.transition:
            h = block(self._hook(h, hook, features, gating))
            hook += 1
        for step, layer in enumerate(self.decoder):
            if step > 0:
                h = torch.cat([h, skips[len(skips) - 1 - step]], dim=1)
            h = layer(self._hook(h, hook, features, gating))
            hook += 1
            if step < len(self.decoder) - 1:
                h = F.relu(self._norm(h))
        return torch.sigmoid(h)


def generate_frame(backbone: GeneratorBackbone, x: torch.Tensor,
                   gating: Optional[Sequence[torch.Tensor]] = None) -> torch.Tensor:
    """Inference-mode forward pass, (B, C, H, W) conditioning to (B, 3, H, W) frames in [0, 1]."""
    with torch.no_grad():
        return backbone(x, gating)
