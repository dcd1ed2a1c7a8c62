# Copyright 2026 CPNet Contributors
# SPDX-License-Identifier: AGPL-3.0-or-later
"""
Training objectives: least-squares adversarial terms for the frame and
sequence discriminators, the feature-space reconstruction loss and the
probability-map consistency loss.
"""

from abc import ABC, abstractmethod
from typing import List, Optional, Union

import torch
import torch.nn as nn
import torch.nn.functional as F
from torch.func import functional_call

from baseModels import LossWeights, PerceptualConfig
from probability_map import flat_l2
from utils import ProviderLoadError, require_shape

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)
# indices into torchvision's vgg19().features, one past each selected ReLU
VGG_SLICES = {'relu1_2': 4, 'relu2_2': 9, 'relu3_2': 14, 'relu4_2': 23}


def lsgan_discriminator_loss(real_scores: torch.Tensor, fake_scores: torch.Tensor) -> torch.Tensor:
    return torch.mean((real_scores - 1) ** 2) + torch.mean(fake_scores ** 2)


def lsgan_generator_loss(fake_scores: torch.Tensor) -> torch.Tensor:
    return torch.mean((fake_scores - 1) ** 2)


def temporal_loss_d(real_scores: torch.Tensor, fake_scores: torch.Tensor) -> torch.Tensor:
    return lsgan_discriminator_loss(real_scores, fake_scores)


def temporal_loss_g(fake_scores: torch.Tensor) -> torch.Tensor:
    return lsgan_generator_loss(fake_scores)


def _freeze(module: nn.Module) -> nn.Module:
    for parameter in module.parameters():
        parameter.requires_grad_(False)
    return module.eval()


class PerceptualExtractor(nn.Module, ABC):
    """Frozen feature extractor; forward returns one tensor per selected layer."""

    layers: List[str]

    @abstractmethod
    def forward(self, x: torch.Tensor) -> List[torch.Tensor]:
        ...


class VggPerceptualExtractor(PerceptualExtractor):

    def __init__(self):
        super().__init__()
        try:
            from torchvision.models import VGG19_Weights, vgg19
            features = vgg19(weights=VGG19_Weights.DEFAULT).features
        except (RuntimeError, OSError) as e:
            raise ProviderLoadError(f"unable to load pretrained VGG-19 weights: {e}") from e
        self.layers = list(VGG_SLICES)
        self.slices = nn.ModuleList()
        start = 0
        for end in VGG_SLICES.values():
            self.slices.append(nn.Sequential(*[features[i] for i in range(start, end)]))
            start = end
        self.register_buffer('mean', torch.tensor(IMAGENET_MEAN).view(1, 3, 1, 1))
        self.register_buffer('std', torch.tensor(IMAGENET_STD).view(1, 3, 1, 1))
        _freeze(self)

    def forward(self, x):
        h = (x - self.mean.to(x.dtype)) / self.std.to(x.dtype)
        outputs = []
        for block in self.slices:
            h = block(h)
            outputs.append(h)
        return outputs


class RandomStubExtractor(PerceptualExtractor):
    """Four seeded, frozen conv + ReLU stages. Offline stand-in for VGG."""

    WIDTHS = (8, 16, 16, 32)

    def __init__(self, seed: int = 0):
        super().__init__()
        generator = torch.Generator().manual_seed(seed)
        self.layers = [f"stub{i + 1}" for i in range(len(self.WIDTHS))]
        self.stages = nn.ModuleList()
        channels = 3
        for index, width in enumerate(self.WIDTHS):
            conv = nn.Conv2d(channels, width, 3, stride=1 if index == 0 else 2, padding=1)
            fan_in = channels * 9
            with torch.no_grad():
                conv.weight.copy_(torch.randn(conv.weight.shape, generator=generator) * (2.0 / fan_in) ** 0.5)
                conv.bias.zero_()
            self.stages.append(conv)
            channels = width
        _freeze(self)

    def forward(self, x):
        outputs = []
        h = x
        for conv in self.stages:
            h = F.relu(conv(h))
            outputs.append(h)
        return outputs


class IdentityExtractor(PerceptualExtractor):

    def __init__(self):
        super().__init__()
        self.layers = ['identity']

    def forward(self, x):
        return [x]


def build_extractor(config: PerceptualConfig = PerceptualConfig()) -> PerceptualExtractor:
    if config.backend == 'pretrained_vgg':
        return VggPerceptualExtractor()
    if config.backend == 'identity':
        return IdentityExtractor()
    return RandomStubExtractor(config.seed)


def perceptual_loss(extractor: PerceptualExtractor, generated: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """
    Mean over selected layers of ||F_k(I') - F_k(I)||_1, each L1 summed over a
    sample and averaged over the batch.
    """
    require_shape("generated frames", generated.shape, target.shape)
    if generated.dim() == 3:
        generated, target = generated.unsqueeze(0), target.unsqueeze(0)
    extractor = extractor.to(generated.dtype)
    with torch.no_grad():
        target_features = extractor(target)
    total = generated.new_zeros(())
    for fake, real in zip(extractor(generated), target_features):
        total = total + (fake - real).abs().flatten(1).sum(dim=1).mean()
    return total / len(target_features)


def probability_consistency_loss(predictor: nn.Module, generated: torch.Tensor, target: torch.Tensor,
                                 target_map: Optional[torch.Tensor] = None) -> torch.Tensor:
    """
    ||P(I') - P(I)||_2 with the predictor held constant: gradients reach the
    generated frame but never the predictor parameters. Passing target_map
    replaces P(I) with the analytic map.
    """
    params = {name: p.detach() for name, p in predictor.named_parameters()}
    buffers = dict(predictor.named_buffers())
    predicted = functional_call(predictor, (params, buffers), (generated,))
    if target_map is None:
        with torch.no_grad():
            reference = predictor(target)
    else:
        reference = target_map.to(predicted.dtype)
    require_shape("predicted map", predicted.shape, reference.shape)
    return flat_l2(predicted - reference)


def total_generator_loss(weights: LossWeights, adv: Union[float, torch.Tensor], reconstruction: Union[float, torch.Tensor],
                         temporal: Union[float, torch.Tensor], probability: Union[float, torch.Tensor]):
    return (weights.lambda_adv * adv + weights.lambda_r * reconstruction
            + weights.lambda_t * temporal + weights.lambda_p * probability)
