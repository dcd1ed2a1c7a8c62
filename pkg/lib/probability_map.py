# Copyright 2026 CPNet Contributors
# SPDX-License-Identifier: AGPL-3.0-or-later
"""
Landmark probability maps: the fixed Gaussian kernel, the analytic maps it
produces from landmark dot images, the lightweight map predictor and its
hinge-style objective.
"""

import os
from typing import Literal, Optional, Sequence, Union

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from PIL import Image, PngImagePlugin
from pydantic import BaseModel, ConfigDict, field_validator
from scipy.signal import convolve2d

from baseModels import PredictorConfig
from data_pipeline import LandmarkSet, rasterize_landmarks
from utils import InvalidKernel, ShapeMismatch, require_shape

PNG_SCALE_KEY = "cpnet:max"


class GaussianKernel(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    size: int
    sigma: float
    weights: np.ndarray


class ProbabilityMap(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    grid: np.ndarray
    source: Literal['ground_truth', 'predicted'] = 'ground_truth'

    @field_validator('grid', mode='before')
    @classmethod
    def as_grid(cls, value):
        grid = np.asarray(value, dtype=np.float64)
        if grid.ndim != 2:
            raise ValueError(f"probability maps are 2-D, got shape {grid.shape}")
        if not np.all(np.isfinite(grid)) or (grid.size and grid.min() < 0):
            raise ValueError("probability maps must be finite and non-negative")
        return grid

    @property
    def shape(self):
        return self.grid.shape

    def total(self) -> float:
        return float(self.grid.sum())


def build_gaussian_kernel(size: int = 25, sigma: float = 5.0) -> GaussianKernel:
    if size < 1 or size % 2 == 0:
        raise InvalidKernel(f"kernel size must be a positive odd integer, got {size}")
    if not sigma > 0:
        raise InvalidKernel(f"kernel sigma must be positive, got {sigma}")
    c = (size - 1) / 2
    i, j = np.mgrid[0:size, 0:size]
    weights = np.exp(-((i - c) ** 2 + (j - c) ** 2) / (2.0 * sigma ** 2))
    return GaussianKernel(size=size, sigma=float(sigma), weights=weights / weights.sum())


def make_probability_map(lms: LandmarkSet, height: int, width: int, kernel: GaussianKernel) -> ProbabilityMap:
    """
    Zero-padded convolution of the landmark dot image with the kernel. Mass
    that falls outside the image is lost.
    """
    if kernel.size > min(height, width):
        raise ShapeMismatch(f"{kernel.size}x{kernel.size} kernel does not fit a {height}x{width} map")
    dots = rasterize_landmarks(lms, height, width)
    grid = convolve2d(dots, kernel.weights, mode='same', boundary='fill', fillvalue=0.0)
    # convolution round-off can leave tiny negatives
    return ProbabilityMap(grid=np.maximum(grid, 0.0), source='ground_truth')


def probability_maps_for_track(landmarks: Sequence[LandmarkSet], height: int, width: int,
                               kernel: GaussianKernel) -> np.ndarray:
    return np.stack([make_probability_map(lms, height, width, kernel).grid for lms in landmarks]).astype(np.float32)


class MapPredictor(nn.Module):
    """
    Three-level encoder/decoder with U-Net skips, RGB frame in, one softplus
    density channel out.
    """

    def __init__(self, config: PredictorConfig = PredictorConfig(), resolution: int = 64):
        super().__init__()
        self.resolution = resolution
        self.normalize = config.normalization == 'instance'
        w = config.base_width
        self.enc1 = nn.Conv2d(3, w, 4, stride=2, padding=1)
        self.enc2 = nn.Conv2d(w, 2 * w, 4, stride=2, padding=1)
        self.enc3 = nn.Conv2d(2 * w, 4 * w, 4, stride=2, padding=1)
        self.bottleneck = nn.Conv2d(4 * w, 4 * w, 3, padding=1)
        self.dec3 = nn.ConvTranspose2d(4 * w, 2 * w, 4, stride=2, padding=1)
        self.dec2 = nn.ConvTranspose2d(4 * w, w, 4, stride=2, padding=1)
        self.dec1 = nn.ConvTranspose2d(2 * w, 1, 4, stride=2, padding=1)

    def _norm(self, x):
        return F.instance_norm(x) if self.normalize else x

    def forward(self, image: torch.Tensor) -> torch.Tensor:
        if image.dim() != 4 or image.shape[1] != 3 or tuple(image.shape[-2:]) != (self.resolution, self.resolution):
            raise ShapeMismatch(f"map predictor expects (B, 3, {self.resolution}, {self.resolution}), got {tuple(image.shape)}")
        e1 = F.leaky_relu(self.enc1(image), 0.2)
        e2 = F.leaky_relu(self._norm(self.enc2(e1)), 0.2)
        e3 = F.leaky_relu(self._norm(self.enc3(e2)), 0.2)
        b = F.relu(self.bottleneck(e3))
        d3 = F.relu(self._norm(self.dec3(b)))
        d2 = F.relu(self._norm(self.dec2(torch.cat([d3, e2], dim=1))))
        return F.softplus(self.dec1(torch.cat([d2, e1], dim=1)))


def frame_to_tensor(image: np.ndarray, dtype=torch.float32) -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(np.asarray(image).transpose(2, 0, 1))).to(dtype).unsqueeze(0)


def predict_map(predictor: nn.Module, image: np.ndarray) -> ProbabilityMap:
    if image.ndim != 3 or image.shape[:2] != (predictor.resolution, predictor.resolution):
        raise ShapeMismatch(f"frame of shape {image.shape} does not match the predictor resolution {predictor.resolution}")
    dtype = next(predictor.parameters()).dtype
    was_training = predictor.training
    predictor.eval()
    with torch.no_grad():
        grid = predictor(frame_to_tensor(image, dtype))[0, 0]
    predictor.train(was_training)
    return ProbabilityMap(grid=grid.double().numpy(), source='predicted')


def _as_tensor(value) -> torch.Tensor:
    if isinstance(value, ProbabilityMap):
        return torch.from_numpy(value.grid)
    return value


def flat_l2(diff: torch.Tensor) -> torch.Tensor:
    """Euclidean norm of the flattened map; batched (B, C, H, W) input averages per-sample norms."""
    if diff.dim() == 4:
        return torch.linalg.vector_norm(diff.reshape(diff.shape[0], -1), dim=1).mean()
    return torch.linalg.vector_norm(diff.reshape(-1))


def predictor_loss(pred_real: Union[ProbabilityMap, torch.Tensor], target: Union[ProbabilityMap, torch.Tensor],
                   pred_fake: Union[ProbabilityMap, torch.Tensor], lambda_dmp: float) -> torch.Tensor:
    """||P(I) - y_p|| - lambda * ||P(I') - P(I)||. Negative values are expected."""
    if lambda_dmp < 0:
        raise ValueError(f"lambda_dmp must be non-negative, got {lambda_dmp}")
    pred_real, target, pred_fake = _as_tensor(pred_real), _as_tensor(target), _as_tensor(pred_fake)
    require_shape("analytic map", target.shape, pred_real.shape)
    require_shape("map of the generated frame", pred_fake.shape, pred_real.shape)
    return flat_l2(pred_real - target) - lambda_dmp * flat_l2(pred_fake - pred_real)


def save_map_png(prob_map: ProbabilityMap, path: str) -> float:
    """16-bit PNG scaled so the map maximum hits 65535; the scale is kept in a text chunk."""
    peak = float(prob_map.grid.max()) if prob_map.grid.size else 0.0
    scaled = prob_map.grid / peak * 65535.0 if peak > 0 else np.zeros_like(prob_map.grid)
    info = PngImagePlugin.PngInfo()
    info.add_text(PNG_SCALE_KEY, repr(peak))
    Image.fromarray(np.rint(scaled).astype(np.uint16)).save(path, pnginfo=info)
    return peak


def load_map_png(path: str, source: Literal['ground_truth', 'predicted'] = 'ground_truth') -> ProbabilityMap:
    image = Image.open(path)
    peak = float(image.text.get(PNG_SCALE_KEY, 1.0))
    grid = np.asarray(image, dtype=np.float64) / 65535.0 * peak
    return ProbabilityMap(grid=grid, source=source)


def dump_probability_maps(out_dir: str, frames: np.ndarray, targets: Sequence[ProbabilityMap],
                          predictor: Optional[nn.Module] = None) -> int:
    """
    Writes frame / ground-truth map / predicted map triplets for visual inspection.
    """
    os.makedirs(out_dir, exist_ok=True)
    for index, (frame, target) in enumerate(zip(frames, targets)):
        pixels = np.clip(np.rint(frame * 255.0), 0, 255).astype(np.uint8)
        Image.fromarray(pixels).save(os.path.join(out_dir, f"frame_{index:05d}.png"))
        save_map_png(target, os.path.join(out_dir, f"map_gt_{index:05d}.png"))
        if predictor is not None:
            save_map_png(predict_map(predictor, frame), os.path.join(out_dir, f"map_pred_{index:05d}.png"))
    return len(targets)
