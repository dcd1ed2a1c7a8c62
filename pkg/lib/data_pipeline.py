# Copyright 2026 CPNet Contributors
# SPDX-License-Identifier: AGPL-3.0-or-later
"""
Clip ingestion, the procedural toy dataset and conditioning-window assembly.

Frames are H x W x 3 float32 arrays in [0, 1]. Landmarks are normalized (x, y)
pairs, x along the width and y along the height.
"""

import csv
import glob
import os
from typing import List, Literal, Optional, Sequence, Tuple

import numpy as np
import yaml
from PIL import Image
from pydantic import BaseModel, ConfigDict, field_validator, model_validator

from utils import ShapeMismatch, WindowRangeError

WINDOW_RADIUS = 3
WINDOW_SIZE = 2 * WINDOW_RADIUS + 1
PRIOR_FRAMES = 3
MIN_CLIP_FRAMES = WINDOW_SIZE
MOUTH_POINTS = 20
HEAD_POINTS = 8
DEFAULT_FRAME_RATE = 25.0


class LandmarkSet(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    points: np.ndarray

    @field_validator('points', mode='before')
    @classmethod
    def as_points(cls, value):
        points = np.asarray(value, dtype=np.float64).reshape(-1, 2)
        if not np.all(np.isfinite(points)):
            raise ValueError("landmark coordinates must be finite")
        if points.size and (points.min() < 0.0 or points.max() > 1.0):
            raise ValueError("landmark coordinates must lie in [0, 1]")
        return points

    @classmethod
    def clamped(cls, value) -> "LandmarkSet":
        points = np.asarray(value, dtype=np.float64).reshape(-1, 2)
        return cls(points=np.clip(np.nan_to_num(points, nan=0.0), 0.0, 1.0))

    def __len__(self):
        return len(self.points)


class FrameClip(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    frames: np.ndarray
    landmarks: List[LandmarkSet]
    frame_rate: float = DEFAULT_FRAME_RATE
    name: str = ''
    # generated clips are trimmed by the window radius and may be shorter than a window
    source: Literal['recorded', 'toy', 'generated'] = 'recorded'

    @field_validator('frames', mode='before')
    @classmethod
    def as_frames(cls, value):
        frames = np.asarray(value, dtype=np.float32)
        if frames.ndim != 4 or frames.shape[-1] != 3:
            raise ValueError(f"frames must have shape (T, H, W, 3), got {frames.shape}")
        return frames

    @model_validator(mode='after')
    def check_lengths(self):
        if len(self.frames) != len(self.landmarks):
            raise ValueError(f"{len(self.frames)} frames but {len(self.landmarks)} landmark sets")
        if self.source != 'generated' and len(self.frames) < MIN_CLIP_FRAMES:
            raise ValueError(f"clips need at least {MIN_CLIP_FRAMES} frames, got {len(self.frames)}")
        return self

    def __len__(self):
        return len(self.frames)

    @property
    def height(self) -> int:
        return int(self.frames.shape[1])

    @property
    def width(self) -> int:
        return int(self.frames.shape[2])


class ConditioningWindow(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    landmark_images: np.ndarray
    center: int
    target_index: int = WINDOW_RADIUS
    prior_rgb: Optional[np.ndarray] = None
    teacher_forcing: bool = False

    @model_validator(mode='after')
    def check_window(self):
        if self.landmark_images.ndim != 3 or self.landmark_images.shape[0] != WINDOW_SIZE:
            raise ValueError(f"a window holds exactly {WINDOW_SIZE} landmark images")
        if self.prior_rgb is not None and self.prior_rgb.shape[0] != PRIOR_FRAMES:
            raise ValueError(f"prior_rgb must hold {PRIOR_FRAMES} frames")
        return self

    def clip_indices(self) -> List[int]:
        return list(range(self.center - WINDOW_RADIUS, self.center + WINDOW_RADIUS + 1))

    @property
    def resolution(self) -> Tuple[int, int]:
        return int(self.landmark_images.shape[1]), int(self.landmark_images.shape[2])


def rasterize_landmarks(lms, height: int, width: int) -> np.ndarray:
    """
    Binary dot image: 1.0 at (round(y*(H-1)), round(x*(W-1))) for every landmark.
    Rounding is numpy's half-to-even; coordinates are clamped to [0, 1] first.
    """
    if height < 1 or width < 1:
        raise ShapeMismatch(f"dot image needs a positive size, got {height}x{width}")
    points = lms.points if isinstance(lms, LandmarkSet) else np.asarray(lms, dtype=np.float64).reshape(-1, 2)
    image = np.zeros((height, width), dtype=np.float64)
    if len(points) == 0:
        return image
    points = np.clip(points, 0.0, 1.0)
    cols = np.rint(points[:, 0] * (width - 1)).astype(np.int64)
    rows = np.rint(points[:, 1] * (height - 1)).astype(np.int64)
    image[rows, cols] = 1.0
    return image


def rasterize_track(landmarks: Sequence[LandmarkSet], height: int, width: int) -> np.ndarray:
    return np.stack([rasterize_landmarks(lms, height, width) for lms in landmarks]).astype(np.float32)


def window_from_rasters(rasters: np.ndarray, t: int, prior_rgb=None, teacher_forcing: bool = False) -> ConditioningWindow:
    if t < WINDOW_RADIUS or t > len(rasters) - WINDOW_RADIUS - 1:
        raise WindowRangeError(
            f"frame {t} has no full window in a {len(rasters)}-frame sequence "
            f"(valid range {WINDOW_RADIUS}..{len(rasters) - WINDOW_RADIUS - 1})")
    if prior_rgb is not None:
        prior_rgb = np.asarray(prior_rgb, dtype=np.float32)
    return ConditioningWindow(
        landmark_images=np.ascontiguousarray(rasters[t - WINDOW_RADIUS:t + WINDOW_RADIUS + 1]),
        center=t,
        prior_rgb=prior_rgb,
        teacher_forcing=teacher_forcing,
    )


def build_window(clip: FrameClip, t: int, teacher_forcing: bool = False, prior_frames=None,
                 rasters: Optional[np.ndarray] = None) -> ConditioningWindow:
    """
    Assembles the landmark images t-3..t+3. With teacher_forcing the ground-truth
    frames t-3..t-1 ride along as prior_rgb; otherwise prior_frames (generated
    frames supplied by the caller) are used when given.
    """
    if rasters is None:
        if t < WINDOW_RADIUS or t > len(clip) - WINDOW_RADIUS - 1:
            raise WindowRangeError(f"frame {t} has no full window in clip '{clip.name}' of {len(clip)} frames")
        rasters = rasterize_track(clip.landmarks[t - WINDOW_RADIUS:t + WINDOW_RADIUS + 1], clip.height, clip.width)
        offset = t - WINDOW_RADIUS
    else:
        offset = 0
    prior = None
    if teacher_forcing:
        prior = clip.frames[t - PRIOR_FRAMES:t]
    elif prior_frames is not None:
        prior = prior_frames
    window = window_from_rasters(rasters, t - offset, prior_rgb=prior, teacher_forcing=teacher_forcing)
    window.center = t
    return window


def center_crop(image: np.ndarray, size: int, landmarks: Optional[LandmarkSet] = None) -> np.ndarray:
    """
    size x size crop. Centered on the landmark bounding box when landmarks are
    given, otherwise on the image center.
    """
    top, left = crop_origin(image.shape[0], image.shape[1], size, landmarks)
    return image[top:top + size, left:left + size]


def crop_origin(height: int, width: int, size: int, landmarks: Optional[LandmarkSet] = None) -> Tuple[int, int]:
    if size < 1 or size > min(height, width):
        raise ShapeMismatch(f"crop size {size} does not fit a {height}x{width} image")
    if landmarks is None or len(landmarks) == 0:
        return (height - size) // 2, (width - size) // 2
    points = landmarks.points
    center_y = (points[:, 1].min() + points[:, 1].max()) / 2 * (height - 1)
    center_x = (points[:, 0].min() + points[:, 0].max()) / 2 * (width - 1)
    top = int(np.floor(center_y - size / 2 + 0.5))
    left = int(np.floor(center_x - size / 2 + 0.5))
    return min(max(top, 0), height - size), min(max(left, 0), width - size)


def crop_clip(clip: FrameClip, size: int) -> FrameClip:
    """
    Crops every frame of a clip with one window around the mean facial-region
    center, remapping landmarks into the crop.
    """
    height, width = clip.height, clip.width
    all_points = np.concatenate([lms.points for lms in clip.landmarks]) if clip.landmarks else np.zeros((0, 2))
    top, left = crop_origin(height, width, size, LandmarkSet.clamped(all_points) if len(all_points) else None)
    frames = clip.frames[:, top:top + size, left:left + size]
    landmarks = []
    for lms in clip.landmarks:
        x = (lms.points[:, 0] * (width - 1) - left) / (size - 1)
        y = (lms.points[:, 1] * (height - 1) - top) / (size - 1)
        landmarks.append(LandmarkSet.clamped(np.stack([x, y], axis=1)))
    return FrameClip(frames=frames, landmarks=landmarks, frame_rate=clip.frame_rate, name=clip.name, source=clip.source)


def split_clips(clips: Sequence[FrameClip], train_fraction: float = 0.9, seed: int = 0):
    """Per-clip train/test split. A single clip is returned as both."""
    if len(clips) == 1:
        return list(clips), list(clips)
    order = np.random.default_rng(seed).permutation(len(clips))
    n_train = min(max(int(round(train_fraction * len(clips))), 1), len(clips) - 1)
    train = [clips[i] for i in sorted(order[:n_train])]
    test = [clips[i] for i in sorted(order[n_train:])]
    return train, test


def _soft_ellipse(xx, yy, cx, cy, rx, ry, resolution):
    distance = np.sqrt(((xx - cx) / rx) ** 2 + ((yy - cy) / ry) ** 2)
    # about one pixel of antialiasing along the outline
    return np.clip((1.0 - distance) * min(rx, ry) * (resolution - 1) + 0.5, 0.0, 1.0)[..., None]


def _mouth_signal(rng: np.random.Generator, frames: int, frame_rate: float) -> np.ndarray:
    t = np.arange(frames) / frame_rate
    freqs = rng.uniform(0.5, 3.0, size=3)
    phases = rng.uniform(0.0, 2 * np.pi, size=3)
    amps = rng.uniform(0.5, 1.0, size=3)
    signal = (amps[:, None] * np.sin(2 * np.pi * freqs[:, None] * t[None, :] + phases[:, None])).sum(axis=0)
    spread = signal.max() - signal.min()
    signal = (signal - signal.min()) / spread if spread > 0 else np.full(frames, 0.5)
    return 0.02 + 0.10 * signal


def _render_toy_clip(rng: np.random.Generator, index: int, frames: int, resolution: int, frame_rate: float) -> FrameClip:
    yy, xx = np.mgrid[0:resolution, 0:resolution] / (resolution - 1)

    low, high = rng.uniform(0.15, 0.85, size=(2, 3))
    theta = rng.uniform(0.0, 2 * np.pi)
    ramp = xx * np.cos(theta) + yy * np.sin(theta)
    ramp = (ramp - ramp.min()) / (ramp.max() - ramp.min())
    background = low * (1 - ramp)[..., None] + high * ramp[..., None]

    cx, cy = 0.5 + rng.uniform(-0.04, 0.04, size=2)
    rx, ry = rng.uniform(0.24, 0.30), rng.uniform(0.32, 0.38)
    skin = rng.uniform([0.55, 0.35, 0.25], [0.95, 0.75, 0.60])
    lips = rng.uniform([0.35, 0.0, 0.05], [0.60, 0.12, 0.15])
    head_alpha = _soft_ellipse(xx, yy, cx, cy, rx, ry, resolution)
    face = background * (1 - head_alpha) + skin * head_alpha

    mouth_x, mouth_y, mouth_rx = cx, cy + 0.5 * ry, 0.4 * rx
    opening = _mouth_signal(rng, frames, frame_rate)

    mouth_angles = 2 * np.pi * np.arange(MOUTH_POINTS) / MOUTH_POINTS
    head_angles = 2 * np.pi * np.arange(HEAD_POINTS) / HEAD_POINTS
    head_points = np.stack([cx + rx * np.cos(head_angles), cy + ry * np.sin(head_angles)], axis=1)

    images, landmarks = [], []
    for a in opening:
        mouth_alpha = _soft_ellipse(xx, yy, mouth_x, mouth_y, mouth_rx, a, resolution)
        images.append(face * (1 - mouth_alpha) + lips * mouth_alpha)
        mouth_points = np.stack([mouth_x + mouth_rx * np.cos(mouth_angles), mouth_y + a * np.sin(mouth_angles)], axis=1)
        landmarks.append(LandmarkSet.clamped(np.concatenate([mouth_points, head_points])))

    return FrameClip(frames=np.stack(images).astype(np.float32), landmarks=landmarks, frame_rate=frame_rate,
                     name=f"clip_{index:04d}", source='toy')


def make_toy_dataset(seed: int, num_clips: int, frames_per_clip: int, resolution: int,
                     frame_rate: float = DEFAULT_FRAME_RATE) -> List[FrameClip]:
    """
    Procedural talking heads: gradient background, elliptical head and a mouth
    whose vertical radius follows a smooth seeded signal in [0.02, 0.12] of the
    image height. 20 mouth-contour landmarks followed by 8 head-outline ones.
    """
    if resolution < 32:
        raise ShapeMismatch(f"toy resolution must be at least 32 pixels, got {resolution}")
    if frames_per_clip < MIN_CLIP_FRAMES:
        raise WindowRangeError(f"toy clips need at least {MIN_CLIP_FRAMES} frames, got {frames_per_clip}")
    seeds = np.random.SeedSequence(seed).spawn(num_clips)
    return [_render_toy_clip(np.random.default_rng(s), i, frames_per_clip, resolution, frame_rate)
            for i, s in enumerate(seeds)]


def write_clip_dir(clip: FrameClip, path: str):
    os.makedirs(path, exist_ok=True)
    for index, frame in enumerate(clip.frames):
        pixels = np.clip(np.rint(frame * 255.0), 0, 255).astype(np.uint8)
        Image.fromarray(pixels).save(os.path.join(path, f"frame_{index:05d}.png"))
    write_landmarks_csv(clip.landmarks, os.path.join(path, "landmarks.csv"))
    with open(os.path.join(path, "meta.yaml"), "w") as stream:
        yaml.safe_dump({'frame_rate': float(clip.frame_rate), 'source': clip.source}, stream)


def write_landmarks_csv(landmarks: Sequence[LandmarkSet], path: str):
    with open(path, "w", newline="") as stream:
        writer = csv.writer(stream)
        for index, lms in enumerate(landmarks):
            writer.writerow([index] + [repr(float(v)) for v in lms.points.reshape(-1)])


def read_landmarks_csv(path: str) -> List[LandmarkSet]:
    rows = {}
    with open(path, newline="") as stream:
        for row in csv.reader(stream):
            if not row:
                continue
            rows[int(row[0])] = LandmarkSet.clamped([float(v) for v in row[1:]])
    return [rows[index] for index in sorted(rows)]


def load_clip_dir(path: str) -> FrameClip:
    frame_paths = sorted(glob.glob(os.path.join(path, "frame_*.png")))
    frames = np.stack([np.asarray(Image.open(p).convert('RGB'), dtype=np.float32) / 255.0 for p in frame_paths]) \
        if frame_paths else np.zeros((0, 1, 1, 3), dtype=np.float32)
    landmarks = read_landmarks_csv(os.path.join(path, "landmarks.csv"))
    meta = {}
    meta_path = os.path.join(path, "meta.yaml")
    if os.path.exists(meta_path):
        with open(meta_path) as stream:
            meta = yaml.safe_load(stream) or {}
    return FrameClip(frames=frames, landmarks=landmarks, frame_rate=float(meta.get('frame_rate', DEFAULT_FRAME_RATE)),
                     name=os.path.basename(os.path.normpath(path)), source=meta.get('source', 'recorded'))


def write_dataset(clips: Sequence[FrameClip], out_dir: str) -> List[str]:
    paths = []
    for index, clip in enumerate(clips):
        path = os.path.join(out_dir, f"clip_{index:04d}")
        write_clip_dir(clip, path)
        paths.append(path)
    return paths


def load_dataset(data_dir: str, crop_size: Optional[int] = None) -> List[FrameClip]:
    clips = [load_clip_dir(p) for p in sorted(glob.glob(os.path.join(data_dir, "clip_*"))) if os.path.isdir(p)]
    if crop_size is not None:
        clips = [clip if clip.height == clip.width == crop_size else crop_clip(clip, crop_size) for clip in clips]
    return clips
