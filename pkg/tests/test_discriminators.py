# Copyright 2026 CPNet Contributors
# SPDX-License-Identifier: AGPL-3.0-or-later
from unittest import TestCase

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from baseModels import DiscriminatorConfig
from data_pipeline import build_window, make_toy_dataset
from discriminators import PatchDiscriminator, score_frame, score_sequence
from utils import ShapeMismatch


def straight_line_scores(disc, stacked):
    """Replays the patch discriminator with functional ops."""
    h = stacked
    for level, conv in enumerate(disc.levels):
        h = F.conv2d(h, conv.weight, conv.bias, stride=2, padding=1)
        if level > 0:
            mean = h.mean(dim=(2, 3), keepdim=True)
            var = h.var(dim=(2, 3), keepdim=True, unbiased=False)
            h = (h - mean) / torch.sqrt(var + 1e-5)
        h = torch.where(h >= 0, h, 0.2 * h)
    return F.conv2d(h, disc.head.weight, disc.head.bias, padding=1)


class FrameDiscriminatorTest(TestCase):
    def setUp(self):
        torch.manual_seed(0)
        self.disc = PatchDiscriminator(DiscriminatorConfig(kind='frame', base_width=8, levels=3))

    def test_patch_grid_for_64px_input(self):
        scores = score_frame(self.disc, torch.rand(2, 7, 64, 64), torch.rand(2, 3, 64, 64))
        self.assertEqual(tuple(scores.shape), (2, 1, 8, 8))

    def test_accepts_window_and_numpy_frame(self):
        clip = make_toy_dataset(seed=0, num_clips=1, frames_per_clip=8, resolution=32)[0]
        window = build_window(clip, 3)
        scores = score_frame(self.disc, window, clip.frames[3])
        self.assertEqual(tuple(scores.shape), (1, 1, 4, 4))

    def test_scores_depend_on_the_candidate(self):
        landmarks = torch.rand(1, 7, 32, 32)
        a = score_frame(self.disc, landmarks, torch.zeros(1, 3, 32, 32))
        b = score_frame(self.disc, landmarks, torch.ones(1, 3, 32, 32))
        self.assertFalse(torch.allclose(a, b))

    def test_scores_depend_on_the_landmark_window(self):
        frames = torch.rand(1, 3, 32, 32)
        landmarks = torch.rand(1, 7, 32, 32)
        perturbed = landmarks.clone()
        perturbed[:, 3] = 1.0 - perturbed[:, 3]
        self.assertFalse(torch.allclose(score_frame(self.disc, landmarks, frames),
                                        score_frame(self.disc, perturbed, frames)))

    def test_zero_final_layer_gives_zero_scores(self):
        nn.init.zeros_(self.disc.head.weight)
        nn.init.zeros_(self.disc.head.bias)
        scores = score_frame(self.disc, torch.rand(2, 7, 32, 32), torch.rand(2, 3, 32, 32))
        self.assertTrue(torch.equal(scores, torch.zeros_like(scores)))

    def test_matches_straight_line_oracle(self):
        landmarks, frames = torch.rand(2, 7, 32, 32), torch.rand(2, 3, 32, 32)
        expected = straight_line_scores(self.disc, torch.cat([landmarks, frames], dim=1))
        torch.testing.assert_close(score_frame(self.disc, landmarks, frames), expected, atol=1e-5, rtol=1e-5)

    def test_mismatched_pair_rejected(self):
        with self.assertRaises(ShapeMismatch):
            score_frame(self.disc, torch.rand(1, 7, 32, 32), torch.rand(1, 3, 16, 16))
        with self.assertRaises(ShapeMismatch):
            score_frame(self.disc, torch.rand(2, 7, 32, 32), torch.rand(1, 3, 32, 32))


class SequenceDiscriminatorTest(TestCase):
    def setUp(self):
        torch.manual_seed(0)
        self.disc = PatchDiscriminator(DiscriminatorConfig(kind='sequence', sequence_length=3, base_width=8, levels=2))

    def test_sequence_is_stacked_along_channels(self):
        self.assertEqual(self.disc.in_channels, 30)
        scores = score_sequence(self.disc, torch.rand(2, 3, 7, 32, 32), torch.rand(2, 3, 3, 32, 32))
        self.assertEqual(tuple(scores.shape), (2, 1, 8, 8))

    def test_frame_order_matters(self):
        landmarks = torch.rand(1, 3, 7, 32, 32)
        frames = torch.rand(1, 3, 3, 32, 32)
        forward = score_sequence(self.disc, landmarks, frames)
        shuffled = score_sequence(self.disc, landmarks, frames[:, [2, 0, 1]])
        self.assertFalse(torch.allclose(forward, shuffled))

    def test_matches_straight_line_oracle(self):
        # GIVEN three (landmark window, frame) steps
        landmarks, frames = torch.rand(2, 3, 7, 32, 32), torch.rand(2, 3, 3, 32, 32)

        # WHEN the steps are stacked by hand, window then frame per step
        stacked = torch.cat([torch.cat([landmarks[:, t], frames[:, t]], dim=1) for t in range(3)], dim=1)

        # THEN
        torch.testing.assert_close(score_sequence(self.disc, landmarks, frames),
                                   straight_line_scores(self.disc, stacked), atol=1e-5, rtol=1e-5)

    def test_wrong_length_rejected(self):
        with self.assertRaises(ShapeMismatch):
            score_sequence(self.disc, torch.rand(1, 4, 7, 32, 32), torch.rand(1, 4, 3, 32, 32))

    def test_accepts_windows_and_numpy_frames(self):
        clip = make_toy_dataset(seed=0, num_clips=1, frames_per_clip=9, resolution=32)[0]
        windows = [build_window(clip, t) for t in (3, 4, 5)]
        scores = score_sequence(self.disc, windows, np.asarray(clip.frames[3:6]))
        self.assertEqual(tuple(scores.shape), (1, 1, 8, 8))

    def test_single_step_sequence_rejected_by_config(self):
        with self.assertRaises(ValueError):
            DiscriminatorConfig(kind='sequence', sequence_length=1)
