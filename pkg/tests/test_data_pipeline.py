# Copyright 2026 CPNet Contributors
# SPDX-License-Identifier: AGPL-3.0-or-later
import os
import tempfile
from unittest import TestCase

import numpy as np
from pydantic import ValidationError

from data_pipeline import (FrameClip, LandmarkSet, WINDOW_SIZE, build_window, center_crop, crop_clip, load_clip_dir,
                           load_dataset, make_toy_dataset, rasterize_landmarks, read_landmarks_csv, split_clips,
                           window_from_rasters, rasterize_track, write_dataset, write_landmarks_csv)
from utils import ShapeMismatch, WindowRangeError


class LandmarkSetTest(TestCase):
    def test_rejects_out_of_range_coordinates(self):
        with self.assertRaises(ValidationError):
            LandmarkSet(points=[[0.5, 1.2]])

    def test_rejects_non_finite_coordinates(self):
        with self.assertRaises(ValidationError):
            LandmarkSet(points=[[np.nan, 0.5]])

    def test_clamped_pulls_coordinates_into_unit_square(self):
        lms = LandmarkSet.clamped([[-0.3, 0.5], [0.2, 1.7]])
        np.testing.assert_array_equal(lms.points, [[0.0, 0.5], [0.2, 1.0]])


class RasterizeTest(TestCase):
    def test_single_centre_landmark(self):
        # GIVEN
        lms = LandmarkSet(points=[[0.5, 0.5]])

        # WHEN
        image = rasterize_landmarks(lms, 64, 64)

        # THEN round(0.5 * 63) is 32 under half-to-even rounding
        self.assertEqual(image.sum(), 1.0)
        self.assertEqual(image[32, 32], 1.0)

    def test_corner_landmarks(self):
        lms = LandmarkSet(points=[[0.0, 0.0], [1.0, 1.0], [1.0, 0.0]])
        image = rasterize_landmarks(lms, 16, 24)
        self.assertEqual(image[0, 0], 1.0)
        self.assertEqual(image[15, 23], 1.0)
        self.assertEqual(image[0, 23], 1.0)
        self.assertEqual(image.sum(), 3.0)

    def test_coinciding_landmarks_share_a_pixel(self):
        image = rasterize_landmarks(LandmarkSet(points=[[0.25, 0.75], [0.25, 0.75]]), 32, 32)
        self.assertEqual(image.sum(), 1.0)

    def test_values_are_binary(self):
        clip = make_toy_dataset(seed=3, num_clips=1, frames_per_clip=7, resolution=32)[0]
        image = rasterize_landmarks(clip.landmarks[0], 32, 32)
        self.assertTrue(set(np.unique(image)) <= {0.0, 1.0})


class WindowTest(TestCase):
    @classmethod
    def setUpClass(cls):
        cls.clip = make_toy_dataset(seed=0, num_clips=1, frames_per_clip=10, resolution=32)[0]

    def test_window_holds_seven_landmark_images(self):
        window = build_window(self.clip, 3)
        self.assertEqual(window.landmark_images.shape, (WINDOW_SIZE, 32, 32))
        self.assertEqual(window.clip_indices(), [0, 1, 2, 3, 4, 5, 6])
        self.assertIsNone(window.prior_rgb)

    def test_window_out_of_range(self):
        for t in (0, 2, 7, 9):
            with self.subTest(t=t), self.assertRaises(WindowRangeError):
                build_window(self.clip, t)

    def test_last_valid_window(self):
        window = build_window(self.clip, 6)
        self.assertEqual(window.clip_indices()[-1], 9)

    def test_teacher_forcing_carries_previous_ground_truth(self):
        window = build_window(self.clip, 5, teacher_forcing=True)
        np.testing.assert_array_equal(window.prior_rgb, self.clip.frames[2:5])

    def test_neighbouring_windows_share_six_landmark_images(self):
        for t in range(3, 6):
            with self.subTest(t=t):
                current, following = build_window(self.clip, t), build_window(self.clip, t + 1)
                self.assertEqual(current.landmark_images[1:].tobytes(), following.landmark_images[:-1].tobytes())
                self.assertEqual(following.clip_indices()[:-1], current.clip_indices()[1:])

    def test_window_from_cached_rasters_matches_build_window(self):
        rasters = rasterize_track(self.clip.landmarks, 32, 32)
        np.testing.assert_array_equal(window_from_rasters(rasters, 4).landmark_images,
                                      build_window(self.clip, 4).landmark_images)

    def test_short_clip_rejected(self):
        with self.assertRaises(ValidationError):
            FrameClip(frames=np.zeros((6, 8, 8, 3)), landmarks=[LandmarkSet(points=[[0.5, 0.5]])] * 6)


class ToyDatasetTest(TestCase):
    def test_same_seed_same_dataset(self):
        a = make_toy_dataset(seed=7, num_clips=2, frames_per_clip=8, resolution=32)
        b = make_toy_dataset(seed=7, num_clips=2, frames_per_clip=8, resolution=32)
        for clip_a, clip_b in zip(a, b):
            np.testing.assert_array_equal(clip_a.frames, clip_b.frames)

    def test_different_seeds_differ(self):
        a = make_toy_dataset(seed=1, num_clips=1, frames_per_clip=8, resolution=32)[0]
        b = make_toy_dataset(seed=2, num_clips=1, frames_per_clip=8, resolution=32)[0]
        self.assertFalse(np.array_equal(a.frames, b.frames))

    def test_shapes_and_ranges(self):
        clip = make_toy_dataset(seed=0, num_clips=1, frames_per_clip=9, resolution=48)[0]
        self.assertEqual(clip.frames.shape, (9, 48, 48, 3))
        self.assertEqual(clip.frames.dtype, np.float32)
        self.assertGreaterEqual(clip.frames.min(), 0.0)
        self.assertLessEqual(clip.frames.max(), 1.0)
        self.assertEqual(len(clip.landmarks[0]), 28)
        self.assertEqual(clip.source, 'toy')

    def test_mouth_moves(self):
        clip = make_toy_dataset(seed=0, num_clips=1, frames_per_clip=30, resolution=64)[0]
        mouth_heights = [lms.points[:20, 1].max() - lms.points[:20, 1].min() for lms in clip.landmarks]
        self.assertGreater(max(mouth_heights) - min(mouth_heights), 0.05)

    def test_resolution_below_minimum_rejected(self):
        with self.assertRaises(ShapeMismatch):
            make_toy_dataset(seed=0, num_clips=1, frames_per_clip=8, resolution=16)

    def test_too_few_frames_rejected(self):
        with self.assertRaises(WindowRangeError):
            make_toy_dataset(seed=0, num_clips=1, frames_per_clip=6, resolution=32)


class CropTest(TestCase):
    def test_center_crop_without_landmarks(self):
        image = np.arange(10 * 10 * 3, dtype=np.float32).reshape(10, 10, 3)
        np.testing.assert_array_equal(center_crop(image, 4), image[3:7, 3:7])

    def test_crop_larger_than_image_rejected(self):
        with self.assertRaises(ShapeMismatch):
            center_crop(np.zeros((8, 8, 3)), 9)

    def test_crop_clip_remaps_landmarks(self):
        # GIVEN a single landmark at pixel (row 40, col 20) of a 64x64 clip
        frames = np.zeros((7, 64, 64, 3), dtype=np.float32)
        frames[:, 40, 20] = 1.0
        lms = LandmarkSet(points=[[20 / 63, 40 / 63]])
        clip = FrameClip(frames=frames, landmarks=[lms] * 7)

        # WHEN
        cropped = crop_clip(clip, 32)

        # THEN the landmark still points at the bright pixel
        point = cropped.landmarks[0].points[0]
        col, row = int(np.rint(point[0] * 31)), int(np.rint(point[1] * 31))
        self.assertEqual(cropped.frames.shape, (7, 32, 32, 3))
        self.assertEqual(cropped.frames[0, row, col, 0], 1.0)


class SplitTest(TestCase):
    def test_single_clip_used_for_both_sides(self):
        clip = make_toy_dataset(seed=0, num_clips=1, frames_per_clip=7, resolution=32)
        train, test = split_clips(clip, 0.9, seed=0)
        self.assertEqual(len(train), 1)
        self.assertEqual(len(test), 1)

    def test_split_is_per_clip_and_disjoint(self):
        clips = make_toy_dataset(seed=0, num_clips=10, frames_per_clip=7, resolution=32)
        train, test = split_clips(clips, 0.9, seed=0)
        self.assertEqual(len(train), 9)
        self.assertEqual(len(test), 1)
        self.assertFalse({c.name for c in train} & {c.name for c in test})


class ClipIoTest(TestCase):
    def test_dataset_written_and_read_back(self):
        clips = make_toy_dataset(seed=4, num_clips=2, frames_per_clip=7, resolution=32)
        with tempfile.TemporaryDirectory() as tmp:
            # WHEN
            paths = write_dataset(clips, tmp)
            loaded = load_dataset(tmp)

            # THEN frames survive 8-bit quantisation, landmarks are exact
            self.assertEqual([os.path.basename(p) for p in paths], ['clip_0000', 'clip_0001'])
            self.assertEqual(len(loaded), 2)
            self.assertEqual(loaded[0].source, 'toy')
            self.assertEqual(loaded[0].frame_rate, 25.0)
            np.testing.assert_allclose(loaded[1].frames, clips[1].frames, atol=0.5 / 255 + 1e-6)
            np.testing.assert_array_equal(loaded[1].landmarks[3].points, clips[1].landmarks[3].points)

    def test_missing_meta_defaults_frame_rate(self):
        clip = make_toy_dataset(seed=4, num_clips=1, frames_per_clip=7, resolution=32)[0]
        with tempfile.TemporaryDirectory() as tmp:
            write_dataset([clip], tmp)
            os.unlink(os.path.join(tmp, 'clip_0000', 'meta.yaml'))
            loaded = load_clip_dir(os.path.join(tmp, 'clip_0000'))
            self.assertEqual(loaded.frame_rate, 25.0)
            self.assertEqual(loaded.source, 'recorded')

    def test_landmark_csv_round_trip(self):
        track = [LandmarkSet(points=[[0.1, 0.2], [0.3, 0.4]]), LandmarkSet(points=[[0.5, 0.6], [0.7, 0.8]])]
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, 'landmarks.csv')
            write_landmarks_csv(track, path)
            loaded = read_landmarks_csv(path)
        np.testing.assert_array_equal(loaded[1].points, track[1].points)

    def test_load_dataset_crops_to_training_size(self):
        clips = make_toy_dataset(seed=4, num_clips=1, frames_per_clip=7, resolution=48)
        with tempfile.TemporaryDirectory() as tmp:
            write_dataset(clips, tmp)
            loaded = load_dataset(tmp, crop_size=32)
        self.assertEqual(loaded[0].frames.shape[1:3], (32, 32))
