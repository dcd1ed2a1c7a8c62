# Copyright 2026 CPNet Contributors
# SPDX-License-Identifier: AGPL-3.0-or-later
import os
import tempfile
from unittest import TestCase

import numpy as np
import torch
import torch.nn.functional as F
from hypothesis import given, settings, strategies as st

from baseModels import PredictorConfig
from data_pipeline import LandmarkSet
from probability_map import (MapPredictor, ProbabilityMap, build_gaussian_kernel, dump_probability_maps, flat_l2,
                             load_map_png, make_probability_map, predict_map, predictor_loss, save_map_png)
from utils import InvalidKernel, ShapeMismatch

KERNEL = build_gaussian_kernel(25, 5.0)


def interior_landmarks(count, size=64, margin=12, seed=0):
    rng = np.random.default_rng(seed)
    pixels = rng.integers(margin, size - margin, size=(count, 2))
    return LandmarkSet(points=pixels / (size - 1))


class KernelTest(TestCase):
    def test_kernel_has_unit_mass(self):
        self.assertAlmostEqual(KERNEL.weights.sum(), 1.0, places=12)
        self.assertEqual(KERNEL.weights.shape, (25, 25))

    def test_kernel_peak_is_centred_and_symmetric(self):
        self.assertEqual(np.unravel_index(KERNEL.weights.argmax(), KERNEL.weights.shape), (12, 12))
        np.testing.assert_allclose(KERNEL.weights, KERNEL.weights.T, atol=0)
        np.testing.assert_allclose(KERNEL.weights, KERNEL.weights[::-1, ::-1], atol=0)

    def test_invalid_kernels_rejected(self):
        for size, sigma in ((24, 5.0), (0, 5.0), (25, 0.0), (25, -1.0)):
            with self.subTest(size=size, sigma=sigma), self.assertRaises(InvalidKernel):
                build_gaussian_kernel(size, sigma)


class ProbabilityMapTest(TestCase):
    def test_single_interior_landmark_has_unit_mass(self):
        prob_map = make_probability_map(LandmarkSet(points=[[0.5, 0.5]]), 64, 64, KERNEL)
        self.assertAlmostEqual(prob_map.total(), 1.0, delta=1e-9)
        self.assertEqual(np.unravel_index(prob_map.grid.argmax(), prob_map.shape), (32, 32))

    def test_mass_counts_landmarks(self):
        # GIVEN 100 landmarks at least 12 pixels from every border
        lms = interior_landmarks(100)

        # WHEN
        prob_map = make_probability_map(lms, 64, 64, KERNEL)

        # THEN every distinct pixel contributes a full kernel
        distinct = len({(round(x * 63), round(y * 63)) for x, y in lms.points})
        self.assertAlmostEqual(prob_map.total(), distinct, delta=1e-6)

    def test_corner_landmark_keeps_a_quarter_of_the_kernel(self):
        prob_map = make_probability_map(LandmarkSet(points=[[0.0, 0.0]]), 64, 64, KERNEL)
        expected = KERNEL.weights[12:, 12:].sum()
        self.assertAlmostEqual(prob_map.total(), expected, delta=1e-12)
        self.assertTrue(0.25 < prob_map.total() < 0.35)

    def test_empty_landmark_set_gives_zero_map(self):
        prob_map = make_probability_map(LandmarkSet(points=np.zeros((0, 2))), 32, 32, KERNEL)
        self.assertEqual(prob_map.total(), 0.0)

    def test_kernel_larger_than_image_rejected(self):
        with self.assertRaises(ShapeMismatch):
            make_probability_map(LandmarkSet(points=[[0.5, 0.5]]), 16, 16, KERNEL)

    def test_maps_are_non_negative(self):
        prob_map = make_probability_map(interior_landmarks(30, seed=5), 64, 64, KERNEL)
        self.assertGreaterEqual(prob_map.grid.min(), 0.0)

    @settings(max_examples=25, deadline=None)
    @given(st.lists(st.tuples(st.integers(12, 51), st.integers(12, 51)), min_size=1, max_size=40, unique=True))
    def test_mass_equals_distinct_interior_pixels(self, pixels):
        lms = LandmarkSet(points=np.array(pixels, dtype=np.float64) / 63)
        prob_map = make_probability_map(lms, 64, 64, KERNEL)
        self.assertAlmostEqual(prob_map.total(), len(pixels), delta=1e-6)


class MapPredictorTest(TestCase):
    def setUp(self):
        torch.manual_seed(0)
        self.predictor = MapPredictor(PredictorConfig(base_width=4), resolution=32)

    def test_output_shape_and_sign(self):
        out = self.predictor(torch.rand(2, 3, 32, 32))
        self.assertEqual(tuple(out.shape), (2, 1, 32, 32))
        self.assertGreaterEqual(out.min().item(), 0.0)

    def test_wrong_resolution_rejected(self):
        with self.assertRaises(ShapeMismatch):
            self.predictor(torch.rand(1, 3, 64, 64))

    def test_predict_map_is_deterministic(self):
        image = np.random.default_rng(1).random((32, 32, 3)).astype(np.float32)
        first, second = predict_map(self.predictor, image), predict_map(self.predictor, image)
        self.assertEqual(first.grid.tobytes(), second.grid.tobytes())

    def test_predict_map_matches_straight_line_oracle(self):
        # GIVEN a float64 predictor and a fixed frame
        predictor = self.predictor.double()
        image = np.random.default_rng(2).random((32, 32, 3))

        # WHEN the forward pass is replayed with functional ops
        def norm(h):
            mean = h.mean(dim=(2, 3), keepdim=True)
            var = h.var(dim=(2, 3), keepdim=True, unbiased=False)
            return (h - mean) / torch.sqrt(var + 1e-5)

        def leaky(h):
            return torch.where(h >= 0, h, 0.2 * h)

        def down(h, conv):
            return F.conv2d(h, conv.weight, conv.bias, stride=2, padding=1)

        def up(h, conv):
            return F.conv_transpose2d(h, conv.weight, conv.bias, stride=2, padding=1)

        with torch.no_grad():
            x = torch.from_numpy(image.transpose(2, 0, 1).copy()).unsqueeze(0)
            e1 = leaky(down(x, predictor.enc1))
            e2 = leaky(norm(down(e1, predictor.enc2)))
            e3 = leaky(norm(down(e2, predictor.enc3)))
            b = torch.clamp(F.conv2d(e3, predictor.bottleneck.weight, predictor.bottleneck.bias, padding=1), min=0)
            d3 = torch.clamp(norm(up(b, predictor.dec3)), min=0)
            d2 = torch.clamp(norm(up(torch.cat([d3, e2], dim=1), predictor.dec2)), min=0)
            logits = up(torch.cat([d2, e1], dim=1), predictor.dec1)
            oracle = torch.log1p(torch.exp(logits))[0, 0].numpy()

        # THEN
        np.testing.assert_allclose(predict_map(predictor, image).grid, oracle, atol=1e-5, rtol=0)

    def test_predict_map_restores_training_mode(self):
        self.predictor.train()
        prob_map = predict_map(self.predictor, np.random.default_rng(0).random((32, 32, 3)).astype(np.float32))
        self.assertTrue(self.predictor.training)
        self.assertEqual(prob_map.source, 'predicted')
        self.assertEqual(prob_map.shape, (32, 32))


class PredictorLossTest(TestCase):
    def test_perfect_prediction_of_identical_frames_is_zero(self):
        target = torch.rand(1, 1, 8, 8)
        self.assertEqual(predictor_loss(target, target, target, 0.1).item(), 0.0)

    def test_hinge_term_makes_loss_negative(self):
        # GIVEN a perfect prediction on the real frame and a far-off prediction on the fake one
        target = torch.zeros(1, 1, 4, 4)
        fake = torch.full((1, 1, 4, 4), 0.5)

        # WHEN
        loss = predictor_loss(target, target, fake, lambda_dmp=0.1)

        # THEN -0.1 * ||0.5 * ones(16)|| = -0.2
        self.assertAlmostEqual(loss.item(), -0.2, places=6)

    def test_accepts_probability_maps(self):
        grid = np.ones((4, 4))
        loss = predictor_loss(ProbabilityMap(grid=grid), ProbabilityMap(grid=np.zeros((4, 4))),
                              ProbabilityMap(grid=grid), 0.1)
        self.assertAlmostEqual(loss.item(), 4.0, places=12)

    def test_shape_mismatch_rejected(self):
        with self.assertRaises(ShapeMismatch):
            predictor_loss(torch.zeros(1, 1, 4, 4), torch.zeros(1, 1, 4, 5), torch.zeros(1, 1, 4, 4), 0.1)

    def test_flat_l2_averages_per_sample_norms(self):
        batch = torch.stack([torch.full((1, 2, 2), 1.0), torch.full((1, 2, 2), 2.0)])
        self.assertAlmostEqual(flat_l2(batch).item(), 3.0, places=6)


class MapExportTest(TestCase):
    def test_png_export_keeps_scale(self):
        prob_map = make_probability_map(LandmarkSet(points=[[0.5, 0.5], [0.3, 0.6]]), 64, 64, KERNEL)
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, 'map.png')
            peak = save_map_png(prob_map, path)
            loaded = load_map_png(path)
        self.assertAlmostEqual(peak, prob_map.grid.max(), places=12)
        np.testing.assert_allclose(loaded.grid, prob_map.grid, atol=peak / 65535)

    def test_dump_writes_triplets(self):
        torch.manual_seed(0)
        predictor = MapPredictor(PredictorConfig(base_width=4), resolution=32)
        frames = np.random.default_rng(0).random((2, 32, 32, 3)).astype(np.float32)
        targets = [make_probability_map(LandmarkSet(points=[[0.5, 0.5]]), 32, 32, KERNEL)] * 2
        with tempfile.TemporaryDirectory() as tmp:
            count = dump_probability_maps(tmp, frames, targets, predictor)
            names = sorted(os.listdir(tmp))
        self.assertEqual(count, 2)
        self.assertEqual(len(names), 6)
        self.assertIn('map_pred_00001.png', names)
