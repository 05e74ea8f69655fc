"""
Tests for patch pyramids, reference descriptors and guided correlation.
"""

import unittest
import sys
import os
import tempfile
import numpy as np
import pandas as pd

# Add src directory to path
sys.path.insert(0, os.path.join(os.path.dirname(__file__), 'src'))
from errors import EvtapError
from event_core import TimeWindow
from feature_match import (CorrelationMap, build_pyramid, correlate, dump_correlation_map,
                           pyramid_similarity, reference_descriptor, soft_argmax)
from motion_guidance import KinematicVector
from scene_sim import Scene, SimConfig, simulate
from time_surface import TimeSurface, encode_time_surface

WINDOW = TimeWindow(0, 1000)
CENTRE = (24.0, 24.0)


def textured_surface(shift=(0, 0), seed=5):
    """Random texture whose content is moved by ``shift`` = (dx, dy) pixels."""
    rng = np.random.default_rng(seed)
    pos = 0.1 + 0.9 * rng.random((48, 48))
    neg = 0.1 + 0.9 * rng.random((48, 48))
    dx, dy = shift
    return TimeSurface(np.roll(pos, (dy, dx), axis=(0, 1)), np.roll(neg, (dy, dx), axis=(0, 1)), WINDOW)


class TestPyramids(unittest.TestCase):
    """Test cases for multi-scale patch pyramids."""

    def test_zero_surface(self):
        """Test that a uniform zero surface gives an all-zero, all-valid descriptor."""
        pyramid = build_pyramid(TimeSurface.zeros(32, 32, WINDOW), (16.0, 16.0), 3, (0, 1, 2))
        self.assertEqual(pyramid.levels.shape, (3, 7, 7, 2))
        self.assertTrue(pyramid.masks.all())
        descriptor = reference_descriptor(pyramid)
        self.assertFalse(descriptor.vector.any())
        self.assertTrue(descriptor.masks.all())

    def test_anchor_out_of_frame(self):
        pyramid = build_pyramid(TimeSurface.zeros(32, 32, WINDOW), (-100.0, -100.0))
        self.assertFalse(pyramid.masks.any())
        self.assertFalse(pyramid.valid.any())

    def test_non_finite_anchor(self):
        with self.assertRaises(EvtapError):
            build_pyramid(TimeSurface.zeros(8, 8, WINDOW), (np.inf, 0.0))

    def test_self_similarity(self):
        pyramid = build_pyramid(textured_surface(), CENTRE)
        self.assertAlmostEqual(pyramid_similarity(pyramid, pyramid), 1.0)

    def test_true_anchor_is_more_similar(self):
        """Test that a later true-position pyramid matches the true anchor better than one 3 px off."""
        scene = Scene(kind='translating_edge', contrast=1.0, x0=8.0, y0=12.0, vx=20.0)
        stream, _ = simulate(scene, SimConfig(duration=500_000, width=40, height=24, steps=4))
        early = encode_time_surface(stream, TimeWindow(0, 250_000))
        late = encode_time_surface(stream, TimeWindow(250_000, 500_000))
        target = build_pyramid(late, (18.0, 12.0))
        self.assertGreater(pyramid_similarity(build_pyramid(early, (13.0, 12.0)), target),
                           pyramid_similarity(build_pyramid(early, (16.0, 12.0)), target))


class TestReferenceDescriptor(unittest.TestCase):
    """Test cases for the three-offset reference descriptor."""

    def setUp(self):
        self.pyramid = build_pyramid(textured_surface(), CENTRE)

    def test_missing_offsets_clamp_to_step_zero(self):
        """Test that a descriptor at t = 1 holds three copies of the step-0 pyramid."""
        descriptor = reference_descriptor(self.pyramid)
        np.testing.assert_array_equal(descriptor.blocks[0], descriptor.blocks[1])
        np.testing.assert_array_equal(descriptor.blocks[0], descriptor.blocks[2])

    def test_identical_pyramids(self):
        a = reference_descriptor(self.pyramid)
        b = reference_descriptor(self.pyramid, self.pyramid, self.pyramid)
        np.testing.assert_array_equal(a.vector, b.vector)

    def test_weights_normalized(self):
        descriptor = reference_descriptor(self.pyramid, weights=(2.0, 1.0, 1.0))
        np.testing.assert_allclose(descriptor.weights, (0.5, 0.25, 0.25))

    def test_bad_weights(self):
        for weights in ((1.0, -1.0, 1.0), (0.0, 0.0, 0.0), (1.0, 1.0)):
            with self.subTest(weights=weights):
                with self.assertRaises(EvtapError):
                    reference_descriptor(self.pyramid, weights=weights)

    def test_blocks_are_normalized(self):
        block = reference_descriptor(self.pyramid).blocks[0]
        self.assertAlmostEqual(block.mean(), 0.0)
        self.assertAlmostEqual(block.std(), 1.0)


class TestCorrelate(unittest.TestCase):
    """Test cases for the guided correlation search."""

    def setUp(self):
        self.reference = reference_descriptor(build_pyramid(textured_surface(), CENTRE))

    def test_autocorrelation_peak(self):
        cmap = correlate(self.reference, textured_surface(), CENTRE, KinematicVector(), R=4)
        self.assertEqual(cmap.grid.shape, (9, 9))
        self.assertEqual(cmap.peak, (0, 0))
        self.assertAlmostEqual(cmap.peak_score, 1.0)

    def test_shifted_surface(self):
        """Test that content moved by (2, 1) px peaks at displacement (2, 1)."""
        cmap = correlate(self.reference, textured_surface((2, 1)), CENTRE, KinematicVector(), R=4)
        self.assertEqual(cmap.peak, (2, 1))
        self.assertEqual(cmap.guided_center, CENTRE)

    def test_guidance_absorbs_displacement(self):
        """Test that a guide of (2, 1) px with weight 1 moves the peak to (0, 0)."""
        guide = KinematicVector((2.0, 1.0), 1.0)
        cmap = correlate(self.reference, textured_surface((2, 1)), CENTRE, guide, dt=1.0, R=4)
        self.assertEqual(cmap.guided_center, (26.0, 25.0))
        self.assertEqual(cmap.peak, (0, 0))

    def test_zero_weight_guide_is_ignored(self):
        guide = KinematicVector((2.0, 1.0), 0.0)
        cmap = correlate(self.reference, textured_surface((2, 1)), CENTRE, guide, R=4)
        self.assertEqual(cmap.peak, (2, 1))

    def test_stride(self):
        """Test that a stride of 2 px finds a (4, 2) px motion at grid offset (2, 1)."""
        cmap = correlate(self.reference, textured_surface((4, 2)), CENTRE, KinematicVector(),
                         R=3, stride=2)
        self.assertEqual(cmap.peak, (2, 1))

    def test_simulated_translation_covariance(self):
        """Test that moving a simulated blob surface by (2, -2) px moves the peak by (2, -2)."""
        scene = Scene(kind='translating_blob', x0=24.0, y0=24.0, vx=20.0, radius=5.0)
        stream, _ = simulate(scene, SimConfig(duration=250_000, width=48, height=48, steps=4))
        ts = encode_time_surface(stream, TimeWindow(0, 250_000))
        anchor = (28.0, 24.0)
        reference = reference_descriptor(build_pyramid(ts, anchor, levels=(0, 1)))
        moved = TimeSurface(np.roll(ts.pos, (-2, 2), axis=(0, 1)), np.roll(ts.neg, (-2, 2), axis=(0, 1)),
                            ts.window)
        cmap = correlate(reference, moved, anchor, KinematicVector(), R=4, levels=(0, 1))
        self.assertEqual(cmap.peak, (2, -2))
        self.assertAlmostEqual(cmap.peak_score, 1.0)

    def test_scores_bounded(self):
        cmap = correlate(self.reference, textured_surface(seed=9), CENTRE, KinematicVector(), R=2)
        self.assertTrue(np.all(cmap.grid <= 1.0) and np.all(cmap.grid >= -1.0))

    def test_search_radius_minimum(self):
        with self.assertRaises(EvtapError):
            correlate(self.reference, textured_surface(), CENTRE, KinematicVector(), R=0)


class TestSoftArgmax(unittest.TestCase):
    """Test cases for the sub-pixel soft-argmax."""

    def make_map(self, peaks, R=4):
        grid = np.zeros((2 * R + 1, 2 * R + 1))
        for dx, dy in peaks:
            grid[dy + R, dx + R] = 1.0
        return CorrelationMap(grid, (0.0, 0.0), R)

    def test_one_hot_low_temperature(self):
        dx, dy = soft_argmax(self.make_map([(2, 1)]), temperature=1e-3)
        self.assertAlmostEqual(dx, 2.0, delta=1e-2)
        self.assertAlmostEqual(dy, 1.0, delta=1e-2)

    def test_uniform_map(self):
        cmap = CorrelationMap(np.full((9, 9), 0.3), (0.0, 0.0), 4)
        self.assertEqual(soft_argmax(cmap), (0.0, 0.0))

    def test_symmetric_peaks(self):
        dx, dy = soft_argmax(self.make_map([(-3, 0), (3, 0)]), temperature=0.02)
        self.assertAlmostEqual(dx, 0.0)
        self.assertAlmostEqual(dy, 0.0)

    def test_high_temperature_pulls_to_centre(self):
        dx, _ = soft_argmax(self.make_map([(2, 1)]), temperature=10.0)
        self.assertLess(abs(dx), 0.5)

    def test_bad_temperature(self):
        with self.assertRaises(EvtapError):
            soft_argmax(self.make_map([(0, 0)]), temperature=0.0)


class TestCorrelationDump(unittest.TestCase):
    """Test cases for the correlation map CSV."""

    def test_grid_layout(self):
        grid = np.arange(9, dtype=float).reshape(3, 3) / 10
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, 'map.csv')
            dump_correlation_map(CorrelationMap(grid, (5.0, 5.0), 1), path)
            df = pd.read_csv(path)
        self.assertEqual(list(df.columns), ['dy', '-1', '0', '1'])
        self.assertEqual(list(df['dy']), [-1, 0, 1])
        self.assertAlmostEqual(df['1'][0], 0.2)


if __name__ == '__main__':
    unittest.main()
