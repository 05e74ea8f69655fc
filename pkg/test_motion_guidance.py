"""
Tests for plane fitting, kinematic vectors and temporal correction.
"""

import unittest
import sys
import os
import tempfile
import numpy as np
import pandas as pd

# Add src directory to path
sys.path.insert(0, os.path.join(os.path.dirname(__file__), 'src'))
from config import KINEMATICS_COLUMNS
from errors import DegenerateFitError, EvtapError
from event_core import TimeWindow
from motion_guidance import (KinematicVector, PlaneFit, correct_kinematics, dump_kinematics,
                             estimate_kinematics, fit_plane, kinematics_to_dataframe,
                             plane_to_velocity)
from scene_sim import Scene, SimConfig, simulate
from time_surface import TimeSurface, encode_time_surface

WINDOW = TimeWindow(0, 1000)


def ramp_surface(gx, gy, size=15, center=7.0, offset=0.5, noise=0.0, rng=None):
    """Positive-channel surface t = offset + gx*(x-c) + gy*(y-c)."""
    ys, xs = np.mgrid[0:size, 0:size].astype(float)
    t = offset + gx * (xs - center) + gy * (ys - center)
    if noise:
        t = t + rng.normal(0.0, noise, t.shape)
    return TimeSurface(np.clip(t, 1e-3, 1.0), np.zeros_like(t), WINDOW)


class TestFitPlane(unittest.TestCase):
    """Test cases for local plane fitting."""

    def test_ramp_along_x(self):
        """Test that t = 0.1 x on a 5x5 window has gradient (0.1, 0)."""
        fit = fit_plane(ramp_surface(0.1, 0.0), (7.0, 7.0), radius=2)
        self.assertEqual(fit.n_support, 25)
        np.testing.assert_allclose(fit.gradient, (0.1, 0.0), atol=1e-6)
        self.assertLess(fit.residual, 1e-9)

    def test_oblique_ramp(self):
        fit = fit_plane(ramp_surface(0.06, 0.08), (7.0, 7.0), radius=2)
        np.testing.assert_allclose(fit.gradient, (0.06, 0.08), atol=1e-6)

    def test_inverse_gradient_recovery(self):
        """Test that fit + velocity recovers g/|g|^2 exactly on ramps (eps = 0)."""
        for gx, gy in [(0.1, 0.0), (0.06, 0.08), (-0.05, 0.02), (0.0, -0.04), (0.03, 0.03)]:
            with self.subTest(g=(gx, gy)):
                fit = fit_plane(ramp_surface(gx, gy), (7.0, 7.0), radius=3)
                vector = plane_to_velocity(fit, eps=0.0)
                expected = np.array([gx, gy]) / (gx * gx + gy * gy)
                np.testing.assert_allclose(vector.v, expected, rtol=1e-6, atol=1e-9)

    def test_too_few_pixels(self):
        pos = np.zeros((9, 9))
        pos[4, 4] = pos[4, 5] = pos[5, 4] = 0.5
        with self.assertRaises(DegenerateFitError):
            fit_plane(TimeSurface(pos, np.zeros((9, 9)), WINDOW), (4.0, 4.0))

    def test_identical_timestamps(self):
        with self.assertRaises(DegenerateFitError):
            fit_plane(TimeSurface(np.full((9, 9), 0.4), np.zeros((9, 9)), WINDOW), (4.0, 4.0))

    def test_collinear_support(self):
        """Test that a single active row with a linear ramp is rank deficient."""
        pos = np.zeros((9, 9))
        pos[4, :] = 0.1 + 0.05 * np.arange(9)
        with self.assertRaises(DegenerateFitError):
            fit_plane(TimeSurface(pos, np.zeros((9, 9)), WINDOW), (4.0, 4.0))

    def test_fit_radius_minimum(self):
        with self.assertRaises(EvtapError):
            fit_plane(ramp_surface(0.1, 0.0), (7.0, 7.0), radius=1)

    def test_uses_fresher_polarity(self):
        """Test that the fit sees the merged channel."""
        ts = ramp_surface(0.1, 0.0)
        even = np.arange(15) % 2 == 0
        split = TimeSurface(np.where(even, ts.pos, 0.0), np.where(~even, ts.pos, 0.0), WINDOW)
        np.testing.assert_allclose(fit_plane(split, (7.0, 7.0)).gradient, (0.1, 0.0), atol=1e-6)


class TestPlaneToVelocity(unittest.TestCase):
    """Test cases for the inverse-gradient velocity."""

    def test_one_dimensional_inverse(self):
        vector = plane_to_velocity(PlaneFit.from_gradient(0.1, 0.0), eps=0.0)
        np.testing.assert_allclose(vector.v, (10.0, 0.0), rtol=1e-12)
        self.assertAlmostEqual(vector.weight, 1.0)

    def test_oblique_inverse(self):
        vector = plane_to_velocity(PlaneFit.from_gradient(0.06, 0.08), eps=0.0)
        np.testing.assert_allclose(vector.v, (6.0, 8.0), rtol=1e-12)
        self.assertAlmostEqual(vector.speed, 10.0)

    def test_flat_plane(self):
        vector = plane_to_velocity(PlaneFit.from_gradient(0.0, 0.0), eps=0.0)
        self.assertEqual(vector.v, (0.0, 0.0))
        self.assertEqual(vector.weight, 0.0)

    def test_clamp_reduces_weight(self):
        """Test that clamping to v_max scales the weight by (v_max/|v|)^2."""
        vector = plane_to_velocity(PlaneFit.from_gradient(0.01, 0.0), eps=0.0, v_max=10.0)
        np.testing.assert_allclose(vector.v, (10.0, 0.0), rtol=1e-12)
        self.assertAlmostEqual(vector.weight, 0.01)

    def test_weight_from_residual_and_support(self):
        fit = PlaneFit.from_gradient(0.1, 0.0, residual=0.05, n_support=6)
        vector = plane_to_velocity(fit, eps=0.0, residual_tau=0.05, support_saturation=12)
        self.assertAlmostEqual(vector.weight, np.exp(-1.0) * 0.5)

    def test_weight_decreases_with_noise(self):
        """Test that mean weight is non-increasing as surface noise grows."""
        rng = np.random.default_rng(11)
        means = []
        for sigma in (0.0, 0.01, 0.02, 0.05):
            weights = [estimate_kinematics(ramp_surface(0.1, 0.0, noise=sigma, rng=rng), (7.0, 7.0)).weight
                       for _ in range(30)]
            means.append(np.mean(weights))
        self.assertTrue(all(a >= b for a, b in zip(means, means[1:])), means)
        self.assertGreater(means[0], means[-1])

    def test_degenerate_neighbourhood_has_zero_weight(self):
        vector = estimate_kinematics(TimeSurface.zeros(9, 9, WINDOW), (4.0, 4.0))
        self.assertEqual(vector, KinematicVector())

    def test_rotation_equivariance(self):
        """Test that rotating the surface gradient rotates the recovered velocity."""
        g = np.array([0.08, 0.02])
        base = plane_to_velocity(fit_plane(ramp_surface(*g), (7.0, 7.0), radius=3), eps=0.0)
        for angle in (np.pi / 6, np.pi / 2, 3.5):
            with self.subTest(angle=angle):
                rot = np.array([[np.cos(angle), -np.sin(angle)], [np.sin(angle), np.cos(angle)]])
                turned = plane_to_velocity(fit_plane(ramp_surface(*(rot @ g)), (7.0, 7.0), radius=3),
                                           eps=0.0)
                np.testing.assert_allclose(turned.v, rot @ np.array(base.v), atol=1e-5)
                self.assertAlmostEqual(turned.weight, base.weight, places=6)

    def test_vector_validation(self):
        with self.assertRaises(EvtapError):
            KinematicVector(weight=1.5)
        with self.assertRaises(EvtapError):
            KinematicVector(v=(np.inf, 0.0))


class TestSimulatedEdgeSpeed(unittest.TestCase):
    """Test cases for speed recovery on simulated translating edges."""

    def recovered_speeds(self, speed):
        travel_px = 12.0
        span_us = int(round(travel_px / speed * 1e6))
        scene = Scene(kind='translating_edge', contrast=1.0, x0=8.0, y0=8.0, vx=speed)
        stream, _ = simulate(scene, SimConfig(contrast_threshold=0.2, duration=span_us,
                                              width=32, height=16, steps=4))
        ts = encode_time_surface(stream, TimeWindow(0, span_us))
        span_s = span_us / 1e6
        points = [(x, y) for x in (12.0, 13.0, 14.0, 15.0, 16.0) for y in range(4, 12)]
        speeds = [estimate_kinematics(ts, p).speed / span_s for p in points]
        gradients = [np.hypot(*fit_plane(ts, p).gradient) * span_s for p in points]
        return np.median(speeds), np.median(gradients)

    def test_speed_regimes(self):
        """Test that median recovered speed is within 10% for 5, 20 and 80 px/s."""
        for speed in (5.0, 20.0, 80.0):
            with self.subTest(speed=speed):
                recovered, _ = self.recovered_speeds(speed)
                self.assertLess(abs(recovered - speed) / speed, 0.1)

    def test_gradient_is_inverse_speed(self):
        _, gradient = self.recovered_speeds(20.0)
        self.assertLess(abs(gradient - 1 / 20.0) / (1 / 20.0), 0.1)


class TestCorrectKinematics(unittest.TestCase):
    """Test cases for reliability-weighted temporal smoothing."""

    def test_constant_sequence_is_fixed_point(self):
        raw = [KinematicVector((2.0, -1.0), 1.0, 0.01, 40)] * 10
        for vector in correct_kinematics(raw):
            self.assertAlmostEqual(vector.vx, 2.0)
            self.assertAlmostEqual(vector.vy, -1.0)
            self.assertAlmostEqual(vector.weight, 1.0)

    def test_zero_weight_outlier_is_ignored(self):
        """Test that a zero-weight outlier takes its neighbours' value."""
        raw = [KinematicVector((1.0, 0.5), 0.8)] * 9
        raw[4] = KinematicVector((50.0, -30.0), 0.0)
        corrected = correct_kinematics(raw)
        self.assertAlmostEqual(corrected[4].vx, 1.0)
        self.assertAlmostEqual(corrected[4].vy, 0.5)

    def test_boundary_crossing_is_repaired(self):
        """Test that two low-weight steps from a passing object are pulled back to the track's motion."""
        truth = np.array([2.0, 0.0])
        raw = [KinematicVector(tuple(truth), 0.9, 0.01, 40)] * 12
        raw[5] = raw[6] = KinematicVector((0.0, 3.0), 0.2, 0.08, 20)

        def angle(v):
            return np.degrees(np.arccos(np.dot(v, truth) / (np.linalg.norm(v) * np.linalg.norm(truth))))

        corrected = correct_kinematics(raw)
        for t in (5, 6):
            with self.subTest(step=t):
                self.assertLess(angle(corrected[t].v), angle(raw[t].v))
                self.assertLess(angle(corrected[t].v), 20.0)
        self.assertAlmostEqual(corrected[0].vy, 0.0)

    def test_all_zero_weights(self):
        corrected = correct_kinematics([KinematicVector()] * 4)
        self.assertTrue(all(v.weight == 0.0 for v in corrected))

    def test_kernel_reach(self):
        """Test that steps beyond the half width do not contribute."""
        raw = [KinematicVector((0.0, 0.0), 0.0)] * 9
        raw[0] = KinematicVector((3.0, 0.0), 1.0)
        corrected = correct_kinematics(raw, half_width=2)
        self.assertAlmostEqual(corrected[2].vx, 3.0)
        self.assertEqual(corrected[3].weight, 0.0)

    def test_empty_sequence(self):
        with self.assertRaises(EvtapError):
            correct_kinematics([])


class TestKinematicsOutput(unittest.TestCase):
    """Test cases for the kinematics CSV."""

    def test_dump(self):
        vectors = [KinematicVector((1.0, 2.0), 0.5, 0.01, 20), KinematicVector()]
        frame = kinematics_to_dataframe(3, vectors)
        self.assertEqual(list(frame.columns), KINEMATICS_COLUMNS)
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, 'kin.csv')
            dump_kinematics([frame], path)
            reloaded = pd.read_csv(path)
        self.assertEqual(len(reloaded), 2)
        self.assertEqual(list(reloaded['point_id']), [3, 3])
        self.assertAlmostEqual(reloaded['vy'][0], 2.0)


if __name__ == '__main__':
    unittest.main()
