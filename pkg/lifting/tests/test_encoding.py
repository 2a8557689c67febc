import math

import numpy as np
from django.test import SimpleTestCase

from lifting.boxes import Box2D, Box3D, wrap_angle
from lifting.encoding import (
    MIN_DECODED_DIM,
    CentralPrior,
    ClassPriors,
    HeadPrediction,
    OrientationBins,
    central_pixel_prior,
    class_one_hot,
    decode_orientation,
    decode_prediction,
    encode_orientation,
    encode_targets,
)
from lifting.exceptions import BinIndexError, ConfigurationError, EmptyRoiError, UnknownClassError
from lifting.geometry import OrganizedPointCloud

PRIORS = ClassPriors({0: (1.5, 1.6, 3.9), 1: (1.7, 0.6, 0.8)})


class OrientationTests(SimpleTestCase):
    def test_bin_centers(self):
        np.testing.assert_allclose(OrientationBins(2).centers, [0.0, math.pi])
        np.testing.assert_allclose(OrientationBins(4).centers, [0.0, math.pi / 2, math.pi, -math.pi / 2], atol=1e-12)

    def test_at_least_two_bins(self):
        with self.assertRaises(ConfigurationError):
            OrientationBins(1)

    def test_round_trip(self):
        rng = np.random.default_rng(0)
        thetas = rng.uniform(-math.pi, math.pi, size=10_000)
        for count in (2, 4, 8):
            bins = OrientationBins(count)
            for theta in thetas:
                k, residual = encode_orientation(theta, bins)
                self.assertLessEqual(abs(residual), bins.half_width + 1e-12)
                self.assertLessEqual(abs(wrap_angle(decode_orientation(k, residual, bins) - theta)), 1e-9)

    def test_nearest_bin(self):
        bins = OrientationBins(2)
        self.assertEqual(encode_orientation(0.3, bins)[0], 0)
        self.assertEqual(encode_orientation(3.0, bins)[0], 1)
        self.assertEqual(encode_orientation(-3.0, bins)[0], 1)
        k, residual = encode_orientation(-3.0, bins)
        self.assertAlmostEqual(residual, math.pi - 3.0)

    def test_bad_bin_index(self):
        with self.assertRaises(BinIndexError):
            decode_orientation(2, 0.0, OrientationBins(2))


class PriorTableTests(SimpleTestCase):
    def test_from_boxes_mean(self):
        boxes = [
            (0, Box3D((0, 0, 5), (1.0, 2.0, 4.0), 0.0)),
            (0, Box3D((0, 0, 5), (2.0, 2.0, 2.0), 0.0)),
            (1, Box3D((0, 0, 5), (1.8, 0.5, 0.9), 0.0)),
        ]
        priors = ClassPriors.from_boxes(boxes)
        np.testing.assert_allclose(priors.prior(0), [1.5, 2.0, 3.0])
        np.testing.assert_allclose(priors.prior(1), [1.8, 0.5, 0.9])

    def test_text_round_trip(self):
        restored = ClassPriors.from_text(PRIORS.to_text())
        for class_id in (0, 1):
            np.testing.assert_allclose(restored.prior(class_id), PRIORS.prior(class_id))

    def test_unknown_class(self):
        with self.assertRaises(UnknownClassError):
            PRIORS.prior(5)

    def test_one_hot(self):
        np.testing.assert_array_equal(class_one_hot(1, 3), [0.0, 1.0, 0.0])
        with self.assertRaises(BinIndexError):
            class_one_hot(3, 3)


class CentralPixelTests(SimpleTestCase):
    def setUp(self):
        points = np.zeros((10, 10, 3))
        points[..., 0] = np.arange(10)[None, :]
        points[..., 1] = np.arange(10)[:, None]
        points[..., 2] = 5.0
        self.points = points

    def test_valid_center(self):
        cloud = OrganizedPointCloud(self.points, np.ones((10, 10), dtype=bool))
        prior = central_pixel_prior(cloud, Box2D(2.0, 3.0, 7.0, 8.0))
        self.assertEqual(prior.p_m, (4.0, 5.0, 5.0))

    def test_invalid_center_uses_median(self):
        validity = np.zeros((10, 10), dtype=bool)
        validity[3, 2] = validity[3, 6] = validity[7, 4] = True
        points = self.points.copy()
        points[3, 2, 2], points[3, 6, 2], points[7, 4, 2] = 4.0, 6.0, 9.0
        prior = central_pixel_prior(OrganizedPointCloud(points, validity), Box2D(2.0, 3.0, 7.0, 8.0))
        self.assertEqual(prior.p_m, (4.0, 3.0, 6.0))

    def test_no_valid_points(self):
        cloud = OrganizedPointCloud(self.points, np.zeros((10, 10), dtype=bool))
        with self.assertRaises(EmptyRoiError):
            central_pixel_prior(cloud, Box2D(2.0, 3.0, 7.0, 8.0))

    def test_roi_outside_grid(self):
        cloud = OrganizedPointCloud(self.points, np.ones((10, 10), dtype=bool))
        with self.assertRaises(EmptyRoiError):
            central_pixel_prior(cloud, Box2D(20.0, 3.0, 27.0, 8.0))


class TargetCodecTests(SimpleTestCase):
    def test_decode_inverts_encode(self):
        rng = np.random.default_rng(1)
        for index in range(1000):
            count = (2, 4, 8)[index % 3]
            bins = OrientationBins(count)
            class_id = index % 2
            gt = Box3D(
                center=tuple(rng.uniform([-10, -1, 2], [10, 2, 60])),
                dims=tuple(rng.uniform(0.3, 5.0, size=3)),
                yaw=rng.uniform(-math.pi, math.pi),
            )
            prior = CentralPrior(tuple(rng.uniform([-10, -1, 2], [10, 2, 60])))
            target = encode_targets(gt, prior, class_id, PRIORS, bins)
            decoded = decode_prediction(target.to_prediction(), prior, class_id, PRIORS, bins)
            np.testing.assert_allclose(decoded.center, gt.center, atol=1e-9)
            np.testing.assert_allclose(decoded.dims, gt.dims, atol=1e-9)
            self.assertLessEqual(abs(wrap_angle(decoded.yaw - gt.yaw)), 1e-9)

    def test_targets_are_offsets(self):
        gt = Box3D((1.0, 1.6, 20.0), (1.4, 1.7, 4.2), 0.2)
        prior = CentralPrior((0.5, 1.0, 19.0))
        target = encode_targets(gt, prior, 0, PRIORS, OrientationBins(2))
        np.testing.assert_allclose(target.delta_p, [0.5, 0.6, 1.0])
        np.testing.assert_allclose(target.delta_d, [-0.1, 0.1, 0.3])
        self.assertEqual(target.bin_index, 0)
        self.assertAlmostEqual(target.theta_reg, 0.2)

    def test_location_offsets_ignore_scene_translation(self):
        rng = np.random.default_rng(2)
        points = np.zeros((10, 10, 3))
        points[..., 0] = np.arange(10)[None, :]
        points[..., 1] = np.arange(10)[:, None]
        points[..., 2] = rng.uniform(5.0, 30.0, size=(10, 10))
        validity = np.ones((10, 10), dtype=bool)
        box = Box2D(2.0, 3.0, 7.0, 8.0)
        gt = Box3D((1.0, 1.6, 20.0), (1.4, 1.7, 4.2), 0.3)
        bins = OrientationBins(2)
        base = encode_targets(gt, central_pixel_prior(OrganizedPointCloud(points, validity), box), 0, PRIORS, bins)
        for _ in range(20):
            shift = rng.uniform([-20.0, -2.0, 0.0], [20.0, 2.0, 30.0])
            moved_cloud = OrganizedPointCloud(points + shift, validity)
            moved_gt = Box3D(tuple(np.array(gt.center) + shift), gt.dims, gt.yaw)
            target = encode_targets(moved_gt, central_pixel_prior(moved_cloud, box), 0, PRIORS, bins)
            np.testing.assert_allclose(target.delta_p, base.delta_p, atol=1e-9)
            np.testing.assert_array_equal(target.delta_d, base.delta_d)
            np.testing.assert_array_equal(target.bin_onehot, base.bin_onehot)
            self.assertEqual(target.theta_reg, base.theta_reg)

    def test_decoded_dims_are_clamped(self):
        out = HeadPrediction(
            delta_p=np.zeros(3),
            delta_d=np.array([-10.0, 0.0, 0.0]),
            bin_logits=np.array([1.0, 0.0]),
            theta_reg=np.zeros(2),
        )
        box = decode_prediction(out, CentralPrior((0.0, 0.0, 10.0)), 0, PRIORS, OrientationBins(2))
        self.assertEqual(box.h, MIN_DECODED_DIM)

    def test_prior_must_be_in_front(self):
        with self.assertRaises(ConfigurationError):
            CentralPrior((0.0, 0.0, 0.0))
