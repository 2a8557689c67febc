import numpy as np
from django.test import SimpleTestCase
from scipy import stats

from lifting.boxes import Box2D, Box3D, Detection2D
from lifting.encoding import ClassPriors, OrientationBins
from lifting.exceptions import ConfigurationError, EmptyRoiError
from lifting.geometry import CameraIntrinsics, DepthMap, OrganizedPointCloud, backproject
from lifting.roipipe import (
    ROI_SIZE,
    AugmentConfig,
    RoiStack,
    SemanticMask,
    TrainingFrame,
    TrainingRecord,
    build_sample,
    crop_concat,
    jitter_box,
    nearest_indices,
    resize_to_64,
)

from .oracles import scalar_crop

PRIORS = ClassPriors({0: (1.5, 1.6, 3.9), 1: (1.7, 0.6, 0.8)})


def random_frame(rng, height=24, width=32, num_classes=2):
    points = rng.normal(size=(height, width, 3))
    points[..., 2] = rng.uniform(2.0, 30.0, size=(height, width))
    validity = rng.random((height, width)) > 0.3
    points[~validity] = 0.0
    labels = rng.integers(0, num_classes + 1, size=(height, width))
    return OrganizedPointCloud(points, validity), SemanticMask(labels, num_classes)


class SemanticMaskTests(SimpleTestCase):
    def test_label_range(self):
        with self.assertRaises(ConfigurationError):
            SemanticMask(np.array([[0, 3]]), 2)


class CropConcatTests(SimpleTestCase):
    def test_matches_scalar_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(30):
            cloud, sem = random_frame(rng)
            u1, v1 = rng.uniform(-5, 28), rng.uniform(-5, 20)
            box = Box2D(u1, v1, u1 + rng.uniform(1, 12), v1 + rng.uniform(1, 10))
            slices = box.pixel_slices(32, 24)
            if slices is None:
                continue
            rows, cols = slices
            stack = crop_concat(cloud, sem, box)
            expected = scalar_crop(
                cloud.points, cloud.validity, sem.labels, 2,
                range(rows.start, rows.stop), range(cols.start, cols.stop),
            )
            np.testing.assert_array_equal(stack.data, expected)
            np.testing.assert_array_equal(stack.validity, cloud.validity[rows, cols])

    def test_background_has_zero_semantic_vector(self):
        cloud = OrganizedPointCloud(np.ones((4, 4, 3)), np.ones((4, 4), dtype=bool))
        sem = SemanticMask(np.zeros((4, 4), dtype=np.int64), 3)
        stack = crop_concat(cloud, sem, Box2D(0, 0, 4, 4))
        self.assertEqual(stack.data.shape, (4, 4, 6))
        self.assertTrue(np.all(stack.data[..., :3] == 0.0))

    def test_shape_mismatch(self):
        cloud = OrganizedPointCloud(np.ones((4, 4, 3)), np.ones((4, 4), dtype=bool))
        with self.assertRaises(ConfigurationError):
            crop_concat(cloud, SemanticMask(np.zeros((4, 5), dtype=np.int64), 1), Box2D(0, 0, 2, 2))

    def test_empty_after_clipping(self):
        cloud = OrganizedPointCloud(np.ones((4, 4, 3)), np.ones((4, 4), dtype=bool))
        sem = SemanticMask(np.zeros((4, 4), dtype=np.int64), 1)
        with self.assertRaises(EmptyRoiError):
            crop_concat(cloud, sem, Box2D(10, 10, 12, 12))


class ResizeTests(SimpleTestCase):
    def test_downsample_by_two_picks_odd_indices(self):
        np.testing.assert_array_equal(nearest_indices(128), 2 * np.arange(64) + 1)

    def test_identity_and_upsample(self):
        np.testing.assert_array_equal(nearest_indices(64), np.arange(64))
        np.testing.assert_array_equal(nearest_indices(32), np.arange(64) // 2)
        self.assertTrue(np.all(nearest_indices(1) == 0))

    def test_values_are_never_blended(self):
        rng = np.random.default_rng(1)
        data = rng.normal(size=(37, 91, 5))
        validity = rng.random((37, 91)) > 0.5
        tensor = resize_to_64(RoiStack(data, validity))
        self.assertEqual(tensor.data.shape, (ROI_SIZE, ROI_SIZE, 5))
        self.assertEqual(tensor.num_classes, 2)
        self.assertTrue(np.isin(tensor.data[..., 0], data[..., 0]).all())

    def test_crop_and_resize_commute_with_horizontal_shift(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            cloud, sem = random_frame(rng)
            shift = int(rng.integers(1, 8))
            u1, v1 = rng.uniform(0.0, 32 - shift - 6), rng.uniform(0.0, 18.0)
            box = Box2D(u1, v1, u1 + rng.uniform(1.0, 32 - shift - u1), v1 + rng.uniform(1.0, 24.0 - v1))
            moved = Box2D(box.u1 + shift, box.v1, box.u2 + shift, box.v2)
            moved_cloud = OrganizedPointCloud(
                np.roll(cloud.points, shift, axis=1), np.roll(cloud.validity, shift, axis=1)
            )
            moved_sem = SemanticMask(np.roll(sem.labels, shift, axis=1), sem.num_classes)
            expected = resize_to_64(crop_concat(cloud, sem, box))
            actual = resize_to_64(crop_concat(moved_cloud, moved_sem, moved))
            np.testing.assert_array_equal(actual.data, expected.data)
            np.testing.assert_array_equal(actual.validity, expected.validity)

    def test_empty_stack(self):
        with self.assertRaises(EmptyRoiError):
            resize_to_64(RoiStack(np.zeros((0, 3, 4)), np.zeros((0, 3), dtype=bool)))


class JitterTests(SimpleTestCase):
    def test_zero_fraction_is_identity(self):
        box = Box2D(10, 10, 50, 30)
        self.assertEqual(jitter_box(box, AugmentConfig(jitter_fraction=0.0), np.random.default_rng(0)), box)

    def test_fraction_must_be_below_half(self):
        with self.assertRaises(ConfigurationError):
            AugmentConfig(jitter_fraction=0.5)

    def test_offsets_within_range_and_uniform(self):
        box = Box2D(100, 50, 180, 90)
        rng = np.random.default_rng(2)
        shifts = []
        for _ in range(4000):
            out = jitter_box(box, AugmentConfig(), rng)
            shift = np.array([out.u1 - box.u1, out.v1 - box.v1, out.u2 - box.u2, out.v2 - box.v2])
            limits = np.array([20.0, 10.0, 20.0, 10.0])
            self.assertTrue(np.all(np.abs(shift) <= limits + 1e-9))
            shifts.append(shift / limits)
        shifts = np.array(shifts)
        for column in range(4):
            counts, _ = np.histogram(shifts[:, column], bins=10, range=(-1.0, 1.0))
            self.assertGreater(stats.chisquare(counts).pvalue, 1e-3)

    def test_clipped_to_image(self):
        box = Box2D(0.5, 0.5, 10, 10)
        rng = np.random.default_rng(3)
        for _ in range(200):
            out = jitter_box(box, AugmentConfig(0.4), rng, (10, 10))
            self.assertGreaterEqual(out.u1, 0.0)
            self.assertGreaterEqual(out.v1, 0.0)
            self.assertLessEqual(out.u2, 10.0)
            self.assertLessEqual(out.v2, 10.0)

    def test_same_seed_same_box(self):
        box = Box2D(10, 10, 50, 30)
        a = jitter_box(box, AugmentConfig(), np.random.default_rng([4, 1]))
        b = jitter_box(box, AugmentConfig(), np.random.default_rng([4, 1]))
        self.assertEqual(a, b)


class BuildSampleTests(SimpleTestCase):
    def setUp(self):
        self.k = CameraIntrinsics(100.0, 100.0, 40.0, 30.0, 80, 60)
        depth = np.full((60, 80), 20.0)
        depth[:, :5] = np.nan
        self.depth = DepthMap.from_array(depth)
        labels = np.zeros((60, 80), dtype=np.int64)
        labels[20:40, 30:60] = 1
        self.sem = SemanticMask(labels, 2)
        self.cloud = backproject(self.depth, self.k)

    def test_inputs(self):
        det = Detection2D(0, 0.9, Box2D(30, 20, 60, 40))
        sample = build_sample(self.cloud, self.sem, det, PRIORS, OrientationBins(2))
        self.assertEqual(sample.roi.data.shape, (64, 64, 5))
        np.testing.assert_array_equal(sample.class_onehot, [1.0, 0.0])
        np.testing.assert_allclose(sample.d_prior, [1.5, 1.6, 3.9])
        self.assertEqual(sample.prior.p_m[2], 20.0)
        self.assertIsNone(sample.target)
        self.assertTrue(np.all(sample.roi.data[..., 0] == 1.0))

    def test_targets_attached(self):
        det = Detection2D(0, 1.0, Box2D(30, 20, 60, 40))
        gt = Box3D((1.0, 1.6, 21.0), (1.5, 1.6, 3.9), 0.1)
        sample = build_sample(self.cloud, self.sem, det, PRIORS, OrientationBins(2), gt)
        np.testing.assert_allclose(sample.prior.as_array() + sample.target.delta_p, gt.center)

    def test_invalid_roi_raises(self):
        det = Detection2D(1, 1.0, Box2D(0, 0, 5, 60))
        with self.assertRaises(EmptyRoiError):
            build_sample(self.cloud, self.sem, det, PRIORS, OrientationBins(2))

    def test_training_record_without_augmentation(self):
        frame = TrainingFrame(self.depth, self.sem, self.k)
        det = Detection2D(0, 1.0, Box2D(30, 20, 60, 40))
        gt = Box3D((1.0, 1.6, 21.0), (1.5, 1.6, 3.9), 0.1)
        record = TrainingRecord(frame, det, gt, PRIORS, OrientationBins(2))
        plain = record.to_sample(None, np.random.default_rng(0))
        direct = build_sample(self.cloud, self.sem, det, PRIORS, OrientationBins(2), gt)
        np.testing.assert_array_equal(plain.roi.data, direct.roi.data)
        np.testing.assert_array_equal(plain.target.delta_p, direct.target.delta_p)

    def test_training_record_with_augmentation(self):
        frame = TrainingFrame(self.depth, self.sem, self.k)
        det = Detection2D(0, 1.0, Box2D(30, 20, 60, 40))
        gt = Box3D((1.0, 1.6, 21.0), (1.5, 1.6, 3.9), 0.1)
        record = TrainingRecord(frame, det, gt, PRIORS, OrientationBins(2))
        a = record.to_sample(AugmentConfig(), np.random.default_rng([0, 0, 3]))
        b = record.to_sample(AugmentConfig(), np.random.default_rng([0, 0, 3]))
        self.assertEqual(a.roi.data.shape, (64, 64, 5))
        np.testing.assert_array_equal(a.roi.data, b.roi.data)
        np.testing.assert_array_equal(a.target.delta_d, direct_dims_offset(gt))

    def test_frame_cloud_is_built_once(self):
        frame = TrainingFrame(self.depth, self.sem, self.k)
        cloud = frame.cloud()
        self.assertIs(frame.cloud(), cloud)
        np.testing.assert_array_equal(cloud.points, self.cloud.points)
        gt = Box3D((1.0, 1.6, 21.0), (1.5, 1.6, 3.9), 0.1)
        for box in (Box2D(30, 20, 60, 40), Box2D(10, 10, 40, 30)):
            record = TrainingRecord(frame, Detection2D(0, 1.0, box), gt, PRIORS, OrientationBins(2))
            record.to_sample(AugmentConfig(), np.random.default_rng(1))
        self.assertIs(frame.cloud(), cloud)
        self.assertEqual(frame, TrainingFrame(self.depth, self.sem, self.k))


def direct_dims_offset(gt):
    return np.array(gt.dims) - PRIORS.prior(0)
