import math
from dataclasses import replace

import numpy as np
from django.test import SimpleTestCase

from lifting.boxes import Box2D, iou_bev
from lifting.evalkit import (
    EvalConfig,
    LabelRecord,
    PRCurve,
    assign_difficulty,
    average_orientation_similarity,
    average_precision,
    class_curve,
    evaluate,
    iou_sweep,
    match_detections,
    parse_kitti_label,
    parse_label_text,
    serialize_kitti_label,
    serialize_labels,
)
from lifting.exceptions import ConfigurationError, LabelFormatError

from .oracles import brute_ap, brute_match

GT_LINE = "Car 0.00 0 -1.58 587.01 173.33 614.12 200.12 1.65 1.67 3.64 -0.65 1.71 46.70 -1.59"


def label(type_="Car", bbox=(100.0, 100.0, 200.0, 160.0), location=(0.0, 1.6, 20.0),
          dims=(1.5, 1.6, 3.9), yaw=0.0, score=None, occluded=0, truncated=0.0):
    return LabelRecord(
        type=type_, truncated=truncated, occluded=occluded, alpha=0.0, bbox=Box2D(*bbox),
        dims=dims, location=location, rotation_y=yaw, score=score,
    )


def random_frame(rng, spacing=8.0, clutter=2):
    """Эталон из разнесённых машин и детекции: сдвинутые копии плюс ложные срабатывания."""
    gts, dets = [], []
    for k in range(int(rng.integers(0, 5))):
        location = (float(k * spacing - 12.0), 1.6, float(rng.uniform(10.0, 40.0)))
        yaw = float(rng.uniform(-math.pi, math.pi))
        gts.append(label(location=location, yaw=yaw))
        if rng.random() < 0.8:
            shifted = (location[0] + rng.normal(scale=0.4), 1.6, location[2] + rng.normal(scale=0.4))
            dets.append(label(location=shifted, yaw=yaw + rng.normal(scale=0.3), score=float(rng.random())))
    for _ in range(int(rng.integers(0, clutter + 1))):
        location = (float(rng.uniform(-20.0, 20.0)), 1.6, float(rng.uniform(10.0, 40.0)))
        dets.append(label(location=location, yaw=float(rng.uniform(-3, 3)), score=float(rng.random())))
    return gts, dets


class KittiFormatTests(SimpleTestCase):
    def test_parse_ground_truth_line(self):
        rec = parse_kitti_label(GT_LINE)
        self.assertEqual(rec.type, "Car")
        self.assertEqual(rec.occluded, 0)
        self.assertEqual(rec.dims, (1.65, 1.67, 3.64))
        self.assertEqual(rec.location, (-0.65, 1.71, 46.70))
        self.assertAlmostEqual(rec.rotation_y, -1.59)
        self.assertIsNone(rec.score)

    def test_detection_line_keeps_score(self):
        rec = parse_kitti_label(GT_LINE + " 0.9312")
        self.assertAlmostEqual(rec.score, 0.9312)
        self.assertEqual(serialize_kitti_label(rec), GT_LINE + " 0.9312")

    def test_detection_with_unknown_truncation_and_occlusion(self):
        line = "Car -1.00 -1" + GT_LINE[len("Car 0.00 0"):] + " 0.9312"
        rec = parse_kitti_label(line)
        self.assertEqual((rec.truncated, rec.occluded), (-1.0, -1))
        self.assertEqual(serialize_kitti_label(rec), line)
        counts = class_curve([[label()]], [[label(score=0.9, truncated=-1.0, occluded=-1)]], "Car", "easy", "3d", 0.7)
        self.assertEqual((counts.tp, counts.fp, counts.fn), (1, 0, 0))

    def test_serialize_ground_truth(self):
        self.assertEqual(serialize_kitti_label(parse_kitti_label(GT_LINE)), GT_LINE)
        self.assertEqual(len(serialize_kitti_label(parse_kitti_label(GT_LINE)).split()), 15)

    def test_wrong_field_count_reports_line(self):
        with self.assertRaises(LabelFormatError) as ctx:
            parse_label_text(GT_LINE + "\n\nCar 0 0 0\n")
        self.assertEqual(ctx.exception.line_number, 3)

    def test_non_numeric_field(self):
        with self.assertRaises(LabelFormatError):
            parse_kitti_label(GT_LINE.replace("46.70", "far"))

    def test_label_file_text(self):
        records = parse_label_text(GT_LINE + "\n" + GT_LINE + " 0.5000\n")
        self.assertEqual(len(records), 2)
        self.assertEqual(serialize_labels(records), GT_LINE + "\n" + GT_LINE + " 0.5000\n")
        self.assertEqual(serialize_labels([]), "")


class DifficultyTests(SimpleTestCase):
    def test_levels_are_cumulative(self):
        self.assertEqual(assign_difficulty(label(bbox=(0, 0, 50, 40), truncated=0.1)), {"easy", "moderate", "hard"})
        self.assertEqual(assign_difficulty(label(bbox=(0, 0, 50, 30), occluded=1)), {"moderate", "hard"})
        self.assertEqual(assign_difficulty(label(bbox=(0, 0, 50, 60), truncated=0.4)), {"hard"})

    def test_too_small_or_occluded(self):
        self.assertEqual(assign_difficulty(label(bbox=(0, 0, 50, 20))), frozenset())
        self.assertEqual(assign_difficulty(label(occluded=3)), frozenset())


class MatcherTests(SimpleTestCase):
    def iou(self, d, g):
        return iou_bev(d.box3d, g.box3d)

    def test_highest_score_takes_best_overlap(self):
        gts = [label(location=(0.0, 1.6, 20.0))]
        dets = [label(location=(0.3, 1.6, 20.0), score=0.4), label(location=(0.1, 1.6, 20.0), score=0.9)]
        result = match_detections(dets, gts, self.iou, 0.5)
        self.assertEqual(result.matches, [(1, 0)])
        self.assertEqual(result.false_positives, [0])
        self.assertEqual(result.false_negatives, [])

    def test_equal_overlap_prefers_lower_index(self):
        gts = [label(location=(0.0, 1.6, 20.0)), label(location=(0.0, 1.6, 20.0))]
        result = match_detections([label(score=0.5)], gts, self.iou, 0.5)
        self.assertEqual(result.matches, [(0, 0)])
        self.assertEqual(result.false_negatives, [1])

    def test_ignored_ground_truth_absorbs_detection(self):
        gts = [label()]
        result = match_detections([label(score=0.5)], gts, self.iou, 0.5, ignored_gts=[True])
        self.assertEqual(result.ignored, [0])
        self.assertEqual(result.false_positives, [])
        self.assertEqual(result.false_negatives, [])

    def test_ignorable_detection_is_not_false_positive(self):
        result = match_detections([label(score=0.5)], [], self.iou, 0.5, ignorable_dets=[True])
        self.assertEqual(result.ignored, [0])
        self.assertEqual(result.false_positives, [])

    def test_ignored_ground_truth_with_best_overlap_is_taken(self):
        gts = [label(location=(0.0, 1.6, 20.0)), label(location=(5.0, 1.6, 20.0))]
        dets = [label(score=0.9), label(score=0.8)]
        table = {(0.9, 0.0): 0.6, (0.9, 5.0): 0.9, (0.8, 0.0): 0.8, (0.8, 5.0): 0.0}
        result = match_detections(
            dets, gts, lambda d, g: table[(d.score, g.location[0])], 0.5, ignored_gts=[True, True]
        )
        self.assertEqual(sorted(result.ignored), [0, 1])
        self.assertEqual(result.false_positives, [])
        self.assertEqual(result.false_negatives, [])


class ClassCurveTests(SimpleTestCase):
    def test_neighbour_class_is_neither_hit_nor_miss(self):
        counts = class_curve([[label(type_="Van")]], [[label(score=0.9)]], "Car", "moderate", "3d", 0.7)
        self.assertEqual((counts.tp, counts.fp, counts.fn, counts.curve.num_gt), (0, 0, 0, 0))

    def test_dont_care_region_suppresses_detection(self):
        dont_care = label(type_="DontCare", bbox=(90.0, 90.0, 210.0, 170.0))
        far = label(location=(10.0, 1.6, 30.0), score=0.8)
        counts = class_curve([[dont_care]], [[far]], "Car", "moderate", "3d", 0.7)
        self.assertEqual(counts.fp, 0)

    def test_small_unmatched_detection_is_ignored(self):
        small = label(bbox=(0.0, 0.0, 30.0, 20.0), location=(10.0, 1.6, 30.0), score=0.8)
        counts = class_curve([[label()]], [[small]], "Car", "moderate", "3d", 0.7)
        self.assertEqual((counts.fp, counts.fn), (0, 1))

    def test_harder_object_ignored_at_easy_level(self):
        gt = label(occluded=2)
        counts = class_curve([[gt]], [[label(score=0.9)]], "Car", "easy", "3d", 0.7)
        self.assertEqual((counts.tp, counts.fp, counts.curve.num_gt), (0, 0, 0))
        counts = class_curve([[gt]], [[label(score=0.9)]], "Car", "hard", "3d", 0.7)
        self.assertEqual((counts.tp, counts.curve.num_gt), (1, 1))

    def test_frame_count_mismatch(self):
        with self.assertRaises(ConfigurationError):
            class_curve([[]], [], "Car", "easy", "3d", 0.7)


class AveragePrecisionTests(SimpleTestCase):
    def test_hand_computed_case(self):
        curve = PRCurve.from_entries([(0.9, True, 1.0), (0.8, False, 0.0), (0.7, True, 0.5)], num_gt=2)
        self.assertAlmostEqual(average_precision(curve, "r40"), 100.0 * (20 * 1.0 + 20 * 2 / 3) / 40)
        self.assertAlmostEqual(average_precision(curve, "r11"), 100.0 * (6 * 1.0 + 5 * 2 / 3) / 11)
        self.assertAlmostEqual(average_orientation_similarity(curve, "r40"), 100.0 * (20 * 1.0 + 20 * 0.5) / 40)

    def test_no_ground_truth_gives_zero(self):
        curve = PRCurve.from_entries([(0.9, False, 0.0)], num_gt=0)
        self.assertEqual(average_precision(curve), 0.0)

    def test_no_detections_gives_zero(self):
        self.assertEqual(average_precision(PRCurve.from_entries([], num_gt=3)), 0.0)

    def test_unknown_mode(self):
        curve = PRCurve.from_entries([(0.9, True, 1.0)], num_gt=1)
        with self.assertRaises(ConfigurationError):
            average_precision(curve, "r7")

    def test_matches_exhaustive_oracle(self):
        rng = np.random.default_rng(11)
        frames = [random_frame(rng) for _ in range(20)]
        gt_frames = [f[0] for f in frames]
        det_frames = [f[1] for f in frames]
        for mode in ("r11", "r40"):
            counts = class_curve(gt_frames, det_frames, "Car", "hard", "bev", 0.5)
            entries = []
            for gts, dets in frames:
                entries += brute_match(dets, gts, lambda d, g: iou_bev(d.box3d, g.box3d), 0.5)
            num_gt = sum(len(g) for g in gt_frames)
            ap, aos = brute_ap(entries, num_gt, mode)
            self.assertAlmostEqual(average_precision(counts.curve, mode), ap, places=9)
            self.assertAlmostEqual(average_orientation_similarity(counts.curve, mode), aos, places=9)
            self.assertLessEqual(aos, ap + 1e-12)

    def test_monotone_rescaling_of_scores_keeps_ap(self):
        rng = np.random.default_rng(14)
        frames = [random_frame(rng) for _ in range(15)]
        gt_frames = [f[0] for f in frames]
        det_frames = [f[1] for f in frames]
        rescaled = [[replace(d, score=math.exp(3.0 * d.score) - 5.0) for d in dets] for dets in det_frames]
        for mode in ("r11", "r40"):
            before = class_curve(gt_frames, det_frames, "Car", "hard", "bev", 0.5).curve
            after = class_curve(gt_frames, rescaled, "Car", "hard", "bev", 0.5).curve
            self.assertEqual(average_precision(after, mode), average_precision(before, mode))
            self.assertEqual(average_orientation_similarity(after, mode), average_orientation_similarity(before, mode))

    def test_flipped_headings_give_zero_orientation_similarity(self):
        rng = np.random.default_rng(15)
        gt_frames = [random_frame(rng, clutter=0)[0] for _ in range(8)]
        det_frames = [
            [replace(g, score=float(rng.random()), rotation_y=g.rotation_y + math.pi) for g in frame]
            for frame in gt_frames
        ]
        counts = class_curve(gt_frames, det_frames, "Car", "hard", "bev", 0.7)
        self.assertGreater(counts.tp, 0)
        self.assertEqual(counts.fp, 0)
        self.assertAlmostEqual(average_precision(counts.curve), 100.0)
        self.assertAlmostEqual(average_orientation_similarity(counts.curve), 0.0, places=9)


class EvaluateTests(SimpleTestCase):
    def setUp(self):
        rng = np.random.default_rng(12)
        self.gt_frames = [random_frame(rng)[0] for _ in range(6)]
        self.gt_frames[0].append(label(location=(3.0, 1.6, 15.0)))

    def test_ground_truth_against_itself(self):
        det_frames = [[replace(g, score=1.0) for g in frame] for frame in self.gt_frames]
        report = evaluate(self.gt_frames, det_frames, EvalConfig(classes=("Car",)))
        for difficulty in ("easy", "moderate", "hard"):
            bucket = report.results[("Car", difficulty)]
            self.assertAlmostEqual(bucket.ap_3d, 100.0)
            self.assertAlmostEqual(bucket.ap_bev, 100.0)
            self.assertAlmostEqual(bucket.aos, 100.0)
            self.assertEqual(bucket.fp, 0)

    def test_empty_detections(self):
        report = evaluate(self.gt_frames, [[] for _ in self.gt_frames], EvalConfig(classes=("Car",)))
        bucket = report.results[("Car", "moderate")]
        self.assertEqual(bucket.ap_3d, 0.0)
        self.assertEqual(bucket.fn, bucket.num_gt)

    def test_report_keys_and_text(self):
        report = evaluate(self.gt_frames, [[] for _ in self.gt_frames])
        flat = report.to_key_values()
        self.assertEqual(len(flat), 3 * 3 * 8)
        self.assertIn("Pedestrian.hard.aos", flat)
        lines = report.to_lines().splitlines()
        self.assertEqual(lines[0], "mode=r40")
        self.assertIn("Car.easy.ap_3d=0.0000", lines)
        self.assertIn("AP_3D", report.to_table())

    def test_missing_threshold(self):
        with self.assertRaises(ConfigurationError):
            EvalConfig(classes=("Truck",))

    def test_sweep_is_non_increasing(self):
        rng = np.random.default_rng(13)
        frames = [random_frame(rng, spacing=10.0, clutter=0) for _ in range(10)]
        curve = iou_sweep([f[0] for f in frames], [f[1] for f in frames], [0.1, 0.3, 0.5, 0.7, 0.9], "Car", "hard", "bev")
        self.assertEqual([t for t, _ in curve], [0.1, 0.3, 0.5, 0.7, 0.9])
        values = [ap for _, ap in curve]
        self.assertTrue(all(a >= b for a, b in zip(values, values[1:])))
        self.assertGreater(values[0], 0.0)

    def test_sweep_needs_thresholds(self):
        with self.assertRaises(ConfigurationError):
            iou_sweep([], [], [])
