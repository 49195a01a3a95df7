import json

import numpy as np
import pytest

from lsmyolo.evaluation import (AREA_RANGES, IOU_THRESHOLDS, compute_ap,
                                format_table, iou_matrix, nms, summarize,
                                write_report)

from oracles import iou_xyxy, reference_ap


class TestIoUMatrix:
    def test_known_values(self):
        a = np.array([[0.0, 0.0, 10.0, 10.0]])
        b = np.array([[0.0, 0.0, 10.0, 10.0], [5.0, 5.0, 15.0, 15.0],
                      [20.0, 20.0, 30.0, 30.0]])
        got = iou_matrix(a, b)[0]
        assert got[0] == pytest.approx(1.0)
        assert got[1] == pytest.approx(25.0 / 175.0)
        assert got[2] == 0.0

    def test_matches_scalar_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            a = rng.uniform(0, 50, 2)
            b = rng.uniform(0, 50, 2)
            boxa = np.array([*a, *(a + rng.uniform(1, 40, 2))])
            boxb = np.array([*b, *(b + rng.uniform(1, 40, 2))])
            got = iou_matrix(boxa[None], boxb[None])[0, 0]
            assert got == pytest.approx(iou_xyxy(boxa, boxb), abs=1e-12)


class TestNms:
    def test_keeps_highest_of_overlapping_pair(self):
        boxes = np.array([[0, 0, 10, 10], [1, 1, 11, 11], [30, 30, 40, 40]],
                         dtype=float)
        kept = nms(boxes, np.array([0.9, 0.8, 0.7]), np.zeros(3), iou_thr=0.5)
        assert kept.tolist() == [0, 2]

    def test_classes_do_not_suppress_each_other(self):
        boxes = np.array([[0, 0, 10, 10], [0, 0, 10, 10]], dtype=float)
        kept = nms(boxes, np.array([0.9, 0.8]), np.array([0, 1]), iou_thr=0.5)
        assert kept.tolist() == [0, 1]

    def test_score_threshold(self):
        boxes = np.array([[0, 0, 10, 10], [20, 20, 30, 30]], dtype=float)
        kept = nms(boxes, np.array([0.9, 0.0005]), np.zeros(2),
                   score_thr=0.001)
        assert kept.tolist() == [0]

    def test_tie_breaks_to_lower_index(self):
        boxes = np.array([[0, 0, 10, 10], [0, 0, 10, 10]], dtype=float)
        kept = nms(boxes, np.array([0.5, 0.5]), np.zeros(2), iou_thr=0.5)
        assert kept.tolist() == [0]

    def test_exactly_at_threshold_not_suppressed(self):
        # IoU exactly 0.5 with iou_thr 0.5: strict inequality keeps both
        boxes = np.array([[0, 0, 10, 10], [0, 5, 10, 15]], dtype=float)
        iou = iou_matrix(boxes[:1], boxes[1:])[0, 0]
        assert iou == pytest.approx(1.0 / 3.0)
        kept = nms(boxes, np.array([0.9, 0.8]), np.zeros(2),
                   iou_thr=1.0 / 3.0)
        assert kept.tolist() == [0, 1]

    def test_idempotent(self):
        rng = np.random.default_rng(1)
        xy = rng.uniform(0, 80, (30, 2))
        boxes = np.concatenate([xy, xy + rng.uniform(5, 40, (30, 2))], 1)
        scores = rng.uniform(0.1, 1.0, 30)
        classes = rng.integers(0, 3, 30)
        kept = nms(boxes, scores, classes, iou_thr=0.5)
        again = nms(boxes[kept], scores[kept], classes[kept], iou_thr=0.5)
        assert again.tolist() == list(range(len(kept)))

    def test_empty_input(self):
        kept = nms(np.zeros((0, 4)), np.zeros(0), np.zeros(0))
        assert kept.tolist() == []


def corpus(dets, gts):
    """dets/gts: {img: lists} -> numpy-backed dicts."""
    d = {k: (np.asarray(v[0], dtype=float).reshape(-1, 4),
             np.asarray(v[1], dtype=float),
             np.asarray(v[2])) for k, v in dets.items()}
    g = {k: (np.asarray(v[0], dtype=float).reshape(-1, 4),
             np.asarray(v[1])) for k, v in gts.items()}
    return d, g


class TestAveragePrecision:
    def test_perfect_detections(self):
        boxes = [[10, 10, 50, 50], [60, 60, 100, 100]]
        d, g = corpus({"a": (boxes, [0.9, 0.8], [0, 0])},
                      {"a": (boxes, [0, 0])})
        ap, per_class = compute_ap(d, g, num_classes=1)
        assert ap == pytest.approx(1.0)
        assert per_class[0] == pytest.approx(1.0)

    def test_no_detections(self):
        d, g = corpus({"a": ([], [], [])},
                      {"a": ([[10, 10, 50, 50]], [0])})
        ap, _ = compute_ap(d, g, num_classes=1)
        assert ap == 0.0

    def test_no_ground_truth_class_skipped(self):
        d, g = corpus({"a": ([[0, 0, 10, 10]], [0.9], [1])},
                      {"a": ([[10, 10, 50, 50]], [0])})
        ap, per_class = compute_ap(d, g, num_classes=2)
        assert 1 not in per_class and 0 in per_class

    def test_high_scoring_false_positive_lowers_ap(self):
        box = [[10, 10, 50, 50]]
        d1, g = corpus({"a": (box, [0.9], [0]), "b": ([], [], [])},
                       {"a": (box, [0]), "b": ([], [])})
        d2, _ = corpus({"a": (box, [0.9], [0]),
                        "b": ([[80, 80, 120, 120]], [0.95], [0])},
                       {"a": (box, [0]), "b": ([], [])})
        ap1, _ = compute_ap(d1, g, num_classes=1)
        ap2, _ = compute_ap(d2, g, num_classes=1)
        assert ap1 == pytest.approx(1.0)
        assert ap2 == pytest.approx(0.5)

    def test_half_iou_detection_fails_high_thresholds(self):
        d, g = corpus({"a": ([[0, 0, 10, 10]], [0.9], [0])},
                      {"a": ([[0, 5, 10, 15]], [0])})  # IoU = 1/3
        ap50, _ = compute_ap(d, g, iou_thresholds=np.array([0.5]),
                             num_classes=1)
        ap25, _ = compute_ap(d, g, iou_thresholds=np.array([0.25]),
                             num_classes=1)
        assert ap50 == 0.0 and ap25 == pytest.approx(1.0)

    def test_small_area_bucket(self):
        small = [[0, 0, 10, 10]]          # area 100 < 32^2
        large = [[0, 0, 200, 200]]        # area 40000 > 96^2
        d, g = corpus({"a": (small + large, [0.9, 0.8], [0, 0])},
                      {"a": (small + large, [0, 0])})
        ap_small, _ = compute_ap(d, g, area_range=AREA_RANGES["small"],
                                 num_classes=1)
        ap_large, _ = compute_ap(d, g, area_range=AREA_RANGES["large"],
                                 num_classes=1)
        assert ap_small == pytest.approx(1.0)
        assert ap_large == pytest.approx(1.0)

    def test_iou_threshold_grid(self):
        assert IOU_THRESHOLDS.tolist() == pytest.approx(
            [0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95])

    @pytest.mark.parametrize("seed", range(50))
    def test_matches_reference_implementation(self, seed):
        rng = np.random.default_rng(seed)
        num_classes = int(rng.integers(1, 4))
        n_images = int(rng.integers(1, 4))
        dets, gts = {}, {}
        for i in range(n_images):
            img = f"im{i}"
            m = int(rng.integers(0, 5))
            gxy = rng.uniform(0, 150, (m, 2))
            gwh = rng.uniform(2, 120, (m, 2))
            gboxes = np.concatenate([gxy, gxy + gwh], 1)
            gcls = rng.integers(0, num_classes, m)
            gts[img] = (gboxes, gcls)
            n = int(rng.integers(0, 8))
            if n and m and rng.random() < 0.7:
                # detections correlated with ground truth plus noise
                pick = rng.integers(0, m, n)
                dboxes = gboxes[pick] + rng.normal(0, 8, (n, 4))
                dboxes[:, 2:] = np.maximum(dboxes[:, 2:], dboxes[:, :2] + 1)
                dcls = np.where(rng.random(n) < 0.8, gcls[pick],
                                rng.integers(0, num_classes, n))
            else:
                dxy = rng.uniform(0, 150, (n, 2))
                dboxes = np.concatenate([dxy, dxy + rng.uniform(2, 100, (n, 2))], 1)
                dcls = rng.integers(0, num_classes, n)
            dets[img] = (dboxes, rng.uniform(0, 1, n), dcls)
        for area_name in ("all", "small", "medium", "large"):
            area = AREA_RANGES[area_name]
            got, _ = compute_ap(dets, gts, area_range=area,
                                num_classes=num_classes)
            want = reference_ap(
                {k: (v[0].tolist(), v[1].tolist(), v[2].tolist())
                 for k, v in dets.items()},
                {k: (v[0].tolist(), v[1].tolist()) for k, v in gts.items()},
                IOU_THRESHOLDS.tolist(), area, num_classes)
            assert got == pytest.approx(want, abs=1e-6), area_name


class TestSummarize:
    def test_keys_and_report(self, tmp_path):
        box = [[10, 10, 120, 120]]
        d, g = corpus({"a": (box, [0.9], [0])}, {"a": (box, [0])})
        metrics = summarize(d, g, num_classes=1)
        assert set(metrics) == {"ap", "ap50", "ap_s", "ap_m", "ap_l",
                                "per_class"}
        assert metrics["ap50"] == pytest.approx(1.0)
        assert metrics["ap"] == pytest.approx(1.0)
        path = tmp_path / "report.json"
        write_report(metrics, path)
        loaded = json.loads(path.read_text())
        assert loaded["ap50"] == pytest.approx(1.0)
        table = format_table(metrics, class_names=["cell"])
        assert "ap50" in table and "cell" in table
