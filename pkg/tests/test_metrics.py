import numpy as np
import pytest

from occludet.geometry import Box
from occludet.nms import Detection
from occludet.metrics import (
    EvalMetrics,
    average_precision,
    evaluate,
    log_average_miss_rate,
    match_detections,
    read_detections,
    recall,
    threshold_sweep,
    write_detections,
)
from occludet.scenes import GroundTruthPedestrian

from helpers import random_int_box, reference_match_detections


def ped(full, ignore=False):
    b = Box(*full)
    return GroundTruthPedestrian(visible=b, full=b, ignore=ignore)


def det(score, box):
    return Detection(score=score, full=Box(*box))


class TestMatchDetections:
    def test_perfect_match_is_tp(self):
        res = match_detections([det(0.9, (0, 0, 10, 10))], [ped((0, 0, 10, 10))], 0.5)
        assert res.flags == ["tp"]
        assert res.gt_matched.tolist() == [True]

    def test_double_detection_single_match(self):
        dets = [det(0.9, (0, 0, 10, 10)), det(0.8, (0, 0, 10, 10))]
        res = match_detections(dets, [ped((0, 0, 10, 10))], 0.5)
        assert res.flags == ["tp", "fp"]

    def test_ignore_region_neutralizes(self):
        # IoA(det, ignore) = 1 >= 0.5 -> ignored, not FP
        dets = [det(0.9, (0, 0, 10, 10))]
        res = match_detections(dets, [ped((0, 0, 20, 20), ignore=True)], 0.5)
        assert res.flags == ["ignored"]
        assert res.n_gt == 0

    def test_matches_rule_oracle_on_random_instances(self):
        rng = np.random.default_rng(31)
        for _ in range(1000):
            n_d = int(rng.integers(1, 11))
            n_g = int(rng.integers(0, 5))
            det_boxes = [random_int_box(rng, max_coord=24, min_size=2) for _ in range(n_d)]
            scores = np.round(rng.uniform(0, 1, n_d), 2)
            gt_boxes = [random_int_box(rng, max_coord=24, min_size=2) for _ in range(n_g)]
            ignore = [bool(rng.uniform() < 0.25) for _ in range(n_g)]
            dets = [det(s, b) for s, b in zip(scores, det_boxes)]
            gts = [ped(b, ig) for b, ig in zip(gt_boxes, ignore)]
            res = match_detections(dets, gts, 0.5)
            want = reference_match_detections(det_boxes, scores, gt_boxes, ignore, 0.5)
            assert res.flags == want

    def test_flag_counts_partition(self):
        rng = np.random.default_rng(32)
        for _ in range(100):
            n_d = int(rng.integers(1, 11))
            dets = [
                det(s, random_int_box(rng, max_coord=24, min_size=2))
                for s in rng.uniform(0, 1, n_d)
            ]
            gts = [
                ped(random_int_box(rng, max_coord=24, min_size=2), bool(rng.uniform() < 0.3))
                for _ in range(int(rng.integers(0, 4)))
            ]
            res = match_detections(dets, gts, 0.5)
            assert len(res.flags) == n_d
            assert res.gt_matched.sum() <= sum(1 for g in gts if not g.ignore)


class TestAveragePrecision:
    def test_perfect_detection(self):
        res = match_detections([det(0.9, (0, 0, 10, 10))], [ped((0, 0, 10, 10))], 0.5)
        assert average_precision([res]) == 1.0

    def test_zero_detections(self):
        res = match_detections([], [ped((0, 0, 10, 10))], 0.5)
        assert average_precision([res]) == 0.0

    def test_tp_fp_tp_over_two_gts(self):
        # hand-evaluated cumulative-sum oracle: 1*(1/2) + (2/3)*(1/2) = 5/6
        gts = [ped((0, 0, 10, 10)), ped((40, 40, 50, 50))]
        dets = [
            det(0.9, (0, 0, 10, 10)),
            det(0.8, (20, 20, 28, 28)),
            det(0.7, (40, 40, 50, 50)),
        ]
        res = match_detections(dets, gts, 0.5)
        assert res.flags == ["tp", "fp", "tp"]
        assert average_precision([res]) == pytest.approx(5 / 6)


def three_image_case():
    """Hand-built fixture for the frozen spreadsheet oracle.

    Flags in score order: TP, FP, TP, TP, FP, TP over 4 GTs, 3 images.
    """
    img1_gts = [ped((0, 0, 10, 10)), ped((20, 0, 30, 10))]
    img2_gts = [ped((0, 0, 10, 10))]
    img3_gts = [ped((0, 0, 10, 10))]
    img1_dets = [
        det(0.95, (0, 0, 10, 10)),   # TP
        det(0.85, (20, 0, 30, 10)),  # TP
        det(0.70, (0, 0, 10, 10)),   # FP (GT already matched)
    ]
    img2_dets = [
        det(0.90, (40, 40, 50, 50)),  # FP
        det(0.60, (0, 0, 10, 10)),    # TP
    ]
    img3_dets = [det(0.80, (0, 0, 10, 9))]  # IoU 0.9 -> TP
    return (
        [img1_dets, img2_dets, img3_dets],
        [img1_gts, img2_gts, img3_gts],
    )


class TestFrozenThreeImageCase:
    # expected values computed beforehand with a step-by-step spreadsheet
    # from the protocol definition (see repository test history)
    AP = 0.7708333333333333
    MR2 = 0.05306629431648962

    def test_flags(self):
        dets, gts = three_image_case()
        flags = [match_detections(d, g, 0.5).flags for d, g in zip(dets, gts)]
        assert flags == [["tp", "tp", "fp"], ["fp", "tp"], ["tp"]]

    def test_ap(self):
        dets, gts = three_image_case()
        results = [match_detections(d, g, 0.5) for d, g in zip(dets, gts)]
        assert average_precision(results) == pytest.approx(self.AP, abs=1e-12)

    def test_mr2(self):
        dets, gts = three_image_case()
        results = [match_detections(d, g, 0.5) for d, g in zip(dets, gts)]
        assert log_average_miss_rate(results) == pytest.approx(self.MR2, rel=1e-9)

    def test_recall(self):
        dets, gts = three_image_case()
        results = [match_detections(d, g, 0.5) for d, g in zip(dets, gts)]
        assert recall(results) == 1.0


class TestLogAverageMissRate:
    def test_zero_detections_is_one(self):
        res = match_detections([], [ped((0, 0, 10, 10))], 0.5)
        assert log_average_miss_rate([res]) == 1.0

    def test_perfect_detections_hit_clamp_floor(self):
        results = [
            match_detections([det(0.9, (0, 0, 10, 10))], [ped((0, 0, 10, 10))], 0.5)
        ]
        assert log_average_miss_rate(results) == pytest.approx(1e-10)


class TestRecall:
    def test_ratios(self):
        gts = [ped((i * 20, 0, i * 20 + 10, 10)) for i in range(4)]
        dets = [det(0.9 - 0.1 * i, (i * 20, 0, i * 20 + 10, 10)) for i in range(3)]
        res = match_detections(dets, gts, 0.5)
        assert recall([res]) == 0.75

    def test_none_matched(self):
        res = match_detections([det(0.5, (50, 50, 60, 60))], [ped((0, 0, 10, 10))], 0.5)
        assert recall([res]) == 0.0


class TestThresholdSweep:
    def test_monotone_in_threshold(self):
        rng = np.random.default_rng(77)
        for _ in range(30):
            n_img = 3
            dets_pi, gts_pi = [], []
            for _ in range(n_img):
                gts_pi.append(
                    [ped(random_int_box(rng, max_coord=32, min_size=3))
                     for _ in range(int(rng.integers(1, 4)))]
                )
                dets_pi.append(
                    [det(float(s), random_int_box(rng, max_coord=32, min_size=3))
                     for s in rng.uniform(0, 1, int(rng.integers(0, 6)))]
                )
            rows = threshold_sweep(dets_pi, gts_pi)
            aps = [r.ap for r in rows]
            mrs = [r.mr2 for r in rows]
            # thresholds run 0.5 -> 0.1; AP must not decrease, MR-2 not increase
            for a, b in zip(aps, aps[1:]):
                assert b >= a - 1e-12
            for a, b in zip(mrs, mrs[1:]):
                assert b <= a + 1e-12

    def test_row_count_and_thresholds(self):
        dets, gts = three_image_case()
        rows = threshold_sweep(dets, gts)
        assert [r.iou_threshold for r in rows] == [0.5, 0.4, 0.3, 0.2, 0.1]


class TestEvaluate:
    def test_returns_curves(self):
        dets, gts = three_image_case()
        m = evaluate(dets, gts, iou_threshold=0.5)
        assert isinstance(m, EvalMetrics)
        assert 0 <= m.ap <= 1 and 0 <= m.recall <= 1 and 0 <= m.mr2 <= 1
        assert len(m.precisions) == len(m.recalls) == 6
        assert m.fppi.shape == m.miss_rates.shape

    def test_deterministic_under_rerun(self):
        dets, gts = three_image_case()
        a = evaluate(dets, gts, 0.5)
        b = evaluate(dets, gts, 0.5)
        assert a.ap == b.ap and a.mr2 == b.mr2 and a.recall == b.recall


class TestDetectionDumpIo:
    def test_roundtrip(self, tmp_path):
        per_image = {
            "img_a": [
                Detection(score=0.9, full=Box(0, 0, 10, 30), visible=Box(0, 0, 10, 15)),
                Detection(score=0.5, full=Box(5, 5, 9, 25)),
            ],
            "img_b": [
                Detection(
                    score=0.7,
                    full=Box(1, 1, 8, 20),
                    part_scores=np.array([0.1, 0.9, 0.5, 0.2, 0.3]),
                ),
            ],
        }
        path = tmp_path / "dets.jsonl"
        write_detections(path, per_image)
        back = read_detections(path)
        assert set(back) == {"img_a", "img_b"}
        assert back["img_a"][0].visible.as_tuple() == (0, 0, 10, 15)
        assert back["img_a"][1].visible is None
        np.testing.assert_allclose(
            back["img_b"][0].part_scores, [0.1, 0.9, 0.5, 0.2, 0.3]
        )
        assert back["img_b"][0].score == pytest.approx(0.7)
