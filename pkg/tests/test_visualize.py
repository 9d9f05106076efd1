import numpy as np

from occludet.geometry import Box
from occludet.metrics import evaluate, match_detections
from occludet.nms import Detection
from occludet.scenes import GroundTruthPedestrian
from occludet.visualize import plot_metric_curves, render_overlay


def make_image():
    rng = np.random.default_rng(0)
    return rng.uniform(0, 1, (64, 64, 3))


class TestRenderOverlay:
    def test_upscales_and_returns_image(self):
        dets = [
            Detection(score=0.9, visible=Box(5, 5, 20, 40), full=Box(4, 4, 22, 55),
                      part_scores=np.array([0.9, 0.5, 0.4, 0.1, 0.2])),
        ]
        out = render_overlay(make_image(), dets)
        assert out.size == (64 * 4, 64 * 4)

    def test_suppressed_and_missing_boxes(self):
        dets = [Detection(score=0.8, full=Box(10, 10, 30, 50))]
        suppressed = [Detection(score=0.4, visible=Box(12, 12, 28, 44))]
        out = render_overlay(make_image(), dets, suppressed)
        assert out.size == (256, 256)

    def test_empty_detections(self):
        out = render_overlay(make_image(), [], [])
        assert out.size == (256, 256)


class TestPlotCurves:
    def test_writes_both_curves(self, tmp_path):
        gts = [GroundTruthPedestrian(visible=Box(0, 0, 10, 10), full=Box(0, 0, 10, 10))]
        dets = [
            Detection(score=0.9, full=Box(0, 0, 10, 10)),
            Detection(score=0.5, full=Box(30, 30, 40, 40)),
        ]
        metrics = evaluate([dets], [gts], 0.5)
        paths = plot_metric_curves(metrics, tmp_path, prefix="t_")
        assert all(p.exists() for p in paths)
        assert {p.name for p in paths} == {"t_pr_curve.png", "t_fppi_missrate.png"}
