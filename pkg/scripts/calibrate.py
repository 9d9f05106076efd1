"""Calibration run for the acceptance benchmark settings (not a test).

Trains V2F and F on the candidate benchmark, then reports every margin
the acceptance criteria depend on.
"""

import json
import sys
import time

import numpy as np

from occludet.config import TrainConfig
from occludet.detector import (
    PedestrianDetector,
    infer_image,
    run_diagnostic,
)
from occludet.geometry import Box, boxes_to_array
from occludet.metrics import evaluate
from occludet.parts import part_labels
from occludet.scenes import SceneSpec, generate_scene

N_TRAIN = int(sys.argv[1]) if len(sys.argv) > 1 else 150
EPOCHS = int(sys.argv[2]) if len(sys.argv) > 2 else 12
N_TEST = int(sys.argv[3]) if len(sys.argv) > 3 else 150

BENCH_SPEC = SceneSpec(
    width=128, height=128, count_range=(6, 9), height_range=(40.0, 80.0),
    aspect_range=(2.0, 3.0), crowding=0.75, noise=0.05,
)
COMMON = dict(
    channels=32, head_width=256, feature_dim=64,
    train_proposals=128, infer_proposals=200, rpn_batch=128,
    epochs=EPOCHS, learning_rate=1e-3,
    lr_decay_epochs=(int(EPOCHS * 0.7), int(EPOCHS * 0.9)),
    seed=0,
)

t0 = time.time()
train_scenes = [generate_scene(BENCH_SPEC, s) for s in range(N_TRAIN)]
test_scenes = [generate_scene(BENCH_SPEC, 10_000 + s) for s in range(N_TEST)]
print(f"avg test peds: {np.mean([len(s.pedestrians) for s in test_scenes]):.2f}")

results = {}

t = time.time()
v2f = PedestrianDetector(variant="V2F", **COMMON).fit(train_scenes)
results["v2f_train_s"] = time.time() - t
print("v2f log first/last:", v2f.training_log_[0]["total"],
      v2f.training_log_[-1]["total"], flush=True)

t = time.time()
fdet = PedestrianDetector(variant="F", **COMMON).fit(train_scenes)
results["f_train_s"] = time.time() - t
print("f log first/last:", fdet.training_log_[0]["total"],
      fdet.training_log_[-1]["total"], flush=True)

gts = [s.pedestrians for s in test_scenes]

def eval_variant(det, nms_mode=None):
    import dataclasses
    cfg = det.config_
    if nms_mode:
        cfg = dataclasses.replace(cfg, nms_mode=nms_mode)
    dets = [infer_image(det.model_, s.image, cfg) for s in test_scenes]
    return evaluate(dets, gts, 0.5), dets

t = time.time()
m_v2f_vis, _ = eval_variant(v2f, "visible")
m_v2f_full, _ = eval_variant(v2f, "full")
m_f, _ = eval_variant(fdet, "full")
results["eval_s"] = time.time() - t

print(f"V2F(visible): AP={m_v2f_vis.ap:.4f} MR2={m_v2f_vis.mr2:.4f} R={m_v2f_vis.recall:.4f}")
print(f"V2F(full):    AP={m_v2f_full.ap:.4f} MR2={m_v2f_full.mr2:.4f} R={m_v2f_full.recall:.4f}")
print(f"F(full):      AP={m_f.ap:.4f} MR2={m_f.mr2:.4f} R={m_f.recall:.4f}")
print(f"A6 margins: recall gap={100*(m_v2f_vis.recall-m_f.recall):.2f} pts (need >=3), "
      f"AP gap={100*(m_v2f_vis.ap-m_f.ap):.2f} pts (need >=2), "
      f"vis-vs-full recall gap={100*(m_v2f_vis.recall-m_v2f_full.recall):.2f} (need >=0)", flush=True)

t = time.time()
d_pvdn = evaluate(run_diagnostic(v2f.model_, "P-VDN", test_scenes, v2f.config_), gts, 0.5)
d_pvdnn = evaluate(run_diagnostic(v2f.model_, "P-VDN+NMS", test_scenes, v2f.config_), gts, 0.5)
results["diag_s"] = time.time() - t
print(f"P-VDN:     AP={d_pvdn.ap:.4f} MR2={d_pvdn.mr2:.4f}")
print(f"P-VDN+NMS: AP={d_pvdnn.ap:.4f} MR2={d_pvdnn.mr2:.4f}")
print(f"A7: AP order {d_pvdnn.ap:.4f} >= {d_pvdn.ap:.4f} >= {m_v2f_vis.ap:.4f}; "
      f"MR {d_pvdnn.mr2:.4f} <= {m_v2f_vis.mr2:.4f}", flush=True)

# A10: correlation between part responses on GT visible boxes and soft labels
from occludet.detector import part_scores_for_boxes

def part_correlation(det, scenes):
    responses, labels = [], []
    for s in scenes:
        active = [p for p in s.pedestrians if not p.ignore]
        if not active:
            continue
        vis = boxes_to_array([p.visible for p in active])
        resp = part_scores_for_boxes(det.model_, s.image, vis)
        for p, r in zip(active, resp):
            responses.append(r)
            labels.append(part_labels(p.visible, p.full, mode="soft"))
    responses = np.concatenate(responses)
    labels = np.concatenate(labels)
    return np.corrcoef(responses, labels)[0, 1]

corr_hard = part_correlation(v2f, test_scenes[:100])
print(f"A10 correlation (hard-trained model): {corr_hard:.4f}", flush=True)

# soft-label model (A9-style smoke + A10 candidate)
t = time.time()
soft_kwargs = dict(COMMON)
v2f_soft = PedestrianDetector(variant="V2F", label_mode="soft", **soft_kwargs).fit(train_scenes)
results["soft_train_s"] = time.time() - t
corr_soft = part_correlation(v2f_soft, test_scenes[:100])
print(f"A10 correlation (soft-trained model): {corr_soft:.4f}")
print("A9 convergence: hard", v2f.training_log_[-1]["total"] / v2f.training_log_[0]["total"],
      "soft", v2f_soft.training_log_[-1]["total"] / v2f_soft.training_log_[0]["total"])

results["total_s"] = time.time() - t0
print(json.dumps(results, indent=2))
