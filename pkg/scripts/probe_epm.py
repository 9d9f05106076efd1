"""Probe: watch part-embedding learning vs epochs (not a test)."""

import sys
import time

import numpy as np
import torch

from occludet.config import TrainConfig
from occludet.detector import (
    build_model,
    compute_image_losses,
    part_scores_for_boxes,
    total_loss,
)
from occludet.geometry import boxes_to_array
from occludet.parts import part_labels
from occludet.scenes import SceneSpec, generate_scene

N_SCENES = int(sys.argv[1]) if len(sys.argv) > 1 else 60
EPOCHS = int(sys.argv[2]) if len(sys.argv) > 2 else 24
MODE = sys.argv[3] if len(sys.argv) > 3 else "soft"
LR = float(sys.argv[4]) if len(sys.argv) > 4 else 1e-3

SPEC = SceneSpec(width=128, height=128, count_range=(6, 9),
                 height_range=(40.0, 80.0), aspect_range=(2.0, 3.0),
                 crowding=0.75, noise=0.05)

cfg = TrainConfig(
    variant="V2F", label_mode=MODE, channels=32, head_width=256,
    feature_dim=64, train_proposals=128, infer_proposals=200, rpn_batch=128,
    epochs=EPOCHS, learning_rate=LR, lr_decay_epochs=(999,), seed=0,
)
scenes = [generate_scene(SPEC, s) for s in range(N_SCENES)]
probe_scenes = [generate_scene(SPEC, 10_000 + s) for s in range(30)]

model = build_model(cfg)
rng = np.random.default_rng(cfg.seed)
opt = torch.optim.SGD(model.parameters(), lr=cfg.learning_rate,
                      momentum=cfg.momentum, weight_decay=cfg.weight_decay)


def correlation():
    responses, labels = [], []
    for s in probe_scenes:
        vis = boxes_to_array([p.visible for p in s.pedestrians])
        resp = part_scores_for_boxes(model, s.image, vis)
        for p, r in zip(s.pedestrians, resp):
            responses.append(r)
            labels.append(part_labels(p.visible, p.full, mode="soft"))
    r = np.concatenate(responses)
    y = np.concatenate(labels)
    return np.corrcoef(r, y)[0, 1], r.std(), np.abs(
        model.parts.matrix.detach().numpy()).mean()


t0 = time.time()
for epoch in range(1, EPOCHS + 1):
    order = rng.permutation(len(scenes))
    sums = {}
    for i in order:
        losses = compute_image_losses(model, scenes[int(i)], cfg, rng)
        l_vdn = sum(losses[k] for k in ("l_cls1", "l_reg1", "l_cls2", "l_reg2"))
        tot = total_loss(l_vdn, losses["l_fen"], losses["l_epm"],
                         cfg.alpha, cfg.beta)
        opt.zero_grad()
        tot.backward()
        opt.step()
        for k, v in losses.items():
            sums[k] = sums.get(k, 0.0) + v.item()
        sums["total"] = sums.get("total", 0.0) + tot.item()
    n = len(scenes)
    if epoch % 2 == 0 or epoch == 1:
        corr, rstd, emag = correlation()
        print(f"ep{epoch:3d} total={sums['total']/n:.3f} "
              f"fen={sums['l_fen']/n:.3f} epm={sums['l_epm']/n:.3f} "
              f"corr={corr:+.3f} r_std={rstd:.4f} |E|={emag:.4f} "
              f"({time.time()-t0:.0f}s)", flush=True)
