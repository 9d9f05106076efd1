import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))


TINY_KWARGS = dict(
    channels=16,
    head_width=64,
    feature_dim=16,
    train_proposals=64,
    infer_proposals=64,
    rpn_batch=64,
    sample_cap=64,
    lr_decay_epochs=(99,),
    seed=0,
)


def tiny_spec(**overrides):
    from occludet.scenes import SceneSpec

    base = dict(
        width=96,
        height=96,
        count_range=(2, 4),
        height_range=(30.0, 50.0),
        aspect_range=(2.0, 3.0),
        crowding=0.6,
        noise=0.05,
    )
    base.update(overrides)
    return SceneSpec(**base)


@pytest.fixture(scope="session")
def tiny_scenes():
    from occludet.scenes import generate_scene

    spec = tiny_spec()
    return [generate_scene(spec, seed) for seed in range(8)]


@pytest.fixture(scope="session")
def tiny_v2f(tiny_scenes):
    from occludet.detector import PedestrianDetector

    det = PedestrianDetector(variant="V2F", epochs=3, **TINY_KWARGS)
    det.fit(tiny_scenes)
    return det
