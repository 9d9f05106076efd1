"""Occluded pedestrian detection by explicit decomposition: visible-region
detection, NMS on visible boxes, then full-body estimation, with optional
part-visibility supervision during training."""

from .config import DatasetConfig, ExperimentConfig, TrainConfig
from .detector import (
    DetectionModel,
    PedestrianDetector,
    build_training_batch,
    infer_image,
    run_diagnostic,
    score_given_boxes,
    total_loss,
    train_model,
)
from .geometry import Box, OffsetVector, decode_offsets, divide_parts, encode_offsets, ioa, iou
from .metrics import (
    EvalMetrics,
    average_precision,
    evaluate,
    log_average_miss_rate,
    match_detections,
    recall,
    threshold_sweep,
)
from .nms import Detection, filter_by_score, greedy_nms
from .scenes import (
    GroundTruthPedestrian,
    SceneSample,
    SceneSpec,
    generate_scene,
    load_dataset,
    load_odgt,
    occlusion_visible_box,
    save_dataset,
)

__all__ = [
    "Box",
    "DatasetConfig",
    "Detection",
    "DetectionModel",
    "EvalMetrics",
    "ExperimentConfig",
    "GroundTruthPedestrian",
    "OffsetVector",
    "PedestrianDetector",
    "SceneSample",
    "SceneSpec",
    "TrainConfig",
    "average_precision",
    "build_training_batch",
    "decode_offsets",
    "divide_parts",
    "encode_offsets",
    "evaluate",
    "filter_by_score",
    "generate_scene",
    "greedy_nms",
    "infer_image",
    "ioa",
    "iou",
    "load_dataset",
    "load_odgt",
    "log_average_miss_rate",
    "match_detections",
    "occlusion_visible_box",
    "recall",
    "run_diagnostic",
    "save_dataset",
    "score_given_boxes",
    "threshold_sweep",
    "total_loss",
    "train_model",
]

__version__ = "0.1.0"
