"""Detection tooling for aerial litter datasets: labels, augmentation,
evaluation, model budgets and a toy self-adversarial training loop."""

__version__ = "0.1.0"

from .dataset import (
    DEFAULT_CLASSES,
    Annotation,
    DatasetSplit,
    LabeledImage,
    NormBox,
    parse_label_file,
    read_dataset,
    split_dataset,
    write_dataset,
)
from .metrics import Detection, EvalReport, average_precision, evaluate, iou, match_detections, nms

__all__ = [
    "DEFAULT_CLASSES",
    "Annotation",
    "DatasetSplit",
    "Detection",
    "EvalReport",
    "LabeledImage",
    "NormBox",
    "average_precision",
    "evaluate",
    "iou",
    "match_detections",
    "nms",
    "parse_label_file",
    "read_dataset",
    "split_dataset",
    "write_dataset",
]
