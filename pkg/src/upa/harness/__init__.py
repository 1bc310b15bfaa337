from .synthetic import CLASS_FAMILIES, DatasetSpec, generate_dataset, make_cloud
from .metrics import (
    class_mean_iou,
    confusion_matrix,
    instance_mean_iou,
    iou_per_class,
    overall_accuracy,
)
from .training import AugmentConfig, TrainConfig, evaluate_model, load_model, train
from .ablate import AXES, ablate
from .bench import BENCH_VARIANTS, bench, fit_exponent

__all__ = [
    "AXES", "AugmentConfig", "BENCH_VARIANTS", "CLASS_FAMILIES", "DatasetSpec",
    "TrainConfig", "ablate", "bench", "class_mean_iou", "confusion_matrix",
    "evaluate_model", "fit_exponent", "generate_dataset", "instance_mean_iou",
    "iou_per_class", "load_model", "make_cloud", "overall_accuracy", "train",
]
