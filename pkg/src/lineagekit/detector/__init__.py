from .data import (DetectorSample, PlaneBuilder, StackedInput,
                   most_square_shape, reshape_to_planes)
from .model import DetectorConfig, DetectorModel
from .train import (DetectorResult, TrainLogEntry, build_samples,
                    detector_accuracy, load_detector, no_parent_recall,
                    predict_no_parent, save_detector, split_samples,
                    train_detector)

__all__ = [
    "DetectorSample", "PlaneBuilder", "StackedInput",
    "most_square_shape", "reshape_to_planes",
    "DetectorConfig", "DetectorModel",
    "DetectorResult", "TrainLogEntry", "build_samples", "detector_accuracy",
    "load_detector", "no_parent_recall", "predict_no_parent", "save_detector",
    "split_samples", "train_detector",
]
